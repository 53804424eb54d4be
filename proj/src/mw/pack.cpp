#include "i2m/mw/pack.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <thread>

#include "i2m/common/bytes.hpp"
#include "i2m/common/error.hpp"

namespace i2m {

namespace {

constexpr std::uint8_t kMagic[4] = {'I', '2', 'M', 'P'};
constexpr std::size_t kHeaderBytes = 36;
constexpr std::size_t kLeafBytes = 4;
constexpr std::size_t kVertexBytes = 8 + 3 * 8;
constexpr std::size_t kTetBytes = 8 + 4 * 8 + 4 * 8 + 4;

/// Runs fn(chunk) for chunk in [0, chunks) on up to nthreads threads.
void parallel_chunks(int nthreads, int chunks, const std::function<void(int)>& fn) {
  if (nthreads <= 1 || chunks <= 1) {
    for (int c = 0; c < chunks; ++c) fn(c);
    return;
  }
  std::vector<std::thread> ts;
  ts.reserve(static_cast<std::size_t>(chunks - 1));
  for (int c = 1; c < chunks; ++c) ts.emplace_back(fn, c);
  fn(0);
  for (auto& t : ts) t.join();
}

std::pair<std::size_t, std::size_t> chunk_range(std::size_t n, int chunks, int c) {
  const std::size_t k = static_cast<std::size_t>(chunks);
  return {n * static_cast<std::size_t>(c) / k, n * static_cast<std::size_t>(c + 1) / k};
}

template <class T, class Key>
void parallel_sort(std::vector<T>& v, int nthreads, Key key) {
  auto less = [&](const T& a, const T& b) { return key(a) < key(b); };
  const int chunks = std::max(1, std::min<int>(nthreads, static_cast<int>(v.size() / 4096) + 1));
  if (chunks == 1) {
    std::sort(v.begin(), v.end(), less);
    return;
  }
  std::vector<std::size_t> bounds;
  for (int c = 0; c <= chunks; ++c) bounds.push_back(chunk_range(v.size(), chunks, c).first);
  bounds.back() = v.size();
  parallel_chunks(nthreads, chunks, [&](int c) { std::sort(v.begin() + bounds[c], v.begin() + bounds[c + 1], less); });
  while (bounds.size() > 2) {
    std::vector<std::size_t> next;
    const int pairs = static_cast<int>((bounds.size() - 1) / 2);
    parallel_chunks(nthreads, pairs, [&](int p) {
      std::inplace_merge(v.begin() + bounds[2 * p], v.begin() + bounds[2 * p + 1], v.begin() + bounds[2 * p + 2],
                         less);
    });
    for (std::size_t i = 0; i < bounds.size(); i += 2) next.push_back(bounds[i]);
    if (next.back() != bounds.back()) next.push_back(bounds.back());
    bounds = std::move(next);
  }
}

inline void store_u32(std::uint8_t* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}
inline void store_u64(std::uint8_t* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}
inline std::uint32_t load_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}
inline std::uint64_t load_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

GlobalId neighbor_ref(const TetMesh& m, TetId t, int f) {
  const TetId nb = m.tet(t).n[f];
  if (nb == kBoundary) return kRefBoundary;
  if (nb == kMissing) {
    const GlobalId r = m.missing_ref(t, f);
    return r == kRefBoundary ? kRefUnknown : r;
  }
  return m.tet(nb).gid;
}

std::vector<VertexRecord> vertices_for(const std::vector<TetRecord>& tets,
                                       const std::vector<VertexRecord>& all) {
  std::vector<GlobalId> gids;
  gids.reserve(tets.size() * 4);
  for (const TetRecord& r : tets) gids.insert(gids.end(), r.v.begin(), r.v.end());
  std::sort(gids.begin(), gids.end());
  gids.erase(std::unique(gids.begin(), gids.end()), gids.end());
  std::vector<VertexRecord> out;
  out.reserve(gids.size());
  auto it = all.begin();
  for (GlobalId g : gids) {
    it = std::lower_bound(it, all.end(), g, [](const VertexRecord& r, GlobalId x) { return r.gid < x; });
    out.push_back(*it);
  }
  return out;
}

}  // namespace

SubmeshPack extract(const TetMesh& mesh, std::span<const LeafId> leaves, int nthreads) {
  nthreads = std::max(1, nthreads);
  SubmeshPack out;
  out.leaves.assign(leaves.begin(), leaves.end());
  std::sort(out.leaves.begin(), out.leaves.end());
  out.leaves.erase(std::unique(out.leaves.begin(), out.leaves.end()), out.leaves.end());
  const bool all = out.leaves.empty();
  auto wanted = [&](LeafId l) { return all || std::binary_search(out.leaves.begin(), out.leaves.end(), l); };

  const TetId slots = mesh.slot_count();
  const int chunks = nthreads;
  std::vector<std::vector<TetRecord>> tparts(static_cast<std::size_t>(chunks));
  std::vector<std::vector<VertexId>> vparts(static_cast<std::size_t>(chunks));
  parallel_chunks(nthreads, chunks, [&](int c) {
    const auto [lo, hi] = chunk_range(slots, chunks, c);
    auto& tp = tparts[static_cast<std::size_t>(c)];
    auto& vp = vparts[static_cast<std::size_t>(c)];
    for (std::size_t s = lo; s < hi; ++s) {
      const TetId t = static_cast<TetId>(s);
      const Tet& x = mesh.tet(t);
      if (!x.alive || !wanted(x.owner)) continue;
      TetRecord r;
      r.gid = x.gid;
      r.owner = x.owner;
      for (int i = 0; i < 4; ++i) {
        r.v[i] = mesh.vertex_gid(x.v[i]);
        r.n[i] = neighbor_ref(mesh, t, i);
        vp.push_back(x.v[i]);
      }
      tp.push_back(r);
    }
    std::sort(vp.begin(), vp.end());
    vp.erase(std::unique(vp.begin(), vp.end()), vp.end());
  });

  for (auto& p : tparts) out.tets.insert(out.tets.end(), p.begin(), p.end());
  std::vector<VertexId> vids;
  for (auto& p : vparts) vids.insert(vids.end(), p.begin(), p.end());
  std::sort(vids.begin(), vids.end());
  vids.erase(std::unique(vids.begin(), vids.end()), vids.end());
  out.vertices.resize(vids.size());
  parallel_chunks(nthreads, chunks, [&](int c) {
    const auto [lo, hi] = chunk_range(vids.size(), chunks, c);
    for (std::size_t i = lo; i < hi; ++i) out.vertices[i] = {mesh.vertex_gid(vids[i]), mesh.point(vids[i])};
  });

  parallel_sort(out.tets, nthreads, [](const TetRecord& r) { return r.gid; });
  parallel_sort(out.vertices, nthreads, [](const VertexRecord& r) { return r.gid; });
  return out;
}

std::vector<SubmeshPack> extract_by_leaf(const TetMesh& mesh, int nthreads) {
  SubmeshPack all = extract(mesh, {}, nthreads);
  std::vector<LeafId> owners;
  for (const TetRecord& r : all.tets) owners.push_back(r.owner);
  std::sort(owners.begin(), owners.end());
  owners.erase(std::unique(owners.begin(), owners.end()), owners.end());

  std::vector<SubmeshPack> out(owners.size());
  for (std::size_t i = 0; i < owners.size(); ++i) out[i].leaves = {owners[i]};
  for (const TetRecord& r : all.tets) {
    const auto i = std::lower_bound(owners.begin(), owners.end(), r.owner) - owners.begin();
    out[static_cast<std::size_t>(i)].tets.push_back(r);
  }
  const int chunks = std::max(1, std::min<int>(nthreads, static_cast<int>(out.size())));
  parallel_chunks(nthreads, chunks, [&](int c) {
    const auto [lo, hi] = chunk_range(out.size(), chunks, c);
    for (std::size_t i = lo; i < hi; ++i) out[i].vertices = vertices_for(out[i].tets, all.vertices);
  });
  return out;
}

SubmeshPack merge(std::span<const SubmeshPack> packs) {
  SubmeshPack out;
  for (const SubmeshPack& p : packs) {
    out.leaves.insert(out.leaves.end(), p.leaves.begin(), p.leaves.end());
    out.vertices.insert(out.vertices.end(), p.vertices.begin(), p.vertices.end());
    out.tets.insert(out.tets.end(), p.tets.begin(), p.tets.end());
  }
  std::sort(out.leaves.begin(), out.leaves.end());
  out.leaves.erase(std::unique(out.leaves.begin(), out.leaves.end()), out.leaves.end());

  std::sort(out.vertices.begin(), out.vertices.end(),
            [](const VertexRecord& a, const VertexRecord& b) { return a.gid < b.gid; });
  for (std::size_t i = 1; i < out.vertices.size(); ++i) {
    if (out.vertices[i].gid == out.vertices[i - 1].gid && !(out.vertices[i].p == out.vertices[i - 1].p)) {
      throw ProtocolError("vertex " + std::to_string(out.vertices[i].gid) + " has two positions");
    }
  }
  out.vertices.erase(std::unique(out.vertices.begin(), out.vertices.end(),
                                 [](const VertexRecord& a, const VertexRecord& b) { return a.gid == b.gid; }),
                     out.vertices.end());

  std::sort(out.tets.begin(), out.tets.end(), [](const TetRecord& a, const TetRecord& b) { return a.gid < b.gid; });
  for (std::size_t i = 1; i < out.tets.size(); ++i) {
    if (out.tets[i].gid == out.tets[i - 1].gid) {
      throw ProtocolError("tet " + std::to_string(out.tets[i].gid) + " present in two packs");
    }
  }
  return out;
}

std::vector<std::uint8_t> encode(const SubmeshPack& pack, int nthreads) {
  nthreads = std::max(1, nthreads);
  const std::size_t payload =
      pack.leaves.size() * kLeafBytes + pack.vertices.size() * kVertexBytes + pack.tets.size() * kTetBytes;
  std::vector<std::uint8_t> out(kHeaderBytes + payload);
  std::uint8_t* p = out.data();
  std::memcpy(p, kMagic, 4);
  p[4] = kPackVersion;
  store_u32(p + 8, static_cast<std::uint32_t>(pack.leaves.size()));
  store_u64(p + 12, pack.vertices.size());
  store_u64(p + 20, pack.tets.size());
  store_u64(p + 28, payload);

  std::uint8_t* leaves_at = p + kHeaderBytes;
  for (std::size_t i = 0; i < pack.leaves.size(); ++i) {
    store_u32(leaves_at + i * kLeafBytes, static_cast<std::uint32_t>(pack.leaves[i]));
  }
  std::uint8_t* verts_at = leaves_at + pack.leaves.size() * kLeafBytes;
  std::uint8_t* tets_at = verts_at + pack.vertices.size() * kVertexBytes;
  parallel_chunks(nthreads, nthreads, [&](int c) {
    const auto [vlo, vhi] = chunk_range(pack.vertices.size(), nthreads, c);
    for (std::size_t i = vlo; i < vhi; ++i) {
      std::uint8_t* q = verts_at + i * kVertexBytes;
      const VertexRecord& r = pack.vertices[i];
      store_u64(q, r.gid);
      store_u64(q + 8, std::bit_cast<std::uint64_t>(r.p.x));
      store_u64(q + 16, std::bit_cast<std::uint64_t>(r.p.y));
      store_u64(q + 24, std::bit_cast<std::uint64_t>(r.p.z));
    }
    const auto [tlo, thi] = chunk_range(pack.tets.size(), nthreads, c);
    for (std::size_t i = tlo; i < thi; ++i) {
      std::uint8_t* q = tets_at + i * kTetBytes;
      const TetRecord& r = pack.tets[i];
      store_u64(q, r.gid);
      for (int k = 0; k < 4; ++k) store_u64(q + 8 + 8 * k, r.v[k]);
      for (int k = 0; k < 4; ++k) store_u64(q + 40 + 8 * k, r.n[k]);
      store_u32(q + 72, static_cast<std::uint32_t>(r.owner));
    }
  });
  return out;
}

SubmeshPack decode(std::span<const std::uint8_t> bytes, int nthreads) {
  nthreads = std::max(1, nthreads);
  if (bytes.size() < kHeaderBytes) {
    throw ProtocolError("submesh pack truncated: " + std::to_string(bytes.size()) + " bytes, header needs " +
                        std::to_string(kHeaderBytes));
  }
  const std::uint8_t* p = bytes.data();
  if (std::memcmp(p, kMagic, 4) != 0) throw ProtocolError("not a submesh pack (bad magic)");
  if (p[4] != kPackVersion) {
    throw ProtocolError("submesh pack version " + std::to_string(p[4]) + ", expected " +
                        std::to_string(kPackVersion));
  }
  const std::uint64_t nl = load_u32(p + 8), nv = load_u64(p + 12), nt = load_u64(p + 20), payload = load_u64(p + 28);
  // Guard the products below against absurd counts before multiplying.
  if (nv > bytes.size() || nt > bytes.size() || nl > bytes.size() ||
      payload != nl * kLeafBytes + nv * kVertexBytes + nt * kTetBytes) {
    throw ProtocolError("submesh pack header counts disagree with its payload length");
  }
  if (bytes.size() - kHeaderBytes != payload) {
    throw ProtocolError("submesh pack truncated: payload " + std::to_string(bytes.size() - kHeaderBytes) +
                        " bytes, header says " + std::to_string(payload));
  }

  SubmeshPack out;
  out.leaves.resize(nl);
  out.vertices.resize(nv);
  out.tets.resize(nt);
  const std::uint8_t* leaves_at = p + kHeaderBytes;
  for (std::size_t i = 0; i < nl; ++i) out.leaves[i] = static_cast<LeafId>(load_u32(leaves_at + i * kLeafBytes));
  const std::uint8_t* verts_at = leaves_at + nl * kLeafBytes;
  const std::uint8_t* tets_at = verts_at + nv * kVertexBytes;
  parallel_chunks(nthreads, nthreads, [&](int c) {
    const auto [vlo, vhi] = chunk_range(nv, nthreads, c);
    for (std::size_t i = vlo; i < vhi; ++i) {
      const std::uint8_t* q = verts_at + i * kVertexBytes;
      VertexRecord& r = out.vertices[i];
      r.gid = load_u64(q);
      r.p = {std::bit_cast<double>(load_u64(q + 8)), std::bit_cast<double>(load_u64(q + 16)),
             std::bit_cast<double>(load_u64(q + 24))};
    }
    const auto [tlo, thi] = chunk_range(nt, nthreads, c);
    for (std::size_t i = tlo; i < thi; ++i) {
      const std::uint8_t* q = tets_at + i * kTetBytes;
      TetRecord& r = out.tets[i];
      r.gid = load_u64(q);
      for (int k = 0; k < 4; ++k) r.v[k] = load_u64(q + 8 + 8 * k);
      for (int k = 0; k < 4; ++k) r.n[k] = load_u64(q + 40 + 8 * k);
      r.owner = static_cast<LeafId>(load_u32(q + 72));
    }
  });

  auto by_gid = [](const auto& a, const auto& b) { return a.gid < b.gid; };
  auto strictly = [&](const auto& v) {
    return std::adjacent_find(v.begin(), v.end(), [&](const auto& a, const auto& b) { return !by_gid(a, b); }) ==
           v.end();
  };
  if (!strictly(out.vertices) || !strictly(out.tets) ||
      std::adjacent_find(out.leaves.begin(), out.leaves.end(), std::greater_equal<>()) != out.leaves.end()) {
    throw ProtocolError("submesh pack records are not in canonical ascending order");
  }
  return out;
}

TetMesh build_mesh(std::span<const SubmeshPack> packs, std::shared_ptr<GidSpace> ids, const Box& bounds) {
  const SubmeshPack all = packs.size() == 1 ? packs[0] : merge(packs);
  TetMesh m(std::move(ids));
  m.set_bounds(bounds);

  for (const VertexRecord& r : all.vertices) {
    m.add_vertex(r.p, r.gid);
    m.ids().observe_vertex(r.gid);
  }
  auto vertex_of = [&](GlobalId g) -> VertexId {
    auto it = std::lower_bound(all.vertices.begin(), all.vertices.end(), g,
                               [](const VertexRecord& r, GlobalId x) { return r.gid < x; });
    if (it == all.vertices.end() || it->gid != g) {
      throw ProtocolError("tet references vertex " + std::to_string(g) + " absent from the pack");
    }
    return static_cast<VertexId>(it - all.vertices.begin());
  };
  auto tet_of = [&](GlobalId g) -> std::optional<TetId> {
    auto it = std::lower_bound(all.tets.begin(), all.tets.end(), g,
                               [](const TetRecord& r, GlobalId x) { return r.gid < x; });
    if (it == all.tets.end() || it->gid != g) return std::nullopt;
    return static_cast<TetId>(it - all.tets.begin());
  };

  struct Facet {
    std::array<GlobalId, 3> key;
    TetId tet;
    int face;
  };
  std::vector<Facet> facets;
  facets.reserve(all.tets.size() * 4);
  for (const TetRecord& r : all.tets) {
    const TetId t = m.push_slot();
    Tet& x = m.tet(t);
    for (int i = 0; i < 4; ++i) x.v[i] = vertex_of(r.v[i]);
    x.n = {kMissing, kMissing, kMissing, kMissing};
    x.gid = r.gid;
    x.owner = r.owner;
    x.alive = true;
    m.ids().observe_tet(r.gid);
    for (int f = 0; f < 4; ++f) {
      std::array<GlobalId, 3> k;
      for (int i = 0, j = 0; i < 4; ++i) {
        if (i != f) k[j++] = r.v[i];
      }
      std::sort(k.begin(), k.end());
      facets.push_back({k, t, f});
    }
  }
  m.add_alive(static_cast<std::int64_t>(all.tets.size()));
  std::sort(facets.begin(), facets.end(), [](const Facet& a, const Facet& b) {
    return a.key != b.key ? a.key < b.key : (a.tet != b.tet ? a.tet < b.tet : a.face < b.face);
  });

  for (std::size_t i = 0; i < facets.size();) {
    std::size_t j = i + 1;
    while (j < facets.size() && facets[j].key == facets[i].key) ++j;
    if (j - i > 2) {
      throw ProtocolError("facet shared by " + std::to_string(j - i) + " tets (first tet gid " +
                          std::to_string(all.tets[facets[i].tet].gid) + ")");
    }
    for (std::size_t a = i; a < j; ++a) {
      const Facet& f = facets[a];
      const GlobalId ref = all.tets[f.tet].n[f.face];
      TetId& slot = m.tet(f.tet).n[f.face];
      if (ref != kRefBoundary && ref != kRefUnknown) {
        if (auto nb = tet_of(ref)) {
          slot = *nb;
          continue;
        }
      }
      if (j - i == 2) {
        slot = facets[a == i ? i + 1 : i].tet;
      } else if (ref == kRefBoundary) {
        slot = kBoundary;
      } else {
        slot = kMissing;
        if (ref != kRefUnknown) m.set_missing_ref(f.tet, f.face, ref);
      }
    }
    i = j;
  }
  return m;
}

TetMesh unpack(std::span<const std::uint8_t> bytes, std::shared_ptr<GidSpace> ids, const Box& bounds) {
  const SubmeshPack p = decode(bytes);
  return build_mesh(std::span<const SubmeshPack>(&p, 1), std::move(ids), bounds);
}

namespace {
constexpr std::uint8_t kDumpMagic[4] = {'I', '2', 'M', 'D'};
}

void write_mesh_dump(const TetMesh& mesh, const std::string& path) {
  ByteWriter w;
  w.bytes(kDumpMagic);
  w.u8(kPackVersion);
  const Box& b = mesh.bounds();
  for (double x : {b.lo.x, b.lo.y, b.lo.z, b.hi.x, b.hi.y, b.hi.z}) w.f64(x);
  SubmeshPack p = extract(mesh, {});
  for (const TetRecord& r : p.tets) p.leaves.push_back(r.owner);
  std::sort(p.leaves.begin(), p.leaves.end());
  p.leaves.erase(std::unique(p.leaves.begin(), p.leaves.end()), p.leaves.end());
  w.bytes(encode(p));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write mesh dump " + path);
  const auto& buf = w.buffer();
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error("cannot write mesh dump " + path);
}

TetMesh read_mesh_dump(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read mesh dump " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ByteReader r(bytes, "mesh dump " + path);
  const auto magic = r.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kDumpMagic)) throw ProtocolError(path + " is not a mesh dump");
  if (const auto v = r.u8(); v != kPackVersion) {
    throw ProtocolError("mesh dump version " + std::to_string(v) + ", expected " + std::to_string(kPackVersion));
  }
  Box b;
  b.lo = {r.f64(), r.f64(), r.f64()};
  b.hi = {r.f64(), r.f64(), r.f64()};
  const std::size_t head = 4 + 1 + 6 * 8;
  return unpack(std::span<const std::uint8_t>(bytes).subspan(head), std::make_shared<GidSpace>(0), b);
}

}  // namespace i2m
