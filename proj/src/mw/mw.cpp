#include "i2m/mw/mw.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <exception>
#include <map>
#include <optional>
#include <thread>

#include "i2m/common/bytes.hpp"
#include "i2m/common/error.hpp"
#include "i2m/delaunay/delaunay.hpp"
#include "i2m/podm/podm.hpp"

namespace i2m {

namespace {

using Clock = std::chrono::steady_clock;
constexpr auto kRecvSlice = std::chrono::milliseconds(10);

// ---------------------------------------------------------------- payloads

void put_stats(ByteWriter& w, const RefineStats& s) {
  for (auto v : {s.insertions, s.initial_bad, s.deferred, s.duplicates, s.rejected, s.rollbacks}) w.u64(v);
  w.f64(s.wall_seconds);
}

RefineStats get_stats(ByteReader& r) {
  RefineStats s;
  s.insertions = r.u64();
  s.initial_bad = r.u64();
  s.deferred = r.u64();
  s.duplicates = r.u64();
  s.rejected = r.u64();
  s.rollbacks = r.u64();
  s.wall_seconds = r.f64();
  return s;
}

void expect_done(const ByteReader& r, MsgKind k) {
  if (!r.done()) {
    throw ProtocolError(std::string(kind_name(k)) + " payload has " + std::to_string(r.remaining()) +
                        " trailing bytes");
  }
}

struct Grant {
  LeafId leaf = 0;
  std::vector<std::pair<LeafId, int>> owners;  // influence region, ascending leaf
};

std::vector<std::uint8_t> encode_grant(const Grant& g) {
  ByteWriter w;
  w.i32(g.leaf);
  w.u32(static_cast<std::uint32_t>(g.owners.size()));
  for (auto [l, o] : g.owners) {
    w.i32(l);
    w.i32(o);
  }
  return w.take();
}

Grant decode_grant(std::span<const std::uint8_t> b) {
  ByteReader r(b, "TaskGrant");
  Grant g;
  g.leaf = r.i32();
  const std::uint32_t n = r.u32();
  r.need(static_cast<std::size_t>(n) * 8);
  for (std::uint32_t i = 0; i < n; ++i) {
    const LeafId l = r.i32();
    g.owners.emplace_back(l, r.i32());
  }
  expect_done(r, MsgKind::TaskGrant);
  return g;
}

std::vector<std::uint8_t> encode_leaves(std::span<const LeafId> leaves) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(leaves.size()));
  for (LeafId l : leaves) w.i32(l);
  return w.take();
}

std::vector<LeafId> decode_leaves(std::span<const std::uint8_t> b) {
  ByteReader r(b, "SubmeshRequest");
  const std::uint32_t n = r.u32();
  r.need(static_cast<std::size_t>(n) * 4);
  std::vector<LeafId> out(n);
  for (auto& l : out) l = r.i32();
  expect_done(r, MsgKind::SubmeshRequest);
  return out;
}

struct LeafState {
  LeafId leaf = 0;
  std::uint64_t count = 0;
  bool dirty = false;
};

struct Result {
  LeafId leaf = 0;
  RefineStats stats;
  std::vector<LeafState> region;
};

std::vector<std::uint8_t> encode_result(const Result& res) {
  ByteWriter w;
  w.i32(res.leaf);
  put_stats(w, res.stats);
  w.u32(static_cast<std::uint32_t>(res.region.size()));
  for (const LeafState& s : res.region) {
    w.i32(s.leaf);
    w.u64(s.count);
    w.u8(s.dirty ? 1 : 0);
  }
  return w.take();
}

Result decode_result(std::span<const std::uint8_t> b) {
  ByteReader r(b, "ResultSubmit");
  Result res;
  res.leaf = r.i32();
  res.stats = get_stats(r);
  const std::uint32_t n = r.u32();
  r.need(static_cast<std::size_t>(n) * 13);
  for (std::uint32_t i = 0; i < n; ++i) {
    LeafState s;
    s.leaf = r.i32();
    s.count = r.u64();
    s.dirty = r.u8() != 0;
    res.region.push_back(s);
  }
  expect_done(r, MsgKind::ResultSubmit);
  return res;
}

struct Report {
  Breakdown breakdown;
  RefineStats stats;
  std::uint64_t tasks = 0;
};

std::vector<std::uint8_t> encode_report(const Report& rep) {
  ByteWriter w;
  w.i32(rep.breakdown.rank);
  w.f64(rep.breakdown.wall);
  for (double s : rep.breakdown.seconds) w.f64(s);
  put_stats(w, rep.stats);
  w.u64(rep.tasks);
  return w.take();
}

Report decode_report(std::span<const std::uint8_t> b) {
  ByteReader r(b, "Report");
  Report rep;
  rep.breakdown.rank = r.i32();
  rep.breakdown.wall = r.f64();
  for (double& s : rep.breakdown.seconds) s = r.f64();
  rep.stats = get_stats(r);
  rep.tasks = r.u64();
  expect_done(r, MsgKind::Report);
  return rep;
}

std::string decode_abort(std::span<const std::uint8_t> b) {
  ByteReader r(b, "Abort");
  return r.str();
}

Envelope make(MsgKind k, std::vector<std::uint8_t> payload = {}) {
  Envelope e;
  e.kind = k;
  e.payload = std::move(payload);
  return e;
}

void send_abort(Transport& tr, int to, const std::string& why) {
  try {
    ByteWriter w;
    w.str(why);
    tr.send(to, make(MsgKind::Abort, w.take()));
  } catch (const std::exception&) {
    // peer already gone
  }
}

[[noreturn]] void unexpected(const Envelope& e, const char* where) {
  throw ProtocolError(std::string("unexpected ") + kind_name(e.kind) + " from rank " + std::to_string(e.sender) +
                      " " + where);
}

[[noreturn]] void aborted(const Envelope& e) {
  throw ProtocolError("rank " + std::to_string(e.sender) + " aborted: " + decode_abort(e.payload));
}

std::vector<char> mask(std::size_t n, std::span<const LeafId> leaves) {
  std::vector<char> m(n, 0);
  for (LeafId l : leaves) m[static_cast<std::size_t>(l)] = 1;
  return m;
}

/// Serves a SubmeshRequest from a leaf store; the served leaves leave it.
void serve(Transport& tr, const Envelope& e, std::map<LeafId, SubmeshPack>& store, int pack_threads,
           BreakdownTimer& timer, std::uint64_t* bytes = nullptr) {
  auto poll = timer.scope(Category::Poll);
  const std::vector<LeafId> want = decode_leaves(e.payload);
  std::vector<std::uint8_t> payload;
  {
    auto pack = timer.scope(Category::Pack);
    std::vector<SubmeshPack> parts;
    for (LeafId l : want) {
      auto it = store.find(l);
      if (it == store.end()) {
        throw ProtocolError("rank " + std::to_string(tr.rank()) + " asked for leaf " + std::to_string(l) +
                            " it does not own");
      }
      parts.push_back(std::move(it->second));
      store.erase(it);
    }
    SubmeshPack merged = merge(parts);
    merged.leaves = want;
    std::sort(merged.leaves.begin(), merged.leaves.end());
    payload = encode(merged, pack_threads);
  }
  if (bytes) *bytes += payload.size();
  tr.send(e.sender, make(MsgKind::SubmeshReply, std::move(payload)));
}

void add_empty_leaves(std::map<LeafId, SubmeshPack>& store, std::span<const LeafId> leaves) {
  for (LeafId l : leaves) {
    auto& p = store[l];
    p.leaves = {l};
  }
}

// ---------------------------------------------------------------- worker

class Worker {
 public:
  Worker(Transport& tr, const LabeledImage& img, const MwConfig& cfg)
      : tr_(tr),
        img_(img),
        cfg_(cfg),
        dec_(cfg.depth, img.bounds()),
        ids_(std::make_shared<GidSpace>(static_cast<std::uint32_t>(tr.rank()))),
        timer_(tr.rank()) {}

  Breakdown run() {
    for (int p = 1; p < tr_.size(); ++p) tr_.set_critical(p, false);
    timer_.enter(Category::Idle);  // gaps between scopes count as waiting
    bool need_request = true;
    auto retry_at = Clock::now();
    for (;;) {
      if (need_request && Clock::now() >= retry_at) {
        tr_.send(0, make(MsgKind::TaskRequest));
        need_request = false;
      }
      const auto wait = need_request ? std::max(Clock::duration::zero(), retry_at - Clock::now())
                                     : Clock::duration(kRecvSlice);
      auto e = tr_.recv(wait);
      if (!e) continue;
      switch (e->kind) {
        case MsgKind::SubmeshRequest:
          serve(tr_, *e, store_, cfg_.pack_threads, timer_);
          break;
        case MsgKind::NoWorkYet:
          need_request = true;
          retry_at = Clock::now() + cfg_.backoff;
          break;
        case MsgKind::TaskGrant:
          task(decode_grant(e->payload));
          need_request = true;
          retry_at = Clock::now();
          break;
        case MsgKind::Terminate: {
          timer_.exit(Category::Idle);
          const Breakdown b = timer_.finish();
          tr_.send(0, make(MsgKind::Report, encode_report({b, stats_, tasks_})));
          return b;
        }
        case MsgKind::Abort:
          aborted(*e);
        default:
          unexpected(*e, "while waiting for work");
      }
    }
  }

 private:
  void task(const Grant& g) {
    ++tasks_;
    std::vector<LeafId> region;
    for (auto [l, o] : g.owners) region.push_back(l);
    if (region != dec_.influence(g.leaf)) throw ProtocolError("grant for leaf " + std::to_string(g.leaf) +
                                                              " does not carry its influence region");

    std::map<int, std::vector<LeafId>> by_owner;
    for (auto [l, o] : g.owners) {
      if (o != tr_.rank()) by_owner[o].push_back(l);
    }
    std::vector<Envelope> replies;
    {
      auto poll = timer_.scope(Category::Poll);
      for (const auto& [o, leaves] : by_owner) tr_.send(o, make(MsgKind::SubmeshRequest, encode_leaves(leaves)));
      while (replies.size() < by_owner.size()) {
        auto e = tr_.recv(kRecvSlice);
        if (!e) continue;
        if (e->kind == MsgKind::SubmeshRequest) {
          serve(tr_, *e, store_, cfg_.pack_threads, timer_);
        } else if (e->kind == MsgKind::SubmeshReply) {
          replies.push_back(std::move(*e));
        } else if (e->kind == MsgKind::Abort) {
          aborted(*e);
        } else {
          unexpected(*e, "while fetching submeshes");
        }
      }
    }

    TetMesh mesh;
    {
      auto unpack = timer_.scope(Category::Unpack);
      std::vector<SubmeshPack> parts;
      for (const Envelope& e : replies) {
        SubmeshPack p = decode(e.payload, cfg_.pack_threads);
        const auto& want = by_owner.at(e.sender);
        if (p.leaves != want) {
          throw ProtocolError("rank " + std::to_string(e.sender) + " replied with the wrong leaf set");
        }
        parts.push_back(std::move(p));
      }
      for (LeafId l : region) {
        auto it = store_.find(l);
        if (it == store_.end()) continue;
        parts.push_back(std::move(it->second));
        store_.erase(it);
      }
      mesh = build_mesh(parts, ids_, img_.bounds());
    }

    RefineStats st;
    {
      auto m = timer_.scope(Category::Mesh);
      RefineScope scope;
      scope.locator = &dec_;
      scope.refine_leaves = mask(dec_.leaf_count(), std::span<const LeafId>(&g.leaf, 1));
      scope.writable_leaves = mask(dec_.leaf_count(), region);
      if (!cfg_.serve_while_meshing) {
        st = refine_parallel(mesh, img_, cfg_.rule, cfg_.threads_per_rank, scope, cfg_.watchdog);
      } else {
        std::exception_ptr err;
        std::atomic<bool> done{false};
        std::thread th([&] {
          try {
            st = refine_parallel(mesh, img_, cfg_.rule, cfg_.threads_per_rank, scope, cfg_.watchdog);
          } catch (...) {
            err = std::current_exception();
          }
          done = true;
        });
        try {
          while (!done) {
            auto e = tr_.recv(std::chrono::milliseconds(1));
            if (!e) continue;
            if (e->kind == MsgKind::SubmeshRequest) {
              serve(tr_, *e, store_, cfg_.pack_threads, timer_);
            } else if (e->kind == MsgKind::Abort) {
              aborted(*e);
            } else {
              unexpected(*e, "while meshing");
            }
          }
        } catch (...) {
          th.join();
          throw;
        }
        th.join();
        if (err) std::rethrow_exception(err);
      }
    }
    stats_ += st;

    Result res;
    res.leaf = g.leaf;
    res.stats = st;
    {
      auto pack = timer_.scope(Category::Pack);
      const BadnessOracle oracle(img_, cfg_.rule);
      std::map<LeafId, LeafState> state;
      for (LeafId l : region) state[l] = {l, 0, false};
      const TetId slots = mesh.slot_count();
      for (TetId t = 0; t < slots; ++t) {
        const Tet& x = mesh.tet(t);
        if (!x.alive) continue;
        auto it = state.find(x.owner);
        if (it == state.end()) throw ProtocolError("task produced a tet outside its influence region");
        ++it->second.count;
        if (!it->second.dirty && oracle.is_bad(mesh, t)) it->second.dirty = true;
      }
      for (auto& [l, s] : state) res.region.push_back(s);
      for (SubmeshPack& p : extract_by_leaf(mesh, cfg_.pack_threads)) {
        const LeafId l = p.leaves.front();
        store_[l] = std::move(p);
      }
      add_empty_leaves(store_, region);
      tr_.send(0, make(MsgKind::ResultSubmit, encode_result(res)));
    }
  }

  Transport& tr_;
  const LabeledImage& img_;
  const MwConfig& cfg_;
  Decomposition dec_;
  std::shared_ptr<GidSpace> ids_;
  BreakdownTimer timer_;
  std::map<LeafId, SubmeshPack> store_;
  RefineStats stats_;
  std::uint64_t tasks_ = 0;
};

}  // namespace

void MwConfig::validate(const LabeledImage& img) const {
  if (workers < 1) throw UsageError("mw needs at least one worker rank");
  if (threads_per_rank < 1) throw UsageError("threads per rank must be at least 1");
  if (pack_threads < 1) throw UsageError("pack threads must be at least 1");
  if (depth < 0 || depth > Decomposition::kMaxDepth) {
    throw UsageError("octree depth must be in [0, " + std::to_string(Decomposition::kMaxDepth) + "]");
  }
  if (coarse_h < 0.0) throw UsageError("coarse h must be positive");
  rule.validate(img);
}

RefineStats MwResult::total() const {
  RefineStats s = background;
  s += tasks;
  s += cleanup;
  return s;
}

TetMesh coarse_mesh(const LabeledImage& img, const MwConfig& cfg, Decomposition& dec, RefineStats* stats) {
  TetMesh m = bootstrap(img, std::make_shared<GidSpace>(0));
  const double h = cfg.coarse_h > 0.0 ? cfg.coarse_h : default_coarse_h(img.bounds(), cfg.depth);
  const RefineStats st = refine_background_parallel(m, img, h, cfg.rule.rho_bar, cfg.threads_per_rank, {},
                                                    cfg.watchdog);
  if (stats) *stats = st;
  const BadnessOracle oracle(img, cfg.rule);
  partition(m, dec, &oracle);
  return m;
}

MwResult run_master(Transport& tr, const LabeledImage& img, const MwConfig& cfg, TetMesh coarse, Decomposition dec,
                    BreakdownTimer& timer) {
  MwResult out;
  out.leaves = dec.leaf_count();
  const auto t0 = Clock::now();
  auto since = [&] { return std::chrono::duration<double>(Clock::now() - t0).count(); };
  const int nworkers = tr.size() - 1;

  timer.enter(Category::Poll);  // bookkeeping between messages
  std::map<LeafId, SubmeshPack> store;
  std::shared_ptr<GidSpace> ids;
  Box bounds;
  {
    auto pre = timer.scope(Category::Preprocess);
    for (SubmeshPack& p : extract_by_leaf(coarse, cfg.pack_threads)) store[p.leaves.front()] = std::move(p);
    std::vector<LeafId> all(dec.leaf_count());
    for (std::size_t l = 0; l < all.size(); ++l) {
      all[l] = static_cast<LeafId>(l);
      dec.set_owner(all[l], 0);
    }
    add_empty_leaves(store, all);
    ids = coarse.ids_ptr();
    bounds = coarse.bounds();
    coarse = TetMesh();
  }

  std::vector<LeafId> active;
  std::map<int, LeafId> task_of;
  std::uint64_t seq = 0;
  auto check_time = [&] {
    if (cfg.time_limit_s > 0.0 && since() > cfg.time_limit_s) {
      throw RefineTimeout("distributed run exceeded its " + std::to_string(cfg.time_limit_s) + " s wall-time cap");
    }
  };
  auto next = [&]() -> std::optional<Envelope> {
    auto idle = timer.scope(Category::Idle);
    return tr.recv(kRecvSlice);
  };

  while (!active.empty() || dec.next_dirty({})) {
    check_time();
    auto e = next();
    if (!e) continue;
    switch (e->kind) {
      case MsgKind::TaskRequest: {
        if (task_of.count(e->sender)) unexpected(*e, "from a worker with an active task");
        const auto leaf = dec.next_dirty(active);
        if (!leaf) {
          tr.send(e->sender, make(MsgKind::NoWorkYet));
          break;
        }
        Grant g;
        g.leaf = *leaf;
        for (LeafId l : dec.influence(*leaf)) g.owners.emplace_back(l, dec.owner(l));
        active.push_back(*leaf);
        task_of[e->sender] = *leaf;
        out.max_active = std::max(out.max_active, active.size());
        out.grants.push_back({seq++, GrantRecord::Kind::Grant, *leaf, e->sender, since()});
        tr.send(e->sender, make(MsgKind::TaskGrant, encode_grant(g)));
        break;
      }
      case MsgKind::SubmeshRequest:
        serve(tr, *e, store, cfg.pack_threads, timer, &out.bytes_moved);
        break;
      case MsgKind::ResultSubmit: {
        const Result res = decode_result(e->payload);
        auto it = task_of.find(e->sender);
        if (it == task_of.end() || it->second != res.leaf) unexpected(*e, "for a leaf it was not granted");
        task_of.erase(it);
        active.erase(std::find(active.begin(), active.end(), res.leaf));
        out.grants.push_back({seq++, GrantRecord::Kind::Release, res.leaf, e->sender, since()});
        ++out.task_count;
        out.tasks += res.stats;
        bool leaf_dirty = false;
        for (const LeafState& s : res.region) {
          dec.set_owner(s.leaf, e->sender);
          dec.set_count(s.leaf, s.count);
          if (s.leaf == res.leaf) {
            leaf_dirty = s.dirty;
          } else if (s.dirty) {
            // Refinement next door may have freed a stuck leaf.
            if (!dec.stuck(s.leaf) || res.stats.insertions > 0) dec.mark_dirty(std::span<const LeafId>(&s.leaf, 1));
          } else {
            dec.mark_clean(s.leaf);
          }
        }
        if (!leaf_dirty) {
          dec.mark_clean(res.leaf);
        } else if (res.stats.insertions == 0) {
          dec.mark_stuck(res.leaf);
          ++out.stuck_marks;
        } else {
          dec.mark_dirty(std::span<const LeafId>(&res.leaf, 1));
        }
        break;
      }
      case MsgKind::Abort:
        aborted(*e);
      default:
        unexpected(*e, "in the master loop");
    }
  }

  // Gather every leaf back, then release the workers.
  std::map<int, std::vector<LeafId>> held;
  for (std::size_t l = 0; l < dec.leaf_count(); ++l) {
    const int o = dec.owner(static_cast<LeafId>(l));
    if (o != 0) held[o].push_back(static_cast<LeafId>(l));
  }
  for (const auto& [o, leaves] : held) tr.send(o, make(MsgKind::SubmeshRequest, encode_leaves(leaves)));
  std::vector<Envelope> replies;
  while (replies.size() < held.size()) {
    check_time();
    auto e = next();
    if (!e) continue;
    if (e->kind == MsgKind::SubmeshReply) {
      out.bytes_moved += e->payload.size();
      replies.push_back(std::move(*e));
    } else if (e->kind == MsgKind::TaskRequest) {
      tr.send(e->sender, make(MsgKind::NoWorkYet));
    } else if (e->kind == MsgKind::Abort) {
      aborted(*e);
    } else {
      unexpected(*e, "while gathering");
    }
  }
  for (int w = 1; w <= nworkers; ++w) tr.send(w, make(MsgKind::Terminate));

  out.breakdowns.resize(static_cast<std::size_t>(nworkers + 1));
  std::vector<bool> reported(static_cast<std::size_t>(nworkers + 1), false);
  int pending = nworkers;
  while (pending > 0) {
    check_time();
    auto e = next();
    if (!e) continue;
    if (e->kind == MsgKind::Report) {
      if (reported[static_cast<std::size_t>(e->sender)]) unexpected(*e, "twice");
      reported[static_cast<std::size_t>(e->sender)] = true;
      tr.set_critical(e->sender, false);
      const Report rep = decode_report(e->payload);
      out.breakdowns[static_cast<std::size_t>(e->sender)] = rep.breakdown;
      --pending;
    } else if (e->kind == MsgKind::TaskRequest) {
      // sent before the worker saw Terminate
    } else if (e->kind == MsgKind::Abort) {
      aborted(*e);
    } else {
      unexpected(*e, "while collecting reports");
    }
  }

  {
    auto unpack = timer.scope(Category::Unpack);
    std::vector<SubmeshPack> parts;
    for (const Envelope& e : replies) parts.push_back(decode(e.payload, cfg.pack_threads));
    for (auto& [l, p] : store) parts.push_back(std::move(p));
    store.clear();
    out.mesh = build_mesh(parts, ids, bounds);
  }
  {
    auto mesh = timer.scope(Category::Mesh);
    RefineScope scope;
    scope.locator = &dec;
    out.cleanup = refine_parallel(out.mesh, img, cfg.rule, cfg.threads_per_rank, scope, cfg.watchdog);
  }
  timer.exit(Category::Poll);
  return out;
}

Breakdown run_worker(Transport& tr, const LabeledImage& img, const MwConfig& cfg) {
  Worker w(tr, img, cfg);
  try {
    return w.run();
  } catch (const std::exception& ex) {
    send_abort(tr, 0, ex.what());
    throw;
  }
}

namespace {

MwResult master_side(Transport& tr, const LabeledImage& img, const MwConfig& cfg) {
  BreakdownTimer timer(0);
  timer.enter(Category::Poll);
  timer.enter(Category::Preprocess);
  Decomposition dec(cfg.depth, img.bounds());
  RefineStats background;
  TetMesh coarse = coarse_mesh(img, cfg, dec, &background);
  timer.exit(Category::Preprocess);
  try {
    MwResult r = run_master(tr, img, cfg, std::move(coarse), std::move(dec), timer);
    r.background = background;
    timer.exit(Category::Poll);
    r.breakdowns[0] = timer.finish();
    return r;
  } catch (const std::exception& ex) {
    for (int w = 1; w < tr.size(); ++w) send_abort(tr, w, ex.what());
    throw;
  }
}

MwResult run_inproc(const LabeledImage& img, const MwConfig& cfg) {
  auto hub = InprocHub::create(cfg.workers + 1);
  std::vector<std::unique_ptr<Transport>> eps;
  for (int r = 0; r <= cfg.workers; ++r) eps.push_back(hub->endpoint(r));
  std::vector<std::exception_ptr> errs(static_cast<std::size_t>(cfg.workers + 1));
  std::vector<std::thread> ts;
  for (int w = 1; w <= cfg.workers; ++w) {
    ts.emplace_back([&, w] {
      try {
        run_worker(*eps[static_cast<std::size_t>(w)], img, cfg);
      } catch (...) {
        errs[static_cast<std::size_t>(w)] = std::current_exception();
      }
      eps[static_cast<std::size_t>(w)]->close();
    });
  }
  std::optional<MwResult> res;
  try {
    res = master_side(*eps[0], img, cfg);
  } catch (...) {
    errs[0] = std::current_exception();
  }
  eps[0]->close();
  for (auto& t : ts) t.join();
  for (auto& e : errs) {
    if (e) std::rethrow_exception(e);
  }
  return std::move(*res);
}

MwResult run_socket(const LabeledImage& img, const MwConfig& cfg) {
  SocketTable table(cfg.workers + 1);
  std::fflush(nullptr);
  std::vector<pid_t> kids;
  for (int w = 1; w <= cfg.workers; ++w) {
    const pid_t pid = ::fork();
    if (pid < 0) throw TransportError("fork failed");
    if (pid == 0) {
      int code = 0;
      try {
        auto ep = table.endpoint(w);
        run_worker(*ep, img, cfg);
        ep->close();
      } catch (const std::exception& ex) {
        std::fprintf(stderr, "worker %d: %s\n", w, ex.what());
        code = 3;
      }
      std::fflush(nullptr);
      ::_exit(code);
    }
    kids.push_back(pid);
  }
  auto ep = table.endpoint(0);
  std::optional<MwResult> res;
  std::exception_ptr err;
  try {
    res = master_side(*ep, img, cfg);
  } catch (...) {
    err = std::current_exception();
  }
  ep->close();
  int failed = 0;
  for (pid_t pid : kids) {
    int status = 0;
    ::waitpid(pid, &status, 0);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) ++failed;
  }
  if (err) std::rethrow_exception(err);
  if (failed) throw ProtocolError(std::to_string(failed) + " worker process(es) exited abnormally");
  return std::move(*res);
}

}  // namespace

MwResult run_mw(const LabeledImage& img, const MwConfig& cfg) {
  cfg.validate(img);
  return cfg.transport == TransportKind::Inproc ? run_inproc(img, cfg) : run_socket(img, cfg);
}

}  // namespace i2m
