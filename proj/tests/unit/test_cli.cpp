#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "doctest.h"
#include "i2m/cli/cli.hpp"
#include "i2m/common/error.hpp"
#include "i2m/delaunay/audit.hpp"
#include "i2m/geom/predicates.hpp"

using namespace i2m;
using namespace i2m::cli;

namespace {

const char* kSphere = "sphere:r=16,dims=64";

struct Cli {
  int code = -1;
  std::string out;
};

Cli call(std::vector<std::string> args) {
  args.insert(args.begin(), "i2m");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream captured;
  auto* old = std::cout.rdbuf(captured.rdbuf());
  auto* old_err = std::cerr.rdbuf(captured.rdbuf());
  Cli c;
  c.code = cli::main(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old);
  std::cerr.rdbuf(old_err);
  c.out = captured.str();
  return c;
}

std::string tmp(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("i2m_cli_" + std::to_string(::getpid()) + "_" + name)).string();
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

RunConfig sphere(Mode m) {
  RunConfig c;
  c.mode = m;
  c.phantom = kSphere;
  c.h = 4.0;
  return c;
}

// Circumsphere test in long double by solving for the center directly.
bool inside_circumsphere(const Point3& a, const Point3& b, const Point3& c, const Point3& d, const Point3& p) {
  using L = long double;
  const L r[3][3] = {{(L)b.x - a.x, (L)b.y - a.y, (L)b.z - a.z},
                     {(L)c.x - a.x, (L)c.y - a.y, (L)c.z - a.z},
                     {(L)d.x - a.x, (L)d.y - a.y, (L)d.z - a.z}};
  L rhs[3];
  for (int i = 0; i < 3; ++i) rhs[i] = (r[i][0] * r[i][0] + r[i][1] * r[i][1] + r[i][2] * r[i][2]) / 2;
  auto det3 = [](const L m[3][3]) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  };
  const L D = det3(r);
  L x[3];
  for (int k = 0; k < 3; ++k) {
    L m[3][3];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m[i][j] = j == k ? rhs[i] : r[i][j];
    x[k] = det3(m) / D;
  }
  const L R2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
  const L px = (L)p.x - a.x - x[0], py = (L)p.y - a.y - x[1], pz = (L)p.z - a.z - x[2];
  return px * px + py * py + pz * pz < R2 * (1 - 1e-9L);
}

}  // namespace

TEST_CASE("seq run matches the pinned golden values") {
  const auto img = make_phantom(parse_phantom_spec(kSphere));
  const RunResult r = run(sphere(Mode::Seq), img);
  CHECK(r.audits.ok());
  CHECK(r.mesh.alive_count() == 2583);
  CHECK(r.kept == 1262);
  CHECK(r.stats.insertions == 468);
  CHECK(r.quality.sliver_fraction < 0.005);
  CHECK(r.report["elements"] == 2583);
  CHECK(r.report["audits"]["ok"] == true);
  CHECK(r.report["config"]["mode"] == "seq");
  REQUIRE(r.breakdowns.size() == 1);
  CHECK(r.breakdowns[0].accounted());
}

TEST_CASE("seq dumps are reproducible and shared with one thread matches") {
  const std::string a = tmp("a.dump"), b = tmp("b.dump"), c = tmp("c.dump");
  const std::string h = "4";
  REQUIRE(call({"run", "--mode", "seq", "--phantom", kSphere, "--h", h, "--dump-mesh", a}).code == 0);
  REQUIRE(call({"run", "--mode", "seq", "--phantom", kSphere, "--h", h, "--dump-mesh", b}).code == 0);
  REQUIRE(call({"run", "--mode", "shared", "--threads-per-rank", "1", "--phantom", kSphere, "--h", h, "--dump-mesh",
                c})
              .code == 0);
  const auto da = slurp(a);
  CHECK(!da.empty());
  CHECK(da == slurp(b));
  CHECK(da == slurp(c));
  for (const auto& p : {a, b, c}) std::remove(p.c_str());
}

TEST_CASE("mw run writes a clean grant log and report") {
  const std::string log = tmp("grants.log"), rep = tmp("report.json"), csv = tmp("ranks.csv");
  const Cli c = call({"run", "--mode", "mw", "--ranks", "4", "--threads-per-rank", "2", "--octree-depth", "2",
                      "--phantom", kSphere, "--h", "4", "--grant-log", log, "--report", rep, "--csv", csv});
  CHECK(c.code == 0);
  std::ifstream lf(log);
  const auto grants = read_grant_log(lf);
  CHECK(!grants.empty());
  const auto img = make_phantom(parse_phantom_spec(kSphere));
  CHECK(audit_grant_log(Decomposition(2, img.bounds()), grants).empty());
  std::ifstream rf(rep);
  const auto j = nlohmann::json::parse(rf);
  CHECK(j["ranks"].size() == 5);
  CHECK(j["audits"]["grant_log"] == 0);
  CHECK(j["mw"]["workers"] == 4);
  const auto rows = slurp(csv);
  CHECK(std::count(rows.begin(), rows.end(), '\n') == 6);
  for (const auto& p : {log, rep, csv}) std::remove(p.c_str());
}

TEST_CASE("usage errors exit with 2") {
  CHECK(call({"run", "--mode", "seq", "--ranks", "2", "--phantom", kSphere, "--h", "4"}).code == kExitUsage);
  CHECK(call({"run", "--mode", "shared", "--ranks", "2", "--phantom", kSphere, "--h", "4"}).code == kExitUsage);
  CHECK(call({"run", "--mode", "mw", "--ranks", "0", "--phantom", kSphere, "--h", "4"}).code == kExitUsage);
  CHECK(call({"run", "--mode", "seq", "--phantom", kSphere}).code == kExitUsage);
  CHECK(call({"run", "--mode", "seq", "--h", "4"}).code == kExitUsage);
  CHECK(call({"run", "--mode", "seq", "--phantom", kSphere, "--image", "x.raw", "--h", "4"}).code == kExitUsage);
  CHECK(call({"run", "--mode", "bogus", "--phantom", kSphere, "--h", "4"}).code == kExitUsage);
  CHECK(call({"run", "--mode", "seq", "--threads-per-rank", "2", "--phantom", kSphere, "--h", "4"}).code ==
        kExitUsage);
  CHECK(call({"run", "--mode", "mw", "--pack-threads", "some", "--phantom", kSphere, "--h", "4"}).code ==
        kExitUsage);
  CHECK(call({"run", "--mode", "mw", "--octree-depth", "9", "--phantom", kSphere, "--h", "4"}).code == kExitUsage);
  CHECK(call({"run", "--mode", "seq", "--rho", "1.5", "--phantom", kSphere, "--h", "4"}).code == kExitUsage);
  CHECK(call({"run", "--mode", "seq", "--grant-log", "g", "--phantom", kSphere, "--h", "4"}).code == kExitUsage);
  CHECK(call({"run", "--mode", "seq", "--phantom", "cube:r=3", "--h", "4"}).code == kExitUsage);
  CHECK(call({"sweep", "--phantom", kSphere, "--h", "4", "--grid", "r=2,q=3"}).code == kExitUsage);
  CHECK(call({}).code == kExitUsage);
  CHECK(call({"--help"}).code == kExitOk);
}

TEST_CASE("grid parsing") {
  const auto cells = parse_grid("r=4,t=2,d=3,p=auto;d=2;p=1");
  REQUIRE(cells.size() == 3);
  CHECK(cells[0].ranks == 4);
  CHECK(cells[0].threads == 2);
  CHECK(cells[0].depth == 3);
  CHECK(cells[0].pack_threads == 0);
  CHECK(cells[1].depth == 2);
  CHECK(cells[1].ranks == -1);
  CHECK(cells[2].pack_threads == 1);
  RunConfig base = sphere(Mode::Mw);
  base.ranks = 3;
  const RunConfig c = apply(base, cells[1]);
  CHECK(c.ranks == 3);
  CHECK(c.depth == 2);
  CHECK(apply(base, cells[0]).pack_threads == 0);
  CHECK_THROWS_AS(parse_grid(""), UsageError);
  CHECK_THROWS_AS(parse_grid("r=x"), UsageError);
  CHECK_THROWS_AS(parse_grid("r"), UsageError);
}

TEST_CASE("sweep rows") {
  const auto img = make_phantom(parse_phantom_spec(kSphere));
  RunConfig base = sphere(Mode::Mw);
  base.ranks = 2;

  SUBCASE("one cell equals a single run") {
    base.ranks = 1;
    const SweepResult s = sweep(base, parse_grid("d=2"), img);
    REQUIRE(s.table["rows"].size() == 1);
    CHECK(s.ok);
    base.depth = 2;
    const RunResult r = run(base, img);
    const auto& row = s.table["rows"][0];
    CHECK(row["ok"] == true);
    CHECK(row["elements"] == r.mesh.alive_count());
    CHECK(row["kept"] == r.kept);
    CHECK(row["report"]["quality"] == r.report["quality"]);
    CHECK(row["report"]["ranks"].size() == r.breakdowns.size());
  }

  SUBCASE("depth and pack-thread pairs") {
    const SweepResult s = sweep(base, parse_grid("d=1;d=2;p=1;p=auto"), img);
    CHECK(s.ok);
    REQUIRE(s.table["rows"].size() == 4);
    CHECK(s.table["rows"][0]["depth"] == 1);
    CHECK(s.table["rows"][1]["depth"] == 2);
    CHECK(s.table["rows"][3]["pack_threads"] == "auto");
    const std::string csv = sweep_csv(s.table);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
    CHECK(csv.rfind("ranks,threads,depth,pack_threads,wall,preprocess,mesh,pack,unpack,poll,idle", 0) == 0);
  }

  SUBCASE("a cell failing audits stops the sweep") {
    int calls = 0;
    const RunFn faulty = [&](const RunConfig& c, const LabeledImage& im) {
      RunResult r = run(c, im);
      if (++calls == 2) r.audits.adjacency = 1;
      return r;
    };
    const SweepResult s = sweep(sphere(Mode::Seq), parse_grid("d=1;d=2;d=3"), img, faulty);
    CHECK(calls == 2);
    CHECK(!s.ok);
    CHECK(s.table["ok"] == false);
    REQUIRE(s.table["rows"].size() == 2);
    CHECK(s.table["rows"][0]["ok"] == true);
    CHECK(s.table["rows"][1]["ok"] == false);
  }

  SUBCASE("a cell that errors stops the sweep") {
    RunConfig capped = sphere(Mode::Seq);
    capped.time_limit = 1e-9;
    const SweepResult s = sweep(capped, parse_grid("d=2;d=3"), img);
    CHECK(!s.ok);
    CHECK(s.table["rows"].empty());
    CHECK(s.table.contains("error"));
  }
}

TEST_CASE("audit of a passing dump lists nothing") {
  const std::string d = tmp("pass.dump");
  REQUIRE(call({"run", "--mode", "seq", "--phantom", kSphere, "--h", "4", "--dump-mesh", d}).code == 0);
  const Cli c = call({"audit", "--input", d, "--phantom", kSphere, "--h", "4"});
  CHECK(c.code == 0);
  CHECK(c.out.find("PASS: 0 violation(s)") != std::string::npos);
  CHECK(call({"audit", "--input", d + ".absent"}).code == kExitAudit);
  CHECK(call({"audit", "--input", d, "--phantom", kSphere}).code == kExitUsage);

  SUBCASE("a coarser rule finds bad elements") {
    const Cli q = call({"audit", "--input", d, "--phantom", kSphere, "--h", "1"});
    CHECK(q.code == kExitAudit);
    CHECK(q.out.find("quality: tet") != std::string::npos);
  }
  std::remove(d.c_str());
}

TEST_CASE("audit reports a flipped neighbor id at that tet") {
  const auto img = make_phantom(parse_phantom_spec(kSphere));
  const RunResult r = run(sphere(Mode::Seq), img);
  const std::string d = tmp("flip.dump");
  write_mesh_dump(r.mesh, d);

  auto bytes = slurp(d);
  const std::size_t pack_at = 4 + 1 + 6 * 8;
  auto u32 = [&](std::size_t at) {
    std::uint32_t v = 0;
    std::memcpy(&v, bytes.data() + at, 4);
    return v;
  };
  auto u64 = [&](std::size_t at) {
    std::uint64_t v = 0;
    std::memcpy(&v, bytes.data() + at, 8);
    return v;
  };
  const std::uint64_t leaves = u32(pack_at + 8), nv = u64(pack_at + 12), nt = u64(pack_at + 20);
  const std::size_t tets_at = pack_at + 36 + leaves * 4 + nv * 32;
  REQUIRE(bytes.size() == tets_at + nt * 76);
  auto tet_at = [&](std::size_t i) { return tets_at + i * 76; };

  // Tet 0 face f now names the last tet, which is not a neighbor.
  const std::size_t k = 0;
  int face = -1;
  for (int f = 0; f < 4; ++f) {
    if (u64(tet_at(k) + 40 + 8 * f) != kRefBoundary) face = f;
  }
  REQUIRE(face >= 0);
  const GlobalId victim = u64(tet_at(k));
  const GlobalId far = u64(tet_at(nt - 1));
  std::memcpy(bytes.data() + tet_at(k) + 40 + 8 * face, &far, 8);
  {
    std::ofstream f(d, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }

  const TetMesh m = read_mesh_dump(d);
  const AuditListing a = audit_mesh(m, nullptr, nullptr);
  CHECK(a.counts.adjacency > 0);
  CHECK(a.counts.delaunay == 0);
  const std::string at = "adjacency: tet " + std::to_string(victim) + " face " + std::to_string(face);
  bool found = false;
  for (const auto& l : a.lines) found = found || l.rfind(at, 0) == 0;
  CHECK(found);

  const Cli c = call({"audit", "--input", d});
  CHECK(c.code == kExitAudit);
  CHECK(c.out.find(at) != std::string::npos);
  std::remove(d.c_str());
}

TEST_CASE("audit lists exactly the hand-built circumsphere violations") {
  // Two tets on the facet abc; apex e sits close enough to d's side that
  // each apex is inside the other tet's circumsphere.
  const Point3 a{0, 0, 0}, b{4, 0, 0}, c{0, 4, 0}, dp{1, 1, 3}, ep{1, 1, -0.5};
  const std::vector<Point3> pts{a, b, c, dp, ep};

  SubmeshPack p;
  p.leaves = {0};
  for (GlobalId g = 0; g < 5; ++g) p.vertices.push_back({g + 1, pts[g]});
  auto oriented = [&](std::array<GlobalId, 4> v) {
    if (detail::orient3d_sign(pts[v[0] - 1], pts[v[1] - 1], pts[v[2] - 1], pts[v[3] - 1]) < 0) std::swap(v[0], v[1]);
    return v;
  };
  TetRecord t1, t2;
  t1.gid = 1;
  t1.v = oriented({1, 2, 3, 4});
  t2.gid = 2;
  t2.v = oriented({1, 2, 3, 5});
  t1.n = t2.n = {kRefBoundary, kRefBoundary, kRefBoundary, kRefBoundary};
  p.tets = {t1, t2};
  const TetMesh m = build_mesh(std::span<const SubmeshPack>(&p, 1), std::make_shared<GidSpace>(0),
                               Box{{-1, -1, -1}, {5, 5, 5}});
  const std::string d = tmp("pair.dump");
  write_mesh_dump(m, d);

  std::vector<std::string> expected;
  for (const TetRecord& t : p.tets) {
    for (const VertexRecord& v : p.vertices) {
      if (std::find(t.v.begin(), t.v.end(), v.gid) != t.v.end()) continue;
      if (inside_circumsphere(pts[t.v[0] - 1], pts[t.v[1] - 1], pts[t.v[2] - 1], pts[t.v[3] - 1], v.p)) {
        expected.push_back("delaunay: vertex " + std::to_string(v.gid) +
                           " lies inside the circumsphere of tet " + std::to_string(t.gid));
      }
    }
  }
  REQUIRE(expected.size() == 2);

  const AuditListing l = audit_mesh(read_mesh_dump(d), nullptr, nullptr);
  std::vector<std::string> got;
  for (const auto& line : l.lines) {
    if (line.rfind("delaunay:", 0) == 0) got.push_back(line);
  }
  std::sort(got.begin(), got.end());
  std::sort(expected.begin(), expected.end());
  CHECK(got == expected);
  CHECK(l.counts.delaunay == 2);
  CHECK(call({"audit", "--input", d}).code == kExitAudit);
  std::remove(d.c_str());
}
