// Acceptance suite: one line per criterion, exit 1 if any hard criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "i2m/cli/cli.hpp"
#include "i2m/common/error.hpp"
#include "i2m/delaunay/audit.hpp"
#include "i2m/delaunay/delaunay.hpp"
#include "i2m/podm/podm.hpp"

using namespace i2m;
using namespace i2m::cli;
using Clock = std::chrono::steady_clock;

namespace {

constexpr double kCap = 300.0;  // watchdog on every run, seconds

enum class Status { Pass, Fail, Skip, SoftFail };

const char* status_name(Status s) {
  switch (s) {
    case Status::Pass:
      return "PASS";
    case Status::Fail:
      return "FAIL";
    case Status::Skip:
      return "SKIP";
    case Status::SoftFail:
      return "SOFT-FAIL";
  }
  return "?";
}

struct Outcome {
  Status status = Status::Fail;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Tally {
  int runs = 0;
  int timeouts = 0;
  double longest = 0.0;
  int ranks_checked = 0;
  int ranks_off = 0;
  double worst_gap = 0.0;
  std::string worst_label;
  int mw_runs = 0;
  std::size_t grants = 0;
  std::size_t grant_violations = 0;
};
Tally tally;

std::map<std::string, LabeledImage> images;
const LabeledImage& image(const std::string& spec) {
  auto it = images.find(spec);
  if (it == images.end()) it = images.emplace(spec, make_phantom(parse_phantom_spec(spec))).first;
  return it->second;
}

RunConfig config(Mode m, const std::string& phantom, double h) {
  RunConfig c;
  c.mode = m;
  c.phantom = phantom;
  c.h = h;
  c.time_limit = kCap;
  return c;
}

RunResult go(const RunConfig& c, const std::string& label) {
  const auto t0 = Clock::now();
  ++tally.runs;
  RunResult r;
  try {
    r = run(c, image(c.phantom));
  } catch (const RefineTimeout&) {
    ++tally.timeouts;
    throw;
  }
  tally.longest = std::max(tally.longest, seconds_since(t0));
  for (const Breakdown& b : r.breakdowns) {
    ++tally.ranks_checked;
    const double gap = b.wall > 0 ? std::abs(b.sum() - b.wall) / b.wall : 0.0;
    if (!b.accounted(0.01)) ++tally.ranks_off;
    if (gap > tally.worst_gap) {
      tally.worst_gap = gap;
      tally.worst_label = label + " rank " + std::to_string(b.rank);
    }
  }
  if (c.mode == Mode::Mw) {
    ++tally.mw_runs;
    tally.grants += r.grants.size();
    tally.grant_violations += audit_grant_log(Decomposition(c.depth, image(c.phantom).bounds()), r.grants).size();
  }
  std::cerr << "  " << label << ": " << r.mesh.alive_count() << " tets, " << fmt("%.2f", seconds_since(t0))
            << " s, audits " << (r.audits.ok() ? "ok" : r.audits.to_json().dump()) << '\n';
  return r;
}

double worker_idle_fraction(const RunResult& r) {
  double s = 0.0;
  int n = 0;
  for (const Breakdown& b : r.breakdowns) {
    if (b.rank == 0) continue;
    s += b[Category::Idle] / b.wall;
    ++n;
  }
  return n ? s / n : 0.0;
}

double wall(const RunResult& r) { return r.breakdowns.at(0).wall; }

// 1. Brute-force Delaunay audit on randomized configurations.
Outcome delaunay_correctness() {
  const auto t0 = Clock::now();
  std::mt19937 rng(20240611);
  std::uniform_real_distribution<double> hdist(1.6, 4.0);
  const std::vector<std::string> phantoms{"sphere:r=%d,dims=64", "ellipsoid:r=%d,dims=64", "two-spheres:r=%d,dims=64"};
  int counted = 0, tried = 0;
  std::size_t violations = 0, lo = ~std::size_t{0}, hi = 0;
  bool audits_ok = true;
  while (counted < 20 && tried < 40) {
    const int kind = tried % 3;
    const int r = kind == 2 ? 8 + static_cast<int>(rng() % 5) : 14 + static_cast<int>(rng() % 11);
    RunConfig c = config(static_cast<Mode>((tried / 3) % 3), fmt(phantoms[kind].c_str(), r), hdist(rng));
    c.h = std::round(c.h * 100) / 100;
    if (c.mode == Mode::Shared) c.threads = 2 + static_cast<int>(rng() % 3);
    if (c.mode == Mode::Mw) {
      c.ranks = 1 + static_cast<int>(rng() % 4);
      c.depth = 1 + static_cast<int>(rng() % 3);
      c.threads = 1 + static_cast<int>(rng() % 2);
    }
    ++tried;
    const RunResult res = go(c, fmt("c1 %s %s h=%.2f", mode_name(c.mode), c.phantom.c_str(), c.h));
    const std::size_t n = res.mesh.alive_count();
    if (n < 1000 || n > 100000) continue;
    ++counted;
    lo = std::min(lo, n);
    hi = std::max(hi, n);
    violations += res.audits.delaunay;
    audits_ok = audits_ok && res.audits.ok();
  }
  const double t = seconds_since(t0);
  const bool pass = counted >= 20 && violations == 0 && audits_ok && t < 600.0;
  return {pass ? Status::Pass : Status::Fail,
          fmt("%d configs (%zu..%zu tets), %zu strict violations, other audits %s, %.1f s (budget 600 s)", counted, lo,
              hi, violations, audits_ok ? "clean" : "FAILED", t)};
}

// 2. shared with one thread is byte-identical to seq; mw with one worker
// reaches a zero-bad fixpoint.
Outcome mode_equivalence() {
  const std::vector<std::pair<std::string, double>> cfgs{{"sphere:r=16,dims=64", 4.0},
                                                         {"sphere:r=20,dims=64", 2.5},
                                                         {"ellipsoid:r=24,dims=64", 2.0},
                                                         {"two-spheres:r=10,dims=64", 2.0},
                                                         {"sphere:r=12,dims=48", 1.8}};
  int identical = 0, mw_ok = 0;
  double worst_diff = 0.0;
  const auto dir = std::filesystem::temp_directory_path();
  const std::string a = (dir / ("i2m_acc_seq_" + std::to_string(::getpid()))).string();
  const std::string b = (dir / ("i2m_acc_shared_" + std::to_string(::getpid()))).string();
  for (const auto& [ph, h] : cfgs) {
    RunConfig s = config(Mode::Seq, ph, h);
    const RunResult rs = go(s, "c2 seq " + ph);
    RunConfig p = s;
    p.mode = Mode::Shared;
    p.threads = 1;
    const RunResult rp = go(p, "c2 shared t=1 " + ph);
    write_mesh_dump(rs.mesh, a);
    write_mesh_dump(rp.mesh, b);
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    const std::vector<char> da{std::istreambuf_iterator<char>(fa), {}}, db{std::istreambuf_iterator<char>(fb), {}};
    if (!da.empty() && da == db) ++identical;

    RunConfig m = s;
    m.mode = Mode::Mw;
    m.ranks = 1;
    const RunResult rm = go(m, "c2 mw r=1 " + ph);
    if (rm.audits.ok() && rm.audits.bad == 0 && rs.audits.ok()) ++mw_ok;
    worst_diff = std::max(worst_diff, std::abs(double(rm.mesh.alive_count()) - double(rs.mesh.alive_count())) /
                                          double(rs.mesh.alive_count()));
  }
  std::remove(a.c_str());
  std::remove(b.c_str());
  const bool pass = identical == 5 && mw_ok == 5;
  return {pass ? Status::Pass : Status::Fail,
          fmt("%d/5 byte-identical seq/shared dumps, %d/5 mw r=1 runs at zero bad with clean audits "
              "(element counts within %.1f%% of seq)",
              identical, mw_ok, 100 * worst_diff)};
}

// 3. seq, shared x4 and mw x4 give approximately the same mesh.
Outcome approximate_consistency() {
  const std::vector<std::pair<std::string, double>> cfgs{{"sphere:r=24,dims=64", 2.0}, {"ellipsoid:r=28,dims=64", 2.0}};
  bool pass = true;
  std::string detail;
  for (const auto& [ph, h] : cfgs) {
    const RunResult s = go(config(Mode::Seq, ph, h), "c3 seq " + ph);
    RunConfig pc = config(Mode::Shared, ph, h);
    pc.threads = 4;
    const RunResult p = go(pc, "c3 shared t=4 " + ph);
    RunConfig mc = config(Mode::Mw, ph, h);
    mc.ranks = 4;
    const RunResult m = go(mc, "c3 mw r=4 " + ph);
    double worst_count = 0.0, worst_bin = 0.0;
    for (const RunResult* o : {&p, &m}) {
      worst_count = std::max(worst_count, std::abs(double(o->kept) - double(s.kept)) / double(s.kept));
      const double ts = double(s.quality.total()), to = double(o->quality.total());
      for (int i = 0; i < kHistogramBins; ++i) {
        worst_bin = std::max(worst_bin, std::abs(s.quality.histogram[i] / ts - o->quality.histogram[i] / to));
      }
    }
    pass = pass && worst_count <= 0.05 && worst_bin <= 0.02;
    detail += fmt("%s%s: kept %zu/%zu/%zu (max dev %.2f%%, tol 5%%), max bin dev %.3f%% of mass (tol 2%%)",
                  detail.empty() ? "" : "; ", ph.c_str(), s.kept, p.kept, m.kept, 100 * worst_count, 100 * worst_bin);
  }
  return {pass ? Status::Pass : Status::Fail, detail};
}

// 4. Sliver fraction on the sphere at h = bbox edge / 16.
Outcome quality_floor() {
  const std::string ph = "sphere:dims=64";
  const double h = 64.0 / 16.0;
  double worst = 0.0;
  std::size_t kept = 0;
  bool audits = true;
  for (Mode m : {Mode::Seq, Mode::Shared, Mode::Mw}) {
    RunConfig c = config(m, ph, h);
    if (m != Mode::Seq) c.threads = 2;
    if (m == Mode::Mw) c.ranks = 2;
    const RunResult r = go(c, std::string("c4 ") + mode_name(m));
    worst = std::max(worst, r.quality.sliver_fraction);
    kept = std::max<std::size_t>(kept, r.kept);
    audits = audits && r.audits.ok();
  }
  return {worst < 0.005 && audits ? Status::Pass : Status::Fail,
          fmt("worst sliver fraction %.4f%% of dihedral angles over seq/shared/mw (bound 0.5%%), %zu kept tets", 100 * worst,
              kept)};
}

// 6 (stress part). 8 workers at depth 3.
void scheduler_stress() {
  RunConfig c = config(Mode::Mw, "sphere:r=24,dims=64", 2.0);
  c.ranks = 8;
  c.depth = 3;
  go(c, "c6 mw r=8 d=3");
  c.transport = TransportKind::Socket;
  c.ranks = 4;
  go(c, "c6 mw r=4 d=3 socket");
}

// 7. Over-decomposition: depth 3 against depth 1 at 4 workers.
Outcome over_decomposition() {
  RunConfig c = config(Mode::Mw, "sphere:r=24,dims=64", 1.5);
  c.ranks = 4;
  double idle[2] = {}, w[2] = {};
  const int depths[2] = {1, 3};
  for (int i = 0; i < 2; ++i) {
    c.depth = depths[i];
    // Best of three for wall time; idle fraction from the same run.
    double best = 1e300;
    for (int rep = 0; rep < 3; ++rep) {
      const RunResult r = go(c, fmt("c7 mw r=4 d=%d", c.depth));
      if (wall(r) < best) {
        best = wall(r);
        idle[i] = worker_idle_fraction(r);
      }
    }
    w[i] = best;
  }
  const double speedup = w[0] / w[1];
  const bool pass = idle[1] < idle[0] && speedup >= 1.2;
  return {pass ? Status::Pass : Status::Fail,
          fmt("mean worker idle %.1f%% at d=1 vs %.1f%% at d=3; wall %.3f s vs %.3f s, speedup %.2fx (need >= 1.2x); "
              "%d hardware thread(s)",
              100 * idle[0], 100 * idle[1], w[0], w[1], speedup, hardware_threads())};
}

// 8. Saturation: more workers wait longer for work at depth 2.
Outcome saturation() {
  RunConfig c = config(Mode::Mw, "sphere:r=24,dims=64", 1.5);
  c.depth = 2;
  double idle[2] = {};
  const int workers[2] = {2, 8};
  for (int i = 0; i < 2; ++i) {
    c.ranks = workers[i];
    idle[i] = worker_idle_fraction(go(c, fmt("c8 mw r=%d d=2", c.ranks)));
  }
  return {idle[1] > idle[0] ? Status::Pass : Status::Fail,
          fmt("mean worker idle %.1f%% at 2 workers vs %.1f%% at 8 workers", 100 * idle[0], 100 * idle[1])};
}

// 9. Pack determinism, roundtrip audits and threaded-pack timing.
Outcome pack_checks() {
  const LabeledImage& img = image("sphere:r=20,dims=64");
  const int depth = 2;
  Decomposition dec(depth, img.bounds());
  TetMesh m = bootstrap(img);
  RefinementRule rule;
  rule.sizing.h = 2.0;
  refine_background(m, img, default_coarse_h(img.bounds(), depth), 2.0);
  RefineScope scope;
  scope.locator = &dec;
  refine(m, img, rule, scope);
  partition(m, dec);
  const BadnessOracle oracle(img, rule);

  const int autos = hardware_threads();
  std::mt19937 rng(7);
  int equal = 0, roundtrip = 0;
  for (int i = 0; i < 100; ++i) {
    std::vector<LeafId> leaves;
    const int k = 1 + static_cast<int>(rng() % 12);
    for (int j = 0; j < k; ++j) leaves.push_back(static_cast<LeafId>(rng() % dec.leaf_count()));
    std::sort(leaves.begin(), leaves.end());
    leaves.erase(std::unique(leaves.begin(), leaves.end()), leaves.end());
    const auto one = pack(m, leaves, 1);
    if (one == pack(m, leaves, autos) && one == pack(m, leaves, 4)) ++equal;

    std::size_t bad_before = 0;
    for (TetId t : scan_bad(m, oracle)) {
      if (std::binary_search(leaves.begin(), leaves.end(), m.tet(t).owner)) ++bad_before;
    }
    const TetMesh u = unpack(one, std::make_shared<GidSpace>(0), m.bounds());
    const bool ok = audit_delaunay(u).empty() && audit_adjacency(u, true).empty() &&
                    scan_bad(u, oracle).size() == bad_before && pack(u, leaves, 1) == one;
    if (ok) ++roundtrip;
  }

  // Timing on one large submesh.
  const LabeledImage& big = image("sphere:r=28,dims=64");
  TetMesh bm = bootstrap(big);
  RefinementRule br;
  br.sizing.h = 1.5;
  refine_background(bm, big, default_coarse_h(big.bounds(), 2), 2.0);
  refine(bm, big, br);
  auto best_of = [&](int threads) {
    double best = 1e300;
    for (int rep = 0; rep < 5; ++rep) {
      const auto t0 = Clock::now();
      const auto bytes = pack(bm, {}, threads);
      best = std::min(best, seconds_since(t0));
      if (bytes.empty()) return 0.0;
    }
    return best;
  };
  const double seq = best_of(1), thr = best_of(4);
  const bool hard = equal == 100 && roundtrip == 100;
  const bool soft = thr <= seq;
  Status st = hard ? (soft ? Status::Pass : Status::SoftFail) : Status::Fail;
  return {st, fmt("%d/100 submeshes pack identically at 1/auto(%d)/4 threads, %d/100 roundtrips keep audits; "
                  "pack of %zu tets: %.1f ms at 1 thread vs %.1f ms at 4 threads%s",
                  equal, autos, roundtrip, bm.alive_count(), 1e3 * seq, 1e3 * thr,
                  soft ? "" : fmt(" (slower; soft check, %d hardware thread(s))", autos).c_str())};
}

// 10. Shared-memory speedup on a large refinement.
Outcome shared_speedup() {
  const std::string ph = "sphere:r=44,dims=96";
  RunConfig c = config(Mode::Shared, ph, 1.5);
  c.delaunay_audit = false;
  // Best of two per thread count; the first run also pays for page faults.
  auto best = [&](int threads) {
    c.threads = threads;
    RunResult a = go(c, fmt("c10 shared t=%d", threads));
    RunResult b = go(c, fmt("c10 shared t=%d", threads));
    return wall(a) <= wall(b) ? std::move(a) : std::move(b);
  };
  const RunResult one = best(1);
  const RunResult four = best(4);
  const double s = wall(one) / wall(four);
  const int hw = hardware_threads();
  const std::string detail = fmt("%zu tets, wall %.2f s at 1 thread vs %.2f s at 4 threads, speedup %.2fx (need >= 1.5x "
                                 "on 4 cores); %d hardware thread(s)",
                                 four.mesh.alive_count(), wall(one), wall(four), s, hw);
  const bool big = four.mesh.alive_count() >= 500000 && one.audits.ok() && four.audits.ok();
  if (!big) return {Status::Fail, detail};
  if (hw < 4) return {Status::Skip, detail};
  return {s >= 1.5 ? Status::Pass : Status::Fail, detail};
}

// 11. The watchdog stops runs that exceed their cap.
Outcome termination() {
  const std::string ph = "sphere:r=60,dims=128";
  int stopped = 0;
  double worst_over = 0.0;
  for (Mode m : {Mode::Seq, Mode::Shared, Mode::Mw}) {
    RunConfig c = config(m, ph, 1.5);
    c.time_limit = 0.2;
    if (m != Mode::Seq) c.threads = 2;
    if (m == Mode::Mw) c.ranks = 2;
    const auto t0 = Clock::now();
    try {
      run(c, image(ph));
    } catch (const RefineTimeout&) {
      ++stopped;
    }
    worst_over = std::max(worst_over, seconds_since(t0) - c.time_limit);
  }
  const bool pass = stopped == 3 && worst_over < 2.0 && tally.timeouts == 0 && tally.longest < kCap;
  return {pass ? Status::Pass : Status::Fail,
          fmt("%d/3 capped runs (0.2 s) stopped by the watchdog, worst overrun %.2f s; %d suite runs finished, "
              "longest %.1f s under a %.0f s cap, %d timeouts",
              stopped, worst_over, tally.runs, tally.longest, kCap, tally.timeouts)};
}

}  // namespace

int main() {
  std::map<int, Outcome> out;
  auto guarded = [&](int n, auto fn) {
    std::cerr << "criterion " << n << "...\n";
    try {
      out[n] = fn();
    } catch (const std::exception& e) {
      out[n] = {Status::Fail, std::string("exception: ") + e.what()};
    }
  };
  guarded(1, delaunay_correctness);
  guarded(2, mode_equivalence);
  guarded(3, approximate_consistency);
  guarded(4, quality_floor);
  guarded(6, [] {
    scheduler_stress();
    return Outcome{};
  });
  guarded(7, over_decomposition);
  guarded(8, saturation);
  guarded(9, pack_checks);
  guarded(10, shared_speedup);
  guarded(11, termination);

  out[5] = {tally.ranks_off == 0 ? Status::Pass : Status::Fail,
            fmt("%d/%d rank breakdowns within 1%% of wall over %d runs (worst %.3f%%, %s)",
                tally.ranks_checked - tally.ranks_off, tally.ranks_checked, tally.runs, 100 * tally.worst_gap,
                tally.worst_label.c_str())};
  if (out[6].detail.rfind("exception", 0) != 0) {
    out[6] = {tally.grant_violations == 0 && tally.mw_runs > 0 ? Status::Pass : Status::Fail,
              fmt("%d mw runs (incl. 8 workers at depth 3), %zu grants, %zu concurrent grants closer than 5", tally.mw_runs,
                  tally.grants, tally.grant_violations)};
  }

  const char* names[] = {"",
                         "Delaunay correctness",
                         "mode equivalence",
                         "approximate-mesh consistency",
                         "quality floor",
                         "breakdown accounting",
                         "scheduler safety",
                         "over-decomposition trend",
                         "saturation trend",
                         "pack determinism and roundtrip",
                         "shared-memory speedup",
                         "termination"};
  int failed = 0;
  std::cout << "\n";
  for (int n = 1; n <= 11; ++n) {
    const Outcome& o = out[n];
    if (o.status == Status::Fail) ++failed;
    std::cout << fmt("[%-9s] %2d %s: ", status_name(o.status), n, names[n]) << o.detail << '\n';
  }
  std::cout << (failed ? fmt("%d criterion(s) failed\n", failed) : std::string("all hard criteria passed\n"));
  return failed ? 1 : 0;
}
