#include <atomic>
#include <barrier>
#include <cmath>
#include <random>
#include <thread>

#include "doctest.h"
#include "i2m/common/error.hpp"
#include "i2m/delaunay/audit.hpp"
#include "i2m/delaunay/delaunay.hpp"
#include "i2m/geom/quality.hpp"
#include "i2m/podm/podm.hpp"

using namespace i2m;

namespace {

struct Config {
  const char* phantom;
  double coarse_h;
  double h;
};

const Config kConfigs[] = {
    {"sphere:r=16,dims=64", 13.9, 4.0},
    {"sphere:r=10,dims=32", 7.0, 2.5},
    {"two-spheres:r=8,dims=48", 10.0, 3.0},
    {"ellipsoid:a=20,b=12,c=8,dims=64x48x40", 12.0, 3.5},
    {"sphere:r=6,dims=40,spacing=0.5", 4.0, 1.5},
};

RefinementRule rule_h(double h) {
  RefinementRule r;
  r.sizing.h = h;
  return r;
}

TetMesh run_seq(const LabeledImage& img, const Config& c, CommitLog* log = nullptr) {
  TetMesh m = bootstrap(img);
  refine_background(m, img, c.coarse_h, 2.0, {}, {}, log);
  refine(m, img, rule_h(c.h), {}, {}, log);
  return m;
}

TetMesh run_par(const LabeledImage& img, const Config& c, int threads, CommitLog* log = nullptr,
                RefineStats* st = nullptr) {
  TetMesh m = bootstrap(img);
  RefineStats a = refine_background_parallel(m, img, c.coarse_h, 2.0, threads, {}, {}, log);
  a += refine_parallel(m, img, rule_h(c.h), threads, {}, {}, log);
  if (st) *st = a;
  return m;
}

std::size_t kept_count(const TetMesh& m, const LabeledImage& img) {
  std::size_t n = 0;
  for (TetId t : m.alive_tets()) {
    const auto c = m.corners(t);
    n += classify(img, barycenter(c[0], c[1], c[2], c[3])) != kBackground;
  }
  return n;
}

}  // namespace

TEST_CASE("LockTable") {
  LockTable locks;
  CHECK(locks.holder(5) == LockTable::kFree);
  CHECK(locks.try_claim(5, 1));
  CHECK(locks.try_claim(5, 1));  // re-entrant for the holder
  CHECK_FALSE(locks.try_claim(5, 2));
  CHECK(locks.holder(5) == 1);
  CHECK_THROWS_AS(locks.release(5, 2), MeshError);
  locks.release(5, 1);
  CHECK(locks.try_claim(5, 2));
  const TetId far = 0xFFFFFFF0u;
  CHECK(locks.try_claim(far, 3));
  CHECK(locks.holder(far) == 3);

  ThreadClaims a(locks, 7), b(locks, 8);
  CHECK(a.claim(10));
  CHECK(a.claim(11));
  CHECK(a.claim(10));
  CHECK(a.held().size() == 2);
  CHECK_FALSE(b.claim(11));
  a.release_all();
  CHECK(b.claim(11));
}

TEST_CASE("LockTable: one winner per slot under contention") {
  LockTable locks;
  constexpr int kThreads = 4;
  constexpr TetId kSlots = 20000;
  std::vector<std::vector<TetId>> won(kThreads);
  std::vector<std::thread> ts;
  for (int i = 0; i < kThreads; ++i) {
    ts.emplace_back([&, i] {
      for (TetId t = 0; t < kSlots; ++t) {
        if (locks.try_claim(t, static_cast<std::uint32_t>(i + 1))) won[i].push_back(t);
      }
    });
  }
  for (auto& t : ts) t.join();
  std::size_t total = 0;
  for (const auto& w : won) total += w.size();
  CHECK(total == kSlots);
}

TEST_CASE("WorkPool") {
  WorkPool pool;
  SUBCASE("empty pool is drained") {
    CHECK(pool.drained());
    CHECK_FALSE(pool.acquire().has_value());
  }
  SUBCASE("FIFO order and in-flight accounting") {
    for (TetId t = 0; t < 5; ++t) pool.push({t, t + 100});
    auto a = pool.acquire();
    REQUIRE(a);
    CHECK(a->tet == 0);
    CHECK(pool.in_flight() == 1);
    CHECK_FALSE(pool.drained());
    pool.push(*a);  // re-enqueued at the tail
    pool.done();
    std::vector<TetId> order;
    while (auto w = pool.acquire()) {
      order.push_back(w->tet);
      pool.done();
    }
    CHECK(order == std::vector<TetId>{1, 2, 3, 4, 0});
    CHECK(pool.drained());
  }
  SUBCASE("a waiting thread wakes on push from an in-flight item") {
    pool.push({1, 1});
    auto first = pool.acquire();
    REQUIRE(first);
    std::atomic<int> got{-1};
    std::thread waiter([&] {
      auto w = pool.acquire();
      got = w ? static_cast<int>(w->tet) : -2;
      if (w) pool.done();
    });
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    CHECK(got == -1);
    pool.push({2, 2});
    pool.done();
    waiter.join();
    CHECK(got == 2);
  }
  SUBCASE("stop wakes waiters with nothing") {
    pool.push({1, 1});
    auto first = pool.acquire();
    std::thread waiter([&] { CHECK_FALSE(pool.acquire().has_value()); });
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
    pool.stop();
    waiter.join();
  }
}

TEST_CASE("refine_parallel with one thread is bit-identical to refine") {
  for (const Config& c : kConfigs) {
    const std::string name = c.phantom;
    CAPTURE(name);
    const auto img = make_phantom(parse_phantom_spec(c.phantom));
    CommitLog a_log, b_log;
    const TetMesh a = run_seq(img, c, &a_log);
    const TetMesh b = run_par(img, c, 1, &b_log);
    CHECK(fingerprint(a) == fingerprint(b));
    CHECK(a_log == b_log);
    CHECK(a.alive_count() > 100);
  }
}

TEST_CASE("refine_parallel with four threads") {
  const auto img = make_phantom(parse_phantom_spec("sphere:r=16,dims=64"));
  const Config c{"sphere:r=16,dims=64", 13.9, 1.6};
  CommitLog log;
  RefineStats st;
  const TetMesh m = run_par(img, c, 4, &log, &st);
  CHECK(audit_delaunay(m).empty());
  CHECK(audit_adjacency(m).empty());
  CHECK(scan_bad(m, BadnessOracle(img, rule_h(c.h))).empty());
  CHECK(st.insertions == log.size());
  MESSAGE("insertions " << st.insertions << ", rollbacks " << st.rollbacks);

  SUBCASE("element count within 5% of one thread") {
    const TetMesh one = run_par(img, c, 1);
    const double a = static_cast<double>(kept_count(m, img)), b = static_cast<double>(kept_count(one, img));
    CHECK(std::fabs(a - b) <= 0.05 * b);
  }
  SUBCASE("commit log replays to the same mesh") {
    TetMesh replay = bootstrap(img);
    for (const Point3& p : log) insert_point(replay, p);
    CHECK(geometric_signature(replay) == geometric_signature(m));
  }
}

TEST_CASE("refine_parallel watchdog") {
  const auto img = make_phantom(parse_phantom_spec("sphere:r=16,dims=64"));
  TetMesh m = bootstrap(img);
  CHECK_THROWS_AS(refine_background_parallel(m, img, 2.0, 2.0, 3, {}, {0.0, 50}), RefineTimeout);
  TetMesh m2 = bootstrap(img);
  CHECK_THROWS_AS(refine_background_parallel(m2, img, 1.0, 2.0, 2, {}, {1e-4, 0}), RefineTimeout);
  CHECK(audit_adjacency(m2).empty());
  CHECK_THROWS_AS(refine_parallel(m, img, rule_h(4.0), 0), UsageError);
}

TEST_CASE("speculative insert") {
  TetMesh m = bootstrap_box({{0, 0, 0}, {10, 10, 10}});
  refine_background(m, LabeledImage({10, 10, 10}, {1, 1, 1}, Point3{}, std::vector<Label>(1000, 0)), 4.0, 2.0);
  REQUIRE(audit_delaunay(m).empty());
  LockTable locks;

  SUBCASE("a single thread always commits") {
    SpeculativeInserter ins(m, locks, 1);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.5, 9.5);
    for (int i = 0; i < 200; ++i) {
      const Point3 p{u(rng), u(rng), u(rng)};
      const TetId start = locate(m, p, 0);
      REQUIRE(ins.claim(start));
      CHECK(ins.attempt(p, start) == SpeculativeInserter::Outcome::Committed);
      CHECK(locks.holder(start) == LockTable::kFree);
    }
    CHECK(audit_delaunay(m).empty());
    CHECK(audit_adjacency(m).empty());
  }

  SUBCASE("forced overlap: one commits, one rolls back without mutation") {
    const Point3 pa{5.3, 4.7, 5.1}, pb{5.31, 4.7, 5.1};
    const TetId sa = locate(m, pa, 0), sb = locate(m, pb, 0);
    SpeculativeInserter a(m, locks, 1), b(m, locks, 2);
    REQUIRE(b.claim(sb));
    // The two cavities overlap: b's start lies in a's cavity.
    const Cavity cav = compute_cavity(m, pa, sa);
    REQUIRE(std::find(cav.tets.begin(), cav.tets.end(), sb) != cav.tets.end());

    const auto before = fingerprint(m);
    REQUIRE(a.claim(sa) == (sa != sb));
    CHECK(a.attempt(pa, sa) == SpeculativeInserter::Outcome::RolledBack);
    CHECK(fingerprint(m) == before);
    CHECK(locks.holder(sa) == (sa == sb ? 2u : LockTable::kFree));

    CHECK(b.attempt(pb, sb) == SpeculativeInserter::Outcome::Committed);
    CHECK(fingerprint(m) != before);
    CHECK(audit_delaunay(m).empty());
  }

  SUBCASE("duplicate point") {
    SpeculativeInserter ins(m, locks, 1);
    const Point3 p = m.point(m.tet(m.alive_tets()[0]).v[1]);
    const auto before = fingerprint(m);
    CHECK(ins.attempt(p, m.alive_tets()[0]) == SpeculativeInserter::Outcome::Duplicate);
    CHECK(fingerprint(m) == before);
  }

  SUBCASE("racing threads keep the mesh Delaunay") {
    constexpr int kThreads = 4;
    std::atomic<int> committed{0}, rolled{0};
    std::mutex log_mu;
    CommitLog log;
    std::barrier sync(kThreads);
    // Slots published before the threads start; some die along the way.
    const std::vector<TetId> starts = m.alive_tets();
    std::vector<std::thread> ts;
    for (int i = 0; i < kThreads; ++i) {
      ts.emplace_back([&, i] {
        SpeculativeInserter ins(m, locks, static_cast<std::uint32_t>(i + 1));
        std::mt19937_64 rng(100 + i);
        std::uniform_real_distribution<double> u(0.5, 9.5);
        sync.arrive_and_wait();
        for (int k = 0; k < 150; ++k) {
          const Point3 p{u(rng), u(rng), u(rng)};
          for (;;) {
            const TetId start = starts[rng() % starts.size()];
            const auto r = ins.attempt(p, start);
            if (r == SpeculativeInserter::Outcome::Stale) continue;
            if (r == SpeculativeInserter::Outcome::RolledBack) {
              ++rolled;
              std::this_thread::yield();
              continue;
            }
            if (r == SpeculativeInserter::Outcome::Committed) {
              ++committed;
              std::lock_guard lock(log_mu);
              log.push_back(p);
            }
            break;
          }
        }
      });
    }
    for (auto& t : ts) t.join();
    CHECK(committed == kThreads * 150);
    CHECK(audit_delaunay(m).empty());
    CHECK(audit_adjacency(m).empty());
    for (TetId t = 0; t < m.slot_count(); ++t) CHECK(locks.holder(t) == LockTable::kFree);
    MESSAGE("rollbacks " << rolled.load());
  }
}
