#include "i2m/podm/podm.hpp"

#include <exception>
#include <thread>

#include "i2m/common/error.hpp"

namespace i2m {

LockTable::LockTable() : dir_(new std::atomic<std::atomic<std::uint32_t>*>[kChunks]) {
  for (std::size_t i = 0; i < kChunks; ++i) dir_[i].store(nullptr, std::memory_order_relaxed);
}

LockTable::~LockTable() {
  for (std::size_t i = 0; i < kChunks; ++i) delete[] dir_[i].load();
}

std::atomic<std::uint32_t>* LockTable::chunk(TetId t) {
  auto& slot = dir_[t >> kChunkBits];
  std::atomic<std::uint32_t>* c = slot.load(std::memory_order_acquire);
  if (c) return c;
  auto* fresh = new std::atomic<std::uint32_t>[kChunkSize];
  for (std::size_t i = 0; i < kChunkSize; ++i) fresh[i].store(kFree, std::memory_order_relaxed);
  if (slot.compare_exchange_strong(c, fresh, std::memory_order_acq_rel)) return fresh;
  delete[] fresh;
  return c;
}

bool LockTable::try_claim(TetId t, std::uint32_t owner) {
  std::atomic<std::uint32_t>& s = chunk(t)[t & (kChunkSize - 1)];
  std::uint32_t expected = kFree;
  if (s.compare_exchange_strong(expected, owner, std::memory_order_acq_rel)) return true;
  return expected == owner;
}

void LockTable::release(TetId t, std::uint32_t owner) {
  std::atomic<std::uint32_t>& s = chunk(t)[t & (kChunkSize - 1)];
  std::uint32_t expected = owner;
  if (!s.compare_exchange_strong(expected, kFree, std::memory_order_acq_rel)) {
    throw MeshError("tet " + std::to_string(t) + " released by a thread that does not hold it");
  }
}

std::uint32_t LockTable::holder(TetId t) const {
  const auto* c = dir_[t >> kChunkBits].load(std::memory_order_acquire);
  return c ? c[t & (kChunkSize - 1)].load(std::memory_order_acquire) : kFree;
}

void WorkPool::push(const WorkItem& w) {
  {
    std::lock_guard lock(mu_);
    queue_.push_back(w);
  }
  cv_.notify_one();
}

std::optional<WorkItem> WorkPool::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return stopped_ || !queue_.empty() || in_flight_ == 0; });
  if (stopped_ || queue_.empty()) return std::nullopt;
  WorkItem w = queue_.front();
  queue_.pop_front();
  ++in_flight_;
  return w;
}

void WorkPool::done() {
  bool drained;
  {
    std::lock_guard lock(mu_);
    --in_flight_;
    drained = in_flight_ == 0 && queue_.empty();
  }
  if (drained) cv_.notify_all();
}

void WorkPool::stop() {
  {
    std::lock_guard lock(mu_);
    stopped_ = true;
  }
  cv_.notify_all();
}

std::size_t WorkPool::size() const {
  std::lock_guard lock(mu_);
  return queue_.size();
}

std::size_t WorkPool::in_flight() const {
  std::lock_guard lock(mu_);
  return in_flight_;
}

bool WorkPool::drained() const {
  std::lock_guard lock(mu_);
  return queue_.empty() && in_flight_ == 0;
}

SpeculativeInserter::SpeculativeInserter(TetMesh& mesh, LockTable& table, std::uint32_t thread_id)
    : mesh_(&mesh), claims_(table, thread_id), lease_(mesh.ids()) {}

SpeculativeInserter::Outcome SpeculativeInserter::attempt(const Point3& p, TetId start) {
  TetMesh& m = *mesh_;
  struct Release {
    ThreadClaims& c;
    ~Release() { c.release_all(); }
  } release{claims_};
  if (!claims_.claim(start)) return Outcome::RolledBack;
  if (!m.tet(start).alive) return Outcome::Stale;
  if (kernel::insphere_of(m, m.tet(start), p) <= 0) {
    switch (kernel::walk_to(m, start, p, claims_, start)) {
      case kernel::WalkStatus::Found:
        break;
      case kernel::WalkStatus::Conflict:
        return Outcome::RolledBack;
      case kernel::WalkStatus::Missing:
      case kernel::WalkStatus::Lost:
        return Outcome::Rejected;
    }
  }
  kernel::CommitParams prm;
  prm.ids = &lease_;
  prm.duplicate_tolerance = kDuplicateTolerance * m.bounds().diagonal();
  for (VertexId v : m.tet(start).v) {
    if (distance2(m.point(v), p) <= prm.duplicate_tolerance * prm.duplicate_tolerance) return Outcome::Duplicate;
  }
  if (kernel::insphere_of(m, m.tet(start), p) <= 0) return Outcome::Rejected;
  switch (kernel::grow_cavity(m, p, start, claims_, scratch_.cavity_marks, scratch_.cavity)) {
    case CavityStatus::Ok:
      break;
    case CavityStatus::Conflict:
      return Outcome::RolledBack;
    case CavityStatus::Missing:
      return Outcome::Rejected;
  }
  switch (kernel::commit_cavity(m, scratch_.cavity, prm, claims_, scratch_.commit, scratch_.created)) {
    case kernel::CommitStatus::Committed:
      return Outcome::Committed;
    case kernel::CommitStatus::Duplicate:
      return Outcome::Duplicate;
    case kernel::CommitStatus::Rejected:
      break;
  }
  return Outcome::Rejected;
}

namespace {

struct SharedRun {
  TetMesh& mesh;
  const BadnessOracle& oracle;
  const RefineScope& scope;
  const Watchdog& watchdog;
  WatchdogClock clock;
  CommitLog* log;
  LockTable locks;
  WorkPool pool;
  std::mutex log_mu;
  std::atomic<std::uint64_t> insertions{0};
  std::mutex err_mu;
  std::exception_ptr error;

  SharedRun(TetMesh& m, const BadnessOracle& o, const RefineScope& s, const Watchdog& w, CommitLog* l)
      : mesh(m), oracle(o), scope(s), watchdog(w), clock(w), log(l) {}

  void fail(std::exception_ptr e) {
    {
      std::lock_guard lock(err_mu);
      if (!error) error = e;
    }
    pool.stop();
  }
};

void worker_loop(SharedRun& run, std::uint32_t tid, RefineStats& st) {
  TetMesh& mesh = run.mesh;
  ThreadClaims claims(run.locks, tid);
  IdLease lease(mesh.ids());
  kernel::CommitParams prm;
  prm.ids = &lease;
  prm.locator = run.scope.locator;
  prm.writable = &run.scope.writable_leaves;
  prm.duplicate_tolerance = kDuplicateTolerance * mesh.bounds().diagonal();
  StepScratch s;
  std::uint64_t iter = 0;
  try {
    while (auto item = run.pool.acquire()) {
      if ((++iter & 255u) == 0) run.clock.check(run.insertions.load(std::memory_order_relaxed));
      const StepResult r = detail::refine_step(mesh, run.oracle, *item, claims, prm, s);
      switch (r) {
        case StepResult::Committed: {
          ++st.insertions;
          const std::uint64_t total = run.insertions.fetch_add(1, std::memory_order_relaxed) + 1;
          if (run.log) {
            std::lock_guard lock(run.log_mu);
            run.log->push_back(s.point);
          }
          for (TetId t : s.created) {
            if (run.oracle.is_bad(mesh, t)) run.pool.push({t, mesh.tet(t).gid});
          }
          if (mesh.tet(item->tet).gid == item->gid && run.oracle.is_bad(mesh, item->tet)) run.pool.push(*item);
          claims.release_all();
          if (run.watchdog.max_insertions) run.clock.check(total);
          break;
        }
        case StepResult::Conflict:
          // Contention: nothing was mutated; retry from the tail. The holder
          // may be descheduled, so give it the core before retrying.
          ++st.rollbacks;
          claims.release_all();
          run.pool.push(*item);
          std::this_thread::yield();
          break;
        case StepResult::Duplicate:
          ++st.duplicates;
          break;
        case StepResult::Rejected:
          ++st.rejected;
          break;
        case StepResult::Missing:
          ++st.deferred;
          break;
        case StepResult::Stale:
          break;
      }
      claims.release_all();
      run.pool.done();
    }
  } catch (...) {
    claims.release_all();
    run.pool.done();
    run.fail(std::current_exception());
  }
}

RefineStats run_parallel(TetMesh& mesh, const LabeledImage& img, const RefinementRule& rule, int nthreads,
                         const RefineScope& scope, const Watchdog& watchdog, CommitLog* log) {
  if (nthreads < 1) throw UsageError("thread count must be >= 1, got " + std::to_string(nthreads));
  BadnessOracle oracle(img, rule, scope);
  SharedRun run(mesh, oracle, scope, watchdog, log);
  RefineStats total;
  for (const WorkItem& w : initial_work(mesh, oracle)) run.pool.push(w);
  total.initial_bad = run.pool.size();

  std::vector<RefineStats> per(static_cast<std::size_t>(nthreads));
  std::vector<std::thread> threads;
  threads.reserve(per.size());
  for (int i = 0; i < nthreads; ++i) {
    threads.emplace_back(worker_loop, std::ref(run), static_cast<std::uint32_t>(i + 1), std::ref(per[i]));
  }
  for (auto& t : threads) t.join();
  if (run.error) std::rethrow_exception(run.error);
  for (const auto& p : per) total += p;
  total.wall_seconds = run.clock.elapsed();
  return total;
}

}  // namespace

RefineStats refine_parallel(TetMesh& mesh, const LabeledImage& img, const RefinementRule& rule, int nthreads,
                            const RefineScope& scope, const Watchdog& watchdog, CommitLog* log) {
  rule.validate(img);
  return run_parallel(mesh, img, rule, nthreads, scope, watchdog, log);
}

RefineStats refine_background_parallel(TetMesh& mesh, const LabeledImage& img, double h_coarse, double rho_bar,
                                       int nthreads, const RefineScope& scope, const Watchdog& watchdog,
                                       CommitLog* log) {
  return run_parallel(mesh, img, background_rule(h_coarse, rho_bar), nthreads, scope, watchdog, log);
}

int hardware_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n ? static_cast<int>(n) : 1;
}

}  // namespace i2m
