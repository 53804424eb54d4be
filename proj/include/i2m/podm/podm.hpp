#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "i2m/delaunay/kernel.hpp"
#include "i2m/delaunay/refine.hpp"
#include "i2m/delaunay/tet_mesh.hpp"

namespace i2m {

/// Per-tet claim slots. A slot holds 0 (free) or the claiming thread's id.
/// Storage grows in lazily allocated chunks, so slots created while threads
/// run are claimable without a global lock.
class LockTable {
 public:
  static constexpr std::uint32_t kFree = 0;

  LockTable();
  ~LockTable();
  LockTable(const LockTable&) = delete;
  LockTable& operator=(const LockTable&) = delete;

  /// True if the slot was free (now held by owner) or already held by owner.
  bool try_claim(TetId t, std::uint32_t owner);
  void release(TetId t, std::uint32_t owner);
  std::uint32_t holder(TetId t) const;

 private:
  static constexpr std::size_t kChunkBits = 14;
  static constexpr std::size_t kChunkSize = std::size_t{1} << kChunkBits;
  static constexpr std::size_t kChunks = std::size_t{1} << (32 - kChunkBits);

  std::atomic<std::uint32_t>* chunk(TetId t);

  std::unique_ptr<std::atomic<std::atomic<std::uint32_t>*>[]> dir_;
};

/// Claimer for the kernel: remembers what this attempt acquired so it can
/// release everything at once.
class ThreadClaims {
 public:
  ThreadClaims(LockTable& table, std::uint32_t owner) : table_(&table), owner_(owner) {}
  ~ThreadClaims() { release_all(); }
  ThreadClaims(const ThreadClaims&) = delete;
  ThreadClaims& operator=(const ThreadClaims&) = delete;

  bool claim(TetId t) {
    if (table_->holder(t) == owner_) return true;
    if (!table_->try_claim(t, owner_)) return false;
    held_.push_back(t);
    return true;
  }
  void release_all() {
    for (TetId t : held_) table_->release(t, owner_);
    held_.clear();
  }
  const std::vector<TetId>& held() const { return held_; }
  std::uint32_t owner() const { return owner_; }

 private:
  LockTable* table_;
  std::uint32_t owner_;
  std::vector<TetId> held_;
};

/// FIFO work-sharing pool with an in-flight count. acquire() blocks until an
/// item is available or the pool is drained (empty and nothing in flight).
class WorkPool {
 public:
  void push(const WorkItem& w);
  /// Next item, counted as in flight until done(); nullopt once drained or stopped.
  std::optional<WorkItem> acquire();
  void done();
  void stop();

  std::size_t size() const;
  std::size_t in_flight() const;
  bool drained() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<WorkItem> queue_;
  std::size_t in_flight_ = 0;
  bool stopped_ = false;
};

/// Speculative insertion of one point by one thread.
class SpeculativeInserter {
 public:
  enum class Outcome { Committed, RolledBack, Duplicate, Rejected, Stale };

  SpeculativeInserter(TetMesh& mesh, LockTable& table, std::uint32_t thread_id);

  /// Claims `start` for this thread (the precondition of attempt).
  bool claim(TetId t) { return claims_.claim(t); }
  /// Grows the cavity of p from start claiming every tet (walking to p first
  /// if start's sphere misses it); on any failed claim releases all claims
  /// without touching the mesh. On success commits and releases. Stale: start
  /// is no longer alive.
  Outcome attempt(const Point3& p, TetId start);
  const std::vector<TetId>& created() const { return scratch_.created; }

 private:
  TetMesh* mesh_;
  ThreadClaims claims_;
  IdLease lease_;
  StepScratch scratch_;
};

/// Speculative multi-threaded refinement. nthreads = 1 makes exactly the
/// moves of the sequential refine and leaves a bit-identical mesh.
RefineStats refine_parallel(TetMesh& mesh, const LabeledImage& img, const RefinementRule& rule, int nthreads,
                            const RefineScope& scope = {}, const Watchdog& watchdog = {}, CommitLog* log = nullptr);

/// Parallel counterpart of refine_background.
RefineStats refine_background_parallel(TetMesh& mesh, const LabeledImage& img, double h_coarse, double rho_bar,
                                       int nthreads, const RefineScope& scope = {}, const Watchdog& watchdog = {},
                                       CommitLog* log = nullptr);

/// Number of hardware threads, at least 1.
int hardware_threads();

}  // namespace i2m
