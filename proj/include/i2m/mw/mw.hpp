#pragma once

#include <chrono>
#include <cstdint>
#include <vector>

#include "i2m/decomp/decomposition.hpp"
#include "i2m/delaunay/refine.hpp"
#include "i2m/metrics/metrics.hpp"
#include "i2m/mw/pack.hpp"
#include "i2m/mw/transport.hpp"

namespace i2m {

enum class TransportKind { Inproc, Socket };

struct MwConfig {
  int workers = 1;  // ranks besides the master
  int threads_per_rank = 1;
  int pack_threads = 1;
  bool serve_while_meshing = false;
  TransportKind transport = TransportKind::Inproc;
  int depth = 2;
  double coarse_h = 0.0;  // 0: default_coarse_h(bounds, depth)
  RefinementRule rule;
  Watchdog watchdog;         // applied to every refinement call
  double time_limit_s = 0.0;  // whole run, 0: none
  std::chrono::milliseconds backoff{1};

  /// Throws UsageError for out-of-range values.
  void validate(const LabeledImage& img) const;
};

struct MwResult {
  TetMesh mesh;
  std::vector<Breakdown> breakdowns;  // index = rank, 0 is the master
  std::vector<GrantRecord> grants;
  RefineStats background;
  RefineStats tasks;    // summed over worker tasks
  RefineStats cleanup;  // master pass over leaves left stuck
  std::uint64_t task_count = 0;
  std::uint64_t stuck_marks = 0;
  std::size_t max_active = 0;
  std::uint64_t bytes_moved = 0;  // submesh reply payloads
  std::size_t leaves = 0;

  RefineStats total() const;
};

/// Coarse mesh the master starts from: bootstrap, background pass,
/// partition with the run's rule marking dirty leaves.
TetMesh coarse_mesh(const LabeledImage& img, const MwConfig& cfg, Decomposition& dec, RefineStats* stats = nullptr);

/// Master event loop on rank 0. The caller owns `timer` and fills
/// breakdowns[0] from it; worker breakdowns come from their Reports.
MwResult run_master(Transport& tr, const LabeledImage& img, const MwConfig& cfg, TetMesh coarse, Decomposition dec,
                    BreakdownTimer& timer);

/// Worker event loop; returns its breakdown after Terminate (also sent to
/// the master in a Report).
Breakdown run_worker(Transport& tr, const LabeledImage& img, const MwConfig& cfg);

/// Whole distributed run: worker ranks as threads (inproc) or forked
/// processes (socket), the calling thread as master.
MwResult run_mw(const LabeledImage& img, const MwConfig& cfg);

}  // namespace i2m
