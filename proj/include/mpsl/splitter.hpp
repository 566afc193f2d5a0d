#pragma once

// Choice of contiguous intermediate segments and their compute-node order
// minimizing the full-pipeline batch latency (slowest forward + slowest
// backward) under per-node memory limits.

#include <cstdint>
#include <string>
#include <vector>

#include "mpsl/profiles.hpp"

namespace mpsl {

/// Intermediate layers only; layer indices here are relative to first_layer.
struct SplitProblem {
  std::size_t first_layer = 0;
  std::size_t K = 1;
  std::vector<std::uint64_t> layer_mem;
  std::vector<std::string> node_ids;  // ascending
  std::vector<std::uint64_t> node_mem;
  std::vector<std::vector<double>> fwd;   // [node][layer] seconds
  std::vector<std::vector<double>> back;  // [node][layer] seconds

  std::size_t layers() const { return layer_mem.size(); }
  std::size_t nodes() const { return node_ids.size(); }

  static SplitProblem from_scenario(const Scenario& scenario);
};

struct SplitResult {
  SplitAssignment assignment;  // absolute layer indices
  double L_fwd = 0.0;
  double L_back = 0.0;
  double objective = 0.0;  // L_fwd + L_back
};

/// Exact optimum. Ties: lexicographically smallest segment boundaries, then
/// smallest node-id order. Throws InfeasibleError when no split fits memory.
SplitResult optimize_split(const SplitProblem& problem);

/// Exhaustive oracle with the same optimum and tie-break. Limited to 16 layers
/// and 5 nodes.
SplitResult brute_force_split(const SplitProblem& problem);

/// Greedy packing against total/N for homogeneous nodes.
SplitResult manual_even_split(const SplitProblem& problem);

/// Objective of a fixed assignment, summed the same way the solvers do.
SplitResult evaluate_split(const SplitProblem& problem, const SplitAssignment& assignment);

/// node capacity - K * segment memory, per pipeline position.
std::vector<std::int64_t> memory_slack(const SplitProblem& problem, const SplitAssignment& assignment);

/// Layer range of pipeline position p (1-based) for multihop level P.
Segment split_rule(const Scenario& scenario, const SplitAssignment& assignment, std::size_t P, std::size_t p);

/// The scenario's stored assignment, or the optimizer's when none is given.
SplitAssignment resolve_assignment(const Scenario& scenario);

}  // namespace mpsl
