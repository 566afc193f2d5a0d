#pragma once

// Deterministic discrete-event simulation of one global epoch: per-owner part
// instances, pipelined forward/backward tasks with compute and transfer
// overlap, local aggregation on compute nodes and central aggregation of the
// owner-side parts.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mpsl/analytic.hpp"
#include "mpsl/profiles.hpp"

namespace mpsl {

enum class EventKind { ComputeDone, TransferDone, BatchInjected, AggregationDone };

std::string_view to_string(EventKind k);

struct SimEvent {
  double time = 0.0;
  EventKind kind = EventKind::ComputeDone;
  std::string node;   // executing node, or the receiving node of a transfer
  std::string owner;  // empty for aggregator-wide events
  std::size_t part = 0;  // pipeline position 1..P; 0 for aggregation traffic
  Direction dir = Direction::Forward;
  std::size_t seq = 0;
  // Not part of the CSV trace; kept for ordering checks.
  std::string from;          // sending node of a transfer
  double ready_time = 0.0;   // when the task or transfer was enqueued
  double start_time = 0.0;   // when it started executing or transmitting

  bool operator==(const SimEvent&) const = default;
};

struct SimOptions {
  enum class Injection { ClosedLoop, OpenLoop };
  enum class ExecutorPolicy { Alternate, BackwardFirst, Fifo };

  Injection injection = Injection::ClosedLoop;
  ExecutorPolicy executor = ExecutorPolicy::Alternate;
  bool drain_between_local_epochs = false;
  // Alternate policy: forwards a stage may keep in flight beyond its warm-up count.
  std::size_t inflight_slack = 2;
  bool capture_trace = true;
  double compute_jitter = 0.0;  // uniform +-fraction on compute times, seeded by rng_seed
};

struct SimMetrics {
  double epoch_time = 0.0;
  double fill_time = 0.0;
  double steady_state_batch_period = 0.0;  // NaN when the trace is too short
  std::map<std::string, double> busy_fraction;
  std::map<std::string, std::size_t> queue_max_depth;
  std::size_t events = 0;
  std::vector<SimEvent> trace;
};

SimMetrics run_epoch(const Scenario& scenario, const SplitAssignment& assignment, const SimOptions& options = {});

/// Median spacing of position-2 backward completions inside the middle half
/// of their time span. Throws if fewer than 2 * P completions are present.
double measure_steady_state(const std::vector<SimEvent>& trace);

struct ComparisonReport {
  CostBreakdown analytic;
  double sim_epoch = 0.0;
  double sim_fill = 0.0;
  double sim_period = 0.0;
  double relative_error = 0.0;  // |T_tot - sim_epoch| / sim_epoch
  double fill_delta = 0.0;      // sim_fill - pipeempty
  double period_delta = 0.0;    // sim_period - pipefull
};

ComparisonReport compare_with_analytic(const Scenario& scenario, const SplitAssignment& assignment,
                                       const SimOptions& options = {});

/// CSV with header time,kind,node,owner,part,dir,seq.
std::string trace_csv(const std::vector<SimEvent>& trace);

}  // namespace mpsl
