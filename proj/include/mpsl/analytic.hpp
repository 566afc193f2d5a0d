#pragma once

// Closed-form global-epoch delay and cost for multihop parallel split
// learning, plus the SplitNN and horizontally scaled parallel SL baselines.

#include <map>
#include <string>
#include <vector>

#include "mpsl/profiles.hpp"

namespace mpsl {

struct PipelineLatency {
  double L_fwd = 0.0;
  double L_back = 0.0;
  double pipefull = 0.0;
};

struct CostBreakdown {
  double L_fwd = 0.0;
  double L_back = 0.0;
  double pipefull = 0.0;
  double pipeempty = 0.0;
  double start_first = 0.0;
  double end_last = 0.0;
  double T_batch_all = 0.0;
  double T_aggr = 0.0;
  double T_tot = 0.0;
  double cost_usd = 0.0;  // T_tot billed at the compute nodes' hourly prices
};

/// Column order of to_csv_row().
std::string cost_csv_header();
std::string to_csv_row(const CostBreakdown& c);

/// Per-position stats for positions 2..P-1, in pipeline order.
std::vector<PartStats> stage_stats(const Scenario& scenario, const SplitAssignment& assignment);

PipelineLatency pipeline_latency(const Scenario& scenario, const SplitAssignment& assignment);

/// Optimistic lower bound on the first batch's trip through the empty pipeline.
double pipe_fill_time(const Scenario& scenario, const SplitAssignment& assignment);

struct BatchEdges {
  double start_first = 0.0;
  double end_last = 0.0;
};
BatchEdges first_last_batch_terms(const Scenario& scenario, const SplitAssignment& assignment);

double epoch_training_time(const Scenario& scenario, const SplitAssignment& assignment);

/// Owner upload average + aggregator compute + sequential downloads. Intermediate
/// parts aggregate on their compute node and contribute nothing.
double aggregation_time(const Scenario& scenario);

CostBreakdown global_epoch_time(const Scenario& scenario, const SplitAssignment& assignment);

/// Sequential single-compute-node baseline. Runs the whole intermediate part on
/// the fastest compute node (ties broken by id).
double splitnn_epoch_time(const Scenario& scenario);

/// Owners served by one compute node that hosts the whole intermediate part.
struct OwnerGroup {
  std::string compute_id;
  std::vector<std::string> owner_ids;
};
using OwnerGroups = std::vector<OwnerGroup>;

/// Group sizes proportional to speed, capped at floor(mem / mem(M_2)) copies,
/// largest-remainder rounding. Owners are dealt out in the given order.
OwnerGroups proportional_owner_assignment(const Scenario& scenario,
                                          const std::vector<const NodeSpec*>& owners,
                                          const std::vector<const NodeSpec*>& compute_nodes);

/// Slowest group's epoch-training time + owner aggregation + M_2 synchronization
/// between the compute nodes and the aggregator.
double horizontal_parallel_sl_time(const Scenario& scenario, const OwnerGroups& groups);

/// The M_2 synchronization term on its own.
double intermediate_sync_time(const Scenario& scenario, const OwnerGroups& groups);

struct PriceTable {
  std::map<std::string, double> entries;  // node class -> USD per hour

  static PriceTable from_classes(const std::map<std::string, NodeClass>& classes);
};

/// On-demand t2.xlarge / t2.large / t2.medium prices.
PriceTable aws_t2_prices();

double monetary_cost(double epoch_seconds, const std::vector<std::string>& billed_classes,
                     const PriceTable& prices);
double monetary_cost(double epoch_seconds, const std::vector<const NodeSpec*>& billed_nodes,
                     const PriceTable& prices);

}  // namespace mpsl
