#pragma once

// Parameter sweeps over scenarios. Each returns a table ordered by its sweep
// key plus the list of violated checks; an empty list means the run passed.

#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "mpsl/profiles.hpp"

namespace mpsl {

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<nlohmann::json>> rows;

  void add(std::vector<nlohmann::json> row);
  /// Header row first. Doubles print in shortest round-trip form.
  std::string csv() const;
  /// Array of objects keyed by column name.
  nlohmann::json to_json() const;
};

struct ExperimentResult {
  Table table;
  std::vector<std::string> failures;
  nlohmann::json summary = nlohmann::json::object();

  bool passed() const { return failures.empty(); }
};

/// Copy of `base` with K owners of one class and N compute nodes of another.
Scenario homogeneous_variant(const Scenario& base, std::size_t K, const std::string& owner_class, std::size_t N,
                             const std::string& compute_class);

/// Raises each compute node's memory to hold K copies of the whole intermediate
/// part. Returns true if any node changed.
bool relax_compute_memory(Scenario& scenario);

std::string owner_class_of(const Scenario& scenario);
std::string compute_class_of(const Scenario& scenario);

struct ValidateParams {
  std::vector<std::size_t> K{10, 20, 30, 40, 50};
  std::vector<std::size_t> P{3, 4, 5};
  double max_mean_error = 0.05;
};
ExperimentResult cmd_validate(const Scenario& base, const ValidateParams& params);

struct SplitGainParams {
  std::vector<std::size_t> K{10, 30, 50};
  std::vector<std::size_t> N{1, 2, 3, 4, 5};
  double tolerance_s = 1e-9;  // rounding slack when both splits tie
};
ExperimentResult cmd_split_gain(const Scenario& base, const SplitGainParams& params);

struct MultihopParams {
  std::vector<std::pair<std::size_t, std::size_t>> cuts;  // empty: a few around the scenario's own cuts
  std::size_t max_N = 5;
};
ExperimentResult cmd_multihop(const Scenario& base, const MultihopParams& params);

struct CostDelayParams {
  std::vector<std::size_t> N{4, 5};
  std::vector<std::string> vm_classes;  // empty: priced classes, most expensive first
};
ExperimentResult cmd_cost_delay(const Scenario& base, const CostDelayParams& params);

struct HeterogeneityParams {
  std::size_t K = 300;
  std::vector<std::size_t> P{3, 4, 5};
  std::vector<double> fast_share{1.0, 0.75, 0.5, 0.25, 0.0};
  std::vector<double> slow_fraction{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  double slow_factor = 8.0;
  std::string fast_class;  // empty: the scenario's owner class
  std::string slow_class = "d2";
  double max_mpsl_change = 0.01;     // all-fast vs all-slow owners, P >= 4
  double min_splitnn_increase = 0.20;
};
ExperimentResult cmd_heterogeneity(const Scenario& base, const HeterogeneityParams& params);

}  // namespace mpsl
