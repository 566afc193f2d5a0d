#pragma once

// Data model for layered models, nodes, links and training scenarios.
//
// Units are fixed everywhere: seconds, bytes, bytes/second, USD/hour.
// A layer's work is expressed in seconds on a unit-speed reference node; a node
// with speed s runs it in work / s, unless the model carries a measured time
// table for the node's class.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mpsl/error.hpp"

namespace mpsl {

enum class Direction { Forward, Backward };
enum class Role { DataOwner, Compute, Aggregator, Manager };

std::string_view to_string(Direction d);
std::string_view to_string(Role r);
Role parse_role(std::string_view s);

struct LayerProfile {
  std::size_t index = 0;
  double fwd_work = 0.0;
  double back_work = 0.0;
  std::uint64_t mem_bytes = 0;
  std::uint64_t act_out_bytes = 0;   // activations leaving the cut after this layer
  std::uint64_t grad_out_bytes = 0;  // gradients leaving the cut before this layer
  std::uint64_t param_bytes = 0;     // aggregation payload; defaults to mem_bytes

  bool operator==(const LayerProfile&) const = default;
};

/// Per-layer measured times for one node class; replaces work/speed.
struct TimeTable {
  std::vector<double> fwd;
  std::vector<double> back;

  bool operator==(const TimeTable&) const = default;
};

struct NodeSpec;

struct ModelProfile {
  std::string name;
  std::vector<LayerProfile> layers;
  std::string notes;
  std::map<std::string, TimeTable> overrides;  // keyed by node class

  std::size_t size() const { return layers.size(); }
  double layer_time(std::size_t index, const NodeSpec& node, Direction dir) const;

  bool operator==(const ModelProfile&) const = default;
};

struct NodeClass {
  double speed = 1.0;
  std::uint64_t mem_bytes = 0;
  double price_per_hour = 0.0;

  bool operator==(const NodeClass&) const = default;
};

struct NodeSpec {
  std::string id;
  Role role = Role::DataOwner;
  std::string node_class;  // empty when the node declares everything inline
  std::string group;       // replica group the node was expanded from, if any
  double speed = 1.0;
  std::uint64_t mem_bytes = 0;
  double price_per_hour = 0.0;
  std::string listen;  // host:port, wire runtime only

  bool operator==(const NodeSpec&) const = default;
};

/// Symmetric link. Endpoints are selectors: a node id, a replica group, a node
/// class or a role name, most specific match wins.
struct LinkSpec {
  std::string a;
  std::string b;
  double bandwidth_bytes_per_s = 0.0;

  bool operator==(const LinkSpec&) const = default;
};

struct Segment {
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive

  std::size_t size() const { return end - start + 1; }
  bool operator==(const Segment&) const = default;
  auto operator<=>(const Segment&) const = default;
};

/// Intermediate-part layout: segments[i] runs on node_order[i] at pipeline
/// position i + 2.
struct SplitAssignment {
  std::vector<Segment> segments;
  std::vector<std::string> node_order;

  bool operator==(const SplitAssignment&) const = default;
};

struct PartStats {
  double fwd_s = 0.0;
  double back_s = 0.0;
  std::uint64_t mem_bytes = 0;
  std::uint64_t param_bytes = 0;
  std::uint64_t act_out_bytes = 0;
  std::uint64_t grad_out_bytes = 0;
};

struct Scenario {
  std::string name;
  ModelProfile model;
  std::size_t K = 0;
  std::size_t B = 1;
  std::size_t r = 1;
  std::size_t batch_size = 0;
  std::size_t first_cut = 0;
  std::size_t last_cut = 0;
  std::size_t P = 3;
  std::uint64_t rng_seed = 0;
  double default_bandwidth = 0.0;  // 0: unlisted pairs have no link
  double aggregator_alpha = 1e-9;  // aggregator compute, seconds per parameter byte
  std::size_t epochs = 1;          // global epochs for the wire runtime
  std::map<std::string, NodeClass> classes;
  std::vector<NodeSpec> nodes;
  std::vector<LinkSpec> links;
  std::optional<SplitAssignment> assignment;

  bool operator==(const Scenario&) const = default;

  std::size_t num_layers() const { return model.size(); }
  std::size_t intermediate_count() const { return last_cut - first_cut - 1; }
  std::size_t compute_count() const { return P - 2; }

  std::vector<const NodeSpec*> owners() const;
  std::vector<const NodeSpec*> compute_nodes() const;  // sorted by id
  const NodeSpec& aggregator() const;
  const NodeSpec& manager() const;
  const NodeSpec& node(std::string_view id) const;
  const NodeSpec* find_node(std::string_view id) const;

  Segment first_part() const { return {0, first_cut}; }
  Segment last_part() const { return {last_cut, num_layers() - 1}; }
  Segment intermediate() const { return {first_cut + 1, last_cut - 1}; }

  /// Explicit link between two nodes (no default), if any.
  std::optional<double> find_link(const NodeSpec& a, const NodeSpec& b) const;
  /// Link bandwidth, falling back to default_bandwidth; throws if neither exists.
  double bandwidth(const NodeSpec& a, const NodeSpec& b) const;
  double bandwidth(std::string_view a, std::string_view b) const;

  std::uint64_t part_mem(Segment seg) const;
};

double layer_time(const LayerProfile& layer, const NodeSpec& node, Direction dir);

PartStats part_stats(const Scenario& scenario, Segment segment, const NodeSpec& node);

/// Checks every scenario invariant; throws ValidationError naming the first
/// violated constraint.
void validate(const Scenario& scenario);

/// Contiguity, node distinctness and per-node memory (K copies) of an assignment.
void validate_assignment(const Scenario& scenario, const SplitAssignment& assignment);

struct LoadOptions {
  // Directories searched for `<model>.yaml` when the scenario names its model.
  std::vector<std::filesystem::path> artifact_dirs;
};

Scenario parse_scenario(std::string_view text, const LoadOptions& options = {});
Scenario load_scenario(const std::filesystem::path& path);
Scenario load_scenario(const std::filesystem::path& path, LoadOptions options);
ModelProfile load_model(const std::filesystem::path& path);

std::string to_yaml(const Scenario& scenario);
void save_scenario(const Scenario& scenario, const std::filesystem::path& path);

// Builders used by sweeps and tests. The copies are not validated; call
// validate() once the scenario is complete.
struct NodeGroup {
  std::string id;          // group id; nodes become <id>-0, <id>-1, ...
  std::string node_class;  // must exist in scenario.classes
  std::size_t count = 1;
};

/// Replaces all data owners (K follows the total count).
Scenario with_owners(Scenario base, const std::vector<NodeGroup>& groups);
/// Replaces all compute nodes, sets P = N + 2 and drops any stored assignment.
Scenario with_compute(Scenario base, const std::vector<NodeGroup>& groups);

}  // namespace mpsl
