#pragma once

// Distributed runtime over the TCP transport. Every node runs one engine loop
// that executes tasks one at a time while the transport keeps receiving, so a
// node computes and communicates concurrently. Compute is emulated by sleeping
// for the profiled duration; parameters are real float32 buffers so that
// aggregation results can be checked bit for bit.

#include <filesystem>
#include <json.hpp>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mpsl/profiles.hpp"
#include "mpsl/transport.hpp"

namespace mpsl {

struct JobError : Error {
  using Error::Error;
};

/// Parameters of one part instance as little-endian float32 values. Trailing
/// bytes that do not fill a float are left untouched.
struct PartState {
  std::string params;

  /// Stand-in for a gradient step: adds 1e-3 * seq to every value.
  void apply_backward(std::size_t seq);
};

/// Deterministic starting parameters for one owner's copy of a part.
std::string initial_params(std::size_t owner_index, std::size_t part, std::uint64_t bytes);

/// Element-wise mean of equally sized float32 blobs, accumulated in double in
/// the given order.
std::string average_params(const std::vector<const std::string*>& blobs);

struct TaskRecord {
  std::string task;  // owner_first_fwd, owner_last_fwd, owner_last_back, owner_first_back, stage_fwd, stage_back, aggregate
  std::string owner;
  std::size_t part = 0;
  std::size_t seq = 0;
  double ready = 0.0;  // seconds since the job was configured on this node
  double start = 0.0;
  double end = 0.0;
};

struct NodeOptions {
  std::string id;
  std::optional<Role> role;  // checked against the job when given
  Endpoint listen;
  std::size_t inflight_slack = 2;  // same meaning as in the simulator
};

class NodeRuntime {
 public:
  explicit NodeRuntime(NodeOptions options);
  ~NodeRuntime();

  Endpoint endpoint() const;
  /// Serves jobs until stop().
  void run();
  void stop();
  /// Tasks of the most recent job.
  std::vector<TaskRecord> task_log() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct ManagerOptions {
  std::string id = "manager";
  Endpoint listen;
  std::vector<std::filesystem::path> artifact_dirs;
  double setup_timeout_s = 10.0;
  double epoch_timeout_s = 600.0;
  std::size_t max_jobs = 0;  // 0: serve until stopped
};

class ManagerRuntime {
 public:
  explicit ManagerRuntime(ManagerOptions options);
  ~ManagerRuntime();

  Endpoint endpoint() const;
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Drives one job on nodes that are already serving at the listen addresses
/// named in the scenario. Returns the run report.
nlohmann::json run_job(Transport& transport, const Scenario& scenario, const ManagerOptions& options,
                       std::uint64_t job_id);

/// Sends a scenario to a manager and waits for the report. Throws JobError
/// carrying the manager's message on a rejection.
nlohmann::json submit_job(const Endpoint& manager, const std::string& scenario_yaml, double timeout_s = 600.0,
                          const std::string& reply_host = "127.0.0.1");

struct LocalRun {
  nlohmann::json report;
  std::map<std::string, std::vector<TaskRecord>> task_logs;
};

/// Runs every node of the scenario as a thread on loopback with ephemeral
/// ports, submits the job and tears everything down.
LocalRun run_local_cluster(Scenario scenario, ManagerOptions options = {});

}  // namespace mpsl
