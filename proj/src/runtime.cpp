#include "mpsl/runtime.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cstring>
#include <deque>
#include <set>
#include <thread>

#include "mpsl/analytic.hpp"
#include "mpsl/simkernel.hpp"
#include "mpsl/splitter.hpp"

namespace mpsl {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

void PartState::apply_backward(std::size_t seq) {
  const float step = static_cast<float>(1e-3 * static_cast<double>(seq));
  for (std::size_t i = 0; i + 4 <= params.size(); i += 4) {
    float v;
    std::memcpy(&v, params.data() + i, 4);
    v += step;
    std::memcpy(params.data() + i, &v, 4);
  }
}

std::string initial_params(std::size_t owner_index, std::size_t part, std::uint64_t bytes) {
  std::string out(bytes, '\0');
  for (std::size_t i = 0; i + 4 <= out.size(); i += 4) {
    const float v = 0.01f * static_cast<float>(owner_index + 1) + 0.001f * static_cast<float>(part) +
                    1e-5f * static_cast<float>((i / 4) % 97);
    std::memcpy(out.data() + i, &v, 4);
  }
  return out;
}

std::string average_params(const std::vector<const std::string*>& blobs) {
  if (blobs.empty()) return {};
  const std::size_t size = blobs.front()->size();
  for (const auto* b : blobs)
    if (b->size() != size) throw JobError("cannot average parameter blobs of different sizes");
  std::string out = *blobs.front();
  for (std::size_t i = 0; i + 4 <= size; i += 4) {
    double sum = 0.0;
    for (const auto* b : blobs) {
      float v;
      std::memcpy(&v, b->data() + i, 4);
      sum += v;
    }
    const float mean = static_cast<float>(sum / static_cast<double>(blobs.size()));
    std::memcpy(out.data() + i, &mean, 4);
  }
  return out;
}

namespace {

TaskMessage control(MessageKind kind, const std::string& self, const json& body) {
  return make_message(kind, self, 0, 0, 0, body.dump());
}

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08x", v);
  return buf;
}

void sleep_for_seconds(double s) {
  if (s > 0.0) std::this_thread::sleep_for(std::chrono::duration<double>(s));
}

enum class TaskType { OwnerFirstFwd, OwnerLastFwd, OwnerLastBack, OwnerFirstBack, StageFwd, StageBack, Aggregate };

constexpr const char* kTaskNames[] = {"owner_first_fwd", "owner_last_fwd", "owner_last_back", "owner_first_back",
                                      "stage_fwd",       "stage_back",     "aggregate"};

struct LocalTask {
  TaskType type;
  std::string owner;
  std::size_t part = 0;
  std::size_t seq = 0;
  double duration = 0.0;
  double ready = 0.0;
};

}  // namespace

// ---------------------------------------------------------------------------
// Nodes

struct NodeRuntime::Impl {
  NodeOptions opt;
  Transport transport;
  Clock::time_point origin = Clock::now();

  mutable std::mutex log_mu;
  std::vector<TaskRecord> log;

  // Job configuration.
  bool active = false;
  std::uint64_t job = 0;
  Scenario sc;
  SplitAssignment a;
  std::vector<PartStats> stages;
  const NodeSpec* self = nullptr;
  std::string manager_id;
  std::vector<std::string> owner_ids;
  std::map<std::string, std::size_t> owner_index;
  std::size_t batches = 0;
  std::size_t epoch = 0;
  TrafficCounters traffic_at_setup;

  // Executor.
  Clock::time_point arrival;  // receipt time of the message being handled
  std::deque<LocalTask> fwdq, backq;
  bool stage = false, seen_back = false, last_fwd = false;
  std::size_t outstanding = 0, cap = 0;

  // Data owner.
  std::size_t injected = 0, uploaded = 0, completed = 0;
  PartState first, last;

  // Compute node.
  std::size_t my_part = 0;
  std::map<std::string, PartState> copies;
  std::map<std::string, std::set<std::size_t>> pending;
  std::size_t backs_done = 0;

  // Aggregator.
  std::map<std::string, std::string> uploads;

  // owner -> "part/dir" -> completions in the current epoch, and over the job.
  std::map<std::string, std::map<std::string, std::size_t>> counts, job_counts;

  explicit Impl(NodeOptions o) : opt(std::move(o)), transport(opt.id, opt.listen) {}

  double now() const { return std::chrono::duration<double>(Clock::now() - origin).count(); }

  void nack(const std::string& error) {
    if (manager_id.empty() || !transport.has_peer(manager_id)) return;
    transport.send(manager_id, control(MessageKind::Ack, opt.id,
                                       {{"job", job}, {"status", "error"}, {"node", opt.id}, {"error", error}}));
  }

  void ack(json body) {
    body["job"] = job;
    body["status"] = "ok";
    body["node"] = opt.id;
    transport.send(manager_id, control(MessageKind::Ack, opt.id, body));
  }

  void count(const std::string& owner, std::size_t part, const char* dir) {
    const std::string key = std::to_string(part) + "/" + dir;
    ++counts[owner][key];
    ++job_counts[owner][key];
  }

  std::string stage_node(std::size_t p) const { return a.node_order.at(p - 2); }

  double owner_time(Segment seg, Direction dir) const {
    double t = 0.0;
    for (std::size_t j = seg.start; j <= seg.end; ++j) t += sc.model.layer_time(j, *self, dir);
    return t;
  }

  std::uint64_t segment_params(Segment seg) const {
    std::uint64_t b = 0;
    for (std::size_t j = seg.start; j <= seg.end; ++j) b += sc.model.layers[j].param_bytes;
    return b;
  }

  std::string payload(std::size_t bytes, const std::string& owner, std::size_t seq, std::size_t part) const {
    return synthetic_payload(bytes, (owner_index.at(owner) + 1) * 1000003ULL + seq * 131ULL + part);
  }

  void run() {
    while (true) {
      while (auto in = transport.try_receive()) handle(*in);
      while (auto st = transport.poll_status()) nack("peer '" + st->peer + "' failed: " + st->error);
      if (auto task = pick()) {
        execute(*task);
        continue;
      }
      auto in = transport.receive();
      if (!in) return;
      handle(*in);
    }
  }

  // ---- scheduling

  std::optional<LocalTask> pick() {
    if (fwdq.empty() && backq.empty()) return std::nullopt;
    std::deque<LocalTask>* q = nullptr;
    if (stage) {
      const bool may_fwd = !fwdq.empty() && (!seen_back || outstanding < cap);
      if (!seen_back)
        q = &fwdq;
      else if (last_fwd)
        q = !backq.empty() ? &backq : &fwdq;
      else
        q = may_fwd ? &fwdq : &backq;
      if (q->empty() || (q == &fwdq && !may_fwd)) return std::nullopt;
    } else {
      q = backq.empty() ? &fwdq : &backq;
    }
    LocalTask t = std::move(q->front());
    q->pop_front();
    last_fwd = q == &fwdq;
    if (stage) last_fwd ? ++outstanding : --outstanding;
    return t;
  }

  void enqueue(LocalTask t, bool backward_class, std::optional<Clock::time_point> arrived = std::nullopt) {
    t.ready = arrived ? std::chrono::duration<double>(*arrived - origin).count() : now();
    (backward_class ? backq : fwdq).push_back(std::move(t));
    if (stage && backward_class && !seen_back) {
      seen_back = true;
      cap = outstanding + opt.inflight_slack;
    }
  }

  void execute(const LocalTask& t) {
    TaskRecord rec{kTaskNames[static_cast<int>(t.type)], t.owner, t.part, t.seq, t.ready, now(), 0.0};
    sleep_for_seconds(t.duration);
    rec.end = now();
    {
      std::lock_guard lock(log_mu);
      log.push_back(rec);
    }
    complete(t);
  }

  // ---- message handling

  void handle(Inbound& in) {
    TaskMessage& m = in.msg;
    arrival = in.received;
    if (m.kind == MessageKind::Config || (in.from == "local" && m.kind == MessageKind::Ack)) {
      json body;
      try {
        body = json::parse(m.payload);
      } catch (const json::exception& e) {
        nack(std::string("malformed control message: ") + e.what());
        return;
      }
      control_message(body);
      return;
    }
    if (!active) {
      nack("no job is configured on node '" + opt.id + "'");
      return;
    }
    if (!owner_index.count(m.owner)) {
      nack("unknown owner '" + m.owner + "'");
      return;
    }
    switch (self->role) {
      case Role::DataOwner: owner_message(m); break;
      case Role::Compute: compute_message(m); break;
      case Role::Aggregator: aggregator_message(m); break;
      case Role::Manager: nack("manager role cannot run tasks"); break;
    }
  }

  void control_message(const json& body) {
    const std::string cmd = body.value("cmd", "");
    try {
      if (cmd == "setup") {
        setup(body);
      } else if (cmd == "start_epoch") {
        if (!active) throw JobError("no job is configured");
        epoch = body.at("epoch").get<std::size_t>();
        if (self->role == Role::DataOwner) maybe_inject();
      } else if (cmd == "uploaded") {
        ++uploaded;
        maybe_inject();
      } else if (cmd == "finish") {
        finish();
      } else {
        throw JobError("unknown command '" + cmd + "'");
      }
    } catch (const Error& e) {
      nack(e.what());
    } catch (const json::exception& e) {
      nack(std::string("malformed control message: ") + e.what());
    }
  }

  void setup(const json& body) {
    job = body.at("job").get<std::uint64_t>();
    manager_id = body.at("manager_id").get<std::string>();
    transport.connect(manager_id, Endpoint::parse(body.at("manager").get<std::string>()));
    sc = parse_scenario(body.at("scenario").get<std::string>());
    if (!sc.assignment) throw JobError("job arrived without a split assignment");
    a = *sc.assignment;
    self = sc.find_node(opt.id);
    if (self == nullptr) throw JobError("node '" + opt.id + "' is not part of the job");
    if (opt.role && *opt.role != self->role)
      throw JobError("node '" + opt.id + "' serves as " + std::string(to_string(*opt.role)) + " but the job needs " +
                     std::string(to_string(self->role)));
    stages = stage_stats(sc, a);
    owner_ids.clear();
    owner_index.clear();
    for (const auto* o : sc.owners()) {
      owner_index[o->id] = owner_ids.size();
      owner_ids.push_back(o->id);
    }
    batches = sc.r * sc.B;
    reset_epoch();
    counts.clear();
    job_counts.clear();
    copies.clear();
    uploads.clear();
    fwdq.clear();
    backq.clear();
    stage = self->role == Role::Compute;
    seen_back = last_fwd = false;
    outstanding = cap = 0;
    {
      std::lock_guard lock(log_mu);
      log.clear();
    }
    origin = Clock::now();

    std::set<std::string> peers;
    if (self->role == Role::DataOwner) {
      const std::size_t k = owner_index.at(opt.id);
      first.params = initial_params(k, 1, segment_params(sc.first_part()));
      last.params = initial_params(k, sc.P, segment_params(sc.last_part()));
      peers = {stage_node(2), stage_node(sc.P - 1), sc.aggregator().id};
    } else if (self->role == Role::Compute) {
      const auto it = std::find(a.node_order.begin(), a.node_order.end(), opt.id);
      if (it == a.node_order.end()) throw JobError("compute node '" + opt.id + "' holds no part");
      my_part = static_cast<std::size_t>(it - a.node_order.begin()) + 2;
      const Segment seg = a.segments[my_part - 2];
      for (const auto& o : owner_ids) copies[o].params = initial_params(owner_index.at(o), my_part, segment_params(seg));
      if (my_part > 2) peers.insert(stage_node(my_part - 1));
      if (my_part + 1 < sc.P) peers.insert(stage_node(my_part + 1));
      if (my_part == 2 || my_part + 1 == sc.P) peers.insert(owner_ids.begin(), owner_ids.end());
    } else if (self->role == Role::Aggregator) {
      peers.insert(owner_ids.begin(), owner_ids.end());
    }
    for (const auto& p : peers) {
      const NodeSpec& n = sc.node(p);
      if (n.listen.empty()) throw JobError("node '" + p + "' has no listen address");
      transport.connect(p, Endpoint::parse(n.listen), sc.bandwidth(*self, n));
    }
    traffic_at_setup = transport.counters();
    active = true;
    ack({{"cmd", "setup"}});
  }

  void reset_epoch() {
    injected = uploaded = completed = 0;
    backs_done = 0;
    pending.clear();
    counts.clear();
  }

  void finish() {
    const TrafficCounters c = transport.counters();
    json tasks = json::object();
    for (const auto& [owner, m] : job_counts)
      for (const auto& [key, n] : m) tasks[owner][key] = n;
    ack({{"cmd", "finish"},
         {"role", to_string(self ? self->role : Role::Manager)},
         {"tasks", tasks},
         {"bytes_sent", c.bytes_sent - traffic_at_setup.bytes_sent},
         {"bytes_received", c.bytes_received - traffic_at_setup.bytes_received},
         {"messages_sent", c.messages_sent - traffic_at_setup.messages_sent},
         {"messages_received", c.messages_received - traffic_at_setup.messages_received}});
    active = false;
  }

  json epoch_counts() const {
    json j = json::object();
    for (const auto& [owner, m] : counts)
      for (const auto& [key, n] : m) j[owner][key] = n;
    return j;
  }

  // ---- data owner

  void maybe_inject() {
    if (!active || injected >= batches || uploaded < injected) return;
    const std::size_t seq = injected++;
    enqueue({TaskType::OwnerFirstFwd, opt.id, 1, seq, owner_time(sc.first_part(), Direction::Forward)}, false);
  }

  void owner_message(const TaskMessage& m) {
    if (m.owner != opt.id) {
      nack("owner '" + opt.id + "' received a message for '" + m.owner + "'");
      return;
    }
    if (m.kind == MessageKind::Forward && m.part == sc.P) {
      enqueue({TaskType::OwnerLastFwd, opt.id, sc.P, m.seq, owner_time(sc.last_part(), Direction::Forward)}, true, arrival);
    } else if (m.kind == MessageKind::Backward && m.part == 1) {
      enqueue({TaskType::OwnerFirstBack, opt.id, 1, m.seq, owner_time(sc.first_part(), Direction::Backward)}, true, arrival);
    } else if (m.kind == MessageKind::ModelUpdate) {
      if (m.payload.size() != first.params.size() + last.params.size()) {
        nack("model update of " + std::to_string(m.payload.size()) + " bytes does not match the owner parts");
        return;
      }
      first.params = m.payload.substr(0, first.params.size());
      last.params = m.payload.substr(first.params.size());
      ack({{"cmd", "epoch_done"},
           {"epoch", epoch},
           {"time", now()},
           {"digests", {{"1", hex32(payload_checksum(first.params))}, {std::to_string(sc.P), hex32(payload_checksum(last.params))}}},
           {"counts", epoch_counts()}});
      reset_epoch();
    } else {
      nack("owner cannot handle " + std::string(to_string(m.kind)) + " for part " + std::to_string(m.part));
    }
  }

  // ---- compute node

  void compute_message(const TaskMessage& m) {
    if (m.part != my_part) {
      nack("node '" + opt.id + "' holds part " + std::to_string(my_part) + ", not " + std::to_string(m.part));
      return;
    }
    const PartStats& st = stages[my_part - 2];
    if (m.kind == MessageKind::Forward) {
      enqueue({TaskType::StageFwd, m.owner, my_part, m.seq, st.fwd_s}, false, arrival);
    } else if (m.kind == MessageKind::Backward) {
      if (!pending[m.owner].count(m.seq)) {
        nack("backward for owner '" + m.owner + "' seq " + std::to_string(m.seq) + " arrived before its forward");
        return;
      }
      enqueue({TaskType::StageBack, m.owner, my_part, m.seq, st.back_s}, true, arrival);
    } else {
      nack("compute node cannot handle " + std::string(to_string(m.kind)));
    }
  }

  // ---- aggregator

  void aggregator_message(const TaskMessage& m) {
    if (m.kind != MessageKind::ModelUpdate) {
      nack("aggregator cannot handle " + std::string(to_string(m.kind)));
      return;
    }
    uploads[m.owner] = m.payload;
    if (uploads.size() < owner_ids.size()) return;
    const double pb = static_cast<double>(uploads.begin()->second.size());
    enqueue({TaskType::Aggregate, "", 0, 0, sc.aggregator_alpha * static_cast<double>(owner_ids.size()) * pb}, false, arrival);
  }

  // Sends the averaged parts to owners one after another, in owner order.
  void broadcast(std::shared_ptr<const std::string> blob, std::size_t k) {
    if (k >= owner_ids.size()) return;
    transport.send(owner_ids[k], make_message(MessageKind::ModelUpdate, owner_ids[k], 1, 0, 0, *blob),
                   [this, blob, k] { broadcast(blob, k + 1); });
  }

  // ---- task completion

  void complete(const LocalTask& t) {
    const std::size_t le = t.seq / sc.B;
    switch (t.type) {
      case TaskType::OwnerFirstFwd:
        count(t.owner, 1, "fwd");
        transport.send(stage_node(2),
                       make_message(MessageKind::Forward, t.owner, 2, t.seq, le,
                                    payload(sc.model.layers[sc.first_cut].act_out_bytes, t.owner, t.seq, 2)),
                       [this] { transport.post_local(control(MessageKind::Ack, opt.id, {{"cmd", "uploaded"}})); });
        break;
      case TaskType::OwnerLastFwd:
        count(t.owner, sc.P, "fwd");
        enqueue({TaskType::OwnerLastBack, t.owner, sc.P, t.seq, owner_time(sc.last_part(), Direction::Backward)}, true);
        break;
      case TaskType::OwnerLastBack:
        last.apply_backward(t.seq);
        count(t.owner, sc.P, "back");
        transport.send(stage_node(sc.P - 1),
                       make_message(MessageKind::Backward, t.owner, sc.P - 1, t.seq, le,
                                    payload(sc.model.layers[sc.last_cut].grad_out_bytes, t.owner, t.seq, sc.P - 1)));
        break;
      case TaskType::OwnerFirstBack:
        first.apply_backward(t.seq);
        count(t.owner, 1, "back");
        if (++completed == batches)
          transport.send(sc.aggregator().id,
                         make_message(MessageKind::ModelUpdate, t.owner, 1, 0, le, first.params + last.params));
        else
          maybe_inject();
        break;
      case TaskType::StageFwd: {
        pending[t.owner].insert(t.seq);
        count(t.owner, my_part, "fwd");
        const bool to_owner = my_part + 1 == sc.P;
        transport.send(to_owner ? t.owner : stage_node(my_part + 1),
                       make_message(MessageKind::Forward, t.owner, my_part + 1, t.seq, le,
                                    payload(stages[my_part - 2].act_out_bytes, t.owner, t.seq, my_part + 1)));
        break;
      }
      case TaskType::StageBack: {
        pending[t.owner].erase(t.seq);
        copies[t.owner].apply_backward(t.seq);
        count(t.owner, my_part, "back");
        const bool to_owner = my_part == 2;
        transport.send(to_owner ? t.owner : stage_node(my_part - 1),
                       make_message(MessageKind::Backward, t.owner, my_part - 1, t.seq, le,
                                    payload(stages[my_part - 2].grad_out_bytes, t.owner, t.seq, my_part - 1)));
        if (++backs_done == owner_ids.size() * batches) local_aggregate();
        break;
      }
      case TaskType::Aggregate: {
        std::vector<const std::string*> blobs;
        for (const auto& o : owner_ids) blobs.push_back(&uploads.at(o));
        auto avg = std::make_shared<const std::string>(average_params(blobs));
        broadcast(avg, 0);
        uploads.clear();
        ack({{"cmd", "epoch_done"}, {"epoch", epoch}, {"time", now()}, {"digests", {{"aggregate", hex32(payload_checksum(*avg))}}}});
        break;
      }
    }
  }

  void local_aggregate() {
    std::vector<const std::string*> blobs;
    for (const auto& o : owner_ids) blobs.push_back(&copies.at(o).params);
    const std::string avg = average_params(blobs);
    for (auto& [o, c] : copies) c.params = avg;
    bool identical = true;
    for (const auto& [o, c] : copies) identical = identical && c.params == avg;
    ack({{"cmd", "epoch_done"},
         {"epoch", epoch},
         {"time", now()},
         {"digests", {{std::to_string(my_part), hex32(payload_checksum(avg))}}},
         {"copies_identical", identical},
         {"counts", epoch_counts()}});
    reset_epoch();
    seen_back = last_fwd = false;
    outstanding = cap = 0;
  }
};

NodeRuntime::NodeRuntime(NodeOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}
NodeRuntime::~NodeRuntime() { stop(); }
Endpoint NodeRuntime::endpoint() const { return impl_->transport.local_endpoint(); }
void NodeRuntime::run() { impl_->run(); }
void NodeRuntime::stop() {
  impl_->transport.flush(std::chrono::milliseconds(2000));
  impl_->transport.shutdown();
}
std::vector<TaskRecord> NodeRuntime::task_log() const {
  std::lock_guard lock(impl_->log_mu);
  return impl_->log;
}

// ---------------------------------------------------------------------------
// Manager

namespace {

struct AckWaiter {
  Transport& transport;
  std::uint64_t job;
  std::deque<Inbound>* deferred;

  // Collects one ack carrying `cmd` from each expected node.
  std::map<std::string, json> collect(const std::set<std::string>& expected, const std::string& cmd, double timeout_s,
                                      std::map<std::string, Clock::time_point>* arrival = nullptr) {
    std::map<std::string, json> got;
    const auto deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(timeout_s));
    while (got.size() < expected.size()) {
      while (auto st = transport.poll_status())
        if (expected.count(st->peer)) throw JobError("peer '" + st->peer + "' failed: " + st->error);
      if (Clock::now() >= deadline) {
        std::string missing;
        for (const auto& n : expected)
          if (!got.count(n)) missing += (missing.empty() ? "" : ", ") + n;
        throw JobError("timed out waiting for " + cmd + " from " + missing);
      }
      auto in = transport.receive_for(std::chrono::milliseconds(50));
      if (!in) continue;
      if (in->msg.kind == MessageKind::JobSubmit) {
        if (deferred) deferred->push_back(std::move(*in));
        continue;
      }
      if (in->msg.kind != MessageKind::Ack) continue;
      json body;
      try {
        body = json::parse(in->msg.payload);
      } catch (const json::exception&) {
        continue;
      }
      if (body.value("job", std::uint64_t{0}) != job && body.value("status", "") != "error") continue;
      const std::string node = body.value("node", in->from);
      if (body.value("status", "") == "error") throw JobError("node '" + node + "': " + body.value("error", "?"));
      if (body.value("cmd", "") != cmd || !expected.count(node)) continue;
      got[node] = std::move(body);
      if (arrival) (*arrival)[node] = Clock::now();
    }
    return got;
  }
};

json run_job_impl(Transport& t, const Scenario& input, const ManagerOptions& options, std::uint64_t job,
                  std::deque<Inbound>* deferred) {
  Scenario sc = input;
  sc.assignment = resolve_assignment(sc);
  validate(sc);
  const SplitAssignment a = *sc.assignment;

  std::set<std::string> workers, owners, compute;
  for (const auto& n : sc.nodes) {
    if (n.role == Role::Manager) continue;
    workers.insert(n.id);
    if (n.role == Role::DataOwner) owners.insert(n.id);
    if (n.role == Role::Compute && std::find(a.node_order.begin(), a.node_order.end(), n.id) != a.node_order.end())
      compute.insert(n.id);
  }
  // Compute nodes left out of the assignment sit the job out.
  for (const auto& n : sc.compute_nodes())
    if (!compute.count(n->id)) workers.erase(n->id);

  const auto setup_ms = std::chrono::milliseconds(static_cast<long long>(options.setup_timeout_s * 1000));
  for (const auto& id : workers) {
    const NodeSpec& n = sc.node(id);
    if (n.listen.empty()) throw JobError("node '" + id + "' has no listen address");
    try {
      t.connect(id, Endpoint::parse(n.listen), 0.0, setup_ms);
    } catch (const WireError& e) {
      throw JobError(e.what());
    }
  }

  AckWaiter waiter{t, job, deferred};
  const std::string yaml = to_yaml(sc);
  for (const auto& id : workers)
    t.send(id, control(MessageKind::Config, t.id(),
                       {{"cmd", "setup"}, {"job", job}, {"scenario", yaml}, {"manager", t.local_endpoint().str()},
                        {"manager_id", t.id()}}));
  waiter.collect(workers, "setup", options.setup_timeout_s);

  SimOptions so;
  so.capture_trace = false;
  const double predicted = run_epoch(sc, a, so).epoch_time;

  json epochs = json::array();
  bool owners_identical = true, compute_identical = true, conservation = true;
  const std::size_t batches = sc.r * sc.B;
  for (std::size_t e = 0; e < sc.epochs; ++e) {
    std::map<std::string, Clock::time_point> arrival;
    const auto t0 = Clock::now();
    for (const auto& id : owners)
      t.send(id, control(MessageKind::Config, t.id(), {{"cmd", "start_epoch"}, {"job", job}, {"epoch", e}}));
    for (const auto& id : workers)
      if (!owners.count(id))
        t.send(id, control(MessageKind::Config, t.id(), {{"cmd", "start_epoch"}, {"job", job}, {"epoch", e}}));
    const auto acks = waiter.collect(workers, "epoch_done", options.epoch_timeout_s, &arrival);
    Clock::time_point t_end = t0;
    for (const auto& id : owners) t_end = std::max(t_end, arrival.at(id));
    const double wall = std::chrono::duration<double>(t_end - t0).count();

    json digests = json::object();
    std::optional<json> owner_digest;
    for (const auto& id : owners) {
      const json& d = acks.at(id).at("digests");
      if (owner_digest && *owner_digest != d) owners_identical = false;
      owner_digest = d;
      for (const auto& key : {std::string("1"), std::to_string(sc.P)}) {
        const json& c = acks.at(id).at("counts").value(id, json::object());
        if (c.value(key + "/fwd", std::size_t{0}) != batches || c.value(key + "/back", std::size_t{0}) != batches) conservation = false;
      }
    }
    if (owner_digest) digests["owner_parts"] = *owner_digest;
    for (const auto& id : compute) {
      const json& ack = acks.at(id);
      if (!ack.value("copies_identical", false)) compute_identical = false;
      digests[id] = ack.at("digests");
      const json& c = ack.at("counts");
      const std::string part = ack.at("digests").begin().key();
      for (const auto& o : owners) {
        const json& oc = c.value(o, json::object());
        if (oc.value(part + "/fwd", std::size_t{0}) != batches || oc.value(part + "/back", std::size_t{0}) != batches) conservation = false;
      }
    }
    epochs.push_back({{"epoch", e}, {"wall_time_s", wall}, {"digests", digests}});
  }

  for (const auto& id : workers) t.send(id, control(MessageKind::Config, t.id(), {{"cmd", "finish"}, {"job", job}}));
  const auto finals = waiter.collect(workers, "finish", options.setup_timeout_s);

  json nodes = json::object();
  for (const auto& [id, body] : finals) {
    json task_totals = json::object();
    for (const auto& [owner, m] : body.at("tasks").items())
      for (const auto& [key, n] : m.items()) task_totals[key] = task_totals.value(key, std::size_t{0}) + n.get<std::size_t>();
    nodes[id] = {{"role", body.at("role")},
                 {"tasks", task_totals},
                 {"bytes_sent", body.at("bytes_sent")},
                 {"bytes_received", body.at("bytes_received")},
                 {"messages_sent", body.at("messages_sent")},
                 {"messages_received", body.at("messages_received")}};
  }

  json assignment = json::array();
  for (std::size_t i = 0; i < a.segments.size(); ++i)
    assignment.push_back({{"part", i + 2}, {"node", a.node_order[i]}, {"start", a.segments[i].start}, {"end", a.segments[i].end}});

  return {{"job", job},
          {"scenario", sc.name},
          {"epochs", epochs},
          {"predicted_epoch_s", predicted},
          {"nodes", nodes},
          {"assignment", assignment},
          {"owner_parts_identical", owners_identical},
          {"compute_copies_identical", compute_identical},
          {"conservation", conservation}};
}

}  // namespace

json run_job(Transport& transport, const Scenario& scenario, const ManagerOptions& options, std::uint64_t job_id) {
  return run_job_impl(transport, scenario, options, job_id, nullptr);
}

struct ManagerRuntime::Impl {
  ManagerOptions opt;
  Transport transport;
  std::uint64_t next_job = 1;
  std::size_t jobs_done = 0;
  std::deque<Inbound> deferred;

  explicit Impl(ManagerOptions o) : opt(std::move(o)), transport(opt.id, opt.listen) {}

  void run() {
    while (opt.max_jobs == 0 || jobs_done < opt.max_jobs) {
      std::optional<Inbound> in;
      if (!deferred.empty()) {
        in = std::move(deferred.front());
        deferred.pop_front();
      } else {
        in = transport.receive();
      }
      if (!in) return;
      while (transport.poll_status()) {
      }
      if (in->msg.kind == MessageKind::JobSubmit) serve(*in);
    }
  }

  void serve(const Inbound& in) {
    const std::uint64_t job = next_job++;
    std::string reply_peer;
    json reply;
    try {
      const json body = json::parse(in.msg.payload);
      reply_peer = "submitter-" + std::to_string(job);
      transport.connect(reply_peer, Endpoint::parse(body.at("reply_to").get<std::string>()));
      LoadOptions lo;
      lo.artifact_dirs = opt.artifact_dirs;
      const Scenario sc = parse_scenario(body.at("scenario").get<std::string>(), lo);
      reply = {{"status", "ok"}, {"report", run_job_impl(transport, sc, opt, job, &deferred)}};
    } catch (const std::exception& e) {
      reply = {{"status", "error"}, {"error", e.what()}};
    }
    ++jobs_done;
    if (!reply_peer.empty() && transport.has_peer(reply_peer)) {
      transport.send(reply_peer, control(MessageKind::Ack, opt.id, reply));
      transport.flush();
    }
  }
};

ManagerRuntime::ManagerRuntime(ManagerOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}
ManagerRuntime::~ManagerRuntime() { stop(); }
Endpoint ManagerRuntime::endpoint() const { return impl_->transport.local_endpoint(); }
void ManagerRuntime::run() { impl_->run(); }
void ManagerRuntime::stop() {
  impl_->transport.flush(std::chrono::milliseconds(2000));
  impl_->transport.shutdown();
}

json submit_job(const Endpoint& manager, const std::string& scenario_yaml, double timeout_s,
                const std::string& reply_host) {
  static std::atomic<std::uint64_t> counter{0};
  const std::string id = "submit-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
  Transport t(id, Endpoint{reply_host, 0});
  try {
    t.connect("manager", manager);
  } catch (const WireError& e) {
    throw JobError(std::string("manager unreachable: ") + e.what());
  }
  t.send("manager", control(MessageKind::JobSubmit, id,
                            {{"scenario", scenario_yaml}, {"reply_to", t.local_endpoint().str()}}));
  const auto deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(timeout_s));
  while (Clock::now() < deadline) {
    if (auto st = t.poll_status()) throw JobError("peer '" + st->peer + "' failed: " + st->error);
    auto in = t.receive_for(std::chrono::milliseconds(100));
    if (!in || in->msg.kind != MessageKind::Ack) continue;
    const json body = json::parse(in->msg.payload);
    if (body.value("status", "") != "ok") throw JobError(body.value("error", "job rejected"));
    return body.at("report");
  }
  throw JobError("timed out waiting for the job report");
}

LocalRun run_local_cluster(Scenario sc, ManagerOptions options) {
  options.listen = Endpoint{"127.0.0.1", 0};
  options.max_jobs = 1;
  std::vector<std::unique_ptr<NodeRuntime>> nodes;
  std::string manager_id = options.id;
  for (auto& n : sc.nodes) {
    if (n.role == Role::Manager) {
      manager_id = n.id;
      continue;
    }
    nodes.push_back(std::make_unique<NodeRuntime>(NodeOptions{n.id, n.role, Endpoint{"127.0.0.1", 0}}));
    n.listen = nodes.back()->endpoint().str();
  }
  options.id = manager_id;
  ManagerRuntime manager(options);
  std::vector<std::thread> threads;
  for (auto& n : nodes) threads.emplace_back([&n] { n->run(); });
  threads.emplace_back([&manager] { manager.run(); });

  LocalRun out;
  std::exception_ptr failure;
  try {
    out.report = submit_job(manager.endpoint(), to_yaml(sc), options.epoch_timeout_s * static_cast<double>(sc.epochs + 1));
  } catch (...) {
    failure = std::current_exception();
  }
  manager.stop();
  for (auto& n : nodes) n->stop();
  for (auto& th : threads) th.join();
  std::size_t i = 0;
  for (const auto& n : sc.nodes)
    if (n.role != Role::Manager) out.task_logs[n.id] = nodes[i++]->task_log();
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace mpsl
