#include "mpsl/simkernel.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <queue>
#include <random>
#include <sstream>
#include <tuple>

namespace mpsl {

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::ComputeDone: return "compute_done";
    case EventKind::TransferDone: return "transfer_done";
    case EventKind::BatchInjected: return "batch_injected";
    case EventKind::AggregationDone: return "aggregation_done";
  }
  return "?";
}

namespace {

enum class TaskKind { OwnerFirstFwd, OwnerLastFwd, OwnerLastBack, OwnerFirstBack, StageFwd, StageBack, Aggregate };
enum class TransferKind { Data, ParamUp, ParamDown };

struct Task {
  TaskKind kind;
  std::size_t owner = 0;  // index into owners
  std::size_t seq = 0;
  std::size_t part = 0;
  Direction dir = Direction::Forward;
  double duration = 0.0;
  double ready = 0.0;
  std::uint64_t counter = 0;
};

struct Executor {
  std::deque<Task> fwd, back;
  bool busy = false;
  Task running{};
  double start = 0.0;
  double busy_time = 0.0;
  std::size_t max_depth = 0;
  bool stage = false;
  bool seen_back = false;
  bool last_fwd = false;
  std::size_t outstanding = 0;  // forwards started minus backwards started
  std::size_t cap = 0;          // in-flight limit fixed when the first backward arrives
};

struct Transfer {
  TransferKind kind = TransferKind::Data;
  std::size_t owner = 0;
  std::size_t seq = 0;
  std::size_t part = 0;  // destination position
  Direction dir = Direction::Forward;
  double duration = 0.0;
  double ready = 0.0;
  std::uint64_t counter = 0;
};

struct Link {
  std::size_t src = 0, dst = 0;
  double bandwidth = 0.0;
  std::deque<Transfer> queue;
  bool busy = false;
  double start = 0.0;
};

struct Pending {
  double time;
  int kind_rank;
  std::size_t node_rank;
  std::size_t owner_rank;
  std::size_t seq;
  std::size_t part;
  int dir;
  std::uint64_t counter;
  bool compute;
  std::size_t index;  // executor (node) index or link index

  auto key() const { return std::tie(time, kind_rank, node_rank, owner_rank, seq, part, dir, counter); }
  bool operator>(const Pending& o) const { return key() > o.key(); }
};

class Simulation {
 public:
  Simulation(const Scenario& sc, const SplitAssignment& a, const SimOptions& opt)
      : sc_(sc), opt_(opt), rng_(sc.rng_seed) {
    validate_assignment(sc, a);
    for (std::size_t i = 0; i < sc.nodes.size(); ++i) index_[sc.nodes[i].id] = i;
    std::vector<std::size_t> order(sc.nodes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto x, auto y) { return sc.nodes[x].id < sc.nodes[y].id; });
    rank_.resize(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) rank_[order[r]] = r;
    for (const auto* o : sc.owners()) owners_.push_back(index_.at(o->id));
    K_ = owners_.size();
    P_ = sc.P;
    batches_ = sc.r * sc.B;
    stage_node_.assign(P_ + 1, 0);
    for (std::size_t i = 0; i < a.node_order.size(); ++i) stage_node_[i + 2] = index_.at(a.node_order[i]);
    stage_stats_ = stage_stats(sc, a);
    aggr_ = index_.at(sc.aggregator().id);
    exec_.resize(sc.nodes.size());
    for (std::size_t p = 2; p < P_; ++p) exec_[stage_node_[p]].stage = true;
    for (const auto seg : {sc.first_part(), sc.last_part()})
      for (std::size_t j = seg.start; j <= seg.end; ++j) param_bytes_ += sc.model.layers[j].param_bytes;
    injected_.assign(K_, 0);
    uploaded_.assign(K_, 0);
    completed_.assign(K_, 0);
    stage_backs_.assign(P_ + 1, 0);
  }

  SimMetrics run() {
    for (std::size_t k = 0; k < K_; ++k) {
      if (opt_.injection == SimOptions::Injection::OpenLoop) {
        const std::size_t n = opt_.drain_between_local_epochs ? sc_.B : batches_;
        for (std::size_t s = 0; s < n; ++s) inject(k);
      } else {
        inject(k);
      }
    }
    while (!pending_.empty()) {
      const Pending p = pending_.top();
      pending_.pop();
      now_ = p.time;
      ++metrics_.events;
      if (p.compute)
        finish_compute(p.index);
      else
        finish_transfer(p.index);
    }
    if (updated_owners_ != K_ || local_aggregations_ != P_ - 2) deadlock();
    metrics_.epoch_time = std::max(epoch_end_, now_);
    metrics_.fill_time = first_stage_back_done_ - first_stage_fwd_start_;
    for (std::size_t i = 0; i < exec_.size(); ++i) {
      const auto& id = sc_.nodes[i].id;
      metrics_.busy_fraction[id] = metrics_.epoch_time > 0 ? exec_[i].busy_time / metrics_.epoch_time : 0.0;
      metrics_.queue_max_depth[id] = exec_[i].max_depth;
    }
    try {
      metrics_.steady_state_batch_period = measure_steady_state(stage_two_backs_);
    } catch (const Error&) {
      metrics_.steady_state_batch_period = std::numeric_limits<double>::quiet_NaN();
    }
    return std::move(metrics_);
  }

 private:
  double jitter(double d) {
    if (opt_.compute_jitter <= 0.0 || d <= 0.0) return d;
    std::uniform_real_distribution<double> u(-opt_.compute_jitter, opt_.compute_jitter);
    return d * (1.0 + u(rng_));
  }

  double owner_time(std::size_t k, Segment seg, Direction dir) const {
    double t = 0.0;
    const NodeSpec& n = sc_.nodes[owners_[k]];
    for (std::size_t j = seg.start; j <= seg.end; ++j) t += sc_.model.layer_time(j, n, dir);
    return t;
  }

  std::size_t owner_rank(std::size_t k) const { return rank_[owners_[k]]; }

  void record(EventKind kind, std::size_t node, std::size_t owner, std::size_t part, Direction dir,
              std::size_t seq, double ready, double start, std::size_t from = SIZE_MAX, bool has_owner = true) {
    SimEvent e;
    e.time = now_;
    e.kind = kind;
    e.node = sc_.nodes[node].id;
    if (has_owner) e.owner = sc_.nodes[owners_[owner]].id;
    e.part = part;
    e.dir = dir;
    e.seq = seq;
    if (from != SIZE_MAX) e.from = sc_.nodes[from].id;
    e.ready_time = ready;
    e.start_time = start;
    if (kind == EventKind::ComputeDone && part == 2 && dir == Direction::Backward) stage_two_backs_.push_back(e);
    if (opt_.capture_trace) metrics_.trace.push_back(std::move(e));
  }

  void inject(std::size_t k) {
    const std::size_t seq = injected_[k]++;
    record(EventKind::BatchInjected, owners_[k], k, 1, Direction::Forward, seq, now_, now_);
    enqueue_task(owners_[k], {TaskKind::OwnerFirstFwd, k, seq, 1, Direction::Forward,
                              jitter(owner_time(k, sc_.first_part(), Direction::Forward))});
  }

  // Closed loop: the next batch follows once the previous upload has left the
  // owner. Draining additionally waits for the whole local epoch to finish.
  void maybe_inject(std::size_t k) {
    const std::size_t next = injected_[k];
    if (next >= batches_) return;
    if (opt_.drain_between_local_epochs && next % sc_.B == 0 && completed_[k] < next) return;
    if (opt_.injection == SimOptions::Injection::OpenLoop) {
      if (!opt_.drain_between_local_epochs || next % sc_.B != 0 || completed_[k] < next) return;
      for (std::size_t s = 0; s < sc_.B && injected_[k] < batches_; ++s) inject(k);
      return;
    }
    if (uploaded_[k] < next) return;
    inject(k);
  }

  void enqueue_task(std::size_t node, Task t) {
    t.ready = now_;
    t.counter = counter_++;
    auto& ex = exec_[node];
    const bool backward_class = t.kind == TaskKind::OwnerLastFwd || t.kind == TaskKind::OwnerLastBack ||
                                t.kind == TaskKind::OwnerFirstBack || t.kind == TaskKind::StageBack;
    (backward_class ? ex.back : ex.fwd).push_back(t);
    if (t.kind == TaskKind::StageBack && !ex.seen_back) {
      ex.seen_back = true;
      ex.cap = ex.outstanding + opt_.inflight_slack;
    }
    ex.max_depth = std::max(ex.max_depth, ex.fwd.size() + ex.back.size());
    start_next(node);
  }

  void start_next(std::size_t node) {
    auto& ex = exec_[node];
    if (ex.busy || (ex.fwd.empty() && ex.back.empty())) return;
    std::deque<Task>* q = nullptr;
    if (opt_.executor == SimOptions::ExecutorPolicy::Alternate && ex.stage) {
      // Forwards only until the first backward arrives, then strictly one of each.
      const bool may_fwd = !ex.fwd.empty() && (!ex.seen_back || ex.outstanding < ex.cap);
      if (!ex.seen_back)
        q = &ex.fwd;
      else if (ex.last_fwd)
        q = !ex.back.empty() ? &ex.back : &ex.fwd;
      else
        q = may_fwd ? &ex.fwd : &ex.back;
      if (q->empty() || (q == &ex.fwd && !may_fwd)) return;
    } else if (opt_.executor != SimOptions::ExecutorPolicy::Fifo)
      q = ex.back.empty() ? &ex.fwd : &ex.back;
    else if (ex.back.empty())
      q = &ex.fwd;
    else if (ex.fwd.empty())
      q = &ex.back;
    else
      q = ex.back.front().counter < ex.fwd.front().counter ? &ex.back : &ex.fwd;
    ex.running = q->front();
    q->pop_front();
    ex.last_fwd = q == &ex.fwd;
    if (ex.stage) ex.last_fwd ? ++ex.outstanding : --ex.outstanding;
    ex.busy = true;
    ex.start = now_;
    if (ex.running.kind == TaskKind::StageFwd && ex.running.part == 2 && first_stage_fwd_start_ < 0)
      first_stage_fwd_start_ = now_;
    const Task& t = ex.running;
    pending_.push({now_ + t.duration, 0, rank_[node], t.kind == TaskKind::Aggregate ? 0 : owner_rank(t.owner), t.seq,
                   t.part, static_cast<int>(t.dir), t.counter, true, node});
  }

  std::size_t link_index(std::size_t src, std::size_t dst) {
    const auto key = std::make_pair(src, dst);
    if (auto it = link_of_.find(key); it != link_of_.end()) return it->second;
    links_.push_back({src, dst, sc_.bandwidth(sc_.nodes[src], sc_.nodes[dst]), {}, false, 0.0});
    link_of_.emplace(key, links_.size() - 1);
    return links_.size() - 1;
  }

  void send(std::size_t src, std::size_t dst, Transfer t, std::uint64_t bytes) {
    const std::size_t li = link_index(src, dst);
    t.duration = static_cast<double>(bytes) / links_[li].bandwidth;
    t.ready = now_;
    t.counter = counter_++;
    links_[li].queue.push_back(t);
    start_link(li);
  }

  void start_link(std::size_t li) {
    auto& l = links_[li];
    if (l.busy || l.queue.empty()) return;
    l.busy = true;
    l.start = now_;
    const Transfer& t = l.queue.front();
    pending_.push({now_ + t.duration, 1, rank_[l.dst], owner_rank(t.owner), t.seq, t.part, static_cast<int>(t.dir), t.counter, false, li});
  }

  const std::vector<LayerProfile>& layers() const { return sc_.model.layers; }

  void finish_compute(std::size_t node) {
    auto& ex = exec_[node];
    const Task t = ex.running;
    ex.busy = false;
    ex.busy_time += now_ - ex.start;
    const bool aggregate = t.kind == TaskKind::Aggregate;
    record(EventKind::ComputeDone, node, t.owner, t.part, t.dir, t.seq, t.ready, ex.start, SIZE_MAX, !aggregate);
    start_next(node);
    const std::size_t owner = owners_[t.owner];
    switch (t.kind) {
      case TaskKind::OwnerFirstFwd:
        send(owner, stage_node_[2], {TransferKind::Data, t.owner, t.seq, 2, Direction::Forward},
             layers()[sc_.first_cut].act_out_bytes);
        break;
      case TaskKind::StageFwd:
        if (t.part + 1 < P_)
          send(node, stage_node_[t.part + 1], {TransferKind::Data, t.owner, t.seq, t.part + 1, Direction::Forward},
               stage_stats_[t.part - 2].act_out_bytes);
        else
          send(node, owner, {TransferKind::Data, t.owner, t.seq, P_, Direction::Forward},
               layers()[sc_.last_cut - 1].act_out_bytes);
        break;
      case TaskKind::OwnerLastFwd:
        enqueue_task(owner, {TaskKind::OwnerLastBack, t.owner, t.seq, P_, Direction::Backward,
                             jitter(owner_time(t.owner, sc_.last_part(), Direction::Backward))});
        break;
      case TaskKind::OwnerLastBack:
        send(owner, stage_node_[P_ - 1], {TransferKind::Data, t.owner, t.seq, P_ - 1, Direction::Backward},
             layers()[sc_.last_cut].grad_out_bytes);
        break;
      case TaskKind::StageBack:
        if (t.part == 2 && first_stage_back_done_ < 0) first_stage_back_done_ = now_;
        if (t.part > 2)
          send(node, stage_node_[t.part - 1], {TransferKind::Data, t.owner, t.seq, t.part - 1, Direction::Backward},
               stage_stats_[t.part - 2].grad_out_bytes);
        else
          send(node, owner, {TransferKind::Data, t.owner, t.seq, 1, Direction::Backward},
               layers()[sc_.first_cut + 1].grad_out_bytes);
        if (++stage_backs_[t.part] == K_ * batches_) {
          ++local_aggregations_;
          record(EventKind::AggregationDone, node, 0, t.part, Direction::Backward, 0, now_, now_, SIZE_MAX, false);
        }
        break;
      case TaskKind::OwnerFirstBack:
        ++completed_[t.owner];
        if (completed_[t.owner] == batches_)
          send(owner, aggr_, {TransferKind::ParamUp, t.owner, 0, 0, Direction::Forward}, param_bytes_);
        else
          maybe_inject(t.owner);
        break;
      case TaskKind::Aggregate:
        record(EventKind::AggregationDone, node, 0, 0, Direction::Forward, 0, t.ready, ex.start, SIZE_MAX, false);
        send(aggr_, owners_[0], {TransferKind::ParamDown, 0, 0, 0, Direction::Backward}, param_bytes_);
        break;
    }
  }

  void finish_transfer(std::size_t li) {
    auto& l = links_[li];
    const Transfer t = l.queue.front();
    l.queue.pop_front();
    l.busy = false;
    const double started = l.start;
    record(EventKind::TransferDone, l.dst, t.owner, t.part, t.dir, t.seq, t.ready, started, l.src);
    const std::size_t src = l.src, dst = l.dst;
    start_link(li);
    switch (t.kind) {
      case TransferKind::Data:
        if (dst == owners_[t.owner]) {
          if (t.dir == Direction::Forward)
            enqueue_task(dst, {TaskKind::OwnerLastFwd, t.owner, t.seq, P_, Direction::Forward,
                               jitter(owner_time(t.owner, sc_.last_part(), Direction::Forward))});
          else
            enqueue_task(dst, {TaskKind::OwnerFirstBack, t.owner, t.seq, 1, Direction::Backward,
                               jitter(owner_time(t.owner, sc_.first_part(), Direction::Backward))});
        } else {
          const auto& st = stage_stats_[t.part - 2];
          const bool fwd = t.dir == Direction::Forward;
          enqueue_task(dst, {fwd ? TaskKind::StageFwd : TaskKind::StageBack, t.owner, t.seq, t.part, t.dir,
                             jitter(fwd ? st.fwd_s : st.back_s)});
        }
        if (src == owners_[t.owner] && t.dir == Direction::Forward) {
          ++uploaded_[t.owner];
          maybe_inject(t.owner);
        }
        break;
      case TransferKind::ParamUp:
        if (++uploads_done_ == K_)
          enqueue_task(aggr_, {TaskKind::Aggregate, 0, 0, 0, Direction::Forward,
                               sc_.aggregator_alpha * static_cast<double>(K_) * static_cast<double>(param_bytes_)});
        break;
      case TransferKind::ParamDown:
        ++updated_owners_;
        epoch_end_ = now_;
        if (t.owner + 1 < K_)
          send(aggr_, owners_[t.owner + 1], {TransferKind::ParamDown, t.owner + 1, 0, 0, Direction::Backward},
               param_bytes_);
        break;
    }
  }

  [[noreturn]] void deadlock() const {
    std::ostringstream os;
    os << "simulation deadlocked at t=" << now_ << "; queues:";
    for (std::size_t i = 0; i < exec_.size(); ++i)
      if (!exec_[i].fwd.empty() || !exec_[i].back.empty())
        os << ' ' << sc_.nodes[i].id << "[fwd=" << exec_[i].fwd.size() << ",back=" << exec_[i].back.size() << ']';
    for (const auto& l : links_)
      if (!l.queue.empty()) os << ' ' << sc_.nodes[l.src].id << "->" << sc_.nodes[l.dst].id << '[' << l.queue.size() << ']';
    os << "; updated owners " << updated_owners_ << '/' << K_;
    throw Error(os.str());
  }

  const Scenario& sc_;
  SimOptions opt_;
  std::mt19937_64 rng_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::size_t> rank_;
  std::vector<std::size_t> owners_;
  std::size_t K_ = 0, P_ = 0, batches_ = 0, aggr_ = 0;
  std::vector<std::size_t> stage_node_;
  std::vector<PartStats> stage_stats_;
  std::uint64_t param_bytes_ = 0;
  std::vector<Executor> exec_;
  std::vector<Link> links_;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> link_of_;
  std::priority_queue<Pending, std::vector<Pending>, std::greater<>> pending_;
  std::vector<std::size_t> injected_, uploaded_, completed_, stage_backs_;
  std::size_t uploads_done_ = 0, updated_owners_ = 0, local_aggregations_ = 0;
  std::uint64_t counter_ = 0;
  double now_ = 0.0, epoch_end_ = 0.0;
  double first_stage_fwd_start_ = -1.0, first_stage_back_done_ = -1.0;
  std::vector<SimEvent> stage_two_backs_;
  SimMetrics metrics_;
};

}  // namespace

SimMetrics run_epoch(const Scenario& scenario, const SplitAssignment& assignment, const SimOptions& options) {
  return Simulation(scenario, assignment, options).run();
}

double measure_steady_state(const std::vector<SimEvent>& trace) {
  std::size_t P = 0;
  std::vector<double> done;
  for (const auto& e : trace) {
    if (e.kind != EventKind::ComputeDone) continue;
    P = std::max(P, e.part);
    if (e.part == 2 && e.dir == Direction::Backward) done.push_back(e.time);
  }
  P = std::max<std::size_t>(P, 3);
  if (done.size() < 2 * P)
    throw Error("trace too short: " + std::to_string(done.size()) + " position-2 backward completions, need " +
                std::to_string(2 * P));
  std::sort(done.begin(), done.end());
  const double span = done.back() - done.front();
  const double lo = done.front() + 0.25 * span, hi = done.front() + 0.75 * span;
  std::vector<double> gaps;
  for (std::size_t i = 1; i < done.size(); ++i)
    if (done[i - 1] >= lo && done[i] <= hi) gaps.push_back(done[i] - done[i - 1]);
  if (gaps.empty()) throw Error("trace too short: no completions inside the middle window");
  std::sort(gaps.begin(), gaps.end());
  const std::size_t m = gaps.size() / 2;
  return gaps.size() % 2 ? gaps[m] : 0.5 * (gaps[m - 1] + gaps[m]);
}

ComparisonReport compare_with_analytic(const Scenario& scenario, const SplitAssignment& assignment,
                                       const SimOptions& options) {
  ComparisonReport r;
  r.analytic = global_epoch_time(scenario, assignment);
  SimOptions o = options;
  o.capture_trace = false;
  const auto m = run_epoch(scenario, assignment, o);
  r.sim_epoch = m.epoch_time;
  r.sim_fill = m.fill_time;
  r.sim_period = m.steady_state_batch_period;
  r.relative_error = std::abs(r.analytic.T_tot - m.epoch_time) / m.epoch_time;
  r.fill_delta = m.fill_time - r.analytic.pipeempty;
  r.period_delta = m.steady_state_batch_period - r.analytic.pipefull;
  return r;
}

std::string trace_csv(const std::vector<SimEvent>& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "time,kind,node,owner,part,dir,seq\n";
  for (const auto& e : trace)
    os << e.time << ',' << to_string(e.kind) << ',' << e.node << ',' << e.owner << ',' << e.part << ','
       << to_string(e.dir) << ',' << e.seq << '\n';
  return os.str();
}

}  // namespace mpsl
