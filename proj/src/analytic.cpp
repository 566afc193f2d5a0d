#include "mpsl/analytic.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mpsl {

namespace {

double part_time(const Scenario& sc, Segment seg, const NodeSpec& node, Direction dir) {
  double t = 0.0;
  for (std::size_t j = seg.start; j <= seg.end; ++j) t += sc.model.layer_time(j, node, dir);
  return t;
}

double owner_upload_average(const Scenario& sc, const std::vector<const NodeSpec*>& owners,
                            const NodeSpec& target, std::uint64_t bytes) {
  double sum = 0.0;
  for (const auto* o : owners) sum += static_cast<double>(bytes) / sc.bandwidth(*o, target);
  return sum / static_cast<double>(owners.size());
}

std::uint64_t owner_param_bytes(const Scenario& sc) {
  std::uint64_t b = 0;
  for (const auto seg : {sc.first_part(), sc.last_part()})
    for (std::size_t j = seg.start; j <= seg.end; ++j) b += sc.model.layers[j].param_bytes;
  return b;
}

std::uint64_t intermediate_param_bytes(const Scenario& sc) {
  std::uint64_t b = 0;
  const auto seg = sc.intermediate();
  for (std::size_t j = seg.start; j <= seg.end; ++j) b += sc.model.layers[j].param_bytes;
  return b;
}

// Pipelined training time (fill, steady batches, edges) for a set of owners
// feeding one node that hosts the whole intermediate part.
double single_node_training_time(const Scenario& sc, const std::vector<const NodeSpec*>& owners,
                                 const NodeSpec& node) {
  const auto inter = sc.intermediate();
  const double f = part_time(sc, inter, node, Direction::Forward);
  const double b = part_time(sc, inter, node, Direction::Backward);
  const double act = static_cast<double>(sc.model.layers[sc.first_cut].act_out_bytes);
  const double grad = static_cast<double>(sc.model.layers[sc.first_cut + 1].grad_out_bytes);
  double start = 0.0, end = 0.0;
  for (const auto* o : owners) {
    start += part_time(sc, sc.first_part(), *o, Direction::Forward) + act / sc.bandwidth(*o, node);
    end += grad / sc.bandwidth(node, *o) + part_time(sc, sc.first_part(), *o, Direction::Backward);
  }
  const double k = static_cast<double>(owners.size());
  const double batches = static_cast<double>(sc.r * sc.B) * k;
  return start / k + (f + b) + (batches - 1.0) * (f + b) + end / k;
}

}  // namespace

std::string cost_csv_header() {
  return "L_fwd,L_back,pipefull,pipeempty,start_first,end_last,T_batch_all,T_aggr,T_tot,cost_usd";
}

std::string to_csv_row(const CostBreakdown& c) {
  std::ostringstream os;
  os.precision(17);
  os << c.L_fwd << ',' << c.L_back << ',' << c.pipefull << ',' << c.pipeempty << ',' << c.start_first
     << ',' << c.end_last << ',' << c.T_batch_all << ',' << c.T_aggr << ',' << c.T_tot << ','
     << c.cost_usd;
  return os.str();
}

std::vector<PartStats> stage_stats(const Scenario& sc, const SplitAssignment& a) {
  validate_assignment(sc, a);
  std::vector<PartStats> out;
  for (std::size_t i = 0; i < a.segments.size(); ++i)
    out.push_back(part_stats(sc, a.segments[i], sc.node(a.node_order[i])));
  return out;
}

PipelineLatency pipeline_latency(const Scenario& sc, const SplitAssignment& a) {
  PipelineLatency l;
  for (const auto& s : stage_stats(sc, a)) {
    l.L_fwd = std::max(l.L_fwd, s.fwd_s);
    l.L_back = std::max(l.L_back, s.back_s);
  }
  l.pipefull = l.L_fwd + l.L_back;
  return l;
}

double pipe_fill_time(const Scenario& sc, const SplitAssignment& a) {
  double fwd = 0.0, back = 0.0;
  for (const auto& s : stage_stats(sc, a)) {
    fwd += s.fwd_s;
    back += s.back_s;
  }
  return fwd + back;
}

BatchEdges first_last_batch_terms(const Scenario& sc, const SplitAssignment& a) {
  validate_assignment(sc, a);
  const NodeSpec& n2 = sc.node(a.node_order.front());
  const double act = static_cast<double>(sc.model.layers[sc.first_cut].act_out_bytes);
  const double grad = static_cast<double>(sc.model.layers[sc.first_cut + 1].grad_out_bytes);
  const auto owners = sc.owners();
  BatchEdges e;
  for (const auto* o : owners) {
    e.start_first += part_time(sc, sc.first_part(), *o, Direction::Forward) + act / sc.bandwidth(*o, n2);
    e.end_last += grad / sc.bandwidth(n2, *o) + part_time(sc, sc.first_part(), *o, Direction::Backward);
  }
  e.start_first /= static_cast<double>(owners.size());
  e.end_last /= static_cast<double>(owners.size());
  return e;
}

double epoch_training_time(const Scenario& sc, const SplitAssignment& a) {
  const auto edges = first_last_batch_terms(sc, a);
  const double batches = static_cast<double>(sc.r * sc.B * sc.K);
  return edges.start_first + pipe_fill_time(sc, a) + (batches - 1.0) * pipeline_latency(sc, a).pipefull +
         edges.end_last;
}

double aggregation_time(const Scenario& sc) {
  const NodeSpec& aggr = sc.aggregator();
  const auto owners = sc.owners();
  const auto bytes = owner_param_bytes(sc);
  const double up = owner_upload_average(sc, owners, aggr, bytes);
  const double compute = sc.aggregator_alpha * static_cast<double>(owners.size()) * static_cast<double>(bytes);
  double down = 0.0;
  for (const auto* o : owners) down += static_cast<double>(bytes) / sc.bandwidth(aggr, *o);
  return up + compute + down;
}

CostBreakdown global_epoch_time(const Scenario& sc, const SplitAssignment& a) {
  CostBreakdown c;
  const auto lat = pipeline_latency(sc, a);
  const auto edges = first_last_batch_terms(sc, a);
  c.L_fwd = lat.L_fwd;
  c.L_back = lat.L_back;
  c.pipefull = lat.pipefull;
  c.pipeempty = pipe_fill_time(sc, a);
  c.start_first = edges.start_first;
  c.end_last = edges.end_last;
  c.T_batch_all = epoch_training_time(sc, a);
  c.T_aggr = aggregation_time(sc);
  c.T_tot = c.T_batch_all + c.T_aggr;
  double price = 0.0;
  for (const auto& id : a.node_order) price += sc.node(id).price_per_hour;
  c.cost_usd = c.T_tot / 3600.0 * price;
  return c;
}

double splitnn_epoch_time(const Scenario& sc) {
  auto compute = sc.compute_nodes();
  if (compute.empty()) throw ValidationError("SplitNN needs a compute node");
  const NodeSpec& node = **std::min_element(compute.begin(), compute.end(), [](auto* x, auto* y) {
    return x->speed != y->speed ? x->speed > y->speed : x->id < y->id;
  });
  const auto inter = sc.intermediate();
  const auto& L = sc.model.layers;
  const double mid = part_time(sc, inter, node, Direction::Forward) + part_time(sc, inter, node, Direction::Backward);
  const double handoff_bytes = static_cast<double>(owner_param_bytes(sc));
  const auto owners = sc.owners();
  const NodeSpec& aggr = sc.aggregator();
  const double B = static_cast<double>(sc.B);
  double total = 0.0;
  for (std::size_t k = 0; k < owners.size(); ++k) {
    const NodeSpec& o = *owners[k];
    const NodeSpec& next = *owners[(k + 1) % owners.size()];
    double proc = mid;
    for (const auto seg : {sc.first_part(), sc.last_part()})
      proc += part_time(sc, seg, o, Direction::Forward) + part_time(sc, seg, o, Direction::Backward);
    const double up = sc.bandwidth(o, node);
    const double down = sc.bandwidth(node, o);
    const double comm = static_cast<double>(L[sc.first_cut].act_out_bytes) / up +
                        static_cast<double>(L[sc.last_cut - 1].act_out_bytes) / down +
                        static_cast<double>(L[sc.last_cut].grad_out_bytes) / up +
                        static_cast<double>(L[sc.first_cut + 1].grad_out_bytes) / down;
    double handoff = 0.0;
    if (owners.size() > 1) {
      const auto direct = sc.find_link(o, next);
      handoff = handoff_bytes / (direct ? *direct : sc.bandwidth(o, aggr));
    }
    total += B * proc + B * comm + handoff;
  }
  return total;
}

OwnerGroups proportional_owner_assignment(const Scenario& sc, const std::vector<const NodeSpec*>& owners,
                                          const std::vector<const NodeSpec*>& compute) {
  const std::size_t n = compute.size();
  if (n == 0) throw ValidationError("no compute nodes to distribute owners over");
  const std::uint64_t copy_mem = sc.part_mem(sc.intermediate());
  std::vector<std::size_t> cap(n);
  std::size_t total_cap = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cap[i] = static_cast<std::size_t>(compute[i]->mem_bytes / copy_mem);
    total_cap += cap[i];
  }
  const std::size_t K = owners.size();
  if (total_cap < K)
    throw InfeasibleError("compute nodes can hold " + std::to_string(total_cap) + " copies of M_2 but " +
                          std::to_string(K) + " owners need one each");

  std::vector<double> share(n, 0.0);
  std::vector<bool> fixed(n, false);
  double remaining = static_cast<double>(K);
  for (bool changed = true; changed;) {
    changed = false;
    double speed_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (!fixed[i]) speed_sum += compute[i]->speed;
    for (std::size_t i = 0; i < n; ++i)
      if (!fixed[i]) share[i] = remaining * compute[i]->speed / speed_sum;
    for (std::size_t i = 0; i < n; ++i) {
      if (!fixed[i] && share[i] > static_cast<double>(cap[i])) {
        fixed[i] = true;
        share[i] = static_cast<double>(cap[i]);
        remaining -= share[i];
        changed = true;
      }
    }
  }

  std::vector<std::size_t> count(n);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    count[i] = std::min(cap[i], static_cast<std::size_t>(std::floor(share[i] + 1e-9)));
    assigned += count[i];
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return share[x] - static_cast<double>(count[x]) > share[y] - static_cast<double>(count[y]);
  });
  while (assigned < K) {
    bool progressed = false;
    for (std::size_t i : order) {
      if (assigned == K) break;
      if (count[i] < cap[i]) {
        ++count[i];
        ++assigned;
        progressed = true;
      }
    }
    if (!progressed) break;
  }

  OwnerGroups groups(n);
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    groups[i].compute_id = compute[i]->id;
    for (std::size_t j = 0; j < count[i]; ++j) groups[i].owner_ids.push_back(owners[next++]->id);
  }
  return groups;
}

double intermediate_sync_time(const Scenario& sc, const OwnerGroups& groups) {
  const NodeSpec& aggr = sc.aggregator();
  const double bytes = static_cast<double>(intermediate_param_bytes(sc));
  double up = 0.0, down = 0.0;
  std::size_t G = 0;
  for (const auto& g : groups) {
    if (g.owner_ids.empty()) continue;
    const NodeSpec& c = sc.node(g.compute_id);
    up += bytes / sc.bandwidth(c, aggr);
    down += bytes / sc.bandwidth(aggr, c);
    ++G;
  }
  if (G == 0) return 0.0;
  return up / static_cast<double>(G) + sc.aggregator_alpha * static_cast<double>(G) * bytes + down;
}

double horizontal_parallel_sl_time(const Scenario& sc, const OwnerGroups& groups) {
  const std::uint64_t copy_mem = sc.part_mem(sc.intermediate());
  double slowest = 0.0;
  std::size_t covered = 0;
  for (const auto& g : groups) {
    if (g.owner_ids.empty()) continue;
    const NodeSpec& c = sc.node(g.compute_id);
    if (g.owner_ids.size() * copy_mem > c.mem_bytes)
      throw InfeasibleError("memory: node '" + c.id + "' cannot hold " + std::to_string(g.owner_ids.size()) +
                            " copies of M_2");
    std::vector<const NodeSpec*> members;
    for (const auto& id : g.owner_ids) members.push_back(&sc.node(id));
    covered += members.size();
    slowest = std::max(slowest, single_node_training_time(sc, members, c));
  }
  if (covered != sc.K) throw ValidationError("every data owner must belong to exactly one group");
  return slowest + aggregation_time(sc) + intermediate_sync_time(sc, groups);
}

PriceTable PriceTable::from_classes(const std::map<std::string, NodeClass>& classes) {
  PriceTable t;
  for (const auto& [name, c] : classes) t.entries[name] = c.price_per_hour;
  return t;
}

PriceTable aws_t2_prices() { return {{{"t2.xlarge", 0.18}, {"t2.large", 0.092}, {"t2.medium", 0.046}}}; }

double monetary_cost(double epoch_seconds, const std::vector<std::string>& billed_classes,
                     const PriceTable& prices) {
  double hourly = 0.0;
  for (const auto& cls : billed_classes) {
    auto it = prices.entries.find(cls);
    if (it == prices.entries.end()) throw ValidationError("missing price for node class '" + cls + "'");
    hourly += it->second;
  }
  return epoch_seconds / 3600.0 * hourly;
}

double monetary_cost(double epoch_seconds, const std::vector<const NodeSpec*>& billed_nodes,
                     const PriceTable& prices) {
  std::vector<std::string> classes;
  for (const auto* n : billed_nodes) classes.push_back(n->node_class);
  return monetary_cost(epoch_seconds, classes, prices);
}

}  // namespace mpsl
