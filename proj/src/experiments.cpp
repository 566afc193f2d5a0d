#include "mpsl/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include "mpsl/analytic.hpp"
#include "mpsl/simkernel.hpp"
#include "mpsl/splitter.hpp"

namespace mpsl {

using json = nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Non-finite values become strings so the JSON output stays valid.
json num(double v) { return std::isfinite(v) ? json(v) : json(format_double(v)); }

std::string csv_cell(const json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) {
    const auto& s = v.get_ref<const std::string&>();
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
  }
  if (v.is_number_float()) return format_double(v.get<double>());
  return v.dump();
}

std::string pct(double x) { return format_double(std::round(x * 1e4) / 1e2) + "%"; }

}  // namespace

void Table::add(std::vector<json> row) {
  if (row.size() != columns.size()) throw Error("table row has " + std::to_string(row.size()) + " cells, expected " + std::to_string(columns.size()));
  rows.push_back(std::move(row));
}

std::string Table::csv() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
  out << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << csv_cell(row[i]);
    out << "\n";
  }
  return out.str();
}

json Table::to_json() const {
  json arr = json::array();
  for (const auto& row : rows) {
    json obj = json::object();
    for (std::size_t i = 0; i < row.size(); ++i) obj[columns[i]] = row[i];
    arr.push_back(std::move(obj));
  }
  return arr;
}

std::string owner_class_of(const Scenario& sc) {
  const auto owners = sc.owners();
  if (owners.empty() || owners.front()->node_class.empty()) throw ValidationError("scenario has no classed data owner");
  return owners.front()->node_class;
}

std::string compute_class_of(const Scenario& sc) {
  const auto nodes = sc.compute_nodes();
  if (nodes.empty() || nodes.front()->node_class.empty()) throw ValidationError("scenario has no classed compute node");
  return nodes.front()->node_class;
}

Scenario homogeneous_variant(const Scenario& base, std::size_t K, const std::string& owner_class, std::size_t N,
                             const std::string& compute_class) {
  return with_compute(with_owners(base, {{"owner", owner_class, K}}), {{"vm", compute_class, N}});
}

bool relax_compute_memory(Scenario& sc) {
  const std::uint64_t need = static_cast<std::uint64_t>(sc.owners().size()) * sc.part_mem(sc.intermediate());
  bool changed = false;
  for (auto& n : sc.nodes)
    if (n.role == Role::Compute && n.mem_bytes < need) {
      n.mem_bytes = need;
      changed = true;
    }
  return changed;
}

// ---------------------------------------------------------------------------

ExperimentResult cmd_validate(const Scenario& base, const ValidateParams& params) {
  ExperimentResult res;
  res.table.columns = {"K", "P", "T_tot", "sim_epoch", "rel_error", "pipe_fill", "sim_fill", "pipefull", "sim_period"};
  const std::string oc = owner_class_of(base), cc = compute_class_of(base);
  double sum = 0.0;
  std::size_t points = 0;
  for (const std::size_t K : params.K)
    for (const std::size_t P : params.P) {
      if (P < 3) throw ValidationError("P must be at least 3");
      const Scenario sc = homogeneous_variant(base, K, oc, P - 2, cc);
      const SplitAssignment a = optimize_split(SplitProblem::from_scenario(sc)).assignment;
      SimOptions opt;
      opt.capture_trace = false;
      const ComparisonReport cr = compare_with_analytic(sc, a, opt);
      const double fill = pipe_fill_time(sc, a);
      res.table.add({K, P, cr.analytic.T_tot, cr.sim_epoch, cr.relative_error, fill, cr.sim_fill, cr.analytic.pipefull,
                     num(cr.sim_period)});
      if (cr.sim_fill < fill)
        res.failures.push_back("K=" + std::to_string(K) + " P=" + std::to_string(P) + ": simulated fill " +
                               format_double(cr.sim_fill) + " s is below the analytic bound " + format_double(fill) + " s");
      sum += cr.relative_error;
      ++points;
    }
  const double mean = points ? sum / static_cast<double>(points) : 0.0;
  res.table.add({"mean", nullptr, nullptr, nullptr, mean, nullptr, nullptr, nullptr, nullptr});
  res.summary["points"] = points;
  res.summary["mean_abs_rel_error"] = mean;
  if (mean > params.max_mean_error)
    res.failures.push_back("mean absolute relative error " + pct(mean) + " exceeds " + pct(params.max_mean_error));
  return res;
}

ExperimentResult cmd_split_gain(const Scenario& base, const SplitGainParams& params) {
  ExperimentResult res;
  res.table.columns = {"K", "N", "opt_T_tot", "manual_T_tot", "gain_pct", "opt_pipefull", "manual_pipefull"};
  const std::string oc = owner_class_of(base), cc = compute_class_of(base);
  double max_gain = 0.0;
  for (const std::size_t K : params.K)
    for (const std::size_t N : params.N) {
      const Scenario sc = homogeneous_variant(base, K, oc, N, cc);
      const SplitProblem prob = SplitProblem::from_scenario(sc);
      json opt_t = "infeasible", man_t = "infeasible", gain = nullptr, opt_pf = nullptr, man_pf = nullptr;
      std::optional<double> ot, mt;
      try {
        const SplitResult r = optimize_split(prob);
        ot = global_epoch_time(sc, r.assignment).T_tot;
        opt_t = *ot;
        opt_pf = r.objective;
      } catch (const InfeasibleError&) {
      }
      try {
        const SplitResult r = manual_even_split(prob);
        mt = global_epoch_time(sc, r.assignment).T_tot;
        man_t = *mt;
        man_pf = r.objective;
      } catch (const InfeasibleError&) {
      }
      if (ot && mt) {
        const double g = 100.0 * (*mt - *ot) / *mt;
        gain = g;
        max_gain = std::max(max_gain, g);
        if (*ot > *mt + params.tolerance_s)
          res.failures.push_back("K=" + std::to_string(K) + " N=" + std::to_string(N) + ": optimized epoch " +
                                 format_double(*ot) + " s exceeds manual " + format_double(*mt) + " s");
      } else if (mt && !ot) {
        res.failures.push_back("K=" + std::to_string(K) + " N=" + std::to_string(N) +
                               ": manual split fits memory but the optimizer found none");
      }
      res.table.add({K, N, opt_t, man_t, gain, opt_pf, man_pf});
    }
  res.summary["max_gain_pct"] = max_gain;
  return res;
}

ExperimentResult cmd_multihop(const Scenario& base, const MultihopParams& params) {
  ExperimentResult res;
  res.table.columns = {"first_cut", "last_cut", "N", "pipefull", "improvement_pct", "diminishing"};
  const std::string oc = owner_class_of(base), cc = compute_class_of(base);
  auto cuts = params.cuts;
  if (cuts.empty()) {
    for (const std::size_t fc : {base.first_cut, base.first_cut + 1})
      for (const std::size_t lc : {base.last_cut, base.last_cut - 1})
        if (fc + 1 < lc && lc < base.num_layers()) cuts.emplace_back(fc, lc);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  double best_1_to_2 = -kInf;
  std::string best_cut;
  for (const auto& [fc, lc] : cuts) {
    Scenario cut = base;
    cut.first_cut = fc;
    cut.last_cut = lc;
    std::optional<double> prev;
    std::optional<double> prev_drop;
    const std::size_t s_star = lc - fc - 1;
    for (std::size_t N = 1; N <= std::min(params.max_N, s_star); ++N) {
      const Scenario sc = homogeneous_variant(cut, base.owners().size(), oc, N, cc);
      double pf = kInf;
      try {
        pf = optimize_split(SplitProblem::from_scenario(sc)).objective;
      } catch (const InfeasibleError&) {
      }
      json improvement = nullptr, diminishing = nullptr;
      if (prev && std::isfinite(*prev) && std::isfinite(pf)) {
        const double drop = *prev - pf;
        improvement = 100.0 * drop / *prev;
        if (prev_drop) diminishing = drop <= *prev_drop;
        if (N == 2 && 100.0 * drop / *prev > best_1_to_2) {
          best_1_to_2 = 100.0 * drop / *prev;
          best_cut = std::to_string(fc) + "/" + std::to_string(lc);
        }
        prev_drop = drop;
      }
      if (prev && pf > *prev)
        res.failures.push_back("cuts " + std::to_string(fc) + "/" + std::to_string(lc) + ": pipefull rises from " +
                               format_double(*prev) + " s to " + format_double(pf) + " s at N=" + std::to_string(N));
      res.table.add({fc, lc, N, num(pf), improvement, diminishing});
      prev = pf;
    }
  }
  if (std::isfinite(best_1_to_2)) {
    res.summary["best_improvement_1_to_2_pct"] = best_1_to_2;
    res.summary["best_cut"] = best_cut;
  }
  return res;
}

ExperimentResult cmd_cost_delay(const Scenario& base, const CostDelayParams& params) {
  ExperimentResult res;
  res.table.columns = {"N", "combo", "protocol", "delay_s", "cost_usd", "cheapest_rank"};
  std::vector<std::string> vms = params.vm_classes;
  if (vms.empty()) {
    for (const auto& [name, c] : base.classes)
      if (c.price_per_hour > 0) vms.push_back(name);
    std::stable_sort(vms.begin(), vms.end(), [&](const auto& x, const auto& y) {
      return base.classes.at(x).price_per_hour > base.classes.at(y).price_per_hour;
    });
  }
  if (vms.empty()) throw ValidationError("no priced node classes to combine");
  const PriceTable prices = PriceTable::from_classes(base.classes);

  struct Point {
    std::size_t N;
    std::string combo;
    std::vector<std::size_t> picks;
    double delay[2];
    double cost[2];
  };
  std::vector<Point> points;
  double worst_ratio = 0.0;
  for (const std::size_t N : params.N) {
    std::vector<std::size_t> pick(N, 0);
    std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t i, std::size_t lo) {
      if (i == N) {
        std::vector<NodeGroup> groups;
        std::string label;
        for (std::size_t j = 0; j < N; ++j) {
          groups.push_back({"vm" + std::to_string(j + 1), vms[pick[j]], 1});
          label += (j ? "-" : "") + std::to_string(pick[j] + 1);
        }
        const Scenario sc = with_compute(base, groups);
        Point p{N, label, pick, {kInf, kInf}, {kInf, kInf}};
        try {
          const SplitAssignment a = optimize_split(SplitProblem::from_scenario(sc)).assignment;
          p.delay[0] = global_epoch_time(sc, a).T_tot;
        } catch (const InfeasibleError&) {
        }
        try {
          const OwnerGroups g = proportional_owner_assignment(sc, sc.owners(), sc.compute_nodes());
          p.delay[1] = horizontal_parallel_sl_time(sc, g);
        } catch (const InfeasibleError&) {
        }
        for (int k = 0; k < 2; ++k)
          p.cost[k] = std::isfinite(p.delay[k]) ? monetary_cost(p.delay[k], sc.compute_nodes(), prices) : kInf;
        points.push_back(std::move(p));
        return;
      }
      for (std::size_t v = lo; v < vms.size(); ++v) {
        pick[i] = v;
        rec(i + 1, v);
      }
    };
    rec(0, 0);
  }

  static const char* const kProtocols[] = {"mp-sl", "horizontal"};
  for (const std::size_t N : params.N) {
    // Three cheapest finite (combination, protocol) pairs per N.
    std::vector<std::pair<double, std::pair<std::size_t, int>>> ranked;
    for (std::size_t i = 0; i < points.size(); ++i)
      if (points[i].N == N)
        for (int k = 0; k < 2; ++k)
          if (std::isfinite(points[i].cost[k])) ranked.push_back({points[i].cost[k], {i, k}});
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    std::map<std::pair<std::size_t, int>, int> rank;
    for (std::size_t r = 0; r < std::min<std::size_t>(3, ranked.size()); ++r) rank[ranked[r].second] = static_cast<int>(r + 1);

    std::optional<double> min_delay[2];
    const Point* all_top = nullptr;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const Point& p = points[i];
      if (p.N != N) continue;
      for (int k = 0; k < 2; ++k) {
        const auto it = rank.find({i, k});
        res.table.add({N, p.combo, kProtocols[k], num(p.delay[k]), num(p.cost[k]), it == rank.end() ? 0 : it->second});
        if (std::isfinite(p.delay[k]) && (!min_delay[k] || p.delay[k] < *min_delay[k])) min_delay[k] = p.delay[k];
      }
      const bool uses_cheap = std::any_of(p.picks.begin(), p.picks.end(), [](std::size_t v) { return v > 0; });
      if (!uses_cheap) all_top = &p;
      if (uses_cheap && (std::isfinite(p.cost[0]) || std::isfinite(p.cost[1]))) {
        if (p.cost[0] > p.cost[1])
          res.failures.push_back("N=" + std::to_string(N) + " combo " + p.combo + ": MP-SL costs " +
                                 format_double(p.cost[0]) + " USD, horizontal " + format_double(p.cost[1]) + " USD");
        if (std::isfinite(p.cost[0]) && std::isfinite(p.cost[1]))
          worst_ratio = std::max(worst_ratio, p.cost[1] / p.cost[0]);
      }
    }
    if (all_top)
      for (int k = 0; k < 2; ++k)
        if (min_delay[k] && std::isfinite(all_top->delay[k]) && all_top->delay[k] > *min_delay[k])
          res.failures.push_back("N=" + std::to_string(N) + ": all-" + vms[0] + " " + kProtocols[k] +
                                 " delay is not the minimum");
  }
  res.summary["max_horizontal_cost_ratio"] = worst_ratio;
  return res;
}

ExperimentResult cmd_heterogeneity(const Scenario& base, const HeterogeneityParams& params) {
  ExperimentResult res;
  res.table.columns = {"sweep", "fast_owners", "slow_owners", "slow_network_fraction", "P", "mpsl_T_tot", "splitnn_T",
                       "compute_mem_relaxed"};
  const std::string fast = params.fast_class.empty() ? owner_class_of(base) : params.fast_class;
  const std::string cc = compute_class_of(base);
  if (!base.classes.count(params.slow_class)) throw ValidationError("unknown node class '" + params.slow_class + "'");

  // (P, fast share) -> (mpsl, splitnn) for the robustness check.
  std::map<std::pair<std::size_t, double>, std::pair<double, double>> mix;

  auto evaluate = [&](const std::string& sweep, Scenario sc, std::size_t q1, std::size_t q2, double frac) {
    for (const std::size_t P : params.P) {
      Scenario v = with_compute(sc, {{"vm", cc, P - 2}});
      const bool relaxed = relax_compute_memory(v);
      validate(v);
      const SplitAssignment a = optimize_split(SplitProblem::from_scenario(v)).assignment;
      const double t = global_epoch_time(v, a).T_tot;
      const double s = splitnn_epoch_time(v);
      res.table.add({sweep, q1, q2, frac, P, t, s, relaxed});
      if (sweep == "owner-mix") mix[{P, static_cast<double>(q1) / static_cast<double>(params.K)}] = {t, s};
    }
  };

  for (const double share : params.fast_share) {
    const auto q1 = static_cast<std::size_t>(std::llround(share * static_cast<double>(params.K)));
    const std::size_t q2 = params.K - q1;
    evaluate("owner-mix", with_owners(base, {{"owner", fast, q1}, {"weak", params.slow_class, q2}}), q1, q2, 0.0);
  }

  const Scenario probe = homogeneous_variant(base, 1, fast, 1, cc);
  const NodeSpec& o = *probe.owners().front();
  const double bw_compute = probe.bandwidth(o, *probe.compute_nodes().front());
  const double bw_aggr = probe.bandwidth(o, probe.aggregator());
  for (const double frac : params.slow_fraction) {
    const auto slow = static_cast<std::size_t>(std::llround(frac * static_cast<double>(params.K)));
    Scenario sc = with_owners(base, {{"owner", fast, params.K - slow}, {"slow", fast, slow}});
    if (slow > 0) {
      sc.links.push_back({"slow", "compute", bw_compute / params.slow_factor});
      sc.links.push_back({"slow", "aggregator", bw_aggr / params.slow_factor});
    }
    evaluate("network", sc, params.K - slow, slow, frac);
  }

  for (const std::size_t P : params.P) {
    if (P < 4) continue;
    const auto a = mix.find({P, 1.0}), b = mix.find({P, 0.0});
    if (a == mix.end() || b == mix.end()) continue;
    const double dm = (b->second.first - a->second.first) / a->second.first;
    const double ds = (b->second.second - a->second.second) / a->second.second;
    res.summary["P" + std::to_string(P) + "_mpsl_change"] = dm;
    res.summary["P" + std::to_string(P) + "_splitnn_change"] = ds;
    if (std::abs(dm) >= params.max_mpsl_change)
      res.failures.push_back("P=" + std::to_string(P) + ": MP-SL epoch changes by " + pct(dm) + " with all-slow owners");
    if (ds <= params.min_splitnn_increase)
      res.failures.push_back("P=" + std::to_string(P) + ": SplitNN epoch grows by only " + pct(ds));
  }
  return res;
}

}  // namespace mpsl
