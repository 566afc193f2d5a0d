#include "mpsl/splitter.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <unordered_map>

namespace mpsl {

namespace {

// Pareto set of (max forward, max backward) pairs, F ascending, B strictly descending.
using Front = std::vector<std::pair<double, double>>;

void normalize(Front& f) {
  std::sort(f.begin(), f.end());
  Front out;
  for (const auto& p : f)
    if (out.empty() || p.second < out.back().second) out.push_back(p);
  f.swap(out);
}

bool fits(std::size_t K, std::uint64_t seg_mem, std::uint64_t node_mem) {
  return static_cast<unsigned __int128>(K) * seg_mem <= node_mem;
}

// Segment sums accumulated left to right, so every caller sees the same bits.
struct Tables {
  std::size_t S = 0, N = 0;
  std::vector<double> F, B;         // [(n * S + a) * S + b]
  std::vector<std::uint64_t> M;     // [a * S + b]

  explicit Tables(const SplitProblem& p) : S(p.layers()), N(p.nodes()) {
    F.assign(N * S * S, 0.0);
    B.assign(N * S * S, 0.0);
    M.assign(S * S, 0);
    for (std::size_t a = 0; a < S; ++a) {
      std::uint64_t m = 0;
      for (std::size_t b = a; b < S; ++b) {
        m += p.layer_mem[b];
        M[a * S + b] = m;
      }
      for (std::size_t n = 0; n < N; ++n) {
        double f = 0.0, k = 0.0;
        for (std::size_t b = a; b < S; ++b) {
          f += p.fwd[n][b];
          k += p.back[n][b];
          F[(n * S + a) * S + b] = f;
          B[(n * S + a) * S + b] = k;
        }
      }
    }
  }
  double f(std::size_t n, std::size_t a, std::size_t b) const { return F[(n * S + a) * S + b]; }
  double bk(std::size_t n, std::size_t a, std::size_t b) const { return B[(n * S + a) * S + b]; }
  std::uint64_t mem(std::size_t a, std::size_t b) const { return M[a * S + b]; }
};

void check_problem(const SplitProblem& p) {
  const std::size_t S = p.layers(), N = p.nodes();
  if (N == 0) throw ValidationError("split problem has no compute nodes");
  if (S < N) throw ValidationError("fewer intermediate layers than compute nodes");
  if (p.node_mem.size() != N || p.fwd.size() != N || p.back.size() != N)
    throw ValidationError("split problem node tables are inconsistent");
  for (std::size_t n = 0; n < N; ++n)
    if (p.fwd[n].size() != S || p.back[n].size() != S)
      throw ValidationError("split problem time tables are inconsistent");
  if (!std::is_sorted(p.node_ids.begin(), p.node_ids.end()))
    throw ValidationError("split problem nodes must be sorted by id");
}

SplitAssignment to_assignment(const SplitProblem& p, const std::vector<std::size_t>& ends,
                              const std::vector<std::size_t>& order) {
  SplitAssignment a;
  std::size_t start = 0;
  for (std::size_t t = 0; t < ends.size(); ++t) {
    a.segments.push_back({p.first_layer + start, p.first_layer + ends[t]});
    a.node_order.push_back(p.node_ids[order[t]]);
    start = ends[t] + 1;
  }
  return a;
}

SplitResult make_result(const SplitProblem& p, const Tables& t, const std::vector<std::size_t>& ends,
                        const std::vector<std::size_t>& order) {
  SplitResult r;
  std::size_t start = 0;
  for (std::size_t i = 0; i < ends.size(); ++i) {
    r.L_fwd = std::max(r.L_fwd, t.f(order[i], start, ends[i]));
    r.L_back = std::max(r.L_back, t.bk(order[i], start, ends[i]));
    start = ends[i] + 1;
  }
  r.objective = r.L_fwd + r.L_back;
  r.assignment = to_assignment(p, ends, order);
  return r;
}

// Names the binding node and segment of an infeasible instance: the min-max
// memory partition matched largest-to-largest against node capacities.
[[noreturn]] void throw_infeasible(const SplitProblem& p, const Tables& t) {
  const std::size_t S = p.layers(), N = p.nodes();
  constexpr std::uint64_t kInf = std::numeric_limits<std::uint64_t>::max();
  // best[k][i]: min over partitions of [i, S) into k segments of the largest segment memory
  std::vector<std::vector<std::uint64_t>> best(N + 1, std::vector<std::uint64_t>(S + 1, kInf));
  std::vector<std::vector<std::size_t>> cut(N + 1, std::vector<std::size_t>(S + 1, 0));
  best[0][S] = 0;
  for (std::size_t k = 1; k <= N; ++k)
    for (std::size_t i = 0; i < S; ++i)
      for (std::size_t e = i; e < S; ++e) {
        if (best[k - 1][e + 1] == kInf) continue;
        const auto v = std::max(t.mem(i, e), best[k - 1][e + 1]);
        if (v < best[k][i]) {
          best[k][i] = v;
          cut[k][i] = e;
        }
      }
  std::vector<std::pair<std::uint64_t, Segment>> segs;
  for (std::size_t k = N, i = 0; k > 0; --k) {
    const std::size_t e = cut[k][i];
    segs.push_back({t.mem(i, e), {p.first_layer + i, p.first_layer + e}});
    i = e + 1;
  }
  std::vector<std::size_t> nodes(N);
  std::iota(nodes.begin(), nodes.end(), 0);
  std::stable_sort(segs.begin(), segs.end(), [](auto& x, auto& y) { return x.first > y.first; });
  std::stable_sort(nodes.begin(), nodes.end(), [&](auto x, auto y) { return p.node_mem[x] > p.node_mem[y]; });
  std::size_t bind = 0;
  for (std::size_t i = 0; i < N; ++i)
    if (!fits(p.K, segs[i].first, p.node_mem[nodes[i]])) {
      bind = i;
      break;
    }
  const auto& [mem, seg] = segs[bind];
  throw InfeasibleError("no split fits memory: segment [" + std::to_string(seg.start) + ", " +
                        std::to_string(seg.end) + "] needs K*mem = " + std::to_string(p.K) + "*" +
                        std::to_string(mem) + " B but node '" + p.node_ids[nodes[bind]] + "' holds " +
                        std::to_string(p.node_mem[nodes[bind]]) + " B");
}

class ExactSolver {
 public:
  ExactSolver(const SplitProblem& p) : p_(p), t_(p), S_(p.layers()), N_(p.nodes()) {
    // Nodes with identical tables and capacity are interchangeable.
    for (std::size_t n = 0; n < N_; ++n) {
      std::size_t c = 0;
      for (; c < members_.size(); ++c) {
        const auto r = members_[c].front();
        if (p.fwd[r] == p.fwd[n] && p.back[r] == p.back[n] && p.node_mem[r] == p.node_mem[n]) break;
      }
      if (c == members_.size()) members_.emplace_back();
      members_[c].push_back(n);
    }
    radix_.assign(members_.size(), 1);
    for (std::size_t c = 1; c < members_.size(); ++c) radix_[c] = radix_[c - 1] * (members_[c - 1].size() + 1);
    codes_ = radix_.back() * (members_.back().size() + 1);
  }

  SplitResult solve() {
    const Front& all = suffix(0, 0);
    if (all.empty()) throw_infeasible(p_, t_);
    best_ = std::numeric_limits<double>::infinity();
    for (const auto& [f, b] : all) best_ = std::min(best_, f + b);

    // Boundaries in lexicographic order, keeping every reachable prefix state.
    std::map<std::size_t, Front> prefix{{0, {{0.0, 0.0}}}};
    std::vector<std::size_t> ends;
    std::size_t i = 0;
    for (std::size_t step = 0; step + 1 < N_; ++step) {
      const std::size_t remaining = N_ - step;
      bool found = false;
      for (std::size_t e = i; e + remaining <= S_ && !found; ++e) {
        auto next = extend(prefix, i, e);
        if (completes(next, e + 1)) {
          prefix = std::move(next);
          ends.push_back(e);
          i = e + 1;
          found = true;
        }
      }
      if (!found) throw Error("split reconstruction failed");
    }
    ends.push_back(S_ - 1);
    return make_result(p_, t_, ends, node_order(ends));
  }

 private:
  std::size_t used_count(std::size_t code) const {
    std::size_t total = 0;
    for (std::size_t c = 0; c < members_.size(); ++c) total += (code / radix_[c]) % (members_[c].size() + 1);
    return total;
  }
  bool available(std::size_t code, std::size_t c) const {
    return (code / radix_[c]) % (members_[c].size() + 1) < members_[c].size();
  }

  const Front& suffix(std::size_t i, std::size_t code) {
    const std::size_t key = i * codes_ + code;
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    Front out;
    const std::size_t remaining = N_ - used_count(code);
    if (remaining == 0) {
      if (i == S_) out.push_back({0.0, 0.0});
    } else if (i < S_) {
      const std::size_t last_end = remaining == 1 ? S_ - 1 : S_ - remaining;
      const std::size_t first_end = remaining == 1 ? S_ - 1 : i;
      for (std::size_t c = 0; c < members_.size(); ++c) {
        if (!available(code, c)) continue;
        const std::size_t n = members_[c].front();
        for (std::size_t e = first_end; e <= last_end && e < S_; ++e) {
          if (!fits(p_.K, t_.mem(i, e), p_.node_mem[n])) break;
          const double f = t_.f(n, i, e), b = t_.bk(n, i, e);
          for (const auto& [sf, sb] : suffix(e + 1, code + radix_[c])) out.push_back({std::max(f, sf), std::max(b, sb)});
        }
      }
      normalize(out);
    }
    return memo_.emplace(key, std::move(out)).first->second;
  }

  std::map<std::size_t, Front> extend(const std::map<std::size_t, Front>& prefix, std::size_t i, std::size_t e) {
    std::map<std::size_t, Front> next;
    for (const auto& [code, front] : prefix)
      for (std::size_t c = 0; c < members_.size(); ++c) {
        if (!available(code, c)) continue;
        const std::size_t n = members_[c].front();
        if (!fits(p_.K, t_.mem(i, e), p_.node_mem[n])) continue;
        auto& dst = next[code + radix_[c]];
        for (const auto& [pf, pb] : front) dst.push_back({std::max(pf, t_.f(n, i, e)), std::max(pb, t_.bk(n, i, e))});
      }
    for (auto& [code, front] : next) normalize(front);
    return next;
  }

  bool completes(const std::map<std::size_t, Front>& prefix, std::size_t i) {
    for (const auto& [code, front] : prefix) {
      const Front& rest = suffix(i, code);
      for (const auto& [pf, pb] : front)
        for (const auto& [sf, sb] : rest)
          if (std::max(pf, sf) + std::max(pb, sb) <= best_) return true;
    }
    return false;
  }

  // Smallest node order for fixed boundaries, by suffix feasibility over node subsets.
  std::vector<std::size_t> node_order(const std::vector<std::size_t>& ends) {
    std::vector<Segment> segs;
    for (std::size_t t = 0, start = 0; t < ends.size(); start = ends[t] + 1, ++t) segs.push_back({start, ends[t]});
    std::map<std::pair<std::size_t, std::uint64_t>, Front> memo;
    auto rest = [&](auto&& self, std::size_t pos, std::uint64_t mask) -> const Front& {
      const auto key = std::make_pair(pos, mask);
      if (auto it = memo.find(key); it != memo.end()) return it->second;
      Front out;
      if (pos == segs.size()) {
        out.push_back({0.0, 0.0});
      } else {
        const auto [a, b] = segs[pos];
        for (std::size_t n = 0; n < N_; ++n) {
          if (mask >> n & 1U || !fits(p_.K, t_.mem(a, b), p_.node_mem[n])) continue;
          for (const auto& [sf, sb] : self(self, pos + 1, mask | (1ULL << n)))
            out.push_back({std::max(t_.f(n, a, b), sf), std::max(t_.bk(n, a, b), sb)});
        }
        normalize(out);
      }
      return memo.emplace(key, std::move(out)).first->second;
    };
    std::vector<std::size_t> order;
    std::uint64_t mask = 0;
    double pf = 0.0, pb = 0.0;
    for (std::size_t pos = 0; pos < segs.size(); ++pos) {
      const auto [a, b] = segs[pos];
      bool placed = false;
      for (std::size_t n = 0; n < N_ && !placed; ++n) {
        if (mask >> n & 1U || !fits(p_.K, t_.mem(a, b), p_.node_mem[n])) continue;
        const double f = std::max(pf, t_.f(n, a, b)), k = std::max(pb, t_.bk(n, a, b));
        for (const auto& [sf, sb] : rest(rest, pos + 1, mask | (1ULL << n)))
          if (std::max(f, sf) + std::max(k, sb) <= best_) {
            order.push_back(n);
            mask |= 1ULL << n;
            pf = f;
            pb = k;
            placed = true;
            break;
          }
      }
      if (!placed) throw Error("split reconstruction failed");
    }
    return order;
  }

  const SplitProblem& p_;
  Tables t_;
  std::size_t S_, N_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<std::size_t> radix_;
  std::size_t codes_ = 1;
  std::unordered_map<std::size_t, Front> memo_;
  double best_ = 0.0;
};

}  // namespace

SplitProblem SplitProblem::from_scenario(const Scenario& sc) {
  SplitProblem p;
  const auto inter = sc.intermediate();
  p.first_layer = inter.start;
  p.K = sc.K;
  for (std::size_t j = inter.start; j <= inter.end; ++j) p.layer_mem.push_back(sc.model.layers[j].mem_bytes);
  for (const auto* n : sc.compute_nodes()) {
    p.node_ids.push_back(n->id);
    p.node_mem.push_back(n->mem_bytes);
    auto& f = p.fwd.emplace_back();
    auto& b = p.back.emplace_back();
    for (std::size_t j = inter.start; j <= inter.end; ++j) {
      f.push_back(sc.model.layer_time(j, *n, Direction::Forward));
      b.push_back(sc.model.layer_time(j, *n, Direction::Backward));
    }
  }
  return p;
}

SplitResult optimize_split(const SplitProblem& problem) {
  check_problem(problem);
  if (problem.nodes() > 63) throw ValidationError("at most 63 compute nodes are supported");
  return ExactSolver(problem).solve();
}

SplitResult brute_force_split(const SplitProblem& problem) {
  check_problem(problem);
  const std::size_t S = problem.layers(), N = problem.nodes();
  if (S > 16 || N > 5) throw Error("brute force limited to 16 layers and 5 nodes");
  const Tables t(problem);
  std::optional<SplitResult> best;
  std::vector<std::size_t> ends(N);
  auto visit = [&]() {
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    do {
      bool ok = true;
      for (std::size_t i = 0, start = 0; i < N && ok; start = ends[i] + 1, ++i)
        ok = fits(problem.K, t.mem(start, ends[i]), problem.node_mem[order[i]]);
      if (!ok) continue;
      auto r = make_result(problem, t, ends, order);
      if (!best || r.objective < best->objective) best = std::move(r);
    } while (std::next_permutation(order.begin(), order.end()));
  };
  auto rec = [&](auto&& self, std::size_t pos, std::size_t start) -> void {
    if (pos + 1 == N) {
      ends[pos] = S - 1;
      visit();
      return;
    }
    for (std::size_t e = start; e + (N - pos) <= S; ++e) {
      ends[pos] = e;
      self(self, pos + 1, e + 1);
    }
  };
  rec(rec, 0, 0);
  if (!best) throw_infeasible(problem, t);
  return *best;
}

SplitResult manual_even_split(const SplitProblem& problem) {
  check_problem(problem);
  const std::size_t S = problem.layers(), N = problem.nodes();
  for (std::size_t n = 1; n < N; ++n)
    if (problem.fwd[n] != problem.fwd[0] || problem.back[n] != problem.back[0])
      throw ValidationError("manual even split needs homogeneous compute nodes");
  std::vector<double> w(S);
  double total = 0.0;
  for (std::size_t j = 0; j < S; ++j) {
    w[j] = problem.fwd[0][j] + problem.back[0][j];
    total += w[j];
  }
  const double target = total / static_cast<double>(N);
  const double limit = target * (1.0 + 1e-12);
  std::vector<std::size_t> ends;
  std::size_t start = 0;
  for (std::size_t pos = 0; pos < N; ++pos) {
    if (pos + 1 == N) {
      ends.push_back(S - 1);
      break;
    }
    const std::size_t last_allowed = S - (N - pos);
    std::size_t end = start;
    double acc = w[start];
    while (end < last_allowed && acc + w[end + 1] <= limit) acc += w[++end];
    ends.push_back(end);
    start = end + 1;
  }
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  const Tables t(problem);
  for (std::size_t i = 0, s = 0; i < N; s = ends[i] + 1, ++i)
    if (!fits(problem.K, t.mem(s, ends[i]), problem.node_mem[order[i]]))
      throw InfeasibleError("manual split segment [" + std::to_string(problem.first_layer + s) + ", " +
                            std::to_string(problem.first_layer + ends[i]) + "] does not fit node '" +
                            problem.node_ids[order[i]] + "'");
  return make_result(problem, t, ends, order);
}

SplitResult evaluate_split(const SplitProblem& problem, const SplitAssignment& a) {
  check_problem(problem);
  const Tables t(problem);
  std::vector<std::size_t> ends, order;
  for (std::size_t i = 0; i < a.segments.size(); ++i) {
    ends.push_back(a.segments[i].end - problem.first_layer);
    auto it = std::find(problem.node_ids.begin(), problem.node_ids.end(), a.node_order[i]);
    if (it == problem.node_ids.end()) throw ValidationError("unknown compute node '" + a.node_order[i] + "'");
    order.push_back(static_cast<std::size_t>(it - problem.node_ids.begin()));
  }
  return make_result(problem, t, ends, order);
}

std::vector<std::int64_t> memory_slack(const SplitProblem& problem, const SplitAssignment& a) {
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < a.segments.size(); ++i) {
    std::uint64_t mem = 0;
    for (std::size_t j = a.segments[i].start; j <= a.segments[i].end; ++j)
      mem += problem.layer_mem[j - problem.first_layer];
    auto it = std::find(problem.node_ids.begin(), problem.node_ids.end(), a.node_order[i]);
    if (it == problem.node_ids.end()) throw ValidationError("unknown compute node '" + a.node_order[i] + "'");
    const auto cap = problem.node_mem[static_cast<std::size_t>(it - problem.node_ids.begin())];
    out.push_back(static_cast<std::int64_t>(cap) - static_cast<std::int64_t>(problem.K * mem));
  }
  return out;
}

Segment split_rule(const Scenario& sc, const SplitAssignment& a, std::size_t P, std::size_t p) {
  if (P != sc.P || P != a.segments.size() + 2) throw ValidationError("multihop level does not match the scenario");
  if (p < 1 || p > P) throw ValidationError("unknown pipeline position " + std::to_string(p));
  if (p == 1) return sc.first_part();
  if (p == P) return sc.last_part();
  return a.segments[p - 2];
}

SplitAssignment resolve_assignment(const Scenario& sc) {
  if (sc.assignment) return *sc.assignment;
  return optimize_split(SplitProblem::from_scenario(sc)).assignment;
}

}  // namespace mpsl
