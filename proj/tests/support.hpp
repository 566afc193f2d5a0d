#pragma once

// Scenario builders shared by the unit tests.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mpsl/profiles.hpp"
#include "mpsl/splitter.hpp"

namespace mpsl::testing {

struct ChainOptions {
  std::size_t K = 1;
  std::size_t N = 1;
  std::size_t B = 1;
  std::size_t r = 1;
  double bandwidth = 1e15;
  double owner_speed = 1.0;
  double compute_speed = 1.0;
  std::uint64_t compute_mem = std::uint64_t{1} << 40;
  double alpha = 0.0;
};

/// One owner-side layer at each end and the given layers in between. No
/// activation or parameter traffic unless the caller adds it.
inline Scenario chain(const std::vector<double>& fwd, const std::vector<double>& back, const ChainOptions& o = {}) {
  Scenario sc;
  sc.name = "chain";
  sc.model.name = "chain";
  const std::size_t S = fwd.size();
  for (std::size_t i = 0; i < S; ++i) {
    LayerProfile l;
    l.index = i;
    l.fwd_work = fwd[i];
    l.back_work = back[i];
    l.mem_bytes = 1000;
    sc.model.layers.push_back(l);
  }
  sc.K = o.K;
  sc.B = o.B;
  sc.r = o.r;
  sc.first_cut = 0;
  sc.last_cut = S - 1;
  sc.P = o.N + 2;
  sc.default_bandwidth = o.bandwidth;
  sc.aggregator_alpha = o.alpha;
  for (std::size_t k = 0; k < o.K; ++k)
    sc.nodes.push_back({"owner-" + std::to_string(k), Role::DataOwner, "", "", o.owner_speed, std::uint64_t{1} << 40, 0.0, ""});
  for (std::size_t n = 0; n < o.N; ++n)
    sc.nodes.push_back({"c" + std::to_string(n), Role::Compute, "", "", o.compute_speed, o.compute_mem, 0.0, ""});
  sc.nodes.push_back({"aggr", Role::Aggregator, "", "", 1.0, std::uint64_t{1} << 40, 0.0, ""});
  sc.nodes.push_back({"mgr", Role::Manager, "", "", 1.0, std::uint64_t{1} << 40, 0.0, ""});
  return sc;
}

/// Random split instance: works in [0.1, 10), layer memory in [1, 100], node
/// memory drawn so that roughly a quarter of the instances are infeasible.
inline SplitProblem random_problem(std::mt19937_64& rng, std::size_t S, std::size_t N, bool homogeneous) {
  std::uniform_real_distribution<double> work(0.1, 10.0);
  std::uniform_int_distribution<std::uint64_t> mem(1, 100);
  std::uniform_real_distribution<double> speed(0.5, 2.0);
  SplitProblem p;
  p.first_layer = 1;
  p.K = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
  std::vector<double> f(S), b(S);
  std::uint64_t total = 0;
  for (std::size_t j = 0; j < S; ++j) {
    f[j] = work(rng);
    b[j] = work(rng);
    p.layer_mem.push_back(mem(rng));
    total += p.layer_mem.back();
  }
  const double s0 = speed(rng);
  const auto cap_mean = static_cast<double>(total * p.K) / static_cast<double>(N);
  std::uniform_real_distribution<double> cap(0.6 * cap_mean, 2.5 * cap_mean);
  const auto c0 = static_cast<std::uint64_t>(cap(rng));
  for (std::size_t n = 0; n < N; ++n) {
    p.node_ids.push_back("n" + std::to_string(n));
    const double s = homogeneous ? s0 : speed(rng);
    p.node_mem.push_back(homogeneous ? c0 : static_cast<std::uint64_t>(cap(rng)));
    std::vector<double> fn(S), bn(S);
    for (std::size_t j = 0; j < S; ++j) {
      fn[j] = f[j] / s;
      bn[j] = b[j] / s;
    }
    p.fwd.push_back(fn);
    p.back.push_back(bn);
  }
  return p;
}

}  // namespace mpsl::testing
