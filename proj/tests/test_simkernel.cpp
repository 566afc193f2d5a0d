#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>
#include <tuple>

#include "mpsl/analytic.hpp"
#include "mpsl/simkernel.hpp"
#include "mpsl/splitter.hpp"
#include "support.hpp"

using namespace mpsl;
using testing::chain;

namespace {

const std::string kDir = MPSL_SCENARIO_DIR;

Scenario resnet(std::size_t K, std::size_t P) {
  Scenario sc = load_scenario(kDir + "/resnet101-testbed.yaml");
  sc = with_owners(sc, {{"owner", "d1", K}});
  sc = with_compute(sc, {{"vm", "vm", P - 2}});
  validate(sc);
  return sc;
}

// Random chain with traffic on every cut.
Scenario random_scenario(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> w(0.05, 2.0);
  const std::size_t N = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
  const std::size_t S = N + 2 + std::uniform_int_distribution<std::size_t>(0, 5)(rng);
  std::vector<double> f(S), b(S);
  for (std::size_t j = 0; j < S; ++j) f[j] = w(rng), b[j] = w(rng);
  testing::ChainOptions o;
  o.K = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
  o.N = N;
  o.B = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
  o.r = std::uniform_int_distribution<std::size_t>(1, 2)(rng);
  o.bandwidth = 1e6;
  o.alpha = 1e-9;
  Scenario sc = chain(f, b, o);
  std::uniform_int_distribution<std::uint64_t> bytes(0, 400'000);
  for (auto& l : sc.model.layers) {
    l.act_out_bytes = bytes(rng);
    l.grad_out_bytes = bytes(rng);
    l.param_bytes = bytes(rng);
  }
  return sc;
}

std::vector<SimEvent> backs_at_two(const std::vector<double>& times) {
  std::vector<SimEvent> out;
  for (double t : times) {
    SimEvent e;
    e.time = t;
    e.kind = EventKind::ComputeDone;
    e.part = 2;
    e.dir = Direction::Backward;
    out.push_back(e);
  }
  return out;
}

double max_stage_cycle(const Scenario& sc, const SplitAssignment& a) {
  double c = 0.0;
  for (const auto& s : stage_stats(sc, a)) c = std::max(c, s.fwd_s + s.back_s);
  return c;
}

}  // namespace

TEST_CASE("single owner, single node, no traffic: compute sum plus aggregation") {
  Scenario sc = chain({0.5, 1.25, 0.75}, {0.25, 2.5, 1.5});
  const auto m = run_epoch(sc, resolve_assignment(sc));
  CHECK(m.epoch_time == 0.5 + 1.25 + 0.75 + 1.5 + 2.5 + 0.25);

  sc.aggregator_alpha = 1e-6;
  sc.default_bandwidth = 1e5;
  sc.model.layers[0].param_bytes = 100'000;
  const auto a = run_epoch(sc, resolve_assignment(sc));
  // upload 1 s, aggregate 0.1 s, download 1 s
  CHECK(a.epoch_time == doctest::Approx(m.epoch_time + 2.1).epsilon(1e-12));
}

TEST_CASE("zero-traffic single owner agrees exactly with the closed form") {
  const Scenario sc = chain({0.5, 1.25, 2.0, 0}, {0.75, 2.5, 4.0, 0}, {.N = 2});
  const auto r = compare_with_analytic(sc, resolve_assignment(sc));
  CHECK(r.relative_error == 0.0);
}

TEST_CASE("saturated run: steady-state period equals pipefull") {
  SUBCASE("calibrated profile") {
    const Scenario sc = resnet(10, 4);
    const auto a = resolve_assignment(sc);
    const auto m = run_epoch(sc, a);
    CHECK(std::abs(m.steady_state_batch_period - pipeline_latency(sc, a).pipefull) <= 1e-9);
  }
  SUBCASE("backward a fixed multiple of forward") {
    // The stage with the slowest forward is then also the slowest backward.
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> w(0.1, 1.0);
    for (int i = 0; i < 20; ++i) {
      std::vector<double> f(8), b(8);
      for (std::size_t j = 0; j < 8; ++j) f[j] = w(rng), b[j] = 2.0 * f[j];
      Scenario sc = chain(f, b, {.K = 10, .N = 2, .B = 16, .r = 2, .bandwidth = 1e7});
      for (auto& l : sc.model.layers) l.act_out_bytes = l.grad_out_bytes = 1000;
      const auto a = resolve_assignment(sc);
      CAPTURE(i);
      CHECK(std::abs(run_epoch(sc, a).steady_state_batch_period - pipeline_latency(sc, a).pipefull) <= 1e-9);
    }
  }
}

TEST_CASE("saturated run: period is the busiest stage's fwd+back") {
  // With independent fwd/back works the slowest forward and the slowest
  // backward can sit on different stages; each stage then needs only its own
  // fwd+back per batch and the period drops below pipefull.
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> w(0.1, 1.0);
  int below = 0;
  for (int i = 0; i < 20; ++i) {
    std::vector<double> f(8), b(8);
    for (std::size_t j = 0; j < 8; ++j) f[j] = w(rng), b[j] = w(rng);
    Scenario sc = chain(f, b, {.K = 10, .N = 2, .B = 16, .r = 2, .bandwidth = 1e7});
    for (auto& l : sc.model.layers) l.act_out_bytes = l.grad_out_bytes = 1000;
    const auto a = resolve_assignment(sc);
    const double period = run_epoch(sc, a).steady_state_batch_period;
    CAPTURE(i);
    CHECK(std::abs(period - max_stage_cycle(sc, a)) <= 1e-9);
    CHECK(period <= pipeline_latency(sc, a).pipefull + 1e-9);
    if (period < pipeline_latency(sc, a).pipefull - 1e-9) ++below;
  }
  CHECK(below > 0);
}

TEST_CASE("simulated fill never beats the closed-form fill") {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) {
    const Scenario sc = random_scenario(rng);
    const auto a = resolve_assignment(sc);
    const auto m = run_epoch(sc, a);
    CHECK(m.fill_time >= pipe_fill_time(sc, a));
    CHECK(m.epoch_time >= m.fill_time);
  }
}

TEST_CASE("steady state of a synthetic trace") {
  std::vector<double> t;
  for (int i = 0; i < 30; ++i) t.push_back(7.0 * i);
  CHECK(measure_steady_state(backs_at_two(t)) == 7.0);

  // Slow warm-up gaps, then period 7; the middle window sees only the period.
  t.clear();
  double now = 0.0;
  for (int i = 0; i < 4; ++i) t.push_back(now += 20.0);
  for (int i = 0; i < 40; ++i) t.push_back(now += 7.0);
  CHECK(measure_steady_state(backs_at_two(t)) == 7.0);

  CHECK_THROWS_AS(measure_steady_state(backs_at_two({1, 2, 3})), Error);
}

TEST_CASE("runs are deterministic") {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 10; ++i) {
    const Scenario sc = random_scenario(rng);
    const auto a = resolve_assignment(sc);
    CHECK(run_epoch(sc, a).trace == run_epoch(sc, a).trace);
  }
  Scenario sc = resnet(10, 4);
  sc.B = 4;
  const auto a = resolve_assignment(sc);
  SimOptions o;
  o.compute_jitter = 0.1;
  const auto x = run_epoch(sc, a, o);
  CHECK(x.trace == run_epoch(sc, a, o).trace);
  sc.rng_seed += 1;
  CHECK(x.epoch_time != run_epoch(sc, a, o).epoch_time);
}

TEST_CASE("trace invariants under every policy") {
  std::mt19937_64 rng(9);
  using Inj = SimOptions::Injection;
  using Exe = SimOptions::ExecutorPolicy;
  for (int i = 0; i < 40; ++i) {
    const Scenario sc = random_scenario(rng);
    const auto a = resolve_assignment(sc);
    for (const auto inj : {Inj::ClosedLoop, Inj::OpenLoop})
      for (const auto exe : {Exe::Alternate, Exe::BackwardFirst, Exe::Fifo})
        for (const bool drain : {false, true}) {
          SimOptions o;
          o.injection = inj;
          o.executor = exe;
          o.drain_between_local_epochs = drain;
          const auto m = run_epoch(sc, a, o);
          CAPTURE(i);
          CAPTURE(static_cast<int>(inj));
          CAPTURE(static_cast<int>(exe));
          CAPTURE(drain);
          const std::size_t batches = sc.r * sc.B;

          // Conservation.
          std::map<std::tuple<std::string, std::size_t, Direction>, std::size_t> done;
          for (const auto& e : m.trace)
            if (e.kind == EventKind::ComputeDone && !e.owner.empty()) ++done[{e.owner, e.part, e.dir}];
          for (const auto* own : sc.owners())
            for (std::size_t p = 1; p <= sc.P; ++p)
              for (const auto d : {Direction::Forward, Direction::Backward}) CHECK(done[{own->id, p, d}] == batches);

          // Ordering, seq range and causality.
          std::map<std::tuple<std::string, std::size_t, std::size_t, Direction>, double> at;
          double prev = 0.0;
          for (const auto& e : m.trace) {
            CHECK(e.time >= prev);
            prev = e.time;
            if (e.kind != EventKind::ComputeDone || e.owner.empty()) continue;
            CHECK(e.seq < batches);
            at[{e.owner, e.seq, e.part, e.dir}] = e.time;
          }
          for (const auto* own : sc.owners())
            for (std::size_t s = 0; s < batches; ++s) {
              for (std::size_t p = 1; p < sc.P; ++p) {
                CHECK(at[{own->id, s, p, Direction::Forward}] <= at[{own->id, s, p + 1, Direction::Forward}]);
                CHECK(at[{own->id, s, p + 1, Direction::Backward}] <= at[{own->id, s, p, Direction::Backward}]);
              }
              CHECK(at[{own->id, s, sc.P, Direction::Forward}] <= at[{own->id, s, sc.P, Direction::Backward}]);
            }

          // FIFO links: completion order follows enqueue order.
          std::map<std::pair<std::string, std::string>, std::pair<double, double>> last;
          for (const auto& e : m.trace) {
            if (e.kind != EventKind::TransferDone) continue;
            auto [it, fresh] = last.try_emplace({e.from, e.node}, e.ready_time, e.start_time);
            if (!fresh) {
              CHECK(e.ready_time >= it->second.first);
              CHECK(e.start_time >= it->second.second);
              it->second = {e.ready_time, e.start_time};
            }
          }

          for (const auto& [node, f] : m.busy_fraction) {
            CHECK(f >= 0.0);
            CHECK(f <= 1.0 + 1e-12);
          }
          CHECK(m.epoch_time >= m.fill_time);
        }
  }
}

TEST_CASE("epoch never undercuts the busiest stage's total work") {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 60; ++i) {
    const Scenario sc = random_scenario(rng);
    const auto a = resolve_assignment(sc);
    const double floor = static_cast<double>(sc.r * sc.B * sc.K) * max_stage_cycle(sc, a);
    CHECK(run_epoch(sc, a).epoch_time >= floor);
  }
}

TEST_CASE("epoch never undercuts the steady-state term on calibrated points") {
  for (std::size_t P : {3, 4, 5})
    for (std::size_t K : {10, 30}) {
      const Scenario sc = resnet(K, P);
      const auto a = resolve_assignment(sc);
      const double floor = static_cast<double>(sc.r * sc.B * sc.K - 1) * pipeline_latency(sc, a).pipefull;
      CHECK(run_epoch(sc, a).epoch_time >= floor);
    }
}

TEST_CASE("slower owners barely move a saturated pipeline") {
  Scenario sc = resnet(30, 4);
  const auto a = resolve_assignment(sc);
  const double fast = run_epoch(sc, a).epoch_time;
  for (auto& n : sc.nodes)
    if (n.role == Role::DataOwner) n.speed *= 0.5;
  const double slow = run_epoch(sc, a).epoch_time;
  const auto edges = first_last_batch_terms(sc, a);
  CHECK(std::abs(slow - fast) < 2.0 * (edges.start_first + edges.end_last));
}

TEST_CASE("single heavy stage: the simulator is slower than the closed form") {
  Scenario sc = chain({0.1, 3.0, 0.1}, {0.1, 6.0, 0.1}, {.K = 4, .N = 1, .B = 4, .bandwidth = 1e6});
  for (auto& l : sc.model.layers) l.act_out_bytes = l.grad_out_bytes = 200'000;
  const auto r = compare_with_analytic(sc, resolve_assignment(sc));
  CHECK(r.sim_epoch >= r.analytic.T_tot * (1.0 - 1e-12));
}

TEST_CASE("calibrated grid point agrees with the closed form") {
  Scenario sc = resnet(20, 5);
  const auto r = compare_with_analytic(sc, resolve_assignment(sc));
  CHECK(r.relative_error <= 0.05);
  CHECK(r.fill_delta >= 0.0);
  CHECK(std::abs(r.period_delta) <= 1e-9);
}

TEST_CASE("trace csv") {
  const Scenario sc = load_scenario(kDir + "/minimal.yaml");
  const auto m = run_epoch(sc, resolve_assignment(sc));
  const std::string csv = trace_csv(m.trace);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "time,kind,node,owner,part,dir,seq");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 6);
  }
  CHECK(rows == m.trace.size());
  CHECK(csv.find("0,batch_injected,owner,owner,1,fwd,0") != std::string::npos);
}
