// Acceptance run: one PASS/FAIL line per criterion, exit code 1 if any fails.
// Usage: acceptance <scenario dir>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>
#include <string>

#include "mpsl/analytic.hpp"
#include "mpsl/experiments.hpp"
#include "mpsl/runtime.hpp"
#include "mpsl/simkernel.hpp"
#include "mpsl/splitter.hpp"
#include "mpsl/wire.hpp"
#include "support.hpp"

using namespace mpsl;

namespace {

using Clock = std::chrono::steady_clock;

// Tolerances and budgets.
constexpr std::size_t kOracleInstances = 1000;
constexpr double kOracleBudgetS = 60.0;
constexpr double kLargeSplitBudgetS = 1.0;
constexpr double kValidateMaxMeanError = 0.05;
constexpr double kValidateBudgetS = 120.0;
constexpr double kPeriodTolS = 1e-9;
constexpr std::size_t kPeriodRandomRuns = 200;
constexpr std::size_t kMonotoneProfiles = 200;
constexpr double kMinImprovement1To2Pct = 30.0;
constexpr std::size_t kDominanceInstances = 500;
constexpr double kReferenceGainResnetPct = 8.5;
constexpr double kReferenceGainVggPct = 19.0;
constexpr double kMaxMpslChange = 0.01;
constexpr double kMinSplitnnIncrease = 0.20;
constexpr std::size_t kWireMessages = 10000;
constexpr std::size_t kCorruptedMessages = 1000;
constexpr double kLoopbackEpochTol = 0.15;
constexpr double kLoopbackBudgetS = 180.0;

std::string dir;
int failed = 0;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void report(int n, bool ok, const std::string& detail) {
  std::printf("AC%-2d %s  %s\n", n, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failed;
}

// Runs one criterion; an exception counts as a failure with its message.
void criterion(int n, const std::function<std::pair<bool, std::string>()>& body) {
  try {
    const auto [ok, detail] = body();
    report(n, ok, detail);
  } catch (const std::exception& e) {
    report(n, false, std::string("error: ") + e.what());
  }
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

void append_failures(std::string& detail, const ExperimentResult& r, std::size_t max = 3) {
  for (std::size_t i = 0; i < r.failures.size() && i < max; ++i) detail += "; " + r.failures[i];
  if (r.failures.size() > max) detail += "; ... " + std::to_string(r.failures.size() - max) + " more";
}

std::optional<SplitResult> solve(const std::function<SplitResult()>& f) {
  try {
    return f();
  } catch (const InfeasibleError&) {
    return std::nullopt;
  }
}

Scenario resnet() { return load_scenario(dir + "/resnet101-testbed.yaml"); }

Scenario resnet_grid_point(std::size_t K, std::size_t P) {
  Scenario sc = resnet();
  sc = with_owners(sc, {{"owner", "d1", K}});
  sc = with_compute(sc, {{"vm", "vm", P - 2}});
  validate(sc);
  return sc;
}

// Random chain with traffic on every cut and enough batches to saturate.
Scenario random_saturated(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> w(0.05, 2.0);
  const std::size_t N = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
  const std::size_t S = N + 2 + std::uniform_int_distribution<std::size_t>(0, 5)(rng);
  std::vector<double> f(S), b(S);
  for (std::size_t j = 0; j < S; ++j) f[j] = w(rng), b[j] = w(rng);
  testing::ChainOptions o;
  o.K = std::uniform_int_distribution<std::size_t>(2, 4)(rng);
  o.N = N;
  o.B = std::uniform_int_distribution<std::size_t>(4, 8)(rng);
  o.r = 2;
  o.bandwidth = 1e6;
  Scenario sc = testing::chain(f, b, o);
  std::uniform_int_distribution<std::uint64_t> bytes(0, 400'000);
  for (auto& l : sc.model.layers) {
    l.act_out_bytes = bytes(rng);
    l.grad_out_bytes = bytes(rng);
  }
  return sc;
}

std::pair<bool, std::string> ac1() {
  std::mt19937_64 rng(101);
  std::size_t feasible = 0, infeasible = 0, mismatches = 0;
  std::string first;
  const auto t0 = Clock::now();
  for (std::size_t i = 0; i < kOracleInstances; ++i) {
    const std::size_t N = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
    const std::size_t S = std::uniform_int_distribution<std::size_t>(N, 12)(rng);
    const SplitProblem p = testing::random_problem(rng, S, N, i % 2 == 0);
    const auto opt = solve([&] { return optimize_split(p); });
    const auto ref = solve([&] { return brute_force_split(p); });
    bool same = opt.has_value() == ref.has_value();
    if (same && opt) same = opt->objective == ref->objective && opt->assignment == ref->assignment;
    if (!same && first.empty()) first = "instance " + std::to_string(i);
    mismatches += !same;
    (ref ? feasible : infeasible)++;
  }
  const double s = since(t0);
  std::string d = std::to_string(kOracleInstances) + " instances (" + std::to_string(feasible) + " feasible, " +
                  std::to_string(infeasible) + " infeasible), " + std::to_string(mismatches) + " mismatches, " +
                  fmt("%.2f s", s);
  if (!first.empty()) d += "; first mismatch at " + first;
  return {mismatches == 0 && feasible > 0 && infeasible > 0 && s < kOracleBudgetS, d};
}

std::pair<bool, std::string> ac2() {
  std::mt19937_64 rng(202);
  double worst = 0.0;
  std::size_t solved = 0;
  for (int i = 0; i < 5; ++i) {
    SplitProblem p = testing::random_problem(rng, 40, 5, i % 2 == 0);
    for (auto& m : p.node_mem) m *= 4;  // keep every instance feasible
    const auto t0 = Clock::now();
    const SplitResult r = optimize_split(p);
    worst = std::max(worst, since(t0));
    solved += std::isfinite(r.objective);
  }
  return {worst < kLargeSplitBudgetS && solved == 5,
          "S*=40 N=5, 5 instances, slowest " + fmt("%.4f s", worst) + " (budget 1 s)"};
}

std::pair<bool, std::string> ac3() {
  const auto t0 = Clock::now();
  ValidateParams p;
  p.max_mean_error = kValidateMaxMeanError;
  const Scenario base = resnet();
  const auto r = cmd_validate(base, p);
  const double s = since(t0);
  std::string d = "B=" + std::to_string(base.B) + " r=" + std::to_string(base.r) + ", " +
                  std::to_string(r.summary.value("points", 0)) + " points, mean error " +
                  fmt("%.4f%%", 100.0 * r.summary.value("mean_abs_rel_error", NAN)) + " (limit 5%), " + fmt("%.2f s", s);
  append_failures(d, r);
  return {r.passed() && base.B == 16 && base.r == 2 && s < kValidateBudgetS, d};
}

std::pair<bool, std::string> ac4() {
  SimOptions so;
  so.capture_trace = true;
  std::size_t grid_bad = 0, grid = 0;
  double grid_worst = 0.0;
  for (const std::size_t K : {10, 20, 30, 40, 50})
    for (const std::size_t P : {3, 4, 5}) {
      const Scenario sc = resnet_grid_point(K, P);
      const auto c = compare_with_analytic(sc, resolve_assignment(sc), so);
      const double dev = std::abs(c.period_delta);
      grid_worst = std::max(grid_worst, std::isnan(dev) ? INFINITY : dev);
      grid_bad += !(dev <= kPeriodTolS);
      ++grid;
    }
  std::mt19937_64 rng(404);
  std::size_t rand_bad = 0;
  double rand_worst = 0.0;
  for (std::size_t i = 0; i < kPeriodRandomRuns; ++i) {
    const Scenario sc = random_saturated(rng);
    const auto c = compare_with_analytic(sc, resolve_assignment(sc), so);
    const double dev = std::abs(c.period_delta);
    rand_worst = std::max(rand_worst, std::isnan(dev) ? INFINITY : dev);
    rand_bad += !(dev <= kPeriodTolS);
  }
  std::string d = "calibrated grid " + std::to_string(grid - grid_bad) + "/" + std::to_string(grid) +
                  " within 1e-9 s (worst " + fmt("%.3g s", grid_worst) + "); random profiles " +
                  std::to_string(kPeriodRandomRuns - rand_bad) + "/" + std::to_string(kPeriodRandomRuns) +
                  " (worst " + fmt("%.3g s", rand_worst) + ")";
  if (rand_bad > 0)
    d += "; when the slowest forward and slowest backward sit on different stages the simulated period is the "
         "busiest stage's forward+backward, below the closed form";
  return {grid_bad == 0 && rand_bad == 0, d};
}

std::pair<bool, std::string> ac5() {
  std::mt19937_64 rng(505);
  std::size_t violations = 0, checked = 0;
  for (std::size_t i = 0; i < kMonotoneProfiles; ++i) {
    const std::size_t S = std::uniform_int_distribution<std::size_t>(6, 12)(rng);
    const SplitProblem base = testing::random_problem(rng, S, 5, true);
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t N = 1; N <= 5 && N < S; ++N) {
      SplitProblem p = base;
      p.node_ids.resize(N);
      p.node_mem.resize(N);
      p.fwd.resize(N);
      p.back.resize(N);
      const auto r = solve([&] { return optimize_split(p); });
      const double v = r ? r->objective : std::numeric_limits<double>::infinity();
      violations += v > prev;
      ++checked;
      prev = v;
    }
  }
  const auto r = cmd_multihop(resnet(), {});
  const double imp = r.summary.value("best_improvement_1_to_2_pct", NAN);
  std::string d = std::to_string(kMonotoneProfiles) + " profiles, " + std::to_string(checked) + " steps, " +
                  std::to_string(violations) + " increases; calibrated N=1->2 improvement " + fmt("%.2f%%", imp) +
                  " (floor 30%)";
  append_failures(d, r);
  return {violations == 0 && r.passed() && imp > kMinImprovement1To2Pct, d};
}

std::pair<bool, std::string> ac6() {
  std::mt19937_64 rng(606);
  std::size_t losses = 0, compared = 0;
  for (std::size_t i = 0; i < kDominanceInstances; ++i) {
    const std::size_t N = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
    const std::size_t S = std::uniform_int_distribution<std::size_t>(N, 16)(rng);
    const SplitProblem p = testing::random_problem(rng, S, N, true);
    const auto man = solve([&] { return manual_even_split(p); });
    if (!man) continue;
    const auto opt = solve([&] { return optimize_split(p); });
    losses += !opt || opt->objective > man->objective;
    ++compared;
  }
  const auto rn = cmd_split_gain(resnet(), {});
  const auto vg = cmd_split_gain(load_scenario(dir + "/vgg19-testbed.yaml"), {});
  std::string d = std::to_string(compared) + " random instances, " + std::to_string(losses) +
                  " where the optimizer lost; max gain ResNet-101 " + fmt("%.2f%%", rn.summary.value("max_gain_pct", NAN)) +
                  " (reference " + fmt("%.1f%%", kReferenceGainResnetPct) + "), VGG-19 " +
                  fmt("%.2f%%", vg.summary.value("max_gain_pct", NAN)) + " (reference " +
                  fmt("%.1f%%", kReferenceGainVggPct) + ")";
  append_failures(d, rn);
  append_failures(d, vg);
  return {losses == 0 && compared > 0 && rn.passed() && vg.passed(), d};
}

std::pair<bool, std::string> ac7() {
  HeterogeneityParams p;
  p.max_mpsl_change = kMaxMpslChange;
  p.min_splitnn_increase = kMinSplitnnIncrease;
  const auto r = cmd_heterogeneity(resnet(), p);
  std::string d = "all-d1 -> all-d2 owners:";
  for (const std::size_t P : p.P) {
    const std::string k = "P" + std::to_string(P);
    if (!r.summary.contains(k + "_mpsl_change")) continue;
    d += " " + k + " MP-SL " + fmt("%+.3f%%", 100.0 * r.summary.value(k + "_mpsl_change", NAN)) + ", SplitNN " +
         fmt("%+.2f%%", 100.0 * r.summary.value(k + "_splitnn_change", NAN)) + ";";
  }
  d += " limits <1% (P>=4) and >20%";
  append_failures(d, r);
  return {r.passed(), d};
}

std::pair<bool, std::string> ac8() {
  const PriceTable prices = aws_t2_prices();
  const bool exact = monetary_cost(3600.0, std::vector<std::string>{"t2.xlarge"}, prices) == 0.18 &&
                     monetary_cost(3600.0, std::vector<std::string>{"t2.large"}, prices) == 0.092 &&
                     monetary_cost(3600.0, std::vector<std::string>{"t2.medium"}, prices) == 0.046;
  const auto r = cmd_cost_delay(load_scenario(dir + "/resnet101-cost.yaml"), {});
  std::string d = std::string("hourly prices ") + (exact ? "exact" : "WRONG") + "; cost-delay grid " +
                  std::to_string(r.failures.size()) + " violations";
  append_failures(d, r, 20);
  return {exact && r.passed(), d};
}

std::pair<bool, std::string> ac9() {
  std::mt19937_64 rng(909);
  std::uniform_int_distribution<int> byte(0, 255);
  const MessageKind kinds[] = {MessageKind::Forward, MessageKind::Backward, MessageKind::ModelUpdate,
                               MessageKind::Config,  MessageKind::JobSubmit, MessageKind::Ack};
  auto random_message = [&] {
    std::string owner(std::uniform_int_distribution<std::size_t>(1, 12)(rng), 'a');
    for (auto& c : owner) c = static_cast<char>('a' + byte(rng) % 26);
    std::string payload(std::uniform_int_distribution<std::size_t>(0, 4096)(rng), '\0');
    for (auto& c : payload) c = static_cast<char>(byte(rng));
    std::uniform_int_distribution<std::size_t> n(0, 1u << 20);
    return make_message(kinds[byte(rng) % 6], owner, n(rng), n(rng), n(rng), payload);
  };

  std::vector<TaskMessage> sent;
  std::string stream;
  for (std::size_t i = 0; i < kWireMessages; ++i) {
    sent.push_back(random_message());
    stream += frame(sent.back());
  }
  FrameDecoder dec;
  std::size_t at = 0, got = 0, wrong = 0;
  while (at < stream.size()) {
    const std::size_t n = std::min(stream.size() - at, std::uniform_int_distribution<std::size_t>(1, 9000)(rng));
    dec.feed(stream.data() + at, n);
    at += n;
    while (auto m = dec.next()) wrong += !(got < sent.size() && *m == sent[got++]);
  }

  std::size_t detected = 0;
  for (std::size_t i = 0; i < kCorruptedMessages; ++i) {
    TaskMessage m = random_message();
    if (m.payload.empty()) m = make_message(m.kind, m.owner, m.part, m.seq, m.local_epoch, "x");
    const std::size_t pos = std::uniform_int_distribution<std::size_t>(0, m.payload.size() - 1)(rng);
    m.payload[pos] = static_cast<char>(m.payload[pos] ^ (1 + byte(rng) % 255));
    FrameDecoder d;
    d.feed(frame(m));
    try {
      d.next();
    } catch (const ChecksumError&) {
      ++detected;
    }
  }
  const bool ok = got == kWireMessages && wrong == 0 && dec.buffered() == 0 && detected == kCorruptedMessages;
  return {ok, std::to_string(got) + "/" + std::to_string(kWireMessages) + " messages bit-exact after rechunking, " +
                  std::to_string(detected) + "/" + std::to_string(kCorruptedMessages) + " corruptions detected"};
}

std::pair<bool, std::string> ac10() {
  const Scenario sc = load_scenario(dir + "/loopback.yaml");
  const bool shape = sc.K == 4 && sc.compute_nodes().size() == 2 && sc.P == 4 && sc.B == 4 && sc.r == 1 && sc.epochs == 2;
  const auto t0 = Clock::now();
  const LocalRun run = run_local_cluster(sc);
  const double s = since(t0);
  const auto& r = run.report;
  const double predicted = r.at("predicted_epoch_s").get<double>();
  bool timing = r.at("epochs").size() == sc.epochs;
  std::string walls;
  for (const auto& e : r.at("epochs")) {
    const double w = e.at("wall_time_s").get<double>();
    timing = timing && std::abs(w - predicted) <= kLoopbackEpochTol * predicted;
    walls += (walls.empty() ? "" : ", ") + fmt("%.3f s", w);
  }
  const bool same = r.at("owner_parts_identical").get<bool>() && r.at("compute_copies_identical").get<bool>();
  const bool conserved = r.at("conservation").get<bool>();
  const std::string d = std::string(shape ? "" : "scenario shape differs; ") + "epochs " + walls + " vs predicted " +
                        fmt("%.3f s", predicted) + " (tolerance 15%), parts " + (same ? "identical" : "DIFFER") +
                        ", conservation " + (conserved ? "holds" : "BROKEN") + ", " + fmt("%.2f s", s);
  return {shape && timing && same && conserved && s < kLoopbackBudgetS, d};
}

}  // namespace

int main(int argc, char** argv) {
  dir = argc > 1 ? argv[1] : "scenarios";
  criterion(1, ac1);
  criterion(2, ac2);
  criterion(3, ac3);
  criterion(4, ac4);
  criterion(5, ac5);
  criterion(6, ac6);
  criterion(7, ac7);
  criterion(8, ac8);
  criterion(9, ac9);
  criterion(10, ac10);
  std::printf("%d of 10 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
