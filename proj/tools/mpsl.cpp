// Command-line driver: analysis, splitting, simulation, sweeps and the
// distributed runtime. Exit status 0 means every check of the command passed,
// 1 means a check failed, 2 means bad input.

#include <CLI11.hpp>
#include <pthread.h>

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <thread>

#include "mpsl/analytic.hpp"
#include "mpsl/experiments.hpp"
#include "mpsl/runtime.hpp"
#include "mpsl/simkernel.hpp"
#include "mpsl/splitter.hpp"

namespace {

using json = nlohmann::json;
using namespace mpsl;

struct Global {
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "csv";
};

Scenario load(const Global& g) {
  if (g.scenario.empty()) throw ValidationError("--scenario is required");
  Scenario sc = load_scenario(g.scenario);
  if (g.seed) sc.rng_seed = *g.seed;
  return sc;
}

void emit(const Global& g, const std::string& text) {
  if (g.out.empty() || g.out == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(g.out);
  if (!f) throw Error("cannot write '" + g.out + "'");
  f << text;
}

void emit_table(const Global& g, const Table& t, const json& summary = json::object()) {
  if (g.format == "json") {
    json j{{"rows", t.to_json()}};
    if (!summary.empty()) j["summary"] = summary;
    emit(g, j.dump(2) + "\n");
  } else {
    emit(g, t.csv());
  }
}

int finish(const Global& g, const ExperimentResult& r) {
  emit_table(g, r.table, r.summary);
  for (const auto& [k, v] : r.summary.items()) std::cerr << k << " = " << v.dump() << "\n";
  for (const auto& f : r.failures) std::cerr << "check failed: " << f << "\n";
  return r.passed() ? 0 : 1;
}

std::vector<std::pair<std::size_t, std::size_t>> parse_cuts(const std::vector<std::string>& items) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& s : items) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw ValidationError("cut pair '" + s + "' is not first:last");
    out.emplace_back(std::stoul(s.substr(0, colon)), std::stoul(s.substr(colon + 1)));
  }
  return out;
}

// Blocks SIGINT/SIGTERM in every thread and stops the server from a watcher
// thread when one arrives.
template <class Server>
void serve_until_signal(Server& server) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  std::atomic<bool> done{false};
  std::thread watcher([&] {
    const timespec tick{0, 200'000'000};
    while (!done) {
      if (sigtimedwait(&set, nullptr, &tick) > 0) {
        server.stop();
        return;
      }
    }
  });
  server.run();
  done = true;
  watcher.join();
}

}  // namespace

int main(int argc, char** argv) {
  {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    if (argc > 1 && std::string(argv[1]) == "serve") pthread_sigmask(SIG_BLOCK, &set, nullptr);
  }
  CLI::App app{"Multihop parallel split learning: cost model, split optimizer, simulator and runtime"};
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  app.add_option("--scenario", g.scenario, "Scenario YAML file");
  app.add_option("--seed", g.seed, "Override the scenario's rng_seed");
  app.add_option("--out", g.out, "Output file (default: stdout)");
  app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"csv", "json"}));

  int code = 0;

  auto* analyze = app.add_subcommand("analyze", "Closed-form epoch delay and cost breakdown");
  analyze->callback([&] {
    const Scenario sc = load(g);
    const SplitAssignment a = resolve_assignment(sc);
    const CostBreakdown c = global_epoch_time(sc, a);
    if (g.format == "json")
      emit(g, json{{"L_fwd", c.L_fwd}, {"L_back", c.L_back}, {"pipefull", c.pipefull}, {"pipeempty", c.pipeempty},
                   {"start_first", c.start_first}, {"end_last", c.end_last}, {"T_batch_all", c.T_batch_all},
                   {"T_aggr", c.T_aggr}, {"T_tot", c.T_tot}, {"cost_usd", c.cost_usd}}
                      .dump(2) + "\n");
    else
      emit(g, cost_csv_header() + "\n" + to_csv_row(c) + "\n");
  });

  std::string method = "optimal";
  auto* split = app.add_subcommand("split", "Choose intermediate split points and node order");
  split->add_option("--method", method)->check(CLI::IsMember({"optimal", "manual", "brute-force"}));
  split->callback([&] {
    const Scenario sc = load(g);
    const SplitProblem prob = SplitProblem::from_scenario(sc);
    const SplitResult r = method == "manual" ? manual_even_split(prob)
                          : method == "brute-force" ? brute_force_split(prob)
                                                    : optimize_split(prob);
    Table t;
    t.columns = {"part", "node", "first_layer", "last_layer", "fwd_s", "back_s", "mem_bytes"};
    const auto stats = stage_stats(sc, r.assignment);
    for (std::size_t i = 0; i < r.assignment.segments.size(); ++i)
      t.add({i + 2, r.assignment.node_order[i], r.assignment.segments[i].start, r.assignment.segments[i].end,
             stats[i].fwd_s, stats[i].back_s, static_cast<std::uint64_t>(sc.K) * stats[i].mem_bytes});
    emit_table(g, t, {{"L_fwd", r.L_fwd}, {"L_back", r.L_back}, {"pipefull", r.objective}});
    std::cerr << "pipefull = " << r.objective << " s\n";
  });

  std::string trace_path, metrics_path, executor = "alternate", injection = "closed";
  bool drain = false;
  double jitter = 0.0;
  auto* simulate = app.add_subcommand("simulate", "Discrete-event simulation of one global epoch");
  simulate->add_option("--trace", trace_path, "Write the event trace as CSV");
  simulate->add_option("--metrics", metrics_path, "Write metrics as JSON");
  simulate->add_option("--executor", executor)->check(CLI::IsMember({"alternate", "backward-first", "fifo"}));
  simulate->add_option("--injection", injection)->check(CLI::IsMember({"closed", "open"}));
  simulate->add_flag("--drain", drain, "Finish each local epoch before starting the next");
  simulate->add_option("--jitter", jitter, "Uniform +-fraction applied to compute times");
  simulate->callback([&] {
    const Scenario sc = load(g);
    const SplitAssignment a = resolve_assignment(sc);
    SimOptions opt;
    opt.executor = executor == "fifo"             ? SimOptions::ExecutorPolicy::Fifo
                   : executor == "backward-first" ? SimOptions::ExecutorPolicy::BackwardFirst
                                                  : SimOptions::ExecutorPolicy::Alternate;
    opt.injection = injection == "open" ? SimOptions::Injection::OpenLoop : SimOptions::Injection::ClosedLoop;
    opt.drain_between_local_epochs = drain;
    opt.compute_jitter = jitter;
    opt.capture_trace = !trace_path.empty();
    const SimMetrics m = run_epoch(sc, a, opt);
    const CostBreakdown c = global_epoch_time(sc, a);
    if (!trace_path.empty()) {
      std::ofstream f(trace_path);
      if (!f) throw Error("cannot write '" + trace_path + "'");
      f << trace_csv(m.trace);
    }
    if (!metrics_path.empty()) {
      std::ofstream f(metrics_path);
      if (!f) throw Error("cannot write '" + metrics_path + "'");
      json busy(m.busy_fraction), depth(m.queue_max_depth);
      f << json{{"epoch_time", m.epoch_time},
                {"fill_time", m.fill_time},
                {"steady_state_batch_period", std::isfinite(m.steady_state_batch_period) ? json(m.steady_state_batch_period) : json(nullptr)},
                {"busy_fraction", busy},
                {"queue_max_depth", depth},
                {"events", m.events}}
                 .dump(2)
        << "\n";
    }
    Table t;
    t.columns = {"epoch_time", "fill_time", "steady_state_batch_period", "T_tot", "pipefull", "rel_error", "events"};
    t.add({m.epoch_time, m.fill_time,
           std::isfinite(m.steady_state_batch_period) ? json(m.steady_state_batch_period) : json("nan"), c.T_tot,
           c.pipefull, std::abs(c.T_tot - m.epoch_time) / m.epoch_time, m.events});
    emit_table(g, t);
  });

  ValidateParams vp;
  auto* validate_cmd = app.add_subcommand("validate", "Closed form vs simulation over a K x P grid");
  validate_cmd->add_option("--K", vp.K, "Owner counts")->delimiter(',');
  validate_cmd->add_option("--P", vp.P, "Multihop levels")->delimiter(',');
  validate_cmd->callback([&] { code = finish(g, cmd_validate(load(g), vp)); });

  SplitGainParams sp;
  auto* gain = app.add_subcommand("split-gain", "Optimized vs manual even split");
  gain->add_option("--K", sp.K, "Owner counts")->delimiter(',');
  gain->add_option("--N", sp.N, "Compute node counts")->delimiter(',');
  gain->callback([&] { code = finish(g, cmd_split_gain(load(g), sp)); });

  MultihopParams mp;
  std::vector<std::string> cut_items;
  auto* multihop = app.add_subcommand("multihop", "Pipeline latency as compute nodes are added");
  multihop->add_option("--cuts", cut_items, "first:last cut pairs")->delimiter(',');
  multihop->add_option("--max-N", mp.max_N, "Largest compute node count");
  multihop->callback([&] {
    mp.cuts = parse_cuts(cut_items);
    code = finish(g, cmd_multihop(load(g), mp));
  });

  CostDelayParams cp;
  auto* cost = app.add_subcommand("cost-delay", "Delay and cost of VM mixes, multihop vs horizontal scaling");
  cost->add_option("--N", cp.N, "Compute node counts")->delimiter(',');
  cost->add_option("--vm-classes", cp.vm_classes, "Node classes to combine, most expensive first")->delimiter(',');
  cost->callback([&] { code = finish(g, cmd_cost_delay(load(g), cp)); });

  HeterogeneityParams hp;
  auto* het = app.add_subcommand("heterogeneity", "Owner device and network mixes vs SplitNN");
  het->add_option("--owners", hp.K, "Total data owners");
  het->add_option("--P", hp.P, "Multihop levels")->delimiter(',');
  het->add_option("--fast-share", hp.fast_share, "Shares of fast owners")->delimiter(',');
  het->add_option("--slow-fraction", hp.slow_fraction, "Shares of owners on slow links")->delimiter(',');
  het->add_option("--slow-factor", hp.slow_factor, "Bandwidth divisor for slow links");
  het->add_option("--fast-class", hp.fast_class, "Class of fast owners (default: the scenario's)");
  het->add_option("--slow-class", hp.slow_class, "Class of slow owners");
  het->callback([&] { code = finish(g, cmd_heterogeneity(load(g), hp)); });

  std::string role, id, listen;
  std::vector<std::string> artifacts;
  bool once = false;
  auto* serve = app.add_subcommand("serve", "Run a runtime node or the manager");
  serve->add_option("--role", role)->required()->check(CLI::IsMember({"data-owner", "compute", "aggregator", "manager"}));
  serve->add_option("--id", id, "Node id (must match the job scenario)");
  serve->add_option("--listen", listen, "host:port")->required();
  serve->add_option("--artifacts", artifacts, "Model directories searched by the manager");
  serve->add_flag("--once", once, "Manager exits after one job");
  serve->callback([&] {
    const Endpoint ep = Endpoint::parse(listen);
    if (role == "manager") {
      ManagerOptions mo;
      if (!id.empty()) mo.id = id;
      mo.listen = ep;
      for (const auto& a : artifacts) mo.artifact_dirs.emplace_back(a);
      mo.max_jobs = once ? 1 : 0;
      ManagerRuntime m(mo);
      std::cerr << "manager listening on " << m.endpoint().str() << "\n";
      serve_until_signal(m);
    } else {
      if (id.empty()) throw ValidationError("--id is required for role " + role);
      NodeRuntime n(NodeOptions{id, parse_role(role), ep});
      std::cerr << id << " listening on " << n.endpoint().str() << "\n";
      serve_until_signal(n);
    }
  });

  std::string manager_addr;
  double timeout_s = 600.0;
  auto* submit = app.add_subcommand("submit", "Submit a job to a manager and print its report");
  submit->add_option("--manager", manager_addr, "host:port")->required();
  submit->add_option("--timeout", timeout_s, "Seconds to wait for the report");
  submit->callback([&] {
    if (g.scenario.empty()) throw ValidationError("--scenario is required");
    std::ifstream f(g.scenario);
    if (!f) throw Error("cannot read '" + g.scenario + "'");
    std::stringstream text;
    text << f.rdbuf();
    const json report = submit_job(Endpoint::parse(manager_addr), text.str(), timeout_s);
    if (g.format == "json") {
      emit(g, report.dump(2) + "\n");
    } else {
      Table t;
      t.columns = {"epoch", "wall_time_s", "predicted_epoch_s"};
      for (const auto& e : report.at("epochs")) t.add({e.at("epoch"), e.at("wall_time_s"), report.at("predicted_epoch_s")});
      emit(g, t.csv());
    }
    const bool ok = report.value("conservation", false) && report.value("owner_parts_identical", false) &&
                    report.value("compute_copies_identical", false);
    if (!ok) std::cerr << "check failed: run report flags a conservation or parameter mismatch\n";
    code = ok ? 0 : 1;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return code;
}
