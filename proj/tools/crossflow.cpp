// crossflow command-line entry point.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "crossflow/config_io.hpp"
#include "crossflow/conflict.hpp"
#include "crossflow/criteria.hpp"
#include "crossflow/qp.hpp"
#include "crossflow/simulator.hpp"
#include "crossflow/sweep.hpp"

namespace cf = crossflow;
namespace fs = std::filesystem;

namespace {

/// Scenario flags shared by every subcommand that builds a config.
struct ScenarioFlags {
  std::string config;
  std::optional<std::string> controller;
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
  std::optional<double> inflow;
  std::optional<double> speed_limit;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "scenario JSON file")->envname("CROSSFLOW_CONFIG");
    app->add_option("--controller", controller, "gameopt, fifo or light")->envname("CROSSFLOW_CONTROLLER");
    app->add_option("--seed", seed, "RNG seed")->envname("CROSSFLOW_SEED");
    app->add_option("--duration", duration, "simulated seconds")->envname("CROSSFLOW_DURATION");
    app->add_option("--inflow", inflow, "total inflow [veh/hr], split evenly over the arms")
        ->envname("CROSSFLOW_INFLOW");
    app->add_option("--speed-limit", speed_limit, "speed limit [m/s]")->envname("CROSSFLOW_SPEED_LIMIT");
  }

  cf::ScenarioConfig build() const {
    cf::ScenarioConfig cfg = config.empty() ? cf::ScenarioConfig{} : cf::load_config(config);
    if (controller) {
      auto c = cf::parse_controller(*controller);
      if (!c) throw cf::ConfigParseError("unknown controller '" + *controller + "'");
      cfg.controller = *c;
    }
    if (seed) cfg.seed = *seed;
    if (duration) cfg.duration = *duration;
    if (inflow) cfg.inflow_per_arm.fill(*inflow / cf::kNumArms);
    if (speed_limit) cfg.intersection.speed_limit = *speed_limit;
    const auto errs = cf::validate_config(cfg);
    if (!errs.empty()) throw cf::ConfigParseError(errs.front().field + ": " + errs.front().reason);
    return cfg;
  }
};

class VerificationFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SafetyFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int fail(const std::string& kind, const std::string& message, int code) {
  nlohmann::json j{{"error", kind}, {"message", message}};
  std::cerr << j.dump() << '\n';
  return code;
}

void print_summary(const cf::Summary& s, const fs::path& root) {
  std::cout << cf::summary_table(s);
  cf::write_text(root / "summary.csv", cf::summary_csv(s));
  std::cerr << "summary written to " << (root / "summary.csv").string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crossflow: auction-based intersection control simulator"};
  app.require_subcommand(1);

  // run
  ScenarioFlags run_flags;
  std::string run_out = "out/run";
  bool dump_bids = false;
  auto* run_cmd = app.add_subcommand("run", "simulate one scenario");
  run_flags.attach(run_cmd);
  run_cmd->add_option("--out", run_out, "output directory")->envname("CROSSFLOW_OUT");
  run_cmd->add_flag("--dump-bids", dump_bids, "also write bids.csv");

  // sweep
  ScenarioFlags sweep_flags;
  std::string axis_name = "total_inflow", values = "2000..10000:9", controllers = "gameopt,fifo,light",
              seeds = "0..4", sweep_name = "sweep", sweep_out = "out";
  unsigned workers = 0;
  auto* sweep_cmd = app.add_subcommand("sweep", "run a parameter sweep");
  sweep_flags.attach(sweep_cmd);
  sweep_cmd->add_option("--axis", axis_name, "total_inflow, speed_limit or imbalance_ratio");
  sweep_cmd->add_option("--values", values, "a..b:n, a..b or a,b,c");
  sweep_cmd->add_option("--controllers", controllers, "comma-separated controllers");
  sweep_cmd->add_option("--seeds", seeds, "a..b or a,b,c");
  sweep_cmd->add_option("--name", sweep_name, "sweep directory name");
  sweep_cmd->add_option("--out", sweep_out, "output root")->envname("CROSSFLOW_OUT");
  sweep_cmd->add_option("--workers", workers, "worker threads (0: one per core)")->envname("CROSSFLOW_WORKERS");

  // summarize
  std::string summarize_dir;
  auto* sum_cmd = app.add_subcommand("summarize", "summarize a finished sweep");
  sum_cmd->add_option("sweep_dir", summarize_dir, "sweep directory (contains manifest.json)")->required();

  // verify
  bool verify_full = false;
  unsigned verify_workers = 0;
  auto* verify_cmd = app.add_subcommand("verify", "run the property and oracle checks");
  verify_cmd->add_flag("--full", verify_full, "also run the simulation sweep checks (slow)");
  verify_cmd->add_option("--workers", verify_workers, "worker threads for --full")->envname("CROSSFLOW_WORKERS");

  // print-conflict-table
  auto* table_cmd = app.add_subcommand("print-conflict-table", "print the lane-group compatibility table");

  // dump-qp
  ScenarioFlags qp_flags;
  long qp_cycle = 0;
  auto* qp_cmd = app.add_subcommand("dump-qp", "print the planner QP of one cycle");
  qp_flags.attach(qp_cmd);
  qp_cmd->add_option("--cycle", qp_cycle, "cycle index")->required();

  // dump-bids
  ScenarioFlags bid_flags;
  auto* bid_cmd = app.add_subcommand("dump-bids", "print per-cycle bids as CSV");
  bid_flags.attach(bid_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*run_cmd) {
      const auto cfg = run_flags.build();
      cf::SimOptions opt;
      opt.record_bids = dump_bids;
      cf::write_text(fs::path(run_out) / "config.json", cf::dump_config(cfg) + "\n");
      const auto res = cf::run(cfg, fs::path(run_out), opt);
      std::cout << cf::metrics_json(res.metrics).dump(2) << '\n';
      if (res.metrics.safety_violations > 0) {
        const auto& e = res.safety_events.front();
        throw SafetyFailure(std::to_string(res.metrics.safety_violations) + " safety violations, first at t=" +
                            std::to_string(e.time) + ": " + e.kind);
      }
    } else if (*sweep_cmd) {
      cf::SweepSpec spec;
      spec.base = sweep_flags.build();
      const auto axis = cf::parse_axis(axis_name);
      if (!axis) throw cf::SweepError("unknown axis '" + axis_name + "'");
      spec.axis = *axis;
      spec.values = cf::parse_values(values);
      spec.seeds = cf::parse_seeds(seeds);
      spec.controllers = cf::parse_controllers(controllers);
      spec.name = sweep_name;
      spec.out = sweep_out;
      spec.workers = workers;
      const auto rep = cf::run_sweep(spec, [](const cf::SweepCell& c, bool skipped) {
        std::cerr << (skipped ? "skip " : "done ") << c.dir.string() << '\n';
      });
      std::cerr << rep.ran << " runs, " << rep.skipped << " skipped\n";
      const auto root = spec.out / spec.name;
      print_summary(cf::summarize_sweep(root), root);
      if (rep.safety_violations > 0)
        throw SafetyFailure(std::to_string(rep.safety_violations) + " safety violations in sweep");
    } else if (*sum_cmd) {
      print_summary(cf::summarize_sweep(summarize_dir), summarize_dir);
    } else if (*verify_cmd) {
      namespace cr = cf::criteria;
      std::vector<cr::Result> results;
      auto report = [&](cr::Result r) {
        std::cout << cr::line(r) << std::endl;
        results.push_back(std::move(r));
      };
      if (verify_full) {
        cr::SweepPlan plan;
        plan.workers = verify_workers;
        const auto data = cr::default_sweep(plan);
        report(cr::safety(data));
        report(cr::incentive_compatibility());
        report(cr::welfare_maximization());
        report(cr::overflow_compatibility());
        report(cr::qp_correctness());
        report(cr::real_time(data));
        report(cr::sequencing_complexity());
        report(cr::trends(data));
        report(cr::robustness(data, plan));
        report(cr::determinism());
        report(cr::compliance(data));
      } else {
        report(cr::incentive_compatibility());
        report(cr::welfare_maximization());
        report(cr::overflow_compatibility());
        report(cr::qp_correctness());
        report(cr::sequencing_complexity());
        report(cr::determinism());
      }
      std::size_t failed = 0;
      for (const auto& r : results) failed += r.pass ? 0 : 1;
      if (failed > 0) throw VerificationFailed(std::to_string(failed) + " checks failed");
    } else if (*table_cmd) {
      cf::print_conflict_table(std::cout);
    } else if (*qp_cmd) {
      const auto cfg = qp_flags.build();
      cf::SimOptions opt;
      opt.capture_qp_cycle = qp_cycle;
      cf::Simulator sim(cfg, opt);
      while (!sim.done() && !sim.captured_qp()) sim.tick();
      if (!sim.captured_qp())
        throw std::runtime_error("no QP was built at cycle " + std::to_string(qp_cycle));
      cf::qp::write_problem(std::cout, *sim.captured_qp());
    } else if (*bid_cmd) {
      const auto cfg = bid_flags.build();
      cf::SimOptions opt;
      opt.record_bids = true;
      cf::Simulator sim(cfg, opt);
      sim.run_to_end();
      std::cout << cf::bids_csv(sim);
    }
  } catch (const cf::ConfigParseError& e) {
    return fail("config", e.what(), 2);
  } catch (const cf::MissingRun& e) {
    return fail("missing_run", e.what(), 3);
  } catch (const cf::SweepError& e) {
    return fail("sweep", e.what(), 2);
  } catch (const SafetyFailure& e) {
    return fail("safety_violation", e.what(), 4);
  } catch (const VerificationFailed& e) {
    return fail("verification_failed", e.what(), 5);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
