#pragma once
// Acceptance checks shared by the `verify` subcommand and the acceptance
// binary. Each check returns one result line; tolerances are fixed here.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "crossflow/auction.hpp"
#include "crossflow/domain.hpp"
#include "crossflow/oracles.hpp"
#include "crossflow/qp.hpp"
#include "crossflow/simulator.hpp"
#include "crossflow/sweep.hpp"

namespace crossflow::criteria {

struct Result {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace tol {
inline constexpr double kDeviationGain = 1e-12;
inline constexpr double kWelfare = 1e-9;
inline constexpr double kMass = 1e-12;
inline constexpr double kGrid = 5e-3;
inline constexpr double kKkt = 1e-6;
inline constexpr double kLatencyMeanMs = 20.0;
inline constexpr double kLatencyMaxMs = 100.0;
inline constexpr double kComplexitySpread = 2.0;
inline constexpr double kSweepWallMinutes = 30.0;
inline constexpr double kThroughputRatio = 1.25;
inline constexpr double kTtgRatio = 0.5;
inline constexpr double kFuelRatio = 0.75;
inline constexpr double kImbalanceStable = 0.10;
inline constexpr double kImbalanceWorse = 0.10;
}  // namespace tol

inline std::string format(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// ---------------------------------------------------------------------------
// Pure checks

inline Result incentive_compatibility(std::size_t instances = 1000, std::uint64_t seed = 2) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> zeta(1, 20), size(1, 6);
  double worst = -1e300;
  std::size_t beaten = 0;
  bool over = false, under = false;
  for (std::size_t t = 0; t < instances; ++t) {
    const auto n = static_cast<std::size_t>(size(rng));
    std::vector<double> z(n);
    for (auto& x : z) x = zeta(rng);
    const auto r = oracle::deviation_check(z, default_item_values(n), 41);
    worst = std::max(worst, r.worst_gain);
    if (r.worst_gain > tol::kDeviationGain) ++beaten;
    over = over || r.strict_loss_over;
    under = under || r.strict_loss_under;
  }
  Result res{2, "incentive compatibility", beaten == 0 && over && under, {}};
  res.detail = std::to_string(instances) + " instances, max deviation gain " + format("%.3g", worst) +
               ", strict loss over/under " + (over ? "yes" : "no") + "/" + (under ? "yes" : "no");
  return res;
}

inline Result welfare_maximization(std::size_t instances = 500, std::uint64_t seed = 3) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> zeta(1, 20), size(1, 7);
  std::size_t bad = 0;
  double worst = 0.0;
  for (std::size_t t = 0; t < instances; ++t) {
    const auto n = static_cast<std::size_t>(size(rng));
    std::vector<double> z(n);
    for (auto& x : z) x = zeta(rng);
    const auto a = default_item_values(n);
    const double gap = oracle::max_welfare(z, a) - welfare(oracle::sorted_allocation(z), z, a);
    worst = std::max(worst, gap);
    if (gap > tol::kWelfare) ++bad;
  }
  return {3, "welfare maximization", bad == 0,
          std::to_string(instances) + " instances, max welfare shortfall " + format("%.3g", worst)};
}

inline Result overflow_compatibility(std::size_t instances = 1000, std::uint64_t seed = 4) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> zeta(1, 20), size(1, 6);
  double worst = -1e300, mass = 0.0;
  std::size_t beaten = 0, transfers = 0;
  bool over = false, under = false;
  for (std::size_t t = 0; t < instances; ++t) {
    const auto n = static_cast<std::size_t>(size(rng));
    std::vector<Bidder> b(n);
    double before = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      b[k] = {static_cast<VehicleId>(k), static_cast<double>(zeta(rng)), static_cast<double>(k)};
      before += b[k].bid;
    }
    const auto alphas = default_item_values(n);
    transfers += apply_overflow(b, oracle::random_lanes(n, rng), alphas, kOverflowFraction).size();
    std::vector<double> after(n);
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) sum += (after[k] = b[k].bid);
    mass = std::max(mass, std::abs(sum - before));
    const auto r = oracle::deviation_check(after, alphas, 41);
    worst = std::max(worst, r.worst_gain);
    if (r.worst_gain > tol::kDeviationGain) ++beaten;
    over = over || r.strict_loss_over;
    under = under || r.strict_loss_under;
  }
  Result res{4, "overflow keeps incentive compatibility", beaten == 0 && over && under && mass <= tol::kMass &&
                                                              transfers > 0,
             {}};
  res.detail = std::to_string(instances) + " instances, " + std::to_string(transfers) +
               " transfers, max deviation gain " + format("%.3g", worst) + ", max mass drift " +
               format("%.3g", mass);
  return res;
}

inline Result qp_correctness(std::size_t instances = 500, std::uint64_t seed = 5) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> size(1, 8);
  std::size_t not_optimal = 0, off = 0, kkt_bad = 0;
  double worst_dx = 0.0, worst_kkt = 0.0;
  for (std::size_t t = 0; t < instances; ++t) {
    const auto n = static_cast<std::size_t>(size(rng));
    std::vector<double> x0;
    const auto p = oracle::random_planner_qp(n, rng, 0.1, 20.0, -5.0, 3.0, 0.7, &x0);
    const auto s = qp::solve(p);
    if (s.status != qp::Status::Optimal) {
      ++not_optimal;
      continue;
    }
    worst_kkt = std::max(worst_kkt, s.kkt_residual);
    if (s.kkt_residual > tol::kKkt) ++kkt_bad;
    const auto g = oracle::grid_oracle(p, 1e-3, {x0, oracle::dykstra_oracle(p)});
    if (g.size() != n) {
      ++off;
      continue;
    }
    double dx = 0.0;
    for (std::size_t i = 0; i < n; ++i) dx = std::max(dx, std::abs(s.x[i] - g[i]));
    worst_dx = std::max(worst_dx, dx);
    if (dx > tol::kGrid) ++off;
  }
  return {5, "QP correctness", not_optimal == 0 && off == 0 && kkt_bad == 0,
          std::to_string(instances) + " instances, non-optimal " + std::to_string(not_optimal) +
              ", max |x - grid| " + format("%.3g", worst_dx) + ", max KKT residual " + format("%.3g", worst_kkt)};
}

inline Result sequencing_complexity(std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> bid(0.0, 2000.0);
  std::vector<double> ratio;
  std::string detail;
  for (std::size_t n : {std::size_t{100}, std::size_t{1000}, std::size_t{10000}}) {
    std::vector<Bidder> bs(n);
    for (std::size_t k = 0; k < n; ++k) bs[k] = {static_cast<VehicleId>(k), bid(rng), static_cast<double>(k)};
    std::size_t cmp = 0;
    build_sequence(bs, &cmp);
    const double nn = static_cast<double>(n);
    ratio.push_back(static_cast<double>(cmp) / (nn * std::log2(nn)));
    detail += "n=" + std::to_string(n) + ": " + format("%.3f", ratio.back()) + " ";
  }
  const double spread = *std::max_element(ratio.begin(), ratio.end()) / *std::min_element(ratio.begin(), ratio.end());
  return {7, "sequencing complexity", spread <= tol::kComplexitySpread,
          "comparisons/(n log2 n) " + detail + "spread " + format("%.3f", spread)};
}

/// Runs each controller twice on the same config and compares the
/// deterministic outputs byte for byte. Plan timings are wall-clock and
/// live in timing.csv, which is excluded.
inline Result determinism(double duration = 120.0, double inflow = 6000.0, std::uint64_t seed = 1) {
  std::size_t mismatches = 0;
  std::size_t bytes = 0;
  for (auto c : {ControllerKind::GameOpt, ControllerKind::FifoAuction, ControllerKind::TrafficLight}) {
    ScenarioConfig cfg;
    cfg.controller = c;
    cfg.seed = seed;
    cfg.duration = duration;
    cfg.inflow_per_arm.fill(inflow / kNumArms);
    std::string first;
    for (int rep = 0; rep < 2; ++rep) {
      SimOptions opt;
      opt.record_bids = true;
      Simulator sim(cfg, opt);
      sim.run_to_end();
      // solver latency is wall-clock; drop it from the comparison
      auto j = metrics_json(sim.metrics());
      j.erase("solver_latency");
      std::string all = vehicles_csv(sim) + cycles_csv(sim) + bids_csv(sim) + j.dump();
      if (rep == 0) first = std::move(all);
      else {
        bytes += all.size();
        if (all != first) ++mismatches;
      }
    }
  }
  return {10, "determinism", mismatches == 0,
          "3 controllers x 2 repeats, " + std::to_string(bytes) + " bytes compared, " +
              std::to_string(mismatches) + " mismatches"};
}

// ---------------------------------------------------------------------------
// Simulation checks

struct CellKey {
  ControllerKind controller;
  double inflow;
  std::uint64_t seed;
  auto operator<=>(const CellKey&) const = default;
};

struct SweepData {
  std::map<CellKey, RunResult> cells;
  double wall_minutes = 0.0;
};

inline ScenarioConfig balanced(ControllerKind c, double inflow, std::uint64_t seed, double duration) {
  ScenarioConfig cfg;
  cfg.controller = c;
  cfg.seed = seed;
  cfg.duration = duration;
  cfg.inflow_per_arm.fill(inflow / kNumArms);
  return cfg;
}

struct SweepPlan {
  std::vector<double> inflows{2000.0, 4000.0, 6000.0, 8000.0, 10000.0};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  double duration = 600.0;
  unsigned workers = 0;
};

inline SweepData default_sweep(const SweepPlan& plan,
                               const std::function<void(const CellKey&, const RunResult&)>& progress = {}) {
  std::vector<CellKey> keys;
  for (auto c : {ControllerKind::GameOpt, ControllerKind::FifoAuction, ControllerKind::TrafficLight})
    for (double f : plan.inflows)
      for (auto s : plan.seeds) keys.push_back({c, f, s});
  // heaviest cells first so the pool drains evenly
  std::stable_sort(keys.begin(), keys.end(), [](const CellKey& a, const CellKey& b) { return a.inflow > b.inflow; });
  SweepData data;
  std::mutex m;
  const auto t0 = std::chrono::steady_clock::now();
  parallel_for(keys.size(), plan.workers, [&](std::size_t k) {
    const auto& key = keys[k];
    auto r = run(balanced(key.controller, key.inflow, key.seed, plan.duration));
    std::lock_guard<std::mutex> lock(m);
    if (progress) progress(key, r);
    data.cells.emplace(key, std::move(r));
  });
  data.wall_minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  return data;
}

inline Result safety(const SweepData& d) {
  std::uint64_t violations = 0, cells_bad = 0;
  for (const auto& [k, r] : d.cells) {
    violations += r.metrics.safety_violations;
    if (r.metrics.safety_violations > 0) ++cells_bad;
  }
  const bool pass = violations == 0 && d.wall_minutes <= tol::kSweepWallMinutes && !d.cells.empty();
  return {1, "safety", pass,
          std::to_string(d.cells.size()) + " runs, " + std::to_string(violations) + " violations in " +
              std::to_string(cells_bad) + " runs, wall time " + format("%.1f", d.wall_minutes) + " min"};
}

inline Result real_time(const SweepData& d) {
  std::uint64_t cycles = 0;
  double sum = 0.0, mx = 0.0;
  for (const auto& [k, r] : d.cells) {
    if (k.controller != ControllerKind::GameOpt) continue;
    cycles += r.busy.cycles;
    sum += r.busy.mean_ms * static_cast<double>(r.busy.cycles);
    mx = std::max(mx, r.busy.max_ms);
  }
  const double mean = cycles ? sum / static_cast<double>(cycles) : 0.0;
  return {6, "real-time budget", cycles > 0 && mean <= tol::kLatencyMeanMs && mx <= tol::kLatencyMaxMs,
          std::to_string(cycles) + " GameOpt cycles with >= " + std::to_string(kBusyZoneVehicles) +
              " vehicles, mean " + format("%.3f", mean) + " ms, max " + format("%.3f", mx) + " ms"};
}

inline MetricsReport mean_metrics(const SweepData& d, ControllerKind c, double inflow) {
  MetricsReport m;
  double n = 0.0;
  for (const auto& [k, r] : d.cells) {
    if (k.controller != c || k.inflow != inflow) continue;
    m.throughput += r.metrics.throughput;
    m.mean_time_to_goal += r.metrics.mean_time_to_goal;
    m.mean_fuel_per_vehicle += r.metrics.mean_fuel_per_vehicle;
    n += 1.0;
  }
  if (n > 0) {
    m.throughput /= n;
    m.mean_time_to_goal /= n;
    m.mean_fuel_per_vehicle /= n;
  }
  return m;
}

inline Result trends(const SweepData& d, double inflow = 10000.0) {
  const auto g = mean_metrics(d, ControllerKind::GameOpt, inflow);
  const auto f = mean_metrics(d, ControllerKind::FifoAuction, inflow);
  const auto l = mean_metrics(d, ControllerKind::TrafficLight, inflow);
  const double thr = f.throughput > 0 ? g.throughput / f.throughput : 0.0;
  const double ttg = f.mean_time_to_goal > 0 ? g.mean_time_to_goal / f.mean_time_to_goal : 1e9;
  const double fuel = l.mean_fuel_per_vehicle > 0 ? g.mean_fuel_per_vehicle / l.mean_fuel_per_vehicle : 1e9;
  const bool pass = thr >= tol::kThroughputRatio && ttg <= tol::kTtgRatio && fuel <= tol::kFuelRatio;
  return {8, "trend reproduction", pass,
          "throughput x" + format("%.3f", thr) + " (>= 1.25), time-to-goal x" + format("%.3f", ttg) +
              " (<= 0.5), fuel vs light x" + format("%.3f", fuel) + " (<= 0.75)"};
}

inline Result compliance(const SweepData& d) {
  std::uint64_t seq = 0, gap = 0, pairs = 0, optimal = 0;
  for (const auto& [k, r] : d.cells) {
    if (k.controller != ControllerKind::GameOpt) continue;
    seq += r.counters.sequence_failures;
    gap += r.counters.gap_failures;
    pairs += r.counters.checked_pairs;
    optimal += r.counters.optimal_cycles;
  }
  return {11, "linearization fidelity", seq == 0 && gap == 0 && pairs > 0,
          std::to_string(optimal) + " optimal cycles, " + std::to_string(pairs) + " checked pairs, " +
              std::to_string(seq) + " sequence failures, " + std::to_string(gap) + " gap failures"};
}

/// Speed-limit and imbalance studies at `inflow`, reusing the balanced
/// v_bar = 20 cells of the sweep as the reference.
inline Result robustness(const SweepData& d, const SweepPlan& plan, double inflow = 8000.0) {
  struct Job {
    ControllerKind c;
    int kind;  // 0: v_bar 25, 1: imbalance 2:1:1:1
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (auto s : plan.seeds) {
    jobs.push_back({ControllerKind::GameOpt, 0, s});
    jobs.push_back({ControllerKind::GameOpt, 1, s});
    jobs.push_back({ControllerKind::FifoAuction, 1, s});
  }
  std::vector<double> ttg(jobs.size());
  parallel_for(jobs.size(), plan.workers, [&](std::size_t k) {
    auto cfg = balanced(jobs[k].c, inflow, jobs[k].seed, plan.duration);
    if (jobs[k].kind == 0) cfg = apply_axis(cfg, SweepAxis::SpeedLimit, 25.0);
    else cfg = apply_axis(cfg, SweepAxis::ImbalanceRatio, 2.0);
    ttg[k] = run(cfg).metrics.mean_time_to_goal;
  });
  auto avg = [&](ControllerKind c, int kind) {
    double s = 0.0, n = 0.0;
    for (std::size_t k = 0; k < jobs.size(); ++k)
      if (jobs[k].c == c && jobs[k].kind == kind) s += ttg[k], n += 1.0;
    return n > 0 ? s / n : 0.0;
  };
  const double g20 = mean_metrics(d, ControllerKind::GameOpt, inflow).mean_time_to_goal;
  const double f_bal = mean_metrics(d, ControllerKind::FifoAuction, inflow).mean_time_to_goal;
  const double g25 = avg(ControllerKind::GameOpt, 0);
  const double g_imb = avg(ControllerKind::GameOpt, 1);
  const double f_imb = avg(ControllerKind::FifoAuction, 1);
  const double g_change = g20 > 0 ? std::abs(g_imb - g20) / g20 : 1e9;
  const double f_change = f_bal > 0 ? (f_imb - f_bal) / f_bal : -1e9;
  const bool speed_ok = g25 < g20;
  const bool g_ok = g_change <= tol::kImbalanceStable;
  const bool f_ok = f_change >= tol::kImbalanceWorse;
  return {9, "robustness trends", speed_ok && g_ok && f_ok,
          "GameOpt ttg v_bar 20->25: " + format("%.2f", g20) + " -> " + format("%.2f", g25) + " s; imbalance " +
              "GameOpt change " + format("%+.1f", 100.0 * (g_imb - g20) / std::max(g20, 1e-9)) +
              "% (|.| <= 10), FIFO change " + format("%+.1f", 100.0 * f_change) + "% (>= +10)"};
}

inline std::string line(const Result& r) {
  return std::string(r.pass ? "PASS" : "FAIL") + " criterion " + std::to_string(r.id) + " (" + r.name + "): " +
         r.detail;
}

}  // namespace crossflow::criteria
