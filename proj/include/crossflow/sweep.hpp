#pragma once
// Parameter sweeps over (controller, axis value, seed) cells and the
// summary table computed from their outputs.
//
// Layout: <out>/<sweep>/<controller>/<axis>=<value>/seed=<k>/
// Each finished cell carries a DONE marker holding its config hash, so a
// re-run skips it.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "crossflow/config_io.hpp"
#include "crossflow/domain.hpp"
#include "crossflow/simulator.hpp"

#ifndef CROSSFLOW_VERSION
#define CROSSFLOW_VERSION "dev"
#endif

namespace crossflow {

enum class SweepAxis : int { TotalInflow = 0, SpeedLimit = 1, ImbalanceRatio = 2 };

inline std::string_view to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::TotalInflow: return "total_inflow";
    case SweepAxis::SpeedLimit: return "speed_limit";
    case SweepAxis::ImbalanceRatio: return "imbalance_ratio";
  }
  return "?";
}

inline std::optional<SweepAxis> parse_axis(std::string_view s) {
  if (s == "total_inflow") return SweepAxis::TotalInflow;
  if (s == "speed_limit") return SweepAxis::SpeedLimit;
  if (s == "imbalance_ratio") return SweepAxis::ImbalanceRatio;
  return std::nullopt;
}

class SweepError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingRun : public SweepError {
 public:
  explicit MissingRun(const std::string& cell) : SweepError("missing run: " + cell), cell_(cell) {}
  const std::string& cell() const { return cell_; }

 private:
  std::string cell_;
};

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep))
    if (!cur.empty()) out.push_back(cur);
  return out;
}

inline double parse_number(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw SweepError("not a number: '" + s + "'");
  }
  if (used != s.size()) throw SweepError("not a number: '" + s + "'");
  return v;
}

}  // namespace detail

/// "a..b:n" -> n evenly spaced values from a to b; "a..b" -> a, a+1, ..., b;
/// "x,y,z" -> the listed values. Pieces may be mixed with commas.
inline std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  for (const auto& piece : detail::split(text, ',')) {
    const auto dots = piece.find("..");
    if (dots == std::string::npos) {
      out.push_back(detail::parse_number(piece));
      continue;
    }
    const double a = detail::parse_number(piece.substr(0, dots));
    std::string rest = piece.substr(dots + 2);
    const auto colon = rest.find(':');
    if (colon != std::string::npos) {
      const double b = detail::parse_number(rest.substr(0, colon));
      const double cnt = detail::parse_number(rest.substr(colon + 1));
      if (cnt < 1 || cnt != std::floor(cnt)) throw SweepError("bad count in '" + piece + "'");
      const auto n = static_cast<std::size_t>(cnt);
      for (std::size_t k = 0; k < n; ++k)
        out.push_back(n == 1 ? a : a + (b - a) * static_cast<double>(k) / static_cast<double>(n - 1));
    } else {
      const double b = detail::parse_number(rest);
      if (b < a) throw SweepError("empty range '" + piece + "'");
      for (double x = a; x <= b + 1e-9; x += 1.0) out.push_back(x);
    }
  }
  if (out.empty()) throw SweepError("empty value list");
  return out;
}

inline std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (double v : parse_values(text)) {
    if (v < 0 || v != std::floor(v)) throw SweepError("seeds must be non-negative integers");
    out.push_back(static_cast<std::uint64_t>(v));
  }
  return out;
}

inline std::vector<ControllerKind> parse_controllers(const std::string& text) {
  std::vector<ControllerKind> out;
  for (const auto& name : detail::split(text, ',')) {
    auto c = parse_controller(name);
    if (!c) throw SweepError("unknown controller '" + name + "'");
    out.push_back(*c);
  }
  if (out.empty()) throw SweepError("empty controller list");
  return out;
}

/// Canonical text of an axis value, used in directory names.
inline std::string format_value(double v) {
  if (v == std::floor(v) && std::abs(v) < 1e15) return std::to_string(static_cast<long long>(v));
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// Applies one axis value to a config. Total inflow keeps the arm
/// proportions of the base config (equal split if it has none); the
/// imbalance ratio r sets the arms to r:1:1:1 at the base total.
inline ScenarioConfig apply_axis(ScenarioConfig cfg, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::TotalInflow: {
      if (!(value >= 0.0)) throw SweepError("total_inflow must be >= 0");
      const double total = cfg.total_inflow();
      for (auto& f : cfg.inflow_per_arm)
        f = total > 0.0 ? f / total * value : value / kNumArms;
      break;
    }
    case SweepAxis::SpeedLimit:
      if (!(value > 0.0)) throw SweepError("speed_limit must be > 0");
      cfg.intersection.speed_limit = value;
      break;
    case SweepAxis::ImbalanceRatio: {
      if (!(value > 0.0)) throw SweepError("imbalance_ratio must be > 0");
      const double total = cfg.total_inflow();
      const double unit = total / (value + kNumArms - 1);
      cfg.inflow_per_arm = {value * unit, unit, unit, unit};
      break;
    }
  }
  return cfg;
}

struct SweepSpec {
  ScenarioConfig base;
  std::string name = "sweep";
  SweepAxis axis = SweepAxis::TotalInflow;
  std::vector<double> values;
  std::vector<std::uint64_t> seeds;
  std::vector<ControllerKind> controllers;
  std::filesystem::path out = "out";
  unsigned workers = 0;  ///< 0: hardware concurrency

  void validate() const {
    if (values.empty()) throw SweepError("no axis values");
    if (seeds.empty()) throw SweepError("no seeds");
    if (controllers.empty()) throw SweepError("no controllers");
  }
};

struct SweepCell {
  ControllerKind controller = ControllerKind::GameOpt;
  double value = 0.0;
  std::uint64_t seed = 0;
  ScenarioConfig config;
  std::filesystem::path dir;
};

inline std::vector<SweepCell> sweep_cells(const SweepSpec& spec) {
  spec.validate();
  std::vector<SweepCell> cells;
  const auto root = spec.out / spec.name;
  for (auto c : spec.controllers) {
    for (double v : spec.values) {
      for (auto seed : spec.seeds) {
        SweepCell cell;
        cell.controller = c;
        cell.value = v;
        cell.seed = seed;
        cell.config = apply_axis(spec.base, spec.axis, v);
        cell.config.controller = c;
        cell.config.seed = seed;
        const auto errs = validate_config(cell.config);
        if (!errs.empty())
          throw SweepError("cell " + format_value(v) + ": " + errs.front().field + " " + errs.front().reason);
        cell.dir = root / std::string(to_string(c)) /
                   (std::string(to_string(spec.axis)) + "=" + format_value(v)) /
                   ("seed=" + std::to_string(seed));
        cells.push_back(std::move(cell));
      }
    }
  }
  return cells;
}

/// Runs job(k) for k in [0, count) on at most `workers` threads and joins.
/// The first exception thrown by a job is rethrown after the join.
inline void parallel_for(std::size_t count, unsigned workers, const std::function<void(std::size_t)>& job) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(count, 1)));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= count) return;
      try {
        job(k);
      } catch (...) {
        std::lock_guard<std::mutex> lock(m);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

namespace detail {

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::optional<std::string> read_text(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) return std::nullopt;
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace detail

inline bool cell_done(const SweepCell& cell) {
  const auto marker = detail::read_text(cell.dir / "DONE");
  return marker && *marker == hex64(config_hash(cell.config)) + "\n" &&
         std::filesystem::exists(cell.dir / "metrics.json");
}

struct SweepReport {
  std::size_t ran = 0;
  std::size_t skipped = 0;
  std::uint64_t safety_violations = 0;
};

/// Runs every unfinished cell and writes the sweep manifest.
inline SweepReport run_sweep(const SweepSpec& spec,
                             const std::function<void(const SweepCell&, bool skipped)>& progress = {}) {
  const auto cells = sweep_cells(spec);
  const auto root = spec.out / spec.name;
  std::filesystem::create_directories(root);

  nlohmann::json manifest;
  manifest["name"] = spec.name;
  manifest["axis"] = std::string(to_string(spec.axis));
  manifest["values"] = spec.values;
  manifest["seeds"] = spec.seeds;
  std::vector<std::string> cnames;
  for (auto c : spec.controllers) cnames.emplace_back(to_string(c));
  manifest["controllers"] = cnames;
  manifest["base_config"] = to_json(spec.base);
  manifest["version"] = CROSSFLOW_VERSION;
  nlohmann::json cell_list = nlohmann::json::array();
  for (const auto& c : cells) cell_list.push_back(std::filesystem::relative(c.dir, root).generic_string());
  manifest["cells"] = cell_list;
  write_text(root / "manifest.json", manifest.dump(2) + "\n");

  SweepReport rep;
  std::mutex m;
  parallel_for(cells.size(), spec.workers, [&](std::size_t k) {
    const auto& cell = cells[k];
    if (cell_done(cell)) {
      std::lock_guard<std::mutex> lock(m);
      ++rep.skipped;
      if (progress) progress(cell, true);
      return;
    }
    std::filesystem::create_directories(cell.dir);
    std::filesystem::remove(cell.dir / "DONE");
    const auto started = detail::utc_now();
    write_text(cell.dir / "config.json", dump_config(cell.config) + "\n");
    const auto res = run(cell.config, cell.dir);
    nlohmann::json cm;
    cm["controller"] = std::string(to_string(cell.controller));
    cm["axis"] = std::string(to_string(spec.axis));
    cm["value"] = cell.value;
    cm["seed"] = cell.seed;
    cm["config_hash"] = hex64(config_hash(cell.config));
    cm["version"] = CROSSFLOW_VERSION;
    cm["started"] = started;
    cm["finished"] = detail::utc_now();
    write_text(cell.dir / "manifest.json", cm.dump(2) + "\n");
    write_text(cell.dir / "DONE", hex64(config_hash(cell.config)) + "\n");
    std::lock_guard<std::mutex> lock(m);
    ++rep.ran;
    rep.safety_violations += res.metrics.safety_violations;
    if (progress) progress(cell, false);
  });
  return rep;
}

// ---------------------------------------------------------------------------
// Summary

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

struct RunRecord {
  std::string controller;
  double value = 0.0;
  std::uint64_t seed = 0;
  MetricsReport metrics;
};

struct SummaryRow {
  std::string controller;
  double value = 0.0;
  std::size_t runs = 0;
  MeanStd throughput, time_to_goal, fuel;
  std::uint64_t safety_violations = 0;
  /// GameOpt vs this row's controller at the same value, in percent:
  /// throughput gain, time-to-goal reduction, fuel reduction.
  std::optional<double> throughput_gain, ttg_reduction, fuel_reduction;
};

struct Summary {
  std::string axis;
  std::vector<SummaryRow> rows;
};

/// Reads one finished run directory (manifest.json + metrics.json).
inline RunRecord load_run(const std::filesystem::path& dir) {
  const auto man = detail::read_text(dir / "manifest.json");
  const auto met = detail::read_text(dir / "metrics.json");
  if (!man || !met || !std::filesystem::exists(dir / "DONE")) throw MissingRun(dir.string());
  const auto mj = nlohmann::json::parse(*man);
  RunRecord r;
  r.controller = mj.at("controller").get<std::string>();
  r.value = mj.at("value").get<double>();
  r.seed = mj.at("seed").get<std::uint64_t>();
  r.metrics = metrics_from_json(nlohmann::json::parse(*met));
  return r;
}

/// Percent improvement of `better` over `base`; positive = GameOpt better.
inline double percent_gain(double gameopt, double base) {
  return base != 0.0 ? (gameopt - base) / base * 100.0 : 0.0;
}
inline double percent_reduction(double gameopt, double base) {
  return base != 0.0 ? (base - gameopt) / base * 100.0 : 0.0;
}

inline Summary summarize(const std::vector<RunRecord>& runs, std::string axis = {}) {
  if (runs.empty()) throw SweepError("nothing to summarize");
  std::map<std::pair<std::string, double>, std::vector<const RunRecord*>> groups;
  for (const auto& r : runs) groups[{r.controller, r.value}].push_back(&r);
  Summary s;
  s.axis = std::move(axis);
  for (const auto& [key, rs] : groups) {
    SummaryRow row;
    row.controller = key.first;
    row.value = key.second;
    row.runs = rs.size();
    std::vector<double> th, tt, fu;
    for (const auto* r : rs) {
      th.push_back(r->metrics.throughput);
      tt.push_back(r->metrics.mean_time_to_goal);
      fu.push_back(r->metrics.mean_fuel_per_vehicle);
      row.safety_violations += r->metrics.safety_violations;
    }
    row.throughput = mean_std(th);
    row.time_to_goal = mean_std(tt);
    row.fuel = mean_std(fu);
    s.rows.push_back(row);
  }
  for (auto& row : s.rows) {
    auto it = std::find_if(s.rows.begin(), s.rows.end(), [&](const SummaryRow& o) {
      return o.controller == "gameopt" && o.value == row.value;
    });
    if (it == s.rows.end()) continue;
    row.throughput_gain = percent_gain(it->throughput.mean, row.throughput.mean);
    row.ttg_reduction = percent_reduction(it->time_to_goal.mean, row.time_to_goal.mean);
    row.fuel_reduction = percent_reduction(it->fuel.mean, row.fuel.mean);
  }
  return s;
}

/// Summarizes a sweep directory; every cell listed in its manifest must
/// have finished.
inline Summary summarize_sweep(const std::filesystem::path& root) {
  const auto man = detail::read_text(root / "manifest.json");
  if (!man) throw SweepError("no sweep manifest in " + root.string());
  const auto mj = nlohmann::json::parse(*man);
  std::vector<RunRecord> runs;
  for (const auto& rel : mj.at("cells")) runs.push_back(load_run(root / rel.get<std::string>()));
  return summarize(runs, mj.at("axis").get<std::string>());
}

inline std::string summary_csv(const Summary& s) {
  auto num = [](double x) { return detail::fmt("%.6g", x); };
  auto opt = [&](const std::optional<double>& x) { return x ? num(*x) : std::string(); };
  std::string out = "controller," + (s.axis.empty() ? std::string("value") : s.axis) +
                    ",runs,throughput_mean,throughput_std,ttg_mean,ttg_std,fuel_mean,fuel_std,"
                    "safety_violations,gameopt_throughput_gain_pct,gameopt_ttg_reduction_pct,"
                    "gameopt_fuel_reduction_pct\r\n";
  for (const auto& r : s.rows) {
    out += r.controller + ',' + format_value(r.value) + ',' + std::to_string(r.runs) + ',' +
           num(r.throughput.mean) + ',' + num(r.throughput.stddev) + ',' + num(r.time_to_goal.mean) + ',' +
           num(r.time_to_goal.stddev) + ',' + num(r.fuel.mean) + ',' + num(r.fuel.stddev) + ',' +
           std::to_string(r.safety_violations) + ',' + opt(r.throughput_gain) + ',' + opt(r.ttg_reduction) +
           ',' + opt(r.fuel_reduction) + "\r\n";
  }
  return out;
}

inline std::string summary_table(const Summary& s) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-8s %10s %4s %18s %18s %22s %8s %8s %8s\n", "ctrl",
                s.axis.empty() ? "value" : s.axis.c_str(), "n", "throughput/min", "ttg [s]", "fuel/veh [L]",
                "thr+%", "ttg-%", "fuel-%");
  os << buf;
  auto pct = [](const std::optional<double>& x) {
    char b[32];
    if (x) std::snprintf(b, sizeof b, "%.1f", *x);
    else std::snprintf(b, sizeof b, "-");
    return std::string(b);
  };
  for (const auto& r : s.rows) {
    std::snprintf(buf, sizeof buf, "%-8s %10s %4zu %9.2f ± %6.2f %9.2f ± %6.2f %10.5f ± %8.5f %8s %8s %8s\n",
                  r.controller.c_str(), format_value(r.value).c_str(), r.runs, r.throughput.mean,
                  r.throughput.stddev, r.time_to_goal.mean, r.time_to_goal.stddev, r.fuel.mean, r.fuel.stddev,
                  r.controller == "gameopt" ? "" : pct(r.throughput_gain).c_str(),
                  r.controller == "gameopt" ? "" : pct(r.ttg_reduction).c_str(),
                  r.controller == "gameopt" ? "" : pct(r.fuel_reduction).c_str());
    os << buf;
  }
  return os.str();
}

}  // namespace crossflow
