#pragma once
// Core value types shared by every crossflow module: vehicle state,
// intersection geometry, scenario configuration and run metrics.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace crossflow {

inline constexpr int kNumArms = 4;
inline constexpr int kNumIntentions = 3;

enum class Intention : int { Right = 0, Straight = 1, Left = 2 };

enum class Phase : int { Approaching = 0, Crossing = 1, Departed = 2 };

enum class ControllerKind : int { GameOpt = 0, FifoAuction = 1, TrafficLight = 2 };

inline std::string_view to_string(Intention i) {
  switch (i) {
    case Intention::Right: return "right";
    case Intention::Straight: return "straight";
    case Intention::Left: return "left";
  }
  return "?";
}

inline std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::Approaching: return "approaching";
    case Phase::Crossing: return "crossing";
    case Phase::Departed: return "departed";
  }
  return "?";
}

inline std::string_view to_string(ControllerKind c) {
  switch (c) {
    case ControllerKind::GameOpt: return "gameopt";
    case ControllerKind::FifoAuction: return "fifo";
    case ControllerKind::TrafficLight: return "light";
  }
  return "?";
}

inline std::optional<ControllerKind> parse_controller(std::string_view name) {
  if (name == "gameopt" || name == "GameOpt") return ControllerKind::GameOpt;
  if (name == "fifo" || name == "FifoAuction") return ControllerKind::FifoAuction;
  if (name == "light" || name == "TrafficLight") return ControllerKind::TrafficLight;
  return std::nullopt;
}

using VehicleId = std::uint64_t;

/// Per-vehicle state: the kinematic/auction state vector plus the
/// simulation bookkeeping needed to move a vehicle through the phases.
struct VehicleState {
  VehicleId id = 0;
  int arm = 0;
  int lane = 0;
  Intention intention = Intention::Straight;
  double s = 0.0;  ///< distance to the conflict-zone entry line [m]
  double v = 0.0;  ///< speed [m/s]
  double length = 5.0;
  double a_max = 3.0;
  double a_min = -5.0;
  double bid = 0.0;   ///< effective bid after waiting reward and overflow
  double zeta = 0.0;  ///< private priority value
  double wait_time = 0.0;
  double spawn_time = 0.0;
  Phase phase = Phase::Approaching;
  double exit_time = 0.0;  ///< meaningful once Crossing

  // Bookkeeping.
  bool granted = false;        ///< holds a conflict-zone reservation
  double zone_distance = 0.0;  ///< distance travelled inside the conflict zone
  double cross_time = -1.0;
  double depart_time = -1.0;
  double fuel = 0.0;
};

struct TurnPathLengths {
  double right = 12.0;
  double straight = 25.0;
  double left = 32.0;

  double operator[](Intention i) const {
    switch (i) {
      case Intention::Right: return right;
      case Intention::Straight: return straight;
      case Intention::Left: return left;
    }
    return straight;
  }

  bool operator==(const TurnPathLengths&) const = default;
};

/// Geometry and safety margins of the four-arm intersection.
struct IntersectionSpec {
  double control_zone_length = 150.0;
  double speed_limit = 20.0;
  int lanes_per_arm = 3;
  /// lane index -> intention served by that lane
  std::vector<Intention> lane_intentions{Intention::Right, Intention::Straight,
                                         Intention::Left};
  double msr = 2.0;
  double msl = 25.0;
  TurnPathLengths turn_path_length{};

  /// First lane serving `i`, or -1 when no lane does.
  int lane_for(Intention i) const {
    for (int l = 0; l < static_cast<int>(lane_intentions.size()); ++l) {
      if (lane_intentions[static_cast<std::size_t>(l)] == i) return l;
    }
    return -1;
  }

  bool operator==(const IntersectionSpec&) const = default;
};

struct VehicleTemplate {
  double length = 5.0;
  double a_max = 3.0;
  double a_min = -5.0;

  bool operator==(const VehicleTemplate&) const = default;
};

struct TrafficLightSettings {
  double green = 15.0;
  double clearance = 3.0;

  bool operator==(const TrafficLightSettings&) const = default;
};

struct ScenarioConfig {
  std::array<double, kNumArms> inflow_per_arm{1250.0, 1250.0, 1250.0, 1250.0};
  std::array<double, kNumIntentions> intention_split{0.25, 0.5, 0.25};
  double duration = 600.0;
  double dt = 0.1;
  double lambda = 0.7;
  /// Auction constant; unset means 2 L_c / v_bar + 15 s.
  std::optional<double> c_const;
  double beta_wait = 0.05;
  std::uint64_t seed = 0;
  ControllerKind controller = ControllerKind::GameOpt;
  VehicleTemplate vehicle_template{};
  IntersectionSpec intersection{};
  TrafficLightSettings traffic_light{};

  double total_inflow() const {
    double t = 0.0;
    for (double f : inflow_per_arm) t += f;
    return t;
  }

  double effective_c() const {
    return c_const.value_or(2.0 * intersection.control_zone_length /
                                intersection.speed_limit +
                            15.0);
  }

  bool operator==(const ScenarioConfig&) const = default;
};

struct LatencyStats {
  double mean = 0.0;
  double stddev = 0.0;
  double max = 0.0;
};

struct MetricsReport {
  double throughput = 0.0;         ///< departed vehicles per minute
  double mean_time_to_goal = 0.0;  ///< over departed vehicles [s]
  double total_fuel = 0.0;         ///< all vehicles, liters-equivalent
  double mean_fuel_per_vehicle = 0.0;  ///< over departed vehicles
  LatencyStats solver_latency{};   ///< wall-clock ms per control cycle
  std::uint64_t safety_violations = 0;

  std::uint64_t spawned = 0;
  std::uint64_t departed = 0;
  std::uint64_t in_zone = 0;
  std::uint64_t queued = 0;
  std::uint64_t cycles = 0;
  std::uint64_t fallback_cycles = 0;
  std::uint64_t compliance_failures = 0;
  std::uint64_t max_in_zone = 0;
};

struct ConfigError {
  std::string field;
  std::string reason;
};

/// Returns one entry per violated invariant; empty means valid.
inline std::vector<ConfigError> validate_config(const ScenarioConfig& cfg) {
  std::vector<ConfigError> errs;
  auto bad = [&](std::string f, std::string r) {
    errs.push_back({std::move(f), std::move(r)});
  };
  auto finite = [](double x) { return std::isfinite(x); };

  if (!finite(cfg.dt) || cfg.dt <= 0.0) bad("dt", "must be > 0");
  if (!finite(cfg.duration) || cfg.duration < 0.0)
    bad("duration", "must be >= 0");
  if (!finite(cfg.lambda) || cfg.lambda < 0.0 || cfg.lambda > 1.0)
    bad("lambda", "out of [0,1]");
  for (std::size_t a = 0; a < cfg.inflow_per_arm.size(); ++a) {
    if (!finite(cfg.inflow_per_arm[a]) || cfg.inflow_per_arm[a] < 0.0)
      bad("inflow_per_arm[" + std::to_string(a) + "]", "must be >= 0");
  }
  double split_sum = 0.0;
  bool split_neg = false;
  for (double p : cfg.intention_split) {
    split_sum += p;
    if (!finite(p) || p < 0.0) split_neg = true;
  }
  if (split_neg) bad("intention_split", "probabilities must be >= 0");
  if (!(std::abs(split_sum - 1.0) <= 1e-9)) bad("intention_split", "sum != 1");
  if (cfg.c_const && (!finite(*cfg.c_const) || *cfg.c_const <= 0.0))
    bad("c_const", "must be > 0");
  if (!finite(cfg.beta_wait) || cfg.beta_wait < 0.0)
    bad("beta_wait", "must be >= 0");

  const auto& vt = cfg.vehicle_template;
  if (!(vt.length > 0.0)) bad("vehicle_template.length", "must be > 0");
  if (!(vt.a_max > 0.0)) bad("vehicle_template.a_max", "must be > 0");
  if (!(vt.a_min < 0.0)) bad("vehicle_template.a_min", "must be < 0");

  const auto& is = cfg.intersection;
  if (!(is.control_zone_length > 0.0))
    bad("intersection.control_zone_length", "must be > 0");
  if (!(is.speed_limit > 0.0)) bad("intersection.speed_limit", "must be > 0");
  if (!(is.msr > 0.0)) bad("intersection.msr", "must be > 0");
  if (!(is.msl > 0.0)) bad("intersection.msl", "must be > 0");
  if (is.lanes_per_arm <= 0 ||
      static_cast<int>(is.lane_intentions.size()) != is.lanes_per_arm)
    bad("intersection.lanes_per_arm", "must equal size of lane_intentions");
  for (int i = 0; i < kNumIntentions; ++i) {
    if (cfg.intention_split[static_cast<std::size_t>(i)] > 0.0 &&
        is.lane_for(static_cast<Intention>(i)) < 0)
      bad("intersection.lane_intentions",
          std::string("no lane serves intention ") +
              std::string(to_string(static_cast<Intention>(i))));
  }
  const auto& tp = is.turn_path_length;
  if (!(tp.right > 0.0) || !(tp.straight > 0.0) || !(tp.left > 0.0))
    bad("intersection.turn_path_length", "must be > 0");
  if (tp.straight < is.msl)
    bad("intersection.turn_path_length.straight", "must be >= msl");

  if (!(cfg.traffic_light.green > 0.0)) bad("traffic_light.green", "must be > 0");
  if (!(cfg.traffic_light.clearance >= 0.0))
    bad("traffic_light.clearance", "must be >= 0");
  return errs;
}

}  // namespace crossflow
