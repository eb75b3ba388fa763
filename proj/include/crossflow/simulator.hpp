#pragma once
// Discrete-time intersection kernel. One cycle:
//   spawn_step -> controller (auction, reservations, QP) -> step -> audit
//
// Conflict-zone access is reserved per vehicle. A reservation is handed out
// in sequence order to the first unreserved vehicle of a lane once it nears
// its braking point, provided no conflicting group holds one; it is released
// when the vehicle's rear leaves the zone. Unreserved vehicles are planned
// with a stop-line hold, so only reserved vehicles ever enter the zone.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "crossflow/auction.hpp"
#include "crossflow/config_io.hpp"
#include "crossflow/conflict.hpp"
#include "crossflow/domain.hpp"
#include "crossflow/planner.hpp"
#include "crossflow/qp.hpp"

namespace crossflow {

// ---------------------------------------------------------------------------
// Fuel proxy

struct FuelModel {
  double idle = 1.67e-4;  ///< [L/s]
  double c1 = 1.2e-5;
  double c2 = 2.0e-7;
  double c3 = 1.1e-4;
};

/// Liters burnt over dt at speed v and acceleration a.
inline double fuel_step(double v, double a, double dt, const FuelModel& m = {}) {
  const double rate = std::max(m.idle, m.c1 * v + m.c2 * v * v * v + m.c3 * std::max(a, 0.0) * v);
  return rate * dt;
}

// ---------------------------------------------------------------------------
// Traffic light

struct TrafficLightPhase {
  GroupSet permitted;
  double green = 15.0;
  double clearance = 3.0;
};

struct LightState {
  std::size_t phase = 0;
  bool clearance = false;
  double green_end = 0.0;  ///< absolute time the current green ends
};

class TrafficLightPhaseTable {
 public:
  TrafficLightPhaseTable() = default;
  explicit TrafficLightPhaseTable(std::vector<TrafficLightPhase> phases)
      : phases_(std::move(phases)) {
    if (phases_.empty()) throw std::invalid_argument("phase table is empty");
    for (std::size_t k = 0; k < phases_.size(); ++k) {
      const auto& ph = phases_[k];
      if (!(ph.green > 0.0) || !(ph.clearance >= 0.0))
        throw std::invalid_argument("phase " + std::to_string(k) + ": bad timing");
      for (int a = 0; a < kNumGroups; ++a) {
        for (int b = a + 1; b < kNumGroups; ++b) {
          if (ph.permitted.test(static_cast<std::size_t>(a)) &&
              ph.permitted.test(static_cast<std::size_t>(b)) &&
              conflicts(LaneGroup::from_index(a), LaneGroup::from_index(b)))
            throw std::invalid_argument("phase " + std::to_string(k) + " permits conflicting groups " +
                                        LaneGroup::from_index(a).label() + " and " +
                                        LaneGroup::from_index(b).label());
        }
      }
    }
  }

  const std::vector<TrafficLightPhase>& phases() const { return phases_; }

  double cycle_length() const {
    double c = 0.0;
    for (const auto& p : phases_) c += p.green + p.clearance;
    return c;
  }

  LightState state_at(double t) const {
    const double c = cycle_length();
    const double base = std::floor(t / c) * c;
    double start = base;
    for (std::size_t k = 0; k < phases_.size(); ++k) {
      const double g_end = start + phases_[k].green;
      const double end = g_end + phases_[k].clearance;
      if (t < end || k + 1 == phases_.size()) return {k, t >= g_end, g_end};
      start = end;
    }
    return {};
  }

 private:
  std::vector<TrafficLightPhase> phases_;
};

/// One phase per arm: that arm's straight and left groups plus every right
/// turn (right turns never conflict).
inline TrafficLightPhaseTable default_phase_table(const TrafficLightSettings& s) {
  std::vector<TrafficLightPhase> phases;
  for (int arm = 0; arm < kNumArms; ++arm) {
    TrafficLightPhase ph;
    ph.green = s.green;
    ph.clearance = s.clearance;
    ph.permitted.set(static_cast<std::size_t>(LaneGroup{arm, Intention::Straight}.index()));
    ph.permitted.set(static_cast<std::size_t>(LaneGroup{arm, Intention::Left}.index()));
    for (int a = 0; a < kNumArms; ++a)
      ph.permitted.set(static_cast<std::size_t>(LaneGroup{a, Intention::Right}.index()));
    phases.push_back(ph);
  }
  return TrafficLightPhaseTable(std::move(phases));
}

// ---------------------------------------------------------------------------
// Simulation

struct SimOptions {
  /// A lane's first unreserved vehicle asks for a reservation once it is
  /// within this distance [m] of the point where it must start braking.
  double reservation_horizon = 3.0;
  /// Emit crossing-order rows for the auction controllers.
  bool lateral_rows = true;
  bool record_bids = false;
  /// Cycle whose QP is captured (see Simulator::captured_qp); -1 = none.
  std::int64_t capture_qp_cycle = -1;
};

struct CycleRecord {
  double time = 0.0;
  std::size_t n_in_zone = 0;  ///< approaching + crossing
  std::size_t n_approaching = 0;
  std::size_t n_crossing = 0;
  std::string status;
  bool fallback = false;
  std::size_t rows = 0;
  std::size_t lateral_rows = 0;
  std::size_t iterations = 0;
};

struct BidLogRow {
  std::uint64_t cycle = 0;
  double time = 0.0;
  BidRecord rec;
};

struct SafetyEvent {
  double time = 0.0;
  std::string kind;  ///< "gap", "conflict", "bounds"
  VehicleId a = 0;
  VehicleId b = 0;
  double value = 0.0;
};

struct PendingVehicle {
  VehicleId id = 0;
  Intention intention = Intention::Straight;
  double arrival_time = 0.0;
};

/// Totals that are not part of MetricsReport but are useful for audits.
struct SimCounters {
  std::uint64_t sequence_failures = 0;
  std::uint64_t gap_failures = 0;
  std::uint64_t checked_pairs = 0;
  std::uint64_t negative_coefficients = 0;
  std::uint64_t dropped_lateral = 0;
  std::uint64_t stop_hold_breaches = 0;
  std::uint64_t unreserved_entries = 0;
  std::uint64_t clamp_warnings = 0;
  std::uint64_t overflow_transfers = 0;
  std::uint64_t conservation_errors = 0;
  std::uint64_t optimal_cycles = 0;
};

inline double travel_time(double distance, double v, double a, double v_max) {
  // accelerate at a up to v_max, then cruise
  if (distance <= 0.0) return 0.0;
  v = std::min(v, v_max);
  const double t_acc = (v_max - v) / a;
  const double d_acc = (v + v_max) / 2.0 * t_acc;
  if (d_acc >= distance) return (-v + std::sqrt(v * v + 2.0 * a * distance)) / a;
  return t_acc + (distance - d_acc) / v_max;
}

class Simulator {
 public:
  explicit Simulator(ScenarioConfig cfg, SimOptions opt = {})
      : cfg_(std::move(cfg)), opt_(opt), rng_(cfg_.seed) {
    const auto errs = validate_config(cfg_);
    if (!errs.empty())
      throw std::invalid_argument("invalid config: " + errs.front().field + " " + errs.front().reason);
    ps_ = planner_settings(cfg_);
    light_ = default_phase_table(cfg_.traffic_light);
    queues_.assign(static_cast<std::size_t>(kNumArms * cfg_.intersection.lanes_per_arm), {});
    total_cycles_ = static_cast<std::uint64_t>(std::llround(cfg_.duration / cfg_.dt));
  }

  const ScenarioConfig& config() const { return cfg_; }
  double clock() const { return static_cast<double>(cycle_) * cfg_.dt; }
  std::uint64_t cycle() const { return cycle_; }
  bool done() const { return cycle_ >= total_cycles_; }
  const std::vector<VehicleState>& active() const { return active_; }
  const std::vector<VehicleState>& departed() const { return departed_; }
  const std::vector<CycleRecord>& cycle_log() const { return cycles_; }
  const std::vector<double>& latencies_ms() const { return latency_ms_; }
  const std::vector<BidLogRow>& bid_log() const { return bids_; }
  const std::vector<SafetyEvent>& safety_events() const { return safety_; }
  const std::vector<FallbackEvent>& fallback_events() const { return fallbacks_; }
  const SimCounters& counters() const { return counters_; }
  const std::optional<qp::QpProblem>& captured_qp() const { return captured_qp_; }
  std::uint64_t spawned() const { return spawned_; }
  std::size_t queued() const {
    std::size_t q = 0;
    for (const auto& dq : queues_) q += dq.size();
    return q;
  }
  const TrafficLightPhaseTable& light_table() const { return light_; }

  /// Inserts a vehicle directly (tests and scripted scenarios).
  VehicleState& insert(VehicleState v) {
    v.id = next_id_++;
    ++spawned_;
    active_.push_back(v);
    return active_.back();
  }

  // -- cycle pieces -------------------------------------------------------

  /// Poisson arrivals per arm (fixed arm order), then release of queued
  /// vehicles whose entry keeps the same-lane spacing.
  std::size_t spawn_step() {
    const double t = clock();
    for (int arm = 0; arm < kNumArms; ++arm) {
      const double rate = cfg_.inflow_per_arm[static_cast<std::size_t>(arm)] / 3600.0 * cfg_.dt;
      if (rate <= 0.0) continue;
      std::poisson_distribution<int> count(rate);
      const int k = count(rng_);
      for (int c = 0; c < k; ++c) {
        std::discrete_distribution<int> pick(cfg_.intention_split.begin(), cfg_.intention_split.end());
        const auto intent = static_cast<Intention>(pick(rng_));
        const int lane = cfg_.intersection.lane_for(intent);
        queue(arm, lane).push_back({next_id_++, intent, t});
        ++spawned_;
      }
    }
    std::size_t released = 0;
    for (int arm = 0; arm < kNumArms; ++arm) {
      for (int lane = 0; lane < cfg_.intersection.lanes_per_arm; ++lane) {
        auto& q = queue(arm, lane);
        if (q.empty() || !entry_clear(arm, lane)) continue;
        const auto pv = q.front();
        q.pop_front();
        VehicleState v;
        v.id = pv.id;
        v.arm = arm;
        v.lane = lane;
        v.intention = pv.intention;
        v.s = cfg_.intersection.control_zone_length;
        v.v = cfg_.intersection.speed_limit;
        v.length = cfg_.vehicle_template.length;
        v.a_max = cfg_.vehicle_template.a_max;
        v.a_min = cfg_.vehicle_template.a_min;
        v.spawn_time = t;
        v.phase = Phase::Approaching;
        active_.push_back(v);
        ++released;
      }
    }
    std::sort(active_.begin(), active_.end(),
              [](const VehicleState& a, const VehicleState& b) { return a.id < b.id; });
    return released;
  }

  /// Runs the configured controller for the current snapshot.
  PlanResult control() {
    switch (cfg_.controller) {
      case ControllerKind::GameOpt: return gameopt_controller();
      case ControllerKind::FifoAuction: return fifo_auction_controller();
      case ControllerKind::TrafficLight: return traffic_light_controller();
    }
    return {};
  }

  PlanResult gameopt_controller() {
    Snapshot snap = snapshot();
    AuctionParams params;
    params.c = cfg_.effective_c();
    params.beta_wait = cfg_.beta_wait;
    auto ptrs = snap.mutable_ptrs(active_);
    auto out = run_gameopt_auction(ptrs, snap.lanes, params);
    counters_.clamp_warnings += out.warnings.size();
    counters_.overflow_transfers += out.transfers;
    log_bids(out);
    return plan_with_sequence(snap, sequence_indices(snap, out.sequence), opt_.lateral_rows, false);
  }

  PlanResult fifo_auction_controller() {
    Snapshot snap = snapshot();
    auto ptrs = snap.mutable_ptrs(active_);
    auto out = run_fifo_auction(ptrs);
    log_bids(out);
    return plan_with_sequence(snap, sequence_indices(snap, out.sequence), opt_.lateral_rows, false);
  }

  PlanResult traffic_light_controller() {
    Snapshot snap = snapshot();
    std::vector<std::size_t> order(snap.idx.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const auto& va = active_[snap.idx[a]];
      const auto& vb = active_[snap.idx[b]];
      if (va.spawn_time != vb.spawn_time) return va.spawn_time < vb.spawn_time;
      return va.id < vb.id;
    });
    return plan_with_sequence(snap, order, false, true);
  }

  /// Applies commands: approaching vehicles follow u, crossing vehicles
  /// accelerate along their path; then the clock advances and the audit runs.
  void step(const CommandSet& cmds) {
    const double dt = cfg_.dt;
    const double v_bar = cfg_.intersection.speed_limit;
    const double t_next = static_cast<double>(cycle_ + 1) * dt;
    const auto crossing = crossing_speeds();
    for (auto& v : active_) {
      if (v.phase == Phase::Approaching) {
        const auto u_opt = cmds.find(v.id);
        if (!u_opt) throw std::logic_error("missing command for vehicle " + std::to_string(v.id));
        const double u = *u_opt;
        const auto box = velocity_bounds(v, dt, v_bar);
        if (u < box.lo - 1e-9 || u > box.hi + 1e-9) record_safety("bounds", v.id, 0, u);
        v.fuel += fuel_step((v.v + u) / 2.0, (u - v.v) / dt, dt);
        const double s_next = predict_position(v.s, v.v, u, dt);
        v.v = u;
        if (v.v < kStallSpeed) v.wait_time += dt;
        if (s_next <= 0.0) {
          v.phase = Phase::Crossing;
          v.zone_distance = -s_next;
          v.s = 0.0;
          v.cross_time = t_next;
          if (!v.granted) {
            ++counters_.unreserved_entries;
            v.granted = true;
          }
        } else {
          v.s = s_next;
        }
      } else if (v.phase == Phase::Crossing) {
        const double u = crossing[static_cast<std::size_t>(&v - active_.data())];
        v.fuel += fuel_step((v.v + u) / 2.0, (u - v.v) / dt, dt);
        v.zone_distance += dt * (v.v + u) / 2.0;
        v.v = u;
        const double path = cfg_.intersection.turn_path_length[v.intention];
        if (v.zone_distance >= path + v.length) {
          v.phase = Phase::Departed;
          v.depart_time = t_next;
          v.exit_time = t_next;
          v.granted = false;
        }
      }
    }
    ++cycle_;
    for (auto& v : active_)
      if (v.phase == Phase::Departed) departed_.push_back(v);
    active_.erase(std::remove_if(active_.begin(), active_.end(),
                                 [](const VehicleState& v) { return v.phase == Phase::Departed; }),
                  active_.end());
    audit();
  }

  /// One full cycle.
  void tick() {
    spawn_step();
    const auto t0 = std::chrono::steady_clock::now();
    auto res = control();
    const auto t1 = std::chrono::steady_clock::now();
    latency_ms_.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    CycleRecord rec;
    rec.time = clock();
    for (const auto& v : active_) {
      rec.n_approaching += v.phase == Phase::Approaching;
      rec.n_crossing += v.phase == Phase::Crossing;
    }
    rec.n_in_zone = rec.n_approaching + rec.n_crossing;
    rec.status = res.status;
    rec.fallback = res.fallback.has_value();
    rec.rows = res.rows;
    rec.lateral_rows = res.lateral_rows;
    rec.iterations = res.iterations;
    cycles_.push_back(rec);
    max_in_zone_ = std::max<std::uint64_t>(max_in_zone_, rec.n_in_zone);
    if (res.fallback) fallbacks_.push_back(*res.fallback);
    if (res.status == "optimal") {
      ++counters_.optimal_cycles;
      counters_.sequence_failures += res.compliance.sequence_failures;
      counters_.gap_failures += res.compliance.gap_failures;
      counters_.checked_pairs += res.compliance.checked_pairs;
    }
    counters_.negative_coefficients += res.negative_coefficients;
    counters_.dropped_lateral += res.dropped_lateral;
    counters_.stop_hold_breaches += res.stop_hold_breaches;
    step(res.commands);
  }

  void run_to_end() {
    while (!done()) tick();
  }

  MetricsReport metrics() const {
    MetricsReport m;
    const double minutes = cfg_.duration / 60.0;
    m.departed = departed_.size();
    m.throughput = minutes > 0.0 ? static_cast<double>(m.departed) / minutes : 0.0;
    double ttg = 0.0, fuel_departed = 0.0, fuel_all = 0.0;
    for (const auto& v : departed_) {
      ttg += v.depart_time - v.spawn_time;
      fuel_departed += v.fuel;
    }
    fuel_all = fuel_departed;
    for (const auto& v : active_) fuel_all += v.fuel;
    if (m.departed > 0) {
      m.mean_time_to_goal = ttg / static_cast<double>(m.departed);
      m.mean_fuel_per_vehicle = fuel_departed / static_cast<double>(m.departed);
    }
    m.total_fuel = fuel_all;
    if (!latency_ms_.empty()) {
      double sum = 0.0, mx = 0.0;
      for (double l : latency_ms_) {
        sum += l;
        mx = std::max(mx, l);
      }
      const double mean = sum / static_cast<double>(latency_ms_.size());
      double var = 0.0;
      for (double l : latency_ms_) var += (l - mean) * (l - mean);
      m.solver_latency = {mean, std::sqrt(var / static_cast<double>(latency_ms_.size())), mx};
    }
    m.safety_violations = safety_.size();
    m.spawned = spawned_;
    m.in_zone = active_.size();
    m.queued = queued();
    m.cycles = cycle_;
    m.fallback_cycles = fallbacks_.size();
    m.compliance_failures = counters_.sequence_failures + counters_.gap_failures;
    m.max_in_zone = max_in_zone_;
    return m;
  }

  /// VehicleState invariants for every active vehicle.
  bool state_invariants_hold() const {
    const double v_bar = cfg_.intersection.speed_limit;
    for (const auto& v : active_) {
      if (v.v < -1e-12 || v.v > v_bar + 1e-9) return false;
      if (v.s < 0.0) return false;
      if (v.bid < 0.0 || v.zeta < 0.0) return false;
      if (v.phase == Phase::Crossing && !v.granted) return false;
    }
    return true;
  }

 private:
  struct Snapshot {
    std::vector<std::size_t> idx;                 ///< approaching vehicles in active_
    std::vector<std::vector<std::size_t>> lanes;  ///< into idx, front to back
    std::vector<int> lane_key;                    ///< per lanes entry: arm * L + lane

    std::vector<VehicleState*> mutable_ptrs(std::vector<VehicleState>& all) const {
      std::vector<VehicleState*> p;
      p.reserve(idx.size());
      for (std::size_t k : idx) p.push_back(&all[k]);
      return p;
    }
  };

  std::deque<PendingVehicle>& queue(int arm, int lane) {
    return queues_[static_cast<std::size_t>(arm * cfg_.intersection.lanes_per_arm + lane)];
  }

  int lane_key(const VehicleState& v) const {
    return v.arm * cfg_.intersection.lanes_per_arm + v.lane;
  }

  // Position along the lane axis: s while approaching, minus the distance
  // travelled inside the zone afterwards.
  static double axis_position(const VehicleState& v) {
    return v.phase == Phase::Crossing ? -v.zone_distance : v.s;
  }

  bool entry_clear(int arm, int lane) const {
    const double L = cfg_.intersection.control_zone_length;
    const double v_bar = cfg_.intersection.speed_limit;
    const double b = -cfg_.vehicle_template.a_min;
    const VehicleState* last = nullptr;
    for (const auto& v : active_) {
      if (v.arm != arm || v.lane != lane) continue;
      if (!last || axis_position(v) > axis_position(*last)) last = &v;
    }
    if (!last) return true;
    const double gap = L - axis_position(*last);
    const double need = last->length + cfg_.intersection.msr +
                        std::max(0.0, stop_distance_upper(v_bar, b, cfg_.dt) -
                                          stop_distance_lower(last->v, -last->a_min));
    return gap >= need;
  }

  Snapshot snapshot() const {
    Snapshot s;
    const int lanes_total = kNumArms * cfg_.intersection.lanes_per_arm;
    std::vector<std::vector<std::size_t>> per_lane(static_cast<std::size_t>(lanes_total));
    for (std::size_t k = 0; k < active_.size(); ++k) {
      const auto& v = active_[k];
      if (v.phase != Phase::Approaching) continue;
      per_lane[static_cast<std::size_t>(lane_key(v))].push_back(s.idx.size());
      s.idx.push_back(k);
    }
    for (int key = 0; key < lanes_total; ++key) {
      auto& lane = per_lane[static_cast<std::size_t>(key)];
      if (lane.empty()) continue;
      std::sort(lane.begin(), lane.end(), [&](std::size_t a, std::size_t b) {
        return active_[s.idx[a]].s < active_[s.idx[b]].s;
      });
      s.lanes.push_back(std::move(lane));
      s.lane_key.push_back(key);
    }
    return s;
  }

  std::vector<std::size_t> sequence_indices(const Snapshot& snap, const PrioritySequence& seq) const {
    std::vector<std::size_t> order;
    order.reserve(seq.size());
    // ids are sorted in active_, and snap.idx is increasing
    for (const auto& e : seq.entries) {
      auto it = std::lower_bound(snap.idx.begin(), snap.idx.end(), e.id,
                                 [&](std::size_t k, VehicleId id) { return active_[k].id < id; });
      order.push_back(static_cast<std::size_t>(it - snap.idx.begin()));
    }
    return order;
  }

  void log_bids(const AuctionOutcome& out) {
    if (!opt_.record_bids) return;
    for (const auto& r : out.records) bids_.push_back({cycle_, clock(), r});
  }

  GroupSet held_groups() const {
    GroupSet held;
    for (const auto& v : active_)
      if (v.granted) held.set(static_cast<std::size_t>(classify(v).index()));
    return held;
  }

  /// Hands out reservations in `order` (indices into snap.idx).
  void update_reservations(const Snapshot& snap, const std::vector<std::size_t>& order,
                           bool light) {
    const double dt = cfg_.dt;
    std::vector<char> candidate(snap.idx.size(), 0);
    for (const auto& lane : snap.lanes) {
      for (std::size_t k : lane) {
        const auto& v = active_[snap.idx[k]];
        if (v.granted) continue;
        const double brake = stop_distance_upper(v.v, -v.a_min, dt);
        if (v.s - brake <= opt_.reservation_horizon + v.v * dt + ps_.stop_margin + 0.01) candidate[k] = 1;
        break;
      }
    }
    GroupSet held = held_groups();
    GroupSet blocked;
    std::optional<LightState> ls;
    if (light) ls = light_.state_at(clock());
    for (std::size_t k : order) {
      if (!candidate[k]) continue;
      auto& v = active_[snap.idx[k]];
      const auto g = classify(v);
      const auto gbit = static_cast<std::size_t>(g.index());
      if (light) {
        const auto& phase = light_.phases()[ls->phase];
        if (ls->clearance || !phase.permitted.test(gbit)) continue;
        const double dist = v.s + cfg_.intersection.turn_path_length[v.intention] + v.length;
        const double eta = clock() + travel_time(dist, v.v, v.a_max, cfg_.intersection.speed_limit);
        if (eta > ls->green_end + phase.clearance) continue;
      }
      const auto cset = conflict_set(g);
      if ((cset & held).any() || (cset & blocked).any()) {
        blocked.set(gbit);
        continue;
      }
      v.granted = true;
      held.set(gbit);
    }
  }

  /// Speeds for the next cycle of the vehicles inside the zone (indexed like
  /// active_): full acceleration up to v_bar, limited by the same-lane
  /// spacing row behind the previous vehicle of the lane.
  std::vector<double> crossing_speeds() const {
    const double dt = cfg_.dt;
    const double v_bar = cfg_.intersection.speed_limit;
    std::vector<double> u(active_.size(), 0.0);
    std::vector<std::size_t> inside;
    for (std::size_t k = 0; k < active_.size(); ++k)
      if (active_[k].phase == Phase::Crossing) inside.push_back(k);
    std::sort(inside.begin(), inside.end(), [&](std::size_t a, std::size_t b) {
      const auto& va = active_[a];
      const auto& vb = active_[b];
      if (lane_key(va) != lane_key(vb)) return lane_key(va) < lane_key(vb);
      return va.zone_distance > vb.zone_distance;
    });
    for (std::size_t n = 0; n < inside.size(); ++n) {
      const auto& f = active_[inside[n]];
      const auto box = velocity_bounds(f, dt, v_bar);
      double cap = box.hi;
      if (n > 0 && lane_key(active_[inside[n - 1]]) == lane_key(f)) {
        const auto& l = active_[inside[n - 1]];
        const double u_l = u[inside[n - 1]];
        cap = std::min(cap, u_l + (l.v - f.v) +
                                (2.0 / dt) * (l.zone_distance - f.zone_distance - l.length - cfg_.intersection.msr));
        if (ps_.braking_rows) {
          VehicleState la = l, fa = f;
          la.s = -l.zone_distance;
          fa.s = -f.zone_distance;
          const auto r = braking_row(la, fa, {u_l, u_l}, box, dt, cfg_.intersection.msr);
          cap = std::min(cap, (r.rhs - r.c_lead * u_l) / r.c_follow);
        }
      }
      u[inside[n]] = std::max(box.lo, cap);
    }
    return u;
  }

  /// Cap on the front approaching vehicle of a lane whose previous vehicle
  /// is still inside the zone.
  double zone_leader_cap(const VehicleState& f) const {
    const VehicleState* lead = nullptr;
    for (const auto& v : active_) {
      if (v.phase != Phase::Crossing || v.arm != f.arm || v.lane != f.lane) continue;
      if (!lead || v.zone_distance < lead->zone_distance) lead = &v;
    }
    if (!lead) return std::numeric_limits<double>::infinity();
    const double dt = cfg_.dt;
    const double v_bar = cfg_.intersection.speed_limit;
    const double u_l = crossing_speeds()[static_cast<std::size_t>(lead - active_.data())];
    VehicleState l = *lead;
    l.s = -lead->zone_distance;
    const auto fb = velocity_bounds(f, dt, v_bar);
    const VelocityBounds lb{u_l, u_l};
    double cap = u_l + (l.v - f.v) + (2.0 / dt) * (f.s - l.s - l.length - ps_.msr);
    if (ps_.braking_rows) {
      const auto r = braking_row(l, f, lb, fb, dt, ps_.msr);
      cap = std::min(cap, (r.rhs - r.c_lead * u_l) / r.c_follow);
    }
    return cap;
  }

  /// Crossing-order rows against conflicting vehicles already inside the
  /// zone, whose next speed is known.
  double crossing_order_cap(const VehicleState& j) const {
    double cap = std::numeric_limits<double>::infinity();
    std::vector<double> speeds;
    for (std::size_t k = 0; k < active_.size(); ++k) {
      const auto& i = active_[k];
      if (i.phase != Phase::Crossing || !conflicts(classify(i), classify(j))) continue;
      if (speeds.empty()) speeds = crossing_speeds();
      VehicleState iv = i;
      iv.s = -i.zone_distance;
      const auto lr = lateral_row(iv, j, cfg_.dt, cfg_.intersection.msl);
      if (lr.negative_coefficient || lr.row.c_follow <= 0.0) continue;
      cap = std::min(cap, -lr.row.c_lead * speeds[k] / lr.row.c_follow);
    }
    return cap;
  }

  PlanResult plan_with_sequence(const Snapshot& snap, const std::vector<std::size_t>& order,
                                bool lateral, bool light) {
    update_reservations(snap, order, light);
    PlanInput in;
    in.cycle = cycle_;
    in.time = clock();
    in.lateral = lateral;
    in.order = order;
    in.lanes = snap.lanes;
    in.vehicles.resize(snap.idx.size());
    for (std::size_t k = 0; k < snap.idx.size(); ++k) {
      const auto& v = active_[snap.idx[k]];
      in.vehicles[k].state = &v;
      in.vehicles[k].hold = !v.granted;
    }
    for (const auto& lane : snap.lanes)
      in.vehicles[lane.front()].hi_cap = zone_leader_cap(active_[snap.idx[lane.front()]]);
    if (lateral) {
      for (const auto& lane : snap.lanes) {
        for (std::size_t k : lane) {
          if (!in.vehicles[k].hold) continue;
          auto& pv = in.vehicles[k];
          pv.hi_cap = std::min(pv.hi_cap, crossing_order_cap(*pv.state));
          break;
        }
      }
    }
    BuiltQp built;
    auto res = plan_cycle(in, ps_, &built);
    if (opt_.capture_qp_cycle >= 0 && static_cast<std::uint64_t>(opt_.capture_qp_cycle) == cycle_)
      captured_qp_ = built.problem;
    return res;
  }

  void record_safety(const char* kind, VehicleId a, VehicleId b, double value) {
    safety_.push_back({clock(), kind, a, b, value});
  }

  void audit() {
    // (a) same-lane spacing, including vehicles already inside the zone
    const int lanes_total = kNumArms * cfg_.intersection.lanes_per_arm;
    std::vector<std::vector<const VehicleState*>> per_lane(static_cast<std::size_t>(lanes_total));
    for (const auto& v : active_) per_lane[static_cast<std::size_t>(lane_key(v))].push_back(&v);
    for (auto& lane : per_lane) {
      std::sort(lane.begin(), lane.end(), [](const VehicleState* a, const VehicleState* b) {
        return axis_position(*a) < axis_position(*b);
      });
      for (std::size_t k = 0; k + 1 < lane.size(); ++k) {
        const double gap = axis_position(*lane[k + 1]) - axis_position(*lane[k]);
        if (gap < lane[k]->length + cfg_.intersection.msr - 0.01)
          record_safety("gap", lane[k]->id, lane[k + 1]->id, gap);
      }
    }
    // (b) conflicting groups inside the zone together
    std::vector<const VehicleState*> crossing;
    for (const auto& v : active_)
      if (v.phase == Phase::Crossing) crossing.push_back(&v);
    for (std::size_t a = 0; a < crossing.size(); ++a)
      for (std::size_t b = a + 1; b < crossing.size(); ++b)
        if (conflicts(classify(*crossing[a]), classify(*crossing[b])))
          record_safety("conflict", crossing[a]->id, crossing[b]->id, 0.0);
    // flow conservation
    if (spawned_ != departed_.size() + active_.size() + queued()) ++counters_.conservation_errors;
#ifndef NDEBUG
    if (!state_invariants_hold()) throw std::logic_error("vehicle state invariant violated");
#endif
  }

  ScenarioConfig cfg_;
  SimOptions opt_;
  PlannerSettings ps_;
  TrafficLightPhaseTable light_;
  std::mt19937_64 rng_;
  std::vector<std::deque<PendingVehicle>> queues_;
  std::vector<VehicleState> active_;
  std::vector<VehicleState> departed_;
  std::vector<CycleRecord> cycles_;
  std::vector<double> latency_ms_;
  std::vector<BidLogRow> bids_;
  std::vector<SafetyEvent> safety_;
  std::vector<FallbackEvent> fallbacks_;
  SimCounters counters_;
  std::optional<qp::QpProblem> captured_qp_;
  std::uint64_t cycle_ = 0;
  std::uint64_t total_cycles_ = 0;
  std::uint64_t next_id_ = 0;
  std::uint64_t spawned_ = 0;
  std::uint64_t max_in_zone_ = 0;
};

// ---------------------------------------------------------------------------
// Outputs

namespace detail {

inline std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

inline std::string fmt_time(double t) { return t < 0.0 ? std::string() : fmt("%.3f", t); }

}  // namespace detail

inline std::string vehicles_csv(const Simulator& sim) {
  std::vector<const VehicleState*> all;
  for (const auto& v : sim.departed()) all.push_back(&v);
  for (const auto& v : sim.active()) all.push_back(&v);
  std::sort(all.begin(), all.end(), [](auto* a, auto* b) { return a->id < b->id; });
  std::string out = "id,arm,lane,intention,spawn_time,cross_time,depart_time,fuel\r\n";
  for (const auto* v : all) {
    out += std::to_string(v->id) + ',' + std::to_string(v->arm) + ',' + std::to_string(v->lane) + ',' +
           std::string(to_string(v->intention)) + ',' + detail::fmt_time(v->spawn_time) + ',' +
           detail::fmt_time(v->cross_time) + ',' + detail::fmt_time(v->depart_time) + ',' +
           detail::fmt("%.9e", v->fuel) + "\r\n";
  }
  return out;
}

inline std::string cycles_csv(const Simulator& sim) {
  std::string out = "time,n_in_zone,n_approaching,n_crossing,solver_status,fallback,rows,lateral_rows,iterations\r\n";
  for (const auto& c : sim.cycle_log()) {
    out += detail::fmt("%.3f", c.time) + ',' + std::to_string(c.n_in_zone) + ',' +
           std::to_string(c.n_approaching) + ',' + std::to_string(c.n_crossing) + ',' + c.status + ',' +
           (c.fallback ? "1" : "0") + ',' + std::to_string(c.rows) + ',' + std::to_string(c.lateral_rows) +
           ',' + std::to_string(c.iterations) + "\r\n";
  }
  return out;
}

inline std::string timing_csv(const Simulator& sim) {
  std::string out = "cycle,latency_us\r\n";
  const auto& l = sim.latencies_ms();
  for (std::size_t k = 0; k < l.size(); ++k)
    out += std::to_string(k) + ',' + detail::fmt("%.1f", l[k] * 1000.0) + "\r\n";
  return out;
}

inline std::string bids_csv(const Simulator& sim) {
  std::string out = "cycle,time,id,zeta,weight,bid,rank\r\n";
  for (const auto& b : sim.bid_log()) {
    out += std::to_string(b.cycle) + ',' + detail::fmt("%.3f", b.time) + ',' + std::to_string(b.rec.id) +
           ',' + detail::fmt("%.9g", b.rec.zeta) + ',' + detail::fmt("%.9g", b.rec.weight) + ',' +
           detail::fmt("%.9g", b.rec.bid) + ',' + std::to_string(b.rec.rank) + "\r\n";
  }
  return out;
}

inline nlohmann::json metrics_json(const MetricsReport& m) {
  return {{"throughput", m.throughput},
          {"mean_time_to_goal", m.mean_time_to_goal},
          {"total_fuel", m.total_fuel},
          {"mean_fuel_per_vehicle", m.mean_fuel_per_vehicle},
          {"solver_latency", {{"mean", m.solver_latency.mean},
                              {"stddev", m.solver_latency.stddev},
                              {"max", m.solver_latency.max}}},
          {"safety_violations", m.safety_violations},
          {"spawned", m.spawned},
          {"departed", m.departed},
          {"in_zone", m.in_zone},
          {"queued", m.queued},
          {"cycles", m.cycles},
          {"fallback_cycles", m.fallback_cycles},
          {"compliance_failures", m.compliance_failures},
          {"max_in_zone", m.max_in_zone}};
}

inline MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport m;
  m.throughput = j.at("throughput").get<double>();
  m.mean_time_to_goal = j.at("mean_time_to_goal").get<double>();
  m.total_fuel = j.at("total_fuel").get<double>();
  m.mean_fuel_per_vehicle = j.value("mean_fuel_per_vehicle", 0.0);
  const auto& l = j.at("solver_latency");
  m.solver_latency = {l.at("mean").get<double>(), l.at("stddev").get<double>(), l.at("max").get<double>()};
  m.safety_violations = j.at("safety_violations").get<std::uint64_t>();
  m.spawned = j.value("spawned", std::uint64_t{0});
  m.departed = j.value("departed", std::uint64_t{0});
  m.in_zone = j.value("in_zone", std::uint64_t{0});
  m.queued = j.value("queued", std::uint64_t{0});
  m.cycles = j.value("cycles", std::uint64_t{0});
  m.fallback_cycles = j.value("fallback_cycles", std::uint64_t{0});
  m.compliance_failures = j.value("compliance_failures", std::uint64_t{0});
  m.max_in_zone = j.value("max_in_zone", std::uint64_t{0});
  return m;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

/// Plan-time statistics over the cycles with at least `min_vehicles`
/// vehicles in the control zone. p100 is the max.
struct BusyLatency {
  std::uint64_t cycles = 0;
  double mean_ms = 0.0;
  double max_ms = 0.0;
};

inline BusyLatency busy_latency(const Simulator& sim, std::size_t min_vehicles) {
  BusyLatency b;
  const auto& log = sim.cycle_log();
  const auto& lat = sim.latencies_ms();
  double sum = 0.0;
  for (std::size_t k = 0; k < log.size() && k < lat.size(); ++k) {
    if (log[k].n_in_zone < min_vehicles) continue;
    ++b.cycles;
    sum += lat[k];
    b.max_ms = std::max(b.max_ms, lat[k]);
  }
  if (b.cycles > 0) b.mean_ms = sum / static_cast<double>(b.cycles);
  return b;
}

inline constexpr std::size_t kBusyZoneVehicles = 50;

struct RunResult {
  MetricsReport metrics;
  SimCounters counters;
  std::vector<SafetyEvent> safety_events;
  BusyLatency busy{};  ///< cycles with >= kBusyZoneVehicles in the zone
};

/// Runs one scenario to the end. When `out_dir` is given, writes
/// vehicles.csv, cycles.csv, timing.csv, metrics.json (and bids.csv when
/// bids are recorded).
inline RunResult run(const ScenarioConfig& cfg, const std::optional<std::filesystem::path>& out_dir = {},
                     SimOptions opt = {}) {
  Simulator sim(cfg, opt);
  sim.run_to_end();
  RunResult r{sim.metrics(), sim.counters(), sim.safety_events(), busy_latency(sim, kBusyZoneVehicles)};
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    write_text(*out_dir / "vehicles.csv", vehicles_csv(sim));
    write_text(*out_dir / "cycles.csv", cycles_csv(sim));
    write_text(*out_dir / "timing.csv", timing_csv(sim));
    write_text(*out_dir / "metrics.json", metrics_json(r.metrics).dump(2) + "\n");
    if (opt.record_bids) write_text(*out_dir / "bids.csv", bids_csv(sim));
  }
  return r;
}

}  // namespace crossflow
