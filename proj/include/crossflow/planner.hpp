#pragma once
// Per-cycle velocity planning. For the vehicles still approaching the
// conflict zone the planner builds one QP in the command velocities u:
//
//   minimize  sum_i lambda (u_i - v_bar)^2 + (1 - lambda) (u_i - v_i)^2
//
// subject to the same-lane spacing rows, the crossing-order rows between
// conflicting lanes and the per-vehicle speed/acceleration box. Positions
// advance with the trapezoidal rule s' = s - dt (v + u) / 2.
//
// Two families of constraints are added on top of the textbook rows so the
// all-brake command is always feasible:
//   * vehicles without a conflict-zone reservation must stay able to stop
//     before the entry line (an upper bound on u);
//   * followers keep enough room to stop behind a braking leader (one extra
//     row per same-lane pair).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crossflow/conflict.hpp"
#include "crossflow/domain.hpp"
#include "crossflow/qp.hpp"

namespace crossflow {

struct PlannerSettings {
  double dt = 0.1;
  double lambda = 0.7;
  double v_bar = 20.0;
  double msr = 2.0;
  double msl = 25.0;
  double stop_margin = 0.25;  ///< [m] kept between a held vehicle and the line
  bool braking_rows = true;
  qp::SolverOptions solver{};
};

inline PlannerSettings planner_settings(const ScenarioConfig& cfg) {
  PlannerSettings p;
  p.dt = cfg.dt;
  p.lambda = cfg.lambda;
  p.v_bar = cfg.intersection.speed_limit;
  p.msr = cfg.intersection.msr;
  p.msl = cfg.intersection.msl;
  return p;
}

/// s' = s - dt (v + u) / 2
inline double predict_position(double s, double v, double u, double dt) {
  return s - dt * (v + u) / 2.0;
}

/// Upper bound on the distance needed to stop from speed u when every
/// following cycle commands maximum braking (deceleration b > 0).
inline double stop_distance_upper(double u, double b, double dt) {
  return u * u / (2.0 * b) + u * dt / 2.0;
}

/// Lower bound on the same distance (continuous braking).
inline double stop_distance_lower(double u, double b) { return u * u / (2.0 * b); }

/// Largest command u that keeps s' >= stop_distance_upper(u) + margin.
/// Returns a negative value when no u >= 0 qualifies.
inline double stop_hold_bound(double s, double v, double b, double dt, double margin) {
  // u^2/(2b) + dt u + (dt v / 2 + margin - s) <= 0
  const double c = dt * v / 2.0 + margin - s;
  const double disc = dt * dt - 2.0 * c / b;
  if (disc < 0.0) return -1.0;
  return b * (-dt + std::sqrt(disc));
}

struct VelocityBounds {
  double lo = 0.0;
  double hi = 0.0;
};

/// 0 <= u <= v_bar and a_min dt <= u - v <= a_max dt.
inline VelocityBounds velocity_bounds(double v, double a_min, double a_max, double dt,
                                      double v_bar) {
  VelocityBounds b{std::max(0.0, v + a_min * dt), std::min(v_bar, v + a_max * dt)};
  if (b.lo > b.hi) b.lo = b.hi;  // only when v > v_bar, which the kernel prevents
  return b;
}

inline VelocityBounds velocity_bounds(const VehicleState& s, double dt, double v_bar) {
  return velocity_bounds(s.v, s.a_min, s.a_max, dt, v_bar);
}

enum class RowKind : int { Longitudinal = 0, BrakingSafe = 1, Lateral = 2 };

inline std::string_view to_string(RowKind k) {
  switch (k) {
    case RowKind::Longitudinal: return "longitudinal";
    case RowKind::BrakingSafe: return "braking";
    case RowKind::Lateral: return "lateral";
  }
  return "?";
}

/// c_follow * u_follow + c_lead * u_lead <= rhs
struct PairRow {
  RowKind kind = RowKind::Longitudinal;
  std::size_t lead = 0;
  std::size_t follow = 0;
  double c_lead = 0.0;
  double c_follow = 0.0;
  double rhs = 0.0;

  double lhs(double u_lead, double u_follow) const {
    return c_follow * u_follow + c_lead * u_lead;
  }
};

struct LongitudinalRows {
  std::vector<PairRow> rows;
  bool infeasible_spacing = false;
};

/// One row per consecutive pair of a lane ordered front (smallest s) to
/// back: u_j - u_{j+1} >= (v_{j+1} - v_j) + (2/dt)(s_j - s_{j+1} + l_j + M_sr).
/// Row indices refer to positions in `lane`.
inline LongitudinalRows longitudinal_rows(const std::vector<const VehicleState*>& lane,
                                          double dt, double msr) {
  LongitudinalRows out;
  for (std::size_t k = 0; k + 1 < lane.size(); ++k) {
    const auto& j = *lane[k];
    const auto& f = *lane[k + 1];
    if (f.s - j.s < j.length + msr - 1e-9) out.infeasible_spacing = true;
    PairRow r;
    r.kind = RowKind::Longitudinal;
    r.lead = k;
    r.follow = k + 1;
    r.c_follow = 1.0;
    r.c_lead = -1.0;
    r.rhs = (j.v - f.v) + (2.0 / dt) * (f.s - j.s - j.length - msr);
    out.rows.push_back(r);
  }
  return out;
}

/// Keeps room for the follower to stop behind a leader that brakes at full
/// force from the next cycle on: gap' >= l + M_sr + D_up(u_f) - D_low(u_l),
/// with D_up replaced by its chord over the follower's box and D_low by its
/// tangent at the leader's lower bound.
inline PairRow braking_row(const VehicleState& lead, const VehicleState& follow,
                           VelocityBounds lb, VelocityBounds fb, double dt, double msr) {
  const double bf = -follow.a_min, bl = -lead.a_min;
  const double kf = (fb.hi + fb.lo) / (2.0 * bf) + dt / 2.0;
  const double df_lo = stop_distance_upper(fb.lo, bf, dt);
  const double kl = lb.lo / bl;
  const double dl_lo = stop_distance_lower(lb.lo, bl);
  PairRow r;
  r.kind = RowKind::BrakingSafe;
  r.c_follow = dt / 2.0 + kf;
  r.c_lead = -(dt / 2.0 + kl);
  r.rhs = follow.s - lead.s - dt / 2.0 * follow.v + dt / 2.0 * lead.v - lead.length - msr -
          (df_lo - kf * fb.lo) + (dl_lo - kl * lb.lo);
  return r;
}

struct LateralRow {
  PairRow row;
  bool negative_coefficient = false;
};

/// Crossing-order row for i ahead of j in the sequence:
/// u_j (s_i - dt/2 v_i + l_i + M_sl) <= u_i (s_j - dt/2 v_j).
inline LateralRow lateral_row(const VehicleState& i, const VehicleState& j, double dt,
                              double msl) {
  LateralRow out;
  const double a = i.s - dt / 2.0 * i.v + i.length + msl;
  const double b = j.s - dt / 2.0 * j.v;
  out.negative_coefficient = b <= 0.0;
  out.row.kind = RowKind::Lateral;
  out.row.c_follow = a;
  out.row.c_lead = -b;
  out.row.rhs = 0.0;
  return out;
}

struct LateralRows {
  std::vector<PairRow> rows;  ///< lead/follow index into `sequence`
  std::size_t negative_coefficients = 0;
};

/// Rows for every ordered conflicting pair of `sequence` (priority order).
inline LateralRows lateral_rows(const std::vector<const VehicleState*>& sequence, double dt,
                                double msl) {
  LateralRows out;
  for (std::size_t a = 0; a < sequence.size(); ++a) {
    for (std::size_t b = a + 1; b < sequence.size(); ++b) {
      if (!conflicts(classify(*sequence[a]), classify(*sequence[b]))) continue;
      auto lr = lateral_row(*sequence[a], *sequence[b], dt, msl);
      if (lr.negative_coefficient) {
        ++out.negative_coefficients;
        continue;
      }
      lr.row.lead = a;
      lr.row.follow = b;
      out.rows.push_back(lr.row);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cycle planning

struct PlanVehicle {
  const VehicleState* state = nullptr;
  bool hold = false;  ///< no reservation: must stay able to stop at the line
  double hi_cap = std::numeric_limits<double>::infinity();  ///< extra upper bound
};

struct PlanInput {
  std::vector<PlanVehicle> vehicles;
  /// Indices into `vehicles`, one list per lane, front to back.
  std::vector<std::vector<std::size_t>> lanes;
  /// Indices into `vehicles` in sequence (priority) order.
  std::vector<std::size_t> order;
  /// Emit crossing-order rows.
  bool lateral = true;
  std::uint64_t cycle = 0;
  double time = 0.0;
};

struct BuiltQp {
  qp::QpProblem problem;
  std::vector<PairRow> rows;  ///< parallel to problem rows; indices into vehicles
  std::vector<VelocityBounds> box;  ///< acceleration box before holds and caps
  bool infeasible_spacing = false;
  std::size_t negative_coefficients = 0;
  std::size_t dropped_lateral = 0;  ///< pairs whose row would make the QP infeasible
  std::size_t stop_hold_breaches = 0;
};

namespace detail {

// Largest feasible command of every vehicle when all rows have the form
// u_follow <= increasing function of u_lead and the row graph is acyclic.
class UpperEnvelope {
 public:
  UpperEnvelope(std::size_t n, const std::vector<double>& lo, const std::vector<double>& hi)
      : lo_(lo), hi_(hi), out_(n), umax_(hi) {}

  void add_fixed(const PairRow& r) { out_[r.lead].push_back(rows_.size()), rows_.push_back(r); }

  /// Recomputes umax from scratch in topological order; false if some
  /// vehicle's envelope drops below its lower bound.
  bool recompute() {
    const std::size_t n = hi_.size();
    std::vector<std::size_t> indeg(n, 0);
    for (const auto& r : rows_) ++indeg[r.follow];
    std::vector<std::size_t> stack;
    for (std::size_t k = 0; k < n; ++k)
      if (indeg[k] == 0) stack.push_back(k);
    umax_ = hi_;
    std::size_t seen = 0;
    while (!stack.empty()) {
      const std::size_t k = stack.back();
      stack.pop_back();
      ++seen;
      for (std::size_t ri : out_[k]) {
        const auto& r = rows_[ri];
        const double cap = (r.rhs - r.c_lead * umax_[k]) / r.c_follow;
        umax_[r.follow] = std::min(umax_[r.follow], cap);
        if (--indeg[r.follow] == 0) stack.push_back(r.follow);
      }
    }
    if (seen != n) return false;
    for (std::size_t k = 0; k < n; ++k)
      if (umax_[k] < lo_[k] - 1e-9) return false;
    return true;
  }

  /// Adds r if the envelope stays above the lower bounds.
  bool try_add(const PairRow& r) {
    add_fixed(r);
    if (recompute()) return true;
    out_[r.lead].pop_back();
    rows_.pop_back();
    recompute();
    return false;
  }

 private:
  const std::vector<double>& lo_;
  const std::vector<double>& hi_;
  std::vector<std::vector<std::size_t>> out_;
  std::vector<PairRow> rows_;
  std::vector<double> umax_;
};

}  // namespace detail

inline BuiltQp build_qp(const PlanInput& in, const PlannerSettings& ps) {
  BuiltQp out;
  const std::size_t n = in.vehicles.size();
  out.problem = qp::QpProblem(n);
  out.box.resize(n);
  auto& p = out.problem;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& v = *in.vehicles[k].state;
    const auto box = velocity_bounds(v, ps.dt, ps.v_bar);
    out.box[k] = box;
    double hi = std::min(box.hi, in.vehicles[k].hi_cap);
    if (in.vehicles[k].hold) {
      const double hold =
          stop_hold_bound(v.s, v.v, -v.a_min, ps.dt, ps.stop_margin);
      if (hold < box.lo - 1e-9) ++out.stop_hold_breaches;
      hi = std::min(hi, hold);
    }
    p.h[k] = 2.0;
    p.g[k] = -2.0 * (ps.lambda * ps.v_bar + (1.0 - ps.lambda) * v.v);
    p.lo[k] = box.lo;
    p.hi[k] = std::max(box.lo, hi);
  }

  auto push = [&](const PairRow& r) {
    p.add_row({{static_cast<int>(r.follow), r.c_follow}, {static_cast<int>(r.lead), r.c_lead}},
              r.rhs);
    out.rows.push_back(r);
  };

  detail::UpperEnvelope env(n, p.lo, p.hi);
  for (const auto& lane : in.lanes) {
    std::vector<const VehicleState*> states;
    for (std::size_t k : lane) states.push_back(in.vehicles[k].state);
    auto lr = longitudinal_rows(states, ps.dt, ps.msr);
    out.infeasible_spacing = out.infeasible_spacing || lr.infeasible_spacing;
    for (auto r : lr.rows) {
      r.lead = lane[r.lead];
      r.follow = lane[r.follow];
      push(r);
      env.add_fixed(r);
      if (ps.braking_rows) {
        auto br = braking_row(*in.vehicles[r.lead].state, *in.vehicles[r.follow].state,
                              out.box[r.lead], out.box[r.follow], ps.dt, ps.msr);
        br.lead = r.lead;
        br.follow = r.follow;
        push(br);
        env.add_fixed(br);
      }
    }
  }

  if (in.lateral && !out.infeasible_spacing && env.recompute()) {
    // Participants: the first vehicle of each lane that still has to stop.
    std::vector<char> participant(n, 0);
    for (const auto& lane : in.lanes) {
      for (std::size_t k : lane) {
        if (in.vehicles[k].hold) {
          participant[k] = 1;
          break;
        }
      }
    }
    // Reservation holders cross first, whatever their current rank.
    for (std::size_t k = 0; k < n; ++k) {
      if (in.vehicles[k].hold) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (!participant[j]) continue;
        const auto& vi = *in.vehicles[k].state;
        const auto& vj = *in.vehicles[j].state;
        if (!conflicts(classify(vi), classify(vj))) continue;
        auto lr = lateral_row(vi, vj, ps.dt, ps.msl);
        if (lr.negative_coefficient) {
          ++out.negative_coefficients;
          continue;
        }
        lr.row.lead = k;
        lr.row.follow = j;
        if (env.try_add(lr.row)) push(lr.row);
        else ++out.dropped_lateral;
      }
    }
    std::vector<std::size_t> seq;
    for (std::size_t k : in.order)
      if (participant[k]) seq.push_back(k);
    std::vector<const VehicleState*> states;
    for (std::size_t k : seq) states.push_back(in.vehicles[k].state);
    auto lat = lateral_rows(states, ps.dt, ps.msl);
    out.negative_coefficients += lat.negative_coefficients;
    for (auto r : lat.rows) {
      r.lead = seq[r.lead];
      r.follow = seq[r.follow];
      if (env.try_add(r)) push(r);
      else ++out.dropped_lateral;
    }
  }
  return out;
}

struct Command {
  VehicleId id = 0;
  double u = 0.0;
};

/// Command velocity per approaching vehicle, in input order.
struct CommandSet {
  double time = 0.0;
  std::vector<Command> commands;

  std::optional<double> find(VehicleId id) const {
    for (const auto& c : commands)
      if (c.id == id) return c.u;
    return std::nullopt;
  }
};

enum class FallbackReason : int { None = 0, InfeasibleSpacing, Infeasible, IterLimit };

inline std::string_view to_string(FallbackReason r) {
  switch (r) {
    case FallbackReason::None: return "none";
    case FallbackReason::InfeasibleSpacing: return "infeasible_spacing";
    case FallbackReason::Infeasible: return "infeasible";
    case FallbackReason::IterLimit: return "iter_limit";
  }
  return "?";
}

struct FallbackEvent {
  std::uint64_t cycle = 0;
  FallbackReason reason = FallbackReason::None;
};

struct ComplianceReport {
  std::size_t gap_failures = 0;       ///< exact gap at t+1 below l + M_sr
  std::size_t sequence_failures = 0;  ///< crossing-order timing beyond epsilon
  std::size_t checked_pairs = 0;
};

struct PlanResult {
  CommandSet commands;
  std::string status = "empty";  ///< solver status, "spacing" or "empty"
  std::optional<FallbackEvent> fallback;
  std::size_t rows = 0;
  std::size_t lateral_rows = 0;
  std::size_t iterations = 0;
  double kkt_residual = 0.0;
  std::size_t negative_coefficients = 0;
  std::size_t dropped_lateral = 0;
  std::size_t stop_hold_breaches = 0;
  ComplianceReport compliance{};
};

inline constexpr double kSequenceEpsilon = 0.05;  ///< [s]
inline constexpr double kComplianceMinSpeed = 0.5;  ///< [m/s]

/// Checks the exact spacing and crossing-order conditions that the linear
/// rows stand for, given commands u (indexed like in.vehicles).
inline ComplianceReport check_compliance(const PlanInput& in, const BuiltQp& built,
                                         const std::vector<double>& u,
                                         const PlannerSettings& ps) {
  ComplianceReport rep;
  for (const auto& r : built.rows) {
    const auto& a = *in.vehicles[r.lead].state;
    const auto& b = *in.vehicles[r.follow].state;
    const double sa = predict_position(a.s, a.v, u[r.lead], ps.dt);
    const double sb = predict_position(b.s, b.v, u[r.follow], ps.dt);
    if (r.kind == RowKind::Longitudinal) {
      ++rep.checked_pairs;
      if (sb - sa < a.length + ps.msr - 1e-6) ++rep.gap_failures;
    } else if (r.kind == RowKind::Lateral) {
      const double ui = u[r.lead], uj = u[r.follow];
      if (ui <= kComplianceMinSpeed || uj <= kComplianceMinSpeed) continue;
      ++rep.checked_pairs;
      const double ti = sa / ui + (a.length + ps.msl) / ui;
      const double tj = sb / uj;
      if (ti > tj + kSequenceEpsilon) ++rep.sequence_failures;
    }
  }
  return rep;
}

/// Maximum braking for every vehicle.
inline CommandSet all_brake(const PlanInput& in, const PlannerSettings& ps) {
  CommandSet cs;
  cs.time = in.time;
  for (const auto& pv : in.vehicles)
    cs.commands.push_back(
        {pv.state->id, velocity_bounds(*pv.state, ps.dt, ps.v_bar).lo});
  return cs;
}

inline PlanResult plan_cycle(const PlanInput& in, const PlannerSettings& ps,
                             BuiltQp* built_out = nullptr) {
  PlanResult res;
  res.commands.time = in.time;
  if (in.vehicles.empty()) {
    if (built_out) *built_out = BuiltQp{};
    return res;
  }
  BuiltQp built = build_qp(in, ps);
  res.rows = built.rows.size();
  for (const auto& r : built.rows) res.lateral_rows += r.kind == RowKind::Lateral;
  res.negative_coefficients = built.negative_coefficients;
  res.dropped_lateral = built.dropped_lateral;
  res.stop_hold_breaches = built.stop_hold_breaches;

  auto fallback = [&](FallbackReason why) {
    res.fallback = FallbackEvent{in.cycle, why};
    res.commands = all_brake(in, ps);
  };

  if (built.infeasible_spacing) {
    res.status = "spacing";
    fallback(FallbackReason::InfeasibleSpacing);
  } else {
    const auto sol = qp::solve(built.problem, ps.solver);
    res.status = std::string(qp::to_string(sol.status));
    res.iterations = sol.iterations;
    res.kkt_residual = sol.kkt_residual;
    if (sol.status == qp::Status::Optimal) {
      for (std::size_t k = 0; k < in.vehicles.size(); ++k)
        res.commands.commands.push_back({in.vehicles[k].state->id, sol.x[k]});
      res.compliance = check_compliance(in, built, sol.x, ps);
    } else {
      fallback(sol.status == qp::Status::Infeasible ? FallbackReason::Infeasible
                                                    : FallbackReason::IterLimit);
    }
  }
  if (built_out) *built_out = std::move(built);
  return res;
}

}  // namespace crossflow
