#pragma once
// Brute-force reference checks for the auction and the QP solver. They are
// deliberately naive (re-ranking, permutation enumeration, grid search) so
// they share no logic with the code under test beyond the utility formula.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "crossflow/auction.hpp"
#include "crossflow/qp.hpp"

namespace crossflow::oracle {

// ---------------------------------------------------------------------------
// Auction

/// Utility agent `agent` obtains when it bids `bid` and everyone else bids
/// `bids[k]`. Ties are broken by agent index.
inline double utility_with_bid(const std::vector<double>& bids, std::size_t agent,
                               double bid, double zeta, const ItemValues& alphas) {
  std::vector<Bidder> bs(bids.size());
  for (std::size_t k = 0; k < bids.size(); ++k)
    bs[k] = {static_cast<VehicleId>(k), k == agent ? bid : bids[k], static_cast<double>(k)};
  std::vector<double> sorted;
  const auto rank_of = rank_bidders(bs, &sorted);
  return utility(rank_of[agent], sorted, zeta, alphas);
}

struct DeviationResult {
  double worst_gain = -std::numeric_limits<double>::infinity();  ///< max(dev - truthful)
  bool strict_loss_over = false;   ///< some overbid strictly loses
  bool strict_loss_under = false;  ///< some underbid strictly loses
};

/// Every agent tries every bid on a `grid`-point lattice over [0, 2 zeta_i]
/// while the others bid truthfully.
inline DeviationResult deviation_check(const std::vector<double>& zetas,
                                       const ItemValues& alphas, int grid = 41) {
  DeviationResult r;
  for (std::size_t i = 0; i < zetas.size(); ++i) {
    const double truthful = utility_with_bid(zetas, i, zetas[i], zetas[i], alphas);
    for (int k = 0; k < grid; ++k) {
      const double b = 2.0 * zetas[i] * k / (grid - 1);
      const double u = utility_with_bid(zetas, i, b, zetas[i], alphas);
      r.worst_gain = std::max(r.worst_gain, u - truthful);
      if (u < truthful - 1e-9) {
        if (b > zetas[i]) r.strict_loss_over = true;
        if (b < zetas[i]) r.strict_loss_under = true;
      }
    }
  }
  return r;
}

/// Largest welfare over all n! allocations.
inline double max_welfare(const std::vector<double>& zetas, const ItemValues& alphas) {
  std::vector<std::size_t> perm(zetas.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = -std::numeric_limits<double>::infinity();
  do {
    best = std::max(best, welfare(perm, zetas, alphas));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// Allocation produced by sorting bids (truthful: bids = zetas).
inline std::vector<std::size_t> sorted_allocation(const std::vector<double>& bids) {
  std::vector<Bidder> bs(bids.size());
  for (std::size_t k = 0; k < bids.size(); ++k)
    bs[k] = {static_cast<VehicleId>(k), bids[k], static_cast<double>(k)};
  const auto seq = build_sequence(bs);
  std::vector<std::size_t> alloc;
  for (const auto& e : seq.entries) alloc.push_back(static_cast<std::size_t>(e.id));
  return alloc;
}

/// Random lanes partition of n bidders (front to back in index order).
inline std::vector<std::vector<std::size_t>> random_lanes(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> lane_of(0, 3);
  std::vector<std::vector<std::size_t>> lanes(4);
  for (std::size_t k = 0; k < n; ++k) lanes[static_cast<std::size_t>(lane_of(rng))].push_back(k);
  return lanes;
}

// ---------------------------------------------------------------------------
// QP

/// Random instance shaped like a planner problem: h = 2, per-variable box
/// of width (a_max - a_min) dt around a current speed, difference rows like
/// the same-lane rows and ratio rows like the crossing-order rows. The rows
/// are satisfied by a random interior point, so the instance is feasible.
inline qp::QpProblem random_planner_qp(std::size_t n, std::mt19937_64& rng,
                                       double dt = 0.1, double v_bar = 20.0,
                                       double a_min = -5.0, double a_max = 3.0,
                                       double lambda = 0.7,
                                       std::vector<double>* interior = nullptr) {
  std::uniform_real_distribution<double> speed(0.0, v_bar), unit(0.0, 1.0);
  qp::QpProblem p(n);
  std::vector<double> x0(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = speed(rng);
    p.h[i] = 2.0;
    p.g[i] = -2.0 * (lambda * v_bar + (1.0 - lambda) * v);
    p.lo[i] = std::max(0.0, v + a_min * dt);
    p.hi[i] = std::min(v_bar, v + a_max * dt);
    x0[i] = p.lo[i] + unit(rng) * (p.hi[i] - p.lo[i]);
  }
  if (interior) *interior = x0;
  if (n < 2) return p;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  const std::size_t rows = 1 + pick(rng) % (n + 1);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t i = pick(rng), j = pick(rng);
    if (i == j) j = (i + 1) % n;
    const double slack = 0.05 * unit(rng);
    if (unit(rng) < 0.5) {
      // u_j - u_i <= c  (follower j behind leader i)
      const double c = x0[j] - x0[i] + slack;
      p.add_row({{static_cast<int>(j), 1.0}, {static_cast<int>(i), -1.0}}, c);
    } else {
      // A u_j - B u_i <= 0 with A > B > 0 distances
      const double B = 10.0 + 140.0 * unit(rng);
      double A = B + 5.0 + 50.0 * unit(rng);
      // Keep x0 feasible: A x0_j <= B x0_i (+ slack on the rhs).
      if (A * x0[j] > B * x0[i]) {
        if (x0[j] > 0.0) A = std::max(B * x0[i] / x0[j], 1e-3);
      }
      p.add_row({{static_cast<int>(j), A}, {static_cast<int>(i), -B}},
                std::max(0.0, A * x0[j] - B * x0[i]) + slack);
    }
  }
  return p;
}

inline bool grid_feasible(const qp::QpProblem& p, const std::vector<double>& x, double tol) {
  for (std::size_t r = 0; r < p.rows(); ++r)
    if (p.row_dot(r, x) > p.b[r] + tol) return false;
  return true;
}

struct GridPoint {
  std::vector<double> x;
  double f = std::numeric_limits<double>::infinity();
};

/// One coarse-to-fine lattice descent; see grid_oracle.
inline GridPoint grid_descent(const qp::QpProblem& p, double step, const std::vector<double>* start,
                              double feas_tol = 1e-9) {
  const std::size_t n = p.n;
  const int k = n <= 3 ? 9 : (n <= 5 ? 7 : 5);
  std::vector<double> center(n), spacing(n);
  for (std::size_t i = 0; i < n; ++i) {
    center[i] = 0.5 * (p.lo[i] + p.hi[i]);
    spacing[i] = (p.hi[i] - p.lo[i]) / (k - 1);
  }
  GridPoint best;
  if (start && grid_feasible(p, *start, feas_tol)) {
    best = {*start, p.objective(*start)};
    // a seeded descent only refines around its seed
    for (double& sp : spacing) sp = std::min(sp, 16.0 * step);
  }
  std::vector<int> idx(n);
  std::vector<double> x(n);
  for (;;) {
    // re-centre on the incumbent until a scan leaves it in place
    for (int pass = 0; pass < 256; ++pass) {
      if (!best.x.empty()) center = best.x;
      std::fill(idx.begin(), idx.end(), 0);
      bool moved = false;
      for (;;) {
        for (std::size_t i = 0; i < n; ++i) {
          const double off = (idx[i] - (k - 1) / 2) * spacing[i];
          x[i] = std::clamp(center[i] + off, p.lo[i], p.hi[i]);
        }
        if (grid_feasible(p, x, feas_tol)) {
          const double f = p.objective(x);
          if (f < best.f) {
            best = {x, f};
            moved = true;
          }
        }
        std::size_t d = 0;
        while (d < n && ++idx[d] == k) idx[d++] = 0;
        if (d == n) break;
      }
      if (!moved) break;
    }
    if (*std::max_element(spacing.begin(), spacing.end()) <= step) break;
    for (double& sp : spacing) sp *= 0.5;
  }
  return best;
}

/// Feasibility-filtered grid search refined coarse-to-fine down to `step`.
/// Each level enumerates a full k^n lattice over a window centred on the
/// incumbent, re-centres until the incumbent stays put, then halves the
/// spacing. Besides the descent from the box centre, every feasible point
/// in `starts` seeds a local descent at the finest levels, since a lattice
/// walk can stall in a thin wedge-shaped feasible set. Returns the lowest
/// feasible lattice point found (empty if none).
inline std::vector<double> grid_oracle(const qp::QpProblem& p, double step = 1e-3,
                                       const std::vector<std::vector<double>>& starts = {}) {
  GridPoint best = grid_descent(p, step, nullptr);
  for (const auto& s : starts) {
    auto g = grid_descent(p, step, &s);
    if (g.f < best.f) best = std::move(g);
  }
  return best.x;
}

/// Euclidean projection (in the h-weighted norm) of the unconstrained
/// minimizer onto the feasible set by Dykstra's alternating projections.
inline std::vector<double> dykstra_oracle(const qp::QpProblem& p, std::size_t sweeps = 200000,
                                          double tol = 1e-12) {
  const std::size_t n = p.n, m = p.rows();
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = std::sqrt(p.h[i]);
  // Work in y = w x, where the objective is |y - y0|^2 / 2.
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = -p.g[i] / p.h[i] * w[i];
  std::vector<std::vector<double>> inc(m + 1, std::vector<double>(n, 0.0));
  for (std::size_t it = 0; it < sweeps; ++it) {
    double change = 0.0;
    for (std::size_t r = 0; r <= m; ++r) {
      std::vector<double> z(n);
      for (std::size_t i = 0; i < n; ++i) z[i] = y[i] + inc[r][i];
      std::vector<double> proj = z;
      if (r < m) {
        double dot = 0.0, nn = 0.0;
        for (auto* t = p.row_begin(r); t != p.row_end(r); ++t) {
          const auto i = static_cast<std::size_t>(t->var);
          const double a = t->coef / w[i];
          dot += a * z[i];
          nn += a * a;
        }
        if (dot > p.b[r] && nn > 0.0) {
          const double lam = (dot - p.b[r]) / nn;
          for (auto* t = p.row_begin(r); t != p.row_end(r); ++t) {
            const auto i = static_cast<std::size_t>(t->var);
            proj[i] -= lam * t->coef / w[i];
          }
        }
      } else {
        for (std::size_t i = 0; i < n; ++i)
          proj[i] = std::clamp(z[i], p.lo[i] * w[i], p.hi[i] * w[i]);
      }
      for (std::size_t i = 0; i < n; ++i) {
        inc[r][i] = z[i] - proj[i];
        change = std::max(change, std::abs(proj[i] - y[i]));
        y[i] = proj[i];
      }
    }
    if (change < tol) break;
  }
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = y[i] / w[i];
  return x;
}

}  // namespace crossflow::oracle
