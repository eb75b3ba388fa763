#pragma once
// Sponsored-search auction that turns per-vehicle priority values into the
// entrance sequence. Ranks in this header are 1-based (rank 1 = highest bid),
// matching the usual position-auction notation.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "crossflow/domain.hpp"

namespace crossflow {

inline constexpr double kSpeedFloor = 0.1;        ///< [m/s] in time_to_reach
inline constexpr double kOverflowFraction = 0.5;  ///< share of the overflow bound transferred
inline constexpr double kStallSpeed = 0.5;        ///< below this a vehicle is waiting [m/s]

/// Time for a vehicle at distance `s` to reach the stop line at speed `v`.
inline double time_to_reach(double s, double v, double v_floor = kSpeedFloor) {
  return s / std::max(v, v_floor);
}

struct ClampWarning {
  double s = 0.0;
  double tau = 0.0;
  double c = 0.0;
};

/// zeta = s * (c - tau); clamped to 0 (with a warning) once tau >= c.
inline double priority_value(double s, double tau, double c,
                             std::vector<ClampWarning>* warnings = nullptr) {
  if (tau >= c) {
    if (warnings) warnings->push_back({s, tau, c});
    return 0.0;
  }
  return s * (c - tau);
}

inline double waiting_weight(double wait_time, double beta) {
  return 1.0 + beta * wait_time;
}

inline double waiting_reward(double zeta, double wait_time, double beta) {
  return waiting_weight(wait_time, beta) * zeta;
}

/// Strictly decreasing positive slot values alpha_1 > alpha_2 > ... > 0.
class ItemValues {
 public:
  ItemValues() = default;
  explicit ItemValues(std::vector<double> values) : values_(std::move(values)) {
    for (std::size_t k = 0; k < values_.size(); ++k) {
      if (!(values_[k] > 0.0))
        throw std::invalid_argument("item values must be positive");
      if (k > 0 && !(values_[k] < values_[k - 1]))
        throw std::invalid_argument("item values must be strictly decreasing");
    }
  }

  std::size_t size() const { return values_.size(); }
  /// 1-based; alpha(size()+1) == 0 by convention.
  double alpha(std::size_t rank) const {
    assert(rank >= 1);
    return rank <= values_.size() ? values_[rank - 1] : 0.0;
  }
  const std::vector<double>& values() const { return values_; }

 private:
  std::vector<double> values_;
};

inline ItemValues default_item_values(std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t j = 0; j < n; ++j) v[j] = 1.0 / static_cast<double>(j + 1);
  return ItemValues(std::move(v));
}

/// Quasi-linear utility of the agent at `rank` given all bids sorted
/// descending, with the VCG-style payment sum_{j>=rank} b_{j+1}(alpha_j - alpha_{j+1}).
inline double utility(std::size_t rank, const std::vector<double>& sorted_bids,
                      double zeta, const ItemValues& alphas) {
  const std::size_t k = sorted_bids.size();
  assert(rank >= 1 && rank <= k && alphas.size() >= k);
  auto bid = [&](std::size_t r) { return r <= k ? sorted_bids[r - 1] : 0.0; };
  auto alpha = [&](std::size_t r) { return r <= k ? alphas.alpha(r) : 0.0; };
  double payment = 0.0;
  for (std::size_t j = rank; j <= k; ++j)
    payment += bid(j + 1) * (alpha(j) - alpha(j + 1));
  return zeta * alpha(rank) - payment;
}

/// Sum of zeta_{agent at rank r} * alpha_r. `allocation[r-1]` is the agent
/// index that receives slot r.
inline double welfare(const std::vector<std::size_t>& allocation,
                      const std::vector<double>& zetas, const ItemValues& alphas) {
  double w = 0.0;
  for (std::size_t r = 1; r <= allocation.size(); ++r)
    w += zetas[allocation[r - 1]] * alphas.alpha(r);
  return w;
}

struct OverflowBound {
  double q_max = 0.0;
  /// No transfer possible (bound <= 0).
  bool degenerate() const { return !(q_max > 0.0); }
};

/// Largest bid transfer from the agent at `i_rank` to the one at `j_rank`
/// (i_rank <= j_rank) that keeps the auction incentive compatible.
/// `sorted_zetas` are the priority values in rank order.
inline OverflowBound overflow_bound(std::size_t i_rank, std::size_t j_rank,
                                    const std::vector<double>& sorted_zetas,
                                    const ItemValues& alphas) {
  assert(i_rank >= 1 && i_rank <= j_rank && j_rank <= sorted_zetas.size());
  const double ai = alphas.alpha(i_rank);
  double q = sorted_zetas[i_rank - 1] * (1.0 - alphas.alpha(j_rank) / ai);
  for (std::size_t s = i_rank; s < j_rank; ++s)
    q -= sorted_zetas[s] * (alphas.alpha(s) - alphas.alpha(s + 1)) / ai;
  return {q};
}

/// One participant of an auction round.
struct Bidder {
  VehicleId id = 0;
  double bid = 0.0;
  double spawn_time = 0.0;
};

/// Strict priority order: higher bid, then earlier spawn, then smaller id.
inline bool outranks(const Bidder& a, const Bidder& b) {
  if (a.bid != b.bid) return a.bid > b.bid;
  if (a.spawn_time != b.spawn_time) return a.spawn_time < b.spawn_time;
  return a.id < b.id;
}

/// rank_of[k] = 1-based rank of bidders[k]; also returns bids in rank order.
inline std::vector<std::size_t> rank_bidders(const std::vector<Bidder>& bidders,
                                             std::vector<double>* sorted_bids = nullptr) {
  std::vector<std::size_t> order(bidders.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return outranks(bidders[a], bidders[b]);
  });
  std::vector<std::size_t> rank_of(bidders.size());
  if (sorted_bids) sorted_bids->resize(bidders.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    rank_of[order[r]] = r + 1;
    if (sorted_bids) (*sorted_bids)[r] = bidders[order[r]].bid;
  }
  return rank_of;
}

struct BidTransfer {
  std::size_t from = 0;  ///< index into bidders (rear, higher bid)
  std::size_t to = 0;    ///< index into bidders (front, lower bid)
  double amount = 0.0;
};

/// Overflow handling: in every lane (bidder indices ordered front to back),
/// walk adjacent pairs front-to-back once; when the rear vehicle outbids the
/// one in front, move kappa * bound of its bid forward. Total bid mass is
/// conserved.
inline std::vector<BidTransfer> apply_overflow(
    std::vector<Bidder>& bidders,
    const std::vector<std::vector<std::size_t>>& lanes, const ItemValues& alphas,
    double kappa = kOverflowFraction) {
  std::vector<BidTransfer> transfers;
  std::vector<double> sorted;
  for (const auto& lane : lanes) {
    for (std::size_t k = 0; k + 1 < lane.size(); ++k) {
      const std::size_t front = lane[k];
      const std::size_t rear = lane[k + 1];
      if (!(bidders[rear].bid > bidders[front].bid)) continue;
      const auto rank_of = rank_bidders(bidders, &sorted);
      const auto bound =
          overflow_bound(rank_of[rear], rank_of[front], sorted, alphas);
      if (bound.degenerate()) continue;
      const double q = kappa * bound.q_max;
      bidders[rear].bid -= q;
      bidders[front].bid += q;
      transfers.push_back({rear, front, q});
    }
  }
  return transfers;
}

struct SequenceEntry {
  VehicleId id = 0;
  double bid = 0.0;
  std::size_t rank = 0;
};

/// The auction's total priority order over the participating vehicles.
struct PrioritySequence {
  std::vector<SequenceEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

/// Sorts by effective bid (descending) with the spawn-time/id tie-break.
/// `comparisons`, when given, receives the number of comparator calls.
inline PrioritySequence build_sequence(std::vector<Bidder> bidders,
                                       std::size_t* comparisons = nullptr) {
  std::size_t count = 0;
  std::sort(bidders.begin(), bidders.end(), [&count](const Bidder& a, const Bidder& b) {
    ++count;
    return outranks(a, b);
  });
  if (comparisons) *comparisons = count;
  PrioritySequence seq;
  seq.entries.reserve(bidders.size());
  for (std::size_t r = 0; r < bidders.size(); ++r)
    seq.entries.push_back({bidders[r].id, bidders[r].bid, r + 1});
  return seq;
}

// ---------------------------------------------------------------------------
// Per-cycle bid pipeline used by the controllers.

struct AuctionParams {
  double c = 30.0;
  double beta_wait = 0.05;
  double kappa = kOverflowFraction;
  double v_floor = kSpeedFloor;
};

/// Private priority value of a vehicle. Swappable so that other bidding
/// schemes (behaviour- or money-based) can feed the same auction.
using PriorityFunction =
    std::function<double(const VehicleState&, const AuctionParams&,
                         std::vector<ClampWarning>*)>;

inline double distance_time_priority(const VehicleState& v, const AuctionParams& p,
                                     std::vector<ClampWarning>* warnings) {
  return priority_value(v.s, time_to_reach(v.s, v.v, p.v_floor), p.c, warnings);
}

/// Audit row for one vehicle in one cycle.
struct BidRecord {
  VehicleId id = 0;
  double zeta = 0.0;
  double weight = 1.0;
  double bid = 0.0;
  std::size_t rank = 0;
};

struct AuctionOutcome {
  PrioritySequence sequence;
  std::vector<BidRecord> records;  ///< same order as the input vehicles
  std::vector<ClampWarning> warnings;
  std::size_t transfers = 0;
};

/// priority value -> waiting reward -> overflow -> sort. `lanes` holds
/// indices into `vehicles`, each lane ordered front to back. Writes zeta and
/// bid back into the vehicles.
inline AuctionOutcome run_gameopt_auction(
    std::vector<VehicleState*>& vehicles,
    const std::vector<std::vector<std::size_t>>& lanes, const AuctionParams& params,
    const PriorityFunction& priority = distance_time_priority) {
  AuctionOutcome out;
  const std::size_t n = vehicles.size();
  std::vector<Bidder> bidders(n);
  out.records.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    auto& v = *vehicles[k];
    v.zeta = priority(v, params, &out.warnings);
    const double w = waiting_weight(v.wait_time, params.beta_wait);
    bidders[k] = {v.id, w * v.zeta, v.spawn_time};
    out.records[k] = {v.id, v.zeta, w, 0.0, 0};
  }
  if (n > 0) {
    const auto alphas = default_item_values(n);
    out.transfers = apply_overflow(bidders, lanes, alphas, params.kappa).size();
  }
  const auto rank_of = rank_bidders(bidders);
  for (std::size_t k = 0; k < n; ++k) {
    vehicles[k]->bid = bidders[k].bid;
    out.records[k].bid = bidders[k].bid;
    out.records[k].rank = rank_of[k];
  }
  out.sequence = build_sequence(std::move(bidders));
  return out;
}

/// First-come-first-served auction: the bid is n minus the arrival index
/// (earliest spawn first, ties by id). No waiting reward or overflow.
inline AuctionOutcome run_fifo_auction(std::vector<VehicleState*>& vehicles) {
  AuctionOutcome out;
  const std::size_t n = vehicles.size();
  std::vector<std::size_t> arrival(n);
  std::iota(arrival.begin(), arrival.end(), std::size_t{0});
  std::sort(arrival.begin(), arrival.end(), [&](std::size_t a, std::size_t b) {
    if (vehicles[a]->spawn_time != vehicles[b]->spawn_time)
      return vehicles[a]->spawn_time < vehicles[b]->spawn_time;
    return vehicles[a]->id < vehicles[b]->id;
  });
  std::vector<Bidder> bidders(n);
  out.records.resize(n);
  for (std::size_t pos = 0; pos < n; ++pos) {
    const std::size_t k = arrival[pos];
    auto& v = *vehicles[k];
    v.zeta = static_cast<double>(n - pos);
    v.bid = v.zeta;
    bidders[k] = {v.id, v.bid, v.spawn_time};
    out.records[k] = {v.id, v.zeta, 1.0, v.bid, 0};
  }
  const auto rank_of = rank_bidders(bidders);
  for (std::size_t k = 0; k < n; ++k) out.records[k].rank = rank_of[k];
  out.sequence = build_sequence(std::move(bidders));
  return out;
}

}  // namespace crossflow
