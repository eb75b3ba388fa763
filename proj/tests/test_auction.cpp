#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "crossflow/auction.hpp"
#include "crossflow/oracles.hpp"

using namespace crossflow;

TEST(TimeToReach, Examples) {
  EXPECT_DOUBLE_EQ(time_to_reach(100.0, 10.0), 10.0);
  EXPECT_DOUBLE_EQ(time_to_reach(0.0, 5.0), 0.0);
  EXPECT_DOUBLE_EQ(time_to_reach(50.0, 0.0), 50.0 / 0.1);
}

TEST(PriorityValue, Examples) {
  std::vector<ClampWarning> warnings;
  EXPECT_DOUBLE_EQ(priority_value(100.0, 10.0, 30.0, &warnings), 2000.0);
  EXPECT_DOUBLE_EQ(priority_value(0.0, 5.0, 30.0, &warnings), 0.0);
  EXPECT_TRUE(warnings.empty());
  // 150 * (30 - 35) would be negative.
  EXPECT_LT(150.0 * (30.0 - 35.0), 0.0);
  EXPECT_DOUBLE_EQ(priority_value(150.0, 35.0, 30.0, &warnings), 0.0);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_DOUBLE_EQ(warnings[0].tau, 35.0);
}

TEST(WaitingReward, Examples) {
  EXPECT_DOUBLE_EQ(waiting_reward(2000.0, 0.0, 0.05), 2000.0);
  EXPECT_DOUBLE_EQ(waiting_reward(2000.0, 10.0, 0.05), 2000.0 * (1.0 + 0.05 * 10.0));
  EXPECT_DOUBLE_EQ(waiting_reward(2000.0, 10.0, 0.05), 3000.0);
  EXPECT_DOUBLE_EQ(waiting_reward(0.0, 123.0, 0.05), 0.0);
}

TEST(ItemValues, Defaults) {
  const auto a = default_item_values(3);
  EXPECT_DOUBLE_EQ(a.alpha(1), 1.0);
  EXPECT_DOUBLE_EQ(a.alpha(2), 0.5);
  EXPECT_DOUBLE_EQ(a.alpha(3), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(a.alpha(4), 0.0);
  EXPECT_EQ(default_item_values(1).values(), std::vector<double>{1.0});
  const auto big = default_item_values(500);
  for (std::size_t r = 2; r <= 500; ++r) EXPECT_LT(big.alpha(r), big.alpha(r - 1));
}

TEST(ItemValues, RejectsNonDecreasing) {
  EXPECT_THROW(ItemValues({1.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(ItemValues({1.0, -1.0}), std::invalid_argument);
}

TEST(OverflowBound, ThreeAgentExample) {
  const ItemValues alphas({3.0, 2.0, 1.0});
  const auto b = overflow_bound(1, 3, {10.0, 6.0, 4.0}, alphas);
  const double by_hand = 10.0 * (1.0 - 1.0 / 3.0) - (6.0 * (3.0 - 2.0) / 3.0 + 4.0 * (2.0 - 1.0) / 3.0);
  EXPECT_NEAR(b.q_max, by_hand, 1e-12);
  EXPECT_NEAR(b.q_max, 10.0 / 3.0, 1e-12);
  EXPECT_FALSE(b.degenerate());
}

TEST(OverflowBound, ZeroGapIsZero) {
  const ItemValues alphas({3.0, 2.0, 1.0});
  const auto b = overflow_bound(2, 2, {10.0, 6.0, 4.0}, alphas);
  EXPECT_DOUBLE_EQ(b.q_max, 0.0);
  EXPECT_TRUE(b.degenerate());
}

TEST(OverflowBound, NegativeIsDegenerate) {
  const ItemValues alphas({2.0, 1.0});
  const auto b = overflow_bound(1, 2, {1.0, 100.0}, alphas);
  EXPECT_NEAR(b.q_max, 1.0 * 0.5 - 100.0 * 0.5, 1e-12);
  EXPECT_TRUE(b.degenerate());
}

TEST(OverflowBound, TransfersBelowBoundKeepTruthfulness) {
  const ItemValues alphas({3.0, 2.0, 1.0});
  const std::vector<double> zetas{10.0, 6.0, 4.0};
  const double q_max = overflow_bound(1, 3, zetas, alphas).q_max;
  for (double frac : {0.1, 0.5, 0.9}) {
    auto moved = zetas;
    moved[0] -= frac * q_max;
    moved[2] += frac * q_max;
    EXPECT_LE(oracle::deviation_check(moved, alphas).worst_gain, 1e-12);
  }
}

TEST(ApplyOverflow, SingleVehicleUnchanged) {
  std::vector<Bidder> b{{1, 5.0, 0.0}};
  const auto t = apply_overflow(b, {{0}}, default_item_values(1));
  EXPECT_TRUE(t.empty());
  EXPECT_DOUBLE_EQ(b[0].bid, 5.0);
}

TEST(ApplyOverflow, OrderedLaneUnchanged) {
  std::vector<Bidder> b{{1, 9.0, 0.0}, {2, 5.0, 1.0}, {3, 1.0, 2.0}};
  const auto t = apply_overflow(b, {{0, 1, 2}}, default_item_values(3));
  EXPECT_TRUE(t.empty());
  EXPECT_DOUBLE_EQ(b[1].bid, 5.0);
}

TEST(ApplyOverflow, RearToFrontTransferConservesMass) {
  // Lane: front zeta 4, rear zeta 10; another lane holds zeta 6.
  std::vector<Bidder> b{{1, 4.0, 0.0}, {2, 10.0, 1.0}, {3, 6.0, 2.0}};
  const ItemValues alphas({3.0, 2.0, 1.0});
  const auto t = apply_overflow(b, {{0, 1}, {2}}, alphas);
  ASSERT_EQ(t.size(), 1u);
  // Rear holds rank 1, front rank 3: q = 0.5 * 10/3.
  EXPECT_NEAR(t[0].amount, 0.5 * 10.0 / 3.0, 1e-12);
  EXPECT_NEAR(b[1].bid, 10.0 - 5.0 / 3.0, 1e-12);
  EXPECT_NEAR(b[0].bid, 4.0 + 5.0 / 3.0, 1e-12);
  EXPECT_NEAR(b[0].bid + b[1].bid + b[2].bid, 20.0, 1e-12);
}

TEST(ApplyOverflow, RandomMassConservationAndTruthfulness) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> zeta(1, 20), size(2, 6);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(size(rng));
    std::vector<Bidder> b(n);
    double before = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      b[k] = {k, static_cast<double>(zeta(rng)), static_cast<double>(k)};
      before += b[k].bid;
    }
    const auto alphas = default_item_values(n);
    apply_overflow(b, oracle::random_lanes(n, rng), alphas);
    std::vector<double> after(n);
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      after[k] = b[k].bid;
      sum += after[k];
      EXPECT_GE(after[k], 0.0);
    }
    EXPECT_NEAR(sum, before, 1e-12);
    EXPECT_LE(oracle::deviation_check(after, alphas).worst_gain, 1e-12);
  }
}

TEST(BuildSequence, SortsByBid) {
  const auto seq = build_sequence({{'a', 5.0, 0.0}, {'b', 3.0, 0.0}, {'c', 9.0, 0.0}});
  ASSERT_EQ(seq.size(), 3u);
  EXPECT_EQ(seq.entries[0].id, VehicleId{'c'});
  EXPECT_EQ(seq.entries[1].id, VehicleId{'a'});
  EXPECT_EQ(seq.entries[2].id, VehicleId{'b'});
  EXPECT_EQ(seq.entries[0].rank, 1u);
}

TEST(BuildSequence, TieBreaks) {
  auto seq = build_sequence({{7, 4.0, 5.0}, {9, 4.0, 2.0}});
  EXPECT_EQ(seq.entries[0].id, 9u);
  seq = build_sequence({{7, 4.0, 2.0}, {3, 4.0, 2.0}});
  EXPECT_EQ(seq.entries[0].id, 3u);
}

TEST(BuildSequence, RandomIsSortedPermutation) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> bid(0.0, 100.0);
  std::vector<Bidder> in(1000);
  for (std::size_t k = 0; k < in.size(); ++k) in[k] = {k, bid(rng), 0.0};
  const auto seq = build_sequence(in);
  ASSERT_EQ(seq.size(), in.size());
  std::vector<double> expect;
  for (const auto& b : in) expect.push_back(b.bid);
  std::sort(expect.begin(), expect.end(), std::greater<>());
  std::vector<bool> seen(in.size(), false);
  for (std::size_t r = 0; r < seq.size(); ++r) {
    EXPECT_EQ(seq.entries[r].bid, expect[r]);
    EXPECT_FALSE(seen[seq.entries[r].id]);
    seen[seq.entries[r].id] = true;
  }
}

TEST(Utility, Examples) {
  const ItemValues a({2.0, 1.0});
  EXPECT_DOUBLE_EQ(utility(1, {10.0, 6.0}, 10.0, a), 20.0 - 6.0 * (2.0 - 1.0) - 0.0);
  EXPECT_DOUBLE_EQ(utility(1, {10.0, 6.0}, 10.0, a), 14.0);
  EXPECT_DOUBLE_EQ(utility(2, {10.0, 6.0}, 6.0, a), 6.0);
  EXPECT_DOUBLE_EQ(utility(1, {7.0}, 7.0, ItemValues({3.0})), 21.0);
}

TEST(Welfare, Examples) {
  const ItemValues a({2.0, 1.0});
  const std::vector<double> z{10.0, 6.0};
  EXPECT_DOUBLE_EQ(welfare({0, 1}, z, a), 10.0 * 2 + 6.0 * 1);
  EXPECT_DOUBLE_EQ(welfare({0, 1}, z, a), 26.0);
  EXPECT_DOUBLE_EQ(welfare({1, 0}, z, a), 22.0);
  const std::vector<double> eq{3.0, 3.0, 3.0};
  const auto a3 = default_item_values(3);
  EXPECT_DOUBLE_EQ(welfare({0, 1, 2}, eq, a3), welfare({2, 0, 1}, eq, a3));
}

TEST(Properties, TruthfulBiddingDominates) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> zeta(1, 20), size(1, 6);
  bool over = false, under = false;
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = static_cast<std::size_t>(size(rng));
    std::vector<double> z(n);
    for (auto& x : z) x = zeta(rng);
    const auto r = oracle::deviation_check(z, default_item_values(n));
    EXPECT_LE(r.worst_gain, 1e-12);
    over = over || r.strict_loss_over;
    under = under || r.strict_loss_under;
  }
  EXPECT_TRUE(over);
  EXPECT_TRUE(under);
}

TEST(Properties, SortedAllocationMaximizesWelfare) {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> zeta(1, 20), size(1, 7);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = static_cast<std::size_t>(size(rng));
    std::vector<double> z(n);
    for (auto& x : z) x = zeta(rng);
    const auto a = default_item_values(n);
    EXPECT_NEAR(welfare(oracle::sorted_allocation(z), z, a), oracle::max_welfare(z, a), 1e-9);
  }
}

TEST(Pipeline, GameOptBidsAndOrder) {
  std::vector<VehicleState> vs(3);
  vs[0].id = 1; vs[0].s = 100.0; vs[0].v = 10.0; vs[0].spawn_time = 0.0;
  vs[1].id = 2; vs[1].s = 50.0;  vs[1].v = 0.0;  vs[1].spawn_time = 1.0; vs[1].wait_time = 10.0;
  vs[2].id = 3; vs[2].s = 120.0; vs[2].v = 20.0; vs[2].spawn_time = 2.0;
  std::vector<VehicleState*> ptrs{&vs[0], &vs[1], &vs[2]};
  AuctionParams params;
  params.c = 30.0;
  const auto out = run_gameopt_auction(ptrs, {{0}, {1}, {2}}, params);
  EXPECT_DOUBLE_EQ(vs[0].zeta, 100.0 * (30.0 - 10.0));
  EXPECT_DOUBLE_EQ(vs[2].zeta, 120.0 * (30.0 - 6.0));
  EXPECT_DOUBLE_EQ(vs[1].zeta, 0.0);  // tau = 500 s > c
  EXPECT_EQ(out.warnings.size(), 1u);
  ASSERT_EQ(out.sequence.size(), 3u);
  EXPECT_EQ(out.sequence.entries[0].id, 3u);
  EXPECT_EQ(out.sequence.entries[1].id, 1u);
  EXPECT_EQ(out.sequence.entries[2].id, 2u);
  EXPECT_EQ(out.records[2].rank, 1u);
}

TEST(Pipeline, FifoRanksByArrival) {
  std::vector<VehicleState> vs(3);
  vs[0].id = 5; vs[0].spawn_time = 7.0; vs[0].s = 10.0; vs[0].v = 20.0;
  vs[1].id = 6; vs[1].spawn_time = 3.0; vs[1].s = 140.0; vs[1].v = 1.0;
  vs[2].id = 4; vs[2].spawn_time = 7.0; vs[2].s = 30.0;
  std::vector<VehicleState*> ptrs{&vs[0], &vs[1], &vs[2]};
  const auto out = run_fifo_auction(ptrs);
  EXPECT_EQ(out.sequence.entries[0].id, 6u);
  EXPECT_EQ(out.sequence.entries[1].id, 4u);
  EXPECT_EQ(out.sequence.entries[2].id, 5u);
  for (const auto& v : vs) EXPECT_GE(v.bid, 0.0);
}
