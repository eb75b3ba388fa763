#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <random>
#include <sstream>

#include "crossflow/oracles.hpp"
#include "crossflow/qp.hpp"

using namespace crossflow;
using qp::QpProblem;
using qp::Status;

namespace {

QpProblem box_problem(std::size_t n, double lo, double hi) {
  QpProblem p(n);
  std::fill(p.lo.begin(), p.lo.end(), lo);
  std::fill(p.hi.begin(), p.hi.end(), hi);
  return p;
}

void expect_feasible(const QpProblem& p, const std::vector<double>& x, double tol) {
  for (std::size_t i = 0; i < p.n; ++i) {
    EXPECT_GE(x[i], p.lo[i] - tol);
    EXPECT_LE(x[i], p.hi[i] + tol);
  }
  for (std::size_t r = 0; r < p.rows(); ++r) EXPECT_LE(p.row_dot(r, x), p.b[r] + tol);
}

}  // namespace

TEST(Solve, SymmetricSplitOfActiveRow) {
  // (x1-2)^2 + (x2-2)^2 = x^2 - 4x + const per coordinate
  auto p = box_problem(2, 0.0, 5.0);
  p.h = {2.0, 2.0};
  p.g = {-4.0, -4.0};
  p.add_row({{0, 1.0}, {1, 1.0}}, 2.0);
  const auto s = qp::solve(p);
  ASSERT_EQ(s.status, Status::Optimal);
  EXPECT_NEAR(s.x[0], 1.0, 1e-9);
  EXPECT_NEAR(s.x[1], 1.0, 1e-9);
  EXPECT_NEAR(s.row_duals[0], 2.0, 1e-9);
  EXPECT_LE(s.kkt_residual, 1e-9);
}

TEST(Solve, InteriorOptimumWithoutRows) {
  auto p = box_problem(1, 0.0, 20.0);
  p.h = {2.0};
  p.g = {-34.0};
  const auto s = qp::solve(p);
  ASSERT_EQ(s.status, Status::Optimal);
  EXPECT_DOUBLE_EQ(s.x[0], 17.0);
  EXPECT_EQ(s.kkt_residual, 0.0);
}

TEST(Solve, ClippedToUpperBound) {
  auto p = box_problem(1, 9.5, 10.3);
  p.h = {2.0};
  p.g = {-34.0};
  const auto s = qp::solve(p);
  ASSERT_EQ(s.status, Status::Optimal);
  EXPECT_DOUBLE_EQ(s.x[0], 10.3);
  EXPECT_NEAR(s.upper_duals[0], 34.0 - 2.0 * 10.3, 1e-12);
}

TEST(Solve, EmptyProblem) {
  QpProblem p(0);
  const auto s = qp::solve(p);
  EXPECT_EQ(s.status, Status::Optimal);
  EXPECT_TRUE(s.x.empty());
}

TEST(Solve, RejectsInvalidInput) {
  auto p = box_problem(1, 1.0, 0.0);
  EXPECT_THROW(qp::solve(p), std::invalid_argument);
  auto q = box_problem(1, 0.0, 1.0);
  q.h[0] = 0.0;
  EXPECT_THROW(qp::solve(q), std::invalid_argument);
}

TEST(Solve, SingleRowInfeasibleAgainstBox) {
  auto p = box_problem(2, 0.0, 1.0);
  p.add_row({{0, 1.0}, {1, 1.0}}, 5.0);
  p.add_row({{0, -1.0}, {1, -1.0}}, -3.0);  // x0 + x1 >= 3
  const auto s = qp::solve(p);
  ASSERT_EQ(s.status, Status::Infeasible);
  ASSERT_FALSE(s.certificate.rows.empty());
  EXPECT_GT(qp::certificate_gap(p, s.certificate), 0.0);
}

TEST(Solve, CombinedRowsInfeasible) {
  // x0 - x1 <= -1 and x1 - x0 <= -1 are individually fine inside the box.
  auto p = box_problem(2, 0.0, 10.0);
  p.g = {-3.0, -3.0};
  p.add_row({{0, 1.0}, {1, -1.0}}, -1.0);
  p.add_row({{1, 1.0}, {0, -1.0}}, -1.0);
  const auto s = qp::solve(p);
  ASSERT_EQ(s.status, Status::Infeasible);
  EXPECT_EQ(s.certificate.rows.size(), 2u);
  EXPECT_GT(qp::certificate_gap(p, s.certificate), 0.0);
}

TEST(Solve, InfeasibleThroughBoxAndChain) {
  // x0 >= x1 + 1, x1 >= x2 + 1, x2 >= x0 - 1.5 with x in [0, 1.8]
  auto p = box_problem(3, 0.0, 1.8);
  p.g = {-1.0, -1.0, -1.0};
  p.add_row({{1, 1.0}, {0, -1.0}}, -1.0);
  p.add_row({{2, 1.0}, {1, -1.0}}, -1.0);
  p.add_row({{0, 1.0}, {2, -1.0}}, 1.5);
  const auto s = qp::solve(p);
  ASSERT_EQ(s.status, Status::Infeasible);
  EXPECT_GT(qp::certificate_gap(p, s.certificate), 0.0);
}

TEST(Solve, FixedVariables) {
  auto p = box_problem(2, 3.0, 3.0);
  p.hi[1] = 10.0;
  p.g = {-10.0, -10.0};
  p.add_row({{0, 1.0}, {1, 1.0}}, 7.0);
  const auto s = qp::solve(p);
  ASSERT_EQ(s.status, Status::Optimal);
  EXPECT_DOUBLE_EQ(s.x[0], 3.0);
  EXPECT_NEAR(s.x[1], 4.0, 1e-9);
  EXPECT_LE(s.kkt_residual, 1e-9);
}

TEST(Solve, DuplicateRowsAreHandled) {
  auto p = box_problem(2, 0.0, 5.0);
  p.h = {2.0, 2.0};
  p.g = {-8.0, -8.0};
  for (int k = 0; k < 3; ++k) p.add_row({{0, 1.0}, {1, 1.0}}, 4.0);
  p.add_row({{0, 2.0}, {1, 2.0}}, 8.0);
  const auto s = qp::solve(p);
  ASSERT_EQ(s.status, Status::Optimal);
  EXPECT_NEAR(s.x[0], 2.0, 1e-9);
  EXPECT_NEAR(s.x[1], 2.0, 1e-9);
}

TEST(KktResidual, UnconstrainedOptimumIsZero) {
  auto p = box_problem(3, -100.0, 100.0);
  p.h = {2.0, 4.0, 0.5};
  p.g = {-2.0, 3.0, 1.0};
  const auto s = qp::solve(p);
  const auto r = qp::kkt_residual(p, s);
  EXPECT_LE(r.stationarity, 1e-15);
  EXPECT_EQ(r.primal, 0.0);
  EXPECT_EQ(r.complementarity, 0.0);
}

TEST(KktResidual, PerturbedPointStationarity) {
  auto p = box_problem(3, -100.0, 100.0);
  p.h = {2.0, 4.0, 0.5};
  p.g = {-2.0, 3.0, 1.0};
  auto s = qp::solve(p);
  s.x[1] += 0.1;
  EXPECT_NEAR(qp::kkt_residual(p, s).stationarity, 4.0 * 0.1, 1e-12);
}

TEST(KktResidual, PrimalIsMaxViolation) {
  auto p = box_problem(2, 0.0, 1.0);
  p.add_row({{0, 1.0}, {1, 1.0}}, 1.0);
  qp::QpSolution s;
  s.x = {0.9, 0.6};  // row violated by 0.5
  EXPECT_NEAR(qp::kkt_residual(p, s).primal, 0.5, 1e-12);
  s.x = {1.7, 0.0};  // bound violated by 0.7, row by 0.7
  EXPECT_NEAR(qp::kkt_residual(p, s).primal, 0.7, 1e-12);
}

TEST(Properties, MatchesGridOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(trial % 5);
    std::vector<double> interior;
    const auto p = oracle::random_planner_qp(n, rng, 0.1, 20.0, -5.0, 3.0, 0.7, &interior);
    const auto s = qp::solve(p);
    ASSERT_EQ(s.status, Status::Optimal) << "trial " << trial;
    EXPECT_LE(s.kkt_residual, 1e-6);
    expect_feasible(p, s.x, 1e-6);
    const auto g = oracle::grid_oracle(p, 1e-3, {interior, oracle::dykstra_oracle(p)});
    ASSERT_EQ(g.size(), n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(s.x[i], g[i], 5e-3) << "trial " << trial;
  }
}

TEST(Properties, MatchesProjectionOracle) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(trial % 12);
    const auto p = oracle::random_planner_qp(n, rng);
    const auto s = qp::solve(p);
    ASSERT_EQ(s.status, Status::Optimal);
    const auto d = oracle::dykstra_oracle(p);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(s.x[i], d[i], 1e-5) << "trial " << trial;
  }
}

TEST(Properties, RowPermutationInvariance) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = oracle::random_planner_qp(6, rng);
    std::vector<std::size_t> perm(p.rows());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    QpProblem q(p.n);
    q.h = p.h;
    q.g = p.g;
    q.lo = p.lo;
    q.hi = p.hi;
    for (std::size_t r : perm)
      q.add_row(std::vector<qp::Term>(p.row_begin(r), p.row_end(r)), p.b[r]);
    const auto a = qp::solve(p), b = qp::solve(q);
    for (std::size_t i = 0; i < p.n; ++i) EXPECT_NEAR(a.x[i], b.x[i], 2e-6);
  }
}

TEST(Properties, Deterministic) {
  std::mt19937_64 rng(4);
  const auto p = oracle::random_planner_qp(8, rng);
  const auto a = qp::solve(p), b = qp::solve(p);
  for (std::size_t i = 0; i < p.n; ++i) EXPECT_LE(std::abs(a.x[i] - b.x[i]), 1e-10);
}

TEST(Latency, SixtyVariablesTwoHundredRows) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> speed(0.0, 20.0), unit(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, 59);
  QpProblem p(60);
  std::vector<double> x0(60);
  for (std::size_t i = 0; i < 60; ++i) {
    const double v = speed(rng);
    p.h[i] = 2.0;
    p.g[i] = -2.0 * (0.7 * 20.0 + 0.3 * v);
    p.lo[i] = std::max(0.0, v - 0.5);
    p.hi[i] = std::min(20.0, v + 0.3);
    x0[i] = p.lo[i] + unit(rng) * (p.hi[i] - p.lo[i]);
  }
  for (int r = 0; r < 200; ++r) {
    int i = pick(rng), j = pick(rng);
    if (i == j) j = (i + 1) % 60;
    const double a = 20.0 + 100.0 * unit(rng), b = 20.0 + 100.0 * unit(rng);
    p.add_row({{j, a}, {i, -b}}, a * x0[static_cast<std::size_t>(j)] - b * x0[static_cast<std::size_t>(i)]);
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto s = qp::solve(p);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_EQ(s.status, Status::Optimal);
  EXPECT_LE(s.kkt_residual, 1e-6);
  EXPECT_LE(ms, 20.0);
}

TEST(Dump, SelfDescribingText) {
  auto p = box_problem(2, 0.0, 1.0);
  p.add_row({{0, 1.0}, {1, -2.0}}, 0.5);
  std::ostringstream os;
  qp::write_problem(os, p);
  const auto text = os.str();
  EXPECT_EQ(text.rfind("# crossflow-qp v1", 0), 0u);
  EXPECT_NE(text.find("A_triplets 2\n0 0 1\n0 1 -2\n"), std::string::npos);
  EXPECT_NE(text.find("b 0.5\n"), std::string::npos);
}
