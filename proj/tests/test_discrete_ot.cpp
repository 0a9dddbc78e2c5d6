#include "laot/discrete_ot.hpp"

#include "network_simplex.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <random>

namespace laot::discrete {
namespace {

using testing::brute_force_assignment;
using testing::random_normal;
using testing::random_uniform;

Vector uniform_weights(Index n) { return Vector::Constant(n, 1.0 / static_cast<double>(n)); }

Vector random_simplex(Index n, std::mt19937_64& rng) {
  Vector w = random_uniform(n, 1, rng, 0.05, 1.0).col(0);
  return w / w.sum();
}

// Dual certificate check: u_i + v_j <= C_ij everywhere, complementary
// slackness on the support, and equal primal/dual objective.
void expect_optimal(const EmdSolution& sol, const Vector& a, const Vector& b, const Matrix& c,
                    double tol) {
  const Matrix& p = sol.coupling.plan;
  EXPECT_LE(marginal_violation(p, a, b), 1e-9);
  EXPECT_GE(p.minCoeff(), 0.0);
  for (Index j = 0; j < c.cols(); ++j) {
    for (Index i = 0; i < c.rows(); ++i) {
      const double reduced = c(i, j) - sol.u[i] - sol.v[j];
      EXPECT_GE(reduced, -tol) << "dual infeasible at (" << i << "," << j << ")";
      if (p(i, j) > 1e-12) EXPECT_NEAR(reduced, 0.0, tol);
    }
  }
  const double dual = a.dot(sol.u) + b.dot(sol.v);
  EXPECT_NEAR(dual, sol.coupling.cost, tol * std::max(1.0, std::abs(dual)));
}

TEST(CostMatrix, SmallCases) {
  Matrix a = Matrix::Zero(1, 2);
  EXPECT_DOUBLE_EQ(cost_matrix(a, a)(0, 0), 0.0);
  Matrix b(1, 2);
  b << 3, 4;
  EXPECT_DOUBLE_EQ(cost_matrix(a, b)(0, 0), 25.0);
  EXPECT_THROW(cost_matrix(a, Matrix::Zero(1, 3)), InvalidInput);
}

TEST(CostMatrix, MatchesDoubleLoop) {
  std::mt19937_64 rng(8);
  const Matrix xs = random_normal(4, 3, rng);
  const Matrix xt = random_normal(5, 3, rng);
  const Matrix c = cost_matrix(xs, xt);
  for (Index i = 0; i < 4; ++i) {
    for (Index j = 0; j < 5; ++j) {
      double ref = 0.0;
      for (Index k = 0; k < 3; ++k) ref += (xs(i, k) - xt(j, k)) * (xs(i, k) - xt(j, k));
      EXPECT_NEAR(c(i, j), ref, 1e-10);
    }
  }
  const Matrix self = cost_matrix(xs, xs);
  for (Index i = 0; i < 4; ++i) EXPECT_EQ(self(i, i), 0.0);
  EXPECT_GE(c.minCoeff(), 0.0);
}

TEST(ExactEmd, TrivialInstances) {
  Matrix c1 = Matrix::Constant(1, 1, 2.5);
  auto one = exact_emd(PointCloud::uniform(Matrix::Zero(1, 1)), PointCloud::uniform(Matrix::Zero(1, 1)), c1);
  EXPECT_DOUBLE_EQ(one.plan(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(one.cost, 2.5);

  Matrix c2(2, 2);
  c2 << 0, 1, 1, 0;
  auto two = exact_emd(PointCloud::uniform(Matrix::Zero(2, 1)), PointCloud::uniform(Matrix::Zero(2, 1)), c2);
  EXPECT_NEAR(two.cost, 0.0, 1e-15);
  EXPECT_NEAR(two.plan(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(two.plan(1, 1), 0.5, 1e-15);
}

TEST(ExactEmd, MatchesPermutationBruteForce) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const Index n = 2 + trial % 5;
    const Matrix c = random_uniform(n, n, rng, 0.0, 10.0);
    const auto sol = solve_emd(uniform_weights(n), uniform_weights(n), c);
    EXPECT_NEAR(sol.coupling.cost, brute_force_assignment(c), 1e-8);
    expect_optimal(sol, uniform_weights(n), uniform_weights(n), c, 1e-9);
  }
}

TEST(ExactEmd, WeightedRectangularInstancesAreOptimal) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 60; ++trial) {
    const Index ns = 1 + trial % 9;
    const Index nt = 1 + (trial * 7) % 11;
    const Vector a = random_simplex(ns, rng);
    Vector b = random_simplex(nt, rng);
    const Matrix c = random_uniform(ns, nt, rng, 0.0, 5.0);
    const auto sol = solve_emd(a, b, c);
    expect_optimal(sol, a, b, c, 1e-9);
  }
}

TEST(ExactEmd, SpanningTreeStaysConsistent) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 25; ++trial) {
    const Index ns = 3 + trial % 7;
    const Index nt = 2 + trial % 5;
    const Vector a = trial % 2 ? uniform_weights(ns) : random_simplex(ns, rng);
    const Vector b = trial % 3 ? uniform_weights(nt) : random_simplex(nt, rng);
    const Matrix c = random_uniform(ns, nt, rng);
    Matrix flow(ns, nt);
    detail::NetworkSimplex solver(a, b, c.data(), flow.data());
    ASSERT_TRUE(solver.tree_is_consistent());
    solver.set_validate_each_pivot(true);
    EXPECT_EQ(solver.run(1'000'000, 0.0), detail::NetworkSimplex::Status::optimal);
  }
}

TEST(ExactEmd, ModeratelyLargeDegenerateProblem) {
  std::mt19937_64 rng(10);
  const Index n = 300;
  const Matrix xs = random_normal(n, 4, rng);
  const Matrix xt = random_normal(n, 4, rng);
  const Matrix c = cost_matrix(xs, xt);
  const auto sol = solve_emd(uniform_weights(n), uniform_weights(n), c);
  expect_optimal(sol, uniform_weights(n), uniform_weights(n), c, 1e-8);
}

TEST(ExactEmd, RejectsInfeasibleWeights) {
  const Matrix c = Matrix::Ones(2, 2);
  EXPECT_THROW(solve_emd(Eigen::Vector2d(0.5, 0.5), Eigen::Vector2d(0.5, 0.6), c), InvalidInput);
  EXPECT_THROW(solve_emd(Eigen::Vector2d(0.5, 0.5), Eigen::Vector3d(0.2, 0.3, 0.5), c), InvalidInput);
}

TEST(ExactEmd, TimeBudgetIsEnforced) {
  std::mt19937_64 rng(12);
  const Index n = 600;
  const Matrix c = cost_matrix(random_normal(n, 8, rng), random_normal(n, 8, rng));
  EmdOptions opts;
  opts.time_budget_seconds = 1e-9;
  EXPECT_THROW(solve_emd(uniform_weights(n), uniform_weights(n), c, opts), TimeBudgetExceeded);
  opts.time_budget_seconds = 0.0;
  opts.max_pivots = 5;
  EXPECT_THROW(solve_emd(uniform_weights(n), uniform_weights(n), c, opts), NumericalFailure);
}

TEST(Sinkhorn, LargeEpsilonApproachesIndependentCoupling) {
  std::mt19937_64 rng(4);
  const auto s = PointCloud::uniform(random_normal(5, 2, rng));
  const auto t = PointCloud::uniform(random_normal(4, 2, rng));
  const Matrix c = cost_matrix(s.points, t.points);
  const auto cp = sinkhorn(s, t, c, 1e4 * c.maxCoeff(), 1000, 1e-9);
  const Matrix outer = s.weights * t.weights.transpose();
  EXPECT_LT((cp.plan - outer).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Sinkhorn, SmallEpsilonApproachesExactCost) {
  std::mt19937_64 rng(6);
  const Matrix c = random_uniform(4, 4, rng, 0.0, 1.0);
  const auto s = PointCloud::uniform(Matrix::Zero(4, 1));
  const auto t = PointCloud::uniform(Matrix::Zero(4, 1));
  const double exact = exact_emd(s, t, c).cost;
  const auto ent = sinkhorn(s, t, c, 1e-3 * c.maxCoeff(), 2000000, 1e-6);
  EXPECT_NEAR(ent.cost, exact, 0.01 * exact);
}

TEST(Sinkhorn, MarginalsAndOrderingOnRandomInstances) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Index ns = 2 + trial % 6;
    const Index nt = 2 + (trial * 3) % 7;
    PointCloud s{random_normal(ns, 3, rng), random_simplex(ns, rng)};
    PointCloud t{random_normal(nt, 3, rng), random_simplex(nt, rng)};
    const Matrix c = cost_matrix(s.points, t.points);
    const auto ent = sinkhorn(s, t, c, SinkhornOptions{});
    EXPECT_LE(marginal_violation(ent.plan, s.weights, t.weights), 1e-6);
    EXPECT_LE(exact_emd(s, t, c).cost, ent.cost + 1e-8);
  }
}

TEST(Sinkhorn, ReportsNonConvergence) {
  std::mt19937_64 rng(2);
  const auto s = PointCloud::uniform(random_normal(6, 2, rng));
  const auto t = PointCloud::uniform(random_normal(6, 2, rng));
  const Matrix c = cost_matrix(s.points, t.points);
  try {
    sinkhorn(s, t, c, 1e-4 * c.maxCoeff(), 3, 1e-12);
    FAIL() << "expected NotConverged";
  } catch (const NotConverged& e) {
    EXPECT_GT(e.achieved(), 1e-12);
  }
  EXPECT_THROW(sinkhorn(s, t, c, 0.0, 10, 1e-6), InvalidInput);
}

TEST(BarycentricMap, DegenerateAndUniformPlans) {
  Matrix y(3, 2);
  y << 0, 0, 1, 2, 3, 1;
  Coupling perm{Matrix::Zero(3, 3), 0.0};
  perm.plan(0, 2) = perm.plan(1, 0) = perm.plan(2, 1) = 1.0 / 3.0;
  const Matrix mapped = barycentric_map(perm, y);
  EXPECT_TRUE(mapped.row(0).isApprox(y.row(2)));
  EXPECT_TRUE(mapped.row(1).isApprox(y.row(0)));
  EXPECT_TRUE(mapped.row(2).isApprox(y.row(1)));

  Coupling uni{Matrix::Constant(2, 3, 1.0 / 6.0), 0.0};
  const Matrix m2 = barycentric_map(uni, y);
  for (Index i = 0; i < 2; ++i) EXPECT_LT((m2.row(i) - y.colwise().mean()).norm(), 1e-15);

  Coupling empty_row{Matrix::Zero(2, 3), 0.0};
  empty_row.plan(0, 0) = 1.0;
  EXPECT_THROW(barycentric_map(empty_row, y), InvalidInput);
}

TEST(BarycentricMap, MatchesNaiveFormula) {
  std::mt19937_64 rng(31);
  Coupling cp{random_uniform(3, 4, rng), 0.0};
  const Matrix y = random_normal(4, 2, rng);
  const Matrix mapped = barycentric_map(cp, y);
  for (Index i = 0; i < 3; ++i) {
    for (Index k = 0; k < 2; ++k) {
      double num = 0.0, den = 0.0;
      for (Index j = 0; j < 4; ++j) {
        num += cp.plan(i, j) * y(j, k);
        den += cp.plan(i, j);
      }
      EXPECT_NEAR(mapped(i, k), num / den, 1e-12);
    }
  }
}

TEST(W2Empirical, SimpleCases) {
  std::mt19937_64 rng(15);
  const Matrix x = random_normal(7, 3, rng);
  EXPECT_NEAR(w2_empirical(x, x), 0.0, 1e-15);
  Matrix xs(2, 1), xt(2, 1);
  xs << 0, 1;
  const double shift = 1.7;
  xt << shift, 1 + shift;
  EXPECT_NEAR(w2_empirical(xs, xt), shift * shift, 1e-12);
}

TEST(W2Empirical, MatchesBruteForceAndIsSymmetric) {
  std::mt19937_64 rng(21);
  const Matrix xs = random_normal(6, 2, rng);
  const Matrix xt = random_normal(6, 2, rng);
  EXPECT_NEAR(w2_empirical(xs, xt), brute_force_assignment(cost_matrix(xs, xt)), 1e-10);
  EXPECT_NEAR(w2_empirical(xs, xt), w2_empirical(xt, xs), 1e-8);
}

TEST(W2Empirical, OneDimensionalSortedMatching) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 3 + trial;
    Vector a = random_normal(n, 1, rng).col(0);
    Vector b = random_normal(n, 1, rng).col(0) * 2.0;
    const double w2 = w2_empirical(a, b);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_NEAR(w2, (a - b).squaredNorm() / static_cast<double>(n), 1e-10);
  }
}

}  // namespace
}  // namespace laot::discrete
