#pragma once

// Kantorovich optimal transport between weighted point clouds: exact
// network-simplex solver, log-domain Sinkhorn, and the barycentric mapping.

#include "laot/common.hpp"

#include <cstdint>

namespace laot::discrete {

struct PointCloud {
  Matrix points;   // n x d
  Vector weights;  // length n, non-negative, sums to one

  static PointCloud uniform(Matrix points);
  Index size() const { return points.rows(); }
  // Throws InvalidInput if the invariants do not hold.
  void validate() const;
};

struct Coupling {
  Matrix plan;  // n_s x n_t, non-negative
  double cost = 0.0;
};

// Exact solution plus a dual certificate: u_i + v_j <= C_ij for every pair,
// with equality on the support of the plan.
struct EmdSolution {
  Coupling coupling;
  Vector u;
  Vector v;
  std::int64_t pivots = 0;
};

struct EmdOptions {
  std::int64_t max_pivots = 1'000'000'000;
  // Wall-clock budget in seconds; <= 0 disables the check.
  double time_budget_seconds = 0.0;
};

struct SinkhornOptions {
  double epsilon = 0.0;  // <= 0 selects default_epsilon(cost)
  int max_iter = 1000;
  double tol = 1e-6;
  double time_budget_seconds = 0.0;  // <= 0 disables the check
};

/// Squared Euclidean cost matrix, entry (i, j) = ||xs_i - xt_j||^2.
Matrix cost_matrix(const Eigen::Ref<const Matrix>& xs, const Eigen::Ref<const Matrix>& xt);

/// Exact OT by the network simplex method on the complete bipartite graph.
EmdSolution solve_emd(const Vector& a, const Vector& b, const Eigen::Ref<const Matrix>& cost,
                      const EmdOptions& options = {});

Coupling exact_emd(const PointCloud& source, const PointCloud& target,
                   const Eigen::Ref<const Matrix>& cost, const EmdOptions& options = {});

/// 0.05 * mean(C), the default entropic regularization.
double default_epsilon(const Eigen::Ref<const Matrix>& cost);

/// Entropic OT via log-domain alternating marginal scaling. The reported cost
/// is <plan, C> without the entropy term.
Coupling sinkhorn(const PointCloud& source, const PointCloud& target,
                  const Eigen::Ref<const Matrix>& cost, double epsilon, int max_iter,
                  double tol);

Coupling sinkhorn(const PointCloud& source, const PointCloud& target,
                  const Eigen::Ref<const Matrix>& cost, const SinkhornOptions& options);

/// Row i maps to sum_j plan_ij y_j / sum_j plan_ij.
Matrix barycentric_map(const Coupling& coupling, const Eigen::Ref<const Matrix>& target_points);

/// Exact squared-Euclidean OT cost between uniformly weighted clouds.
double w2_empirical(const Eigen::Ref<const Matrix>& xs, const Eigen::Ref<const Matrix>& xt);

/// max over rows and columns of |plan marginal - weight|.
double marginal_violation(const Matrix& plan, const Vector& a, const Vector& b);

}  // namespace laot::discrete
