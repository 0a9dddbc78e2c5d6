#include "laot/discrete_ot.hpp"

#include "laot/kernels.hpp"
#include "network_simplex.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

namespace laot::discrete {
namespace {

constexpr double kWeightSumTol = 1e-10;
constexpr double kFeasibilityTol = 1e-8;

void check_weights(const Vector& w, const char* what) {
  if (w.size() == 0) throw InvalidInput(std::string(what) + ": empty weight vector");
  if (!w.allFinite() || (w.array() < 0.0).any()) {
    throw InvalidInput(std::string(what) + ": weights must be finite and non-negative");
  }
}

void check_cost_shape(const Eigen::Ref<const Matrix>& cost, Index ns, Index nt) {
  if (cost.rows() != ns || cost.cols() != nt) {
    std::ostringstream os;
    os << "cost matrix is " << cost.rows() << "x" << cost.cols() << ", expected " << ns << "x"
       << nt;
    throw InvalidInput(os.str());
  }
  if (!cost.allFinite()) throw InvalidInput("cost matrix has non-finite entries");
}

}  // namespace

PointCloud PointCloud::uniform(Matrix points) {
  PointCloud pc;
  const Index n = points.rows();
  pc.points = std::move(points);
  pc.weights = Vector::Constant(n, n ? 1.0 / static_cast<double>(n) : 0.0);
  return pc;
}

void PointCloud::validate() const {
  if (weights.size() != points.rows()) {
    throw InvalidInput("PointCloud: weight count does not match point count");
  }
  check_weights(weights, "PointCloud");
  if (std::abs(weights.sum() - 1.0) > kWeightSumTol) {
    throw InvalidInput("PointCloud: weights do not sum to one");
  }
  if (!points.allFinite()) throw InvalidInput("PointCloud: non-finite coordinates");
}

Matrix cost_matrix(const Eigen::Ref<const Matrix>& xs, const Eigen::Ref<const Matrix>& xt) {
  if (xs.cols() != xt.cols()) {
    throw InvalidInput("cost_matrix: dimension mismatch (" + std::to_string(xs.cols()) + " vs " +
                       std::to_string(xt.cols()) + ")");
  }
  return kernels::omp::sq_dists(xs, xt);
}

EmdSolution solve_emd(const Vector& a, const Vector& b, const Eigen::Ref<const Matrix>& cost,
                      const EmdOptions& options) {
  check_weights(a, "exact_emd source");
  check_weights(b, "exact_emd target");
  check_cost_shape(cost, a.size(), b.size());
  if (std::abs(a.sum() - b.sum()) > kFeasibilityTol) {
    std::ostringstream os;
    os << "exact_emd: marginals have different mass (" << a.sum() << " vs " << b.sum() << ")";
    throw InvalidInput(os.str());
  }

  // The solver reads costs column-major; make a contiguous copy only if needed.
  Matrix owned;
  const double* cost_ptr = cost.data();
  if (cost.outerStride() != cost.rows() || cost.innerStride() != 1) {
    owned = cost;
    cost_ptr = owned.data();
  }

  EmdSolution sol;
  sol.coupling.plan.resize(a.size(), b.size());
  detail::NetworkSimplex ns(a, b, cost_ptr, sol.coupling.plan.data());
  const auto status = ns.run(options.max_pivots, options.time_budget_seconds);
  sol.pivots = ns.pivots();
  switch (status) {
    case detail::NetworkSimplex::Status::optimal:
      break;
    case detail::NetworkSimplex::Status::pivot_limit:
      throw NumericalFailure("exact_emd: pivot limit reached after " +
                             std::to_string(ns.pivots()) + " pivots");
    case detail::NetworkSimplex::Status::unbounded:
      throw NumericalFailure("exact_emd: solver reported an unbounded problem");
    case detail::NetworkSimplex::Status::infeasible:
      throw NumericalFailure("exact_emd: solver terminated with residual artificial flow " +
                             std::to_string(ns.artificial_flow()));
  }

  const Index n_s = a.size();
  sol.u.resize(n_s);
  sol.v.resize(b.size());
  for (Index i = 0; i < n_s; ++i) sol.u[i] = -ns.potential(static_cast<int>(i));
  for (Index j = 0; j < b.size(); ++j) sol.v[j] = ns.potential(static_cast<int>(n_s + j));
  // Potentials are defined up to a constant; anchor the source side at zero mean.
  const double shift = sol.u.mean();
  sol.u.array() -= shift;
  sol.v.array() += shift;

  sol.coupling.plan = sol.coupling.plan.cwiseMax(0.0);
  sol.coupling.cost = sol.coupling.plan.cwiseProduct(cost).sum();
  return sol;
}

Coupling exact_emd(const PointCloud& source, const PointCloud& target,
                   const Eigen::Ref<const Matrix>& cost, const EmdOptions& options) {
  source.validate();
  target.validate();
  return solve_emd(source.weights, target.weights, cost, options).coupling;
}

double default_epsilon(const Eigen::Ref<const Matrix>& cost) {
  const double m = cost.size() ? cost.mean() : 0.0;
  return m > 0.0 ? 0.05 * m : 1e-3;
}

double marginal_violation(const Matrix& plan, const Vector& a, const Vector& b) {
  const double rows = (plan.rowwise().sum() - a).cwiseAbs().maxCoeff();
  const double cols = (plan.colwise().sum().transpose() - b).cwiseAbs().maxCoeff();
  return std::max(rows, cols);
}

namespace {

Coupling sinkhorn_impl(const PointCloud& source, const PointCloud& target,
                       const Eigen::Ref<const Matrix>& cost, double epsilon, int max_iter,
                       double tol, double time_budget_seconds) {
  source.validate();
  target.validate();
  check_cost_shape(cost, source.size(), target.size());
  if (!(epsilon > 0.0)) throw InvalidInput("sinkhorn: epsilon must be positive");
  if (!(tol > 0.0)) throw InvalidInput("sinkhorn: tol must be positive");
  if (max_iter < 1) throw InvalidInput("sinkhorn: max_iter must be >= 1");

  const Vector log_a = source.weights.array().log();
  const Vector log_b = target.weights.array().log();
  Vector f = Vector::Zero(source.size());
  Vector g = Vector::Zero(target.size());

  auto plan_from = [&](const Vector& fv, const Vector& gv) {
    Matrix p(cost.rows(), cost.cols());
    for (Index j = 0; j < cost.cols(); ++j) {
      for (Index i = 0; i < cost.rows(); ++i) p(i, j) = std::exp((fv[i] + gv[j] - cost(i, j)) / epsilon);
    }
    return p;
  };

  constexpr int kCheckEvery = 10;
  const auto t0 = std::chrono::steady_clock::now();
  double violation = std::numeric_limits<double>::infinity();
  Matrix plan;
  for (int it = 1; it <= max_iter; ++it) {
    kernels::omp::softmin_rows(cost, g, log_a, epsilon, f);
    kernels::omp::softmin_cols(cost, f, log_b, epsilon, g);
    if ((f.array().isNaN() || f.array() == std::numeric_limits<double>::infinity()).any() ||
        (g.array().isNaN() || g.array() == std::numeric_limits<double>::infinity()).any()) {
      throw NumericalFailure("sinkhorn: dual potentials overflowed at iteration " +
                             std::to_string(it));
    }
    if (it % kCheckEvery == 0 || it == max_iter) {
      plan = plan_from(f, g);
      violation = marginal_violation(plan, source.weights, target.weights);
      if (!std::isfinite(violation)) {
        throw NumericalFailure("sinkhorn: non-finite plan at iteration " + std::to_string(it));
      }
      if (violation <= tol) break;
      const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (time_budget_seconds > 0.0 && t > time_budget_seconds) {
        throw TimeBudgetExceeded("sinkhorn exceeded its time budget at iteration " + std::to_string(it), t);
      }
    }
  }
  if (!(violation <= tol)) {
    std::ostringstream os;
    os << "sinkhorn: marginal violation " << violation << " above tol " << tol << " after "
       << max_iter << " iterations";
    throw NotConverged(os.str(), violation);
  }
  Coupling out;
  out.plan = std::move(plan);
  out.cost = out.plan.cwiseProduct(cost).sum();
  return out;
}

}  // namespace

Coupling sinkhorn(const PointCloud& source, const PointCloud& target,
                  const Eigen::Ref<const Matrix>& cost, double epsilon, int max_iter,
                  double tol) {
  return sinkhorn_impl(source, target, cost, epsilon, max_iter, tol, 0.0);
}

Coupling sinkhorn(const PointCloud& source, const PointCloud& target,
                  const Eigen::Ref<const Matrix>& cost, const SinkhornOptions& options) {
  const double eps = options.epsilon > 0.0 ? options.epsilon : default_epsilon(cost);
  return sinkhorn_impl(source, target, cost, eps, options.max_iter, options.tol,
                       options.time_budget_seconds);
}

Matrix barycentric_map(const Coupling& coupling, const Eigen::Ref<const Matrix>& target_points) {
  const Matrix& p = coupling.plan;
  if (p.cols() != target_points.rows()) {
    throw InvalidInput("barycentric_map: plan has " + std::to_string(p.cols()) +
                       " columns but there are " + std::to_string(target_points.rows()) +
                       " target points");
  }
  const Vector mass = p.rowwise().sum();
  for (Index i = 0; i < mass.size(); ++i) {
    if (!(mass[i] > 0.0)) {
      throw InvalidInput("barycentric_map: source row " + std::to_string(i) +
                         " carries no mass");
    }
  }
  Matrix out = p * target_points;
  out.array().colwise() /= mass.array();
  return out;
}

double w2_empirical(const Eigen::Ref<const Matrix>& xs, const Eigen::Ref<const Matrix>& xt) {
  if (xs.rows() == 0 || xt.rows() == 0) throw InvalidInput("w2_empirical: empty cloud");
  const Matrix c = cost_matrix(xs, xt);
  const Vector a = Vector::Constant(xs.rows(), 1.0 / static_cast<double>(xs.rows()));
  const Vector b = Vector::Constant(xt.rows(), 1.0 / static_cast<double>(xt.rows()));
  return solve_emd(a, b, c).coupling.cost;
}

}  // namespace laot::discrete
