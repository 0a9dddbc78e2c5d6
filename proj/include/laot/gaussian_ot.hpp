#pragma once

// Closed-form optimal transport between Gaussian approximations of empirical
// measures: moment estimation, symmetric matrix functions, the
// Bures-Wasserstein distance and the linear Monge map T(x) = A x + b.

#include "laot/common.hpp"

#include <optional>

namespace laot::gaussian {

// Default regularization added to both covariances when fitting a map on
// learned embeddings, where batch covariances are often rank deficient.
inline constexpr double kDefaultCovReg = 1e-6;

// Relative eigenvalue floor: eigenvalues below kEigFloorRel * lambda_max are
// clamped before taking square roots.
inline constexpr double kEigFloorRel = 1e-10;

struct GaussianStats {
  Vector mean;
  Matrix cov;  // biased (divide-by-n) covariance
  Index n = 0;

  Index dim() const { return mean.size(); }
};

struct AffineMap {
  Matrix a;
  Vector b;

  Index dim() const { return b.size(); }
  static AffineMap identity(Index d);
};

struct InvertedMap {
  AffineMap map;
  double inverse_norm = 0.0;  // spectral norm of A^{-1}
};

/// Column mean and biased covariance of an n x d sample.
GaussianStats estimate_stats(const Eigen::Ref<const Matrix>& sample);

/// Symmetric PSD square root V diag(sqrt(max(l_i, floor))) V^T.
/// When eig_floor is not given it defaults to kEigFloorRel * lambda_max.
Matrix matrix_sqrt_sym(const Eigen::Ref<const Matrix>& m,
                       std::optional<double> eig_floor = std::nullopt);

/// Inverse square root with the same flooring rule as matrix_sqrt_sym.
Matrix matrix_inv_sqrt_sym(const Eigen::Ref<const Matrix>& m,
                           std::optional<double> eig_floor = std::nullopt);

/// Squared Bures-Wasserstein distance between two Gaussians.
/// Small negative round-off is clamped to zero; anything beyond the
/// tolerance raises NumericalFailure.
double bures_wasserstein_sq(const GaussianStats& s, const GaussianStats& t);

/// Linear Monge map pushing N(s) onto N(t). cov_reg * I is added to both
/// covariances first.
AffineMap fit_linear_monge(const GaussianStats& s, const GaussianStats& t,
                           double cov_reg = kDefaultCovReg);

/// Row-wise A x_i + b.
Matrix apply_map(const AffineMap& map, const Eigen::Ref<const Matrix>& x);

/// (A^{-1}, -A^{-1} b). Fails when cond(A) exceeds 1e12.
InvertedMap invert_map(const AffineMap& map);

/// Moments of the pushforward: (A m + b, A Sigma A^T).
GaussianStats pushforward_stats(const GaussianStats& s, const AffineMap& map);

}  // namespace laot::gaussian
