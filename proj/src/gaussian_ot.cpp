#include "laot/gaussian_ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace laot::gaussian {
namespace {

constexpr double kSymmetryTol = 1e-10;
constexpr double kMaxCondition = 1e12;
constexpr double kBuresClampTol = 1e-8;

void require_symmetric(const Eigen::Ref<const Matrix>& m, const char* what) {
  if (m.rows() != m.cols()) throw InvalidInput(std::string(what) + ": matrix is not square");
  if (!m.allFinite()) throw InvalidInput(std::string(what) + ": non-finite entries");
  const double scale = std::max(1.0, m.norm());
  if ((m - m.transpose()).norm() > kSymmetryTol * scale) {
    throw InvalidInput(std::string(what) + ": matrix is not symmetric");
  }
}

Eigen::SelfAdjointEigenSolver<Matrix> eigen_sym(const Eigen::Ref<const Matrix>& m,
                                                const char* what) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  if (es.info() != Eigen::Success) {
    throw NumericalFailure(std::string(what) + ": eigendecomposition failed");
  }
  return es;
}

double resolve_floor(const Vector& evals, std::optional<double> eig_floor) {
  if (eig_floor) {
    if (*eig_floor < 0.0) throw InvalidInput("eig_floor must be non-negative");
    return *eig_floor;
  }
  const double top = evals.size() ? std::max(evals.maxCoeff(), 0.0) : 0.0;
  return kEigFloorRel * top;
}

template <class F>
Matrix spectral_apply(const Eigen::Ref<const Matrix>& m, std::optional<double> eig_floor,
                      const char* what, F&& f) {
  require_symmetric(m, what);
  const Matrix sym = 0.5 * (m + m.transpose());
  const auto es = eigen_sym(sym, what);
  const double floor = resolve_floor(es.eigenvalues(), eig_floor);
  Vector d = es.eigenvalues().unaryExpr([&](double l) { return f(std::max(l, floor)); });
  const Matrix& v = es.eigenvectors();
  Matrix out = v * d.asDiagonal() * v.transpose();
  return 0.5 * (out + out.transpose());
}

void require_same_dim(const GaussianStats& s, const GaussianStats& t, const char* what) {
  if (s.dim() != t.dim() || s.cov.rows() != s.dim() || t.cov.rows() != t.dim()) {
    std::ostringstream os;
    os << what << ": dimension mismatch (" << s.dim() << " vs " << t.dim() << ")";
    throw InvalidInput(os.str());
  }
}

std::string spectrum_string(const Vector& evals) {
  std::ostringstream os;
  os << "[";
  for (Index i = 0; i < evals.size(); ++i) os << (i ? ", " : "") << evals[i];
  os << "]";
  return os.str();
}

}  // namespace

AffineMap AffineMap::identity(Index d) { return {Matrix::Identity(d, d), Vector::Zero(d)}; }

GaussianStats estimate_stats(const Eigen::Ref<const Matrix>& sample) {
  if (sample.rows() < 1 || sample.cols() < 1) {
    throw InvalidInput("estimate_stats: empty sample");
  }
  if (!sample.allFinite()) throw InvalidInput("estimate_stats: non-finite entries in sample");
  GaussianStats st;
  st.n = sample.rows();
  st.mean = sample.colwise().mean().transpose();
  const Matrix centered = sample.rowwise() - st.mean.transpose();
  Matrix cov = (centered.transpose() * centered) / static_cast<double>(st.n);
  st.cov = 0.5 * (cov + cov.transpose());
  return st;
}

Matrix matrix_sqrt_sym(const Eigen::Ref<const Matrix>& m, std::optional<double> eig_floor) {
  return spectral_apply(m, eig_floor, "matrix_sqrt_sym", [](double l) { return std::sqrt(l); });
}

Matrix matrix_inv_sqrt_sym(const Eigen::Ref<const Matrix>& m, std::optional<double> eig_floor) {
  return spectral_apply(m, eig_floor, "matrix_inv_sqrt_sym", [](double l) {
    if (l <= 0.0) throw NumericalFailure("matrix_inv_sqrt_sym: singular matrix");
    return 1.0 / std::sqrt(l);
  });
}

double bures_wasserstein_sq(const GaussianStats& s, const GaussianStats& t) {
  require_same_dim(s, t, "bures_wasserstein_sq");
  const Matrix t_half = matrix_sqrt_sym(t.cov);
  Matrix inner = t_half * s.cov * t_half;
  inner = 0.5 * (inner + inner.transpose());
  const auto es = eigen_sym(inner, "bures_wasserstein_sq");
  double cross = 0.0;
  for (Index i = 0; i < es.eigenvalues().size(); ++i) {
    cross += std::sqrt(std::max(es.eigenvalues()[i], 0.0));
  }
  const double mean_term = (s.mean - t.mean).squaredNorm();
  const double traces = s.cov.trace() + t.cov.trace();
  const double value = mean_term + traces - 2.0 * cross;
  const double tol = kBuresClampTol * std::max(1.0, mean_term + traces);
  if (value < 0.0) {
    if (value >= -tol) return 0.0;
    std::ostringstream os;
    os << "bures_wasserstein_sq: negative value " << value << " beyond round-off tolerance";
    throw NumericalFailure(os.str());
  }
  return value;
}

AffineMap fit_linear_monge(const GaussianStats& s, const GaussianStats& t, double cov_reg) {
  require_same_dim(s, t, "fit_linear_monge");
  if (!(cov_reg >= 0.0)) throw InvalidInput("fit_linear_monge: cov_reg must be >= 0");
  const Index d = s.dim();
  const Matrix eye = Matrix::Identity(d, d);
  const Matrix cov_s = s.cov + cov_reg * eye;
  const Matrix cov_t = t.cov + cov_reg * eye;

  const Matrix t_half = matrix_sqrt_sym(cov_t);
  Matrix inner = t_half * cov_s * t_half;
  inner = 0.5 * (inner + inner.transpose());
  const auto es = eigen_sym(inner, "fit_linear_monge");
  const Vector& evals = es.eigenvalues();
  const double top = evals.maxCoeff();
  if (!(top > std::numeric_limits<double>::min()) || !evals.allFinite()) {
    throw NumericalFailure("fit_linear_monge: regularized inner matrix is not invertible, "
                           "spectrum " + spectrum_string(evals));
  }
  const double floor = kEigFloorRel * top;
  const Vector inv_sqrt = evals.unaryExpr([&](double l) { return 1.0 / std::sqrt(std::max(l, floor)); });
  const Matrix& v = es.eigenvectors();
  const Matrix inner_inv_sqrt = v * inv_sqrt.asDiagonal() * v.transpose();

  AffineMap map;
  Matrix a = t_half * inner_inv_sqrt * t_half;
  map.a = 0.5 * (a + a.transpose());
  map.b = t.mean - map.a * s.mean;
  if (!map.a.allFinite() || !map.b.allFinite()) {
    throw NumericalFailure("fit_linear_monge: non-finite map, spectrum " + spectrum_string(evals));
  }
  return map;
}

Matrix apply_map(const AffineMap& map, const Eigen::Ref<const Matrix>& x) {
  const Index d = map.dim();
  if (map.a.rows() != d || map.a.cols() != d) throw InvalidInput("apply_map: malformed map");
  if (x.rows() == 0) return Matrix(0, d);
  if (x.cols() != d) {
    throw InvalidInput("apply_map: input has " + std::to_string(x.cols()) +
                       " columns, map expects " + std::to_string(d));
  }
  Matrix out = x * map.a.transpose();
  out.rowwise() += map.b.transpose();
  return out;
}

InvertedMap invert_map(const AffineMap& map) {
  const Index d = map.dim();
  if (map.a.rows() != d || map.a.cols() != d) throw InvalidInput("invert_map: malformed map");
  Eigen::JacobiSVD<Matrix> svd(map.a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector& sv = svd.singularValues();
  const double smax = sv.size() ? sv(0) : 0.0;
  const double smin = sv.size() ? sv(sv.size() - 1) : 0.0;
  if (!(smin > 0.0) || smax / smin > kMaxCondition) {
    std::ostringstream os;
    os << "invert_map: matrix is singular or ill-conditioned (sigma_max=" << smax
       << ", sigma_min=" << smin << ")";
    throw NumericalFailure(os.str());
  }
  const Matrix inv = svd.matrixV() * sv.cwiseInverse().asDiagonal() * svd.matrixU().transpose();
  InvertedMap out;
  out.map.a = inv;
  out.map.b = -inv * map.b;
  out.inverse_norm = 1.0 / smin;
  return out;
}

GaussianStats pushforward_stats(const GaussianStats& s, const AffineMap& map) {
  if (s.dim() != map.dim()) throw InvalidInput("pushforward_stats: dimension mismatch");
  GaussianStats out;
  out.n = s.n;
  out.mean = map.a * s.mean + map.b;
  Matrix cov = map.a * s.cov * map.a.transpose();
  out.cov = 0.5 * (cov + cov.transpose());
  return out;
}

}  // namespace laot::gaussian
