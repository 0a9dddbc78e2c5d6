#pragma once

// Per-element bodies shared by the serial and OpenMP kernels. Keeping one
// definition guarantees both variants perform the same arithmetic.

#include "laot/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace laot::kernels::detail {

inline double sq_dist(const double* a, const double* b, Index d) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  Index k = 0;
  for (; k + 4 <= d; k += 4) {
    const double d0 = a[k] - b[k];
    const double d1 = a[k + 1] - b[k + 1];
    const double d2 = a[k + 2] - b[k + 2];
    const double d3 = a[k + 3] - b[k + 3];
    s0 += d0 * d0;
    s1 += d1 * d1;
    s2 += d2 * d2;
    s3 += d3 * d3;
  }
  for (; k < d; ++k) {
    const double dk = a[k] - b[k];
    s0 += dk * dk;
  }
  return (s0 + s1) + (s2 + s3);
}

inline void check_same_width(Index a, Index b, const char* what) {
  if (a != b) {
    throw InvalidInput(std::string(what) + ": dimension mismatch (" + std::to_string(a) +
                       " vs " + std::to_string(b) + ")");
  }
}

// Transposed copy so each point is a contiguous column.
inline Matrix points_as_columns(const Eigen::Ref<const Matrix>& x) { return x.transpose(); }

inline void sq_dists_column(const Matrix& xs_t, const Matrix& xt_t, Index j, Matrix& out) {
  const Index d = xs_t.rows();
  const double* y = xt_t.col(j).data();
  double* dst = out.col(j).data();
  for (Index i = 0; i < xs_t.cols(); ++i) dst[i] = sq_dist(xs_t.col(i).data(), y, d);
}

inline double softmin_row(const Eigen::Ref<const Matrix>& cost, const Vector& g, Index i,
                          double eps) {
  double m = -std::numeric_limits<double>::infinity();
  for (Index j = 0; j < cost.cols(); ++j) m = std::max(m, (g[j] - cost(i, j)) / eps);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (Index j = 0; j < cost.cols(); ++j) s += std::exp((g[j] - cost(i, j)) / eps - m);
  return m + std::log(s);
}

inline double softmin_col(const Eigen::Ref<const Matrix>& cost, const Vector& f, Index j,
                          double eps) {
  const double* c = cost.col(j).data();
  double m = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < cost.rows(); ++i) m = std::max(m, (f[i] - c[i]) / eps);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (Index i = 0; i < cost.rows(); ++i) s += std::exp((f[i] - c[i]) / eps - m);
  return m + std::log(s);
}

inline void knn_query(const Matrix& train_t, const double* q, Index k, Index row,
                      NeighborLists& out, std::vector<double>& dist, std::vector<Index>& order) {
  const Index n = train_t.cols();
  const Index d = train_t.rows();
  dist.resize(static_cast<std::size_t>(n));
  order.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) dist[i] = sq_dist(train_t.col(i).data(), q, d);
  std::iota(order.begin(), order.end(), Index{0});
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Index a, Index b) {
    return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
  });
  for (Index r = 0; r < k; ++r) {
    out.index(row, r) = order[r];
    out.sq_dist(row, r) = dist[order[r]];
  }
}

inline void check_knn_args(const Eigen::Ref<const Matrix>& train,
                           const Eigen::Ref<const Matrix>& query, Index k) {
  if (train.rows() == 0) throw InvalidInput("knn: empty training set");
  if (k < 1 || k > train.rows()) {
    throw InvalidInput("knn: k must lie in [1, " + std::to_string(train.rows()) + "], got " +
                       std::to_string(k));
  }
  if (query.rows() > 0) check_same_width(train.cols(), query.cols(), "knn");
}

}  // namespace laot::kernels::detail
