#include "kernel_body.hpp"

namespace laot::kernels::serial {

Matrix sq_dists(const Eigen::Ref<const Matrix>& xs, const Eigen::Ref<const Matrix>& xt) {
  detail::check_same_width(xs.cols(), xt.cols(), "sq_dists");
  const Matrix xs_t = detail::points_as_columns(xs);
  const Matrix xt_t = detail::points_as_columns(xt);
  Matrix out(xs.rows(), xt.rows());
  for (Index j = 0; j < xt.rows(); ++j) detail::sq_dists_column(xs_t, xt_t, j, out);
  return out;
}

void softmin_rows(const Eigen::Ref<const Matrix>& cost, const Vector& g, const Vector& log_a,
                  double eps, Vector& f) {
  f.resize(cost.rows());
  for (Index i = 0; i < cost.rows(); ++i) {
    f[i] = eps * log_a[i] - eps * detail::softmin_row(cost, g, i, eps);
  }
}

void softmin_cols(const Eigen::Ref<const Matrix>& cost, const Vector& f, const Vector& log_b,
                  double eps, Vector& g) {
  g.resize(cost.cols());
  for (Index j = 0; j < cost.cols(); ++j) {
    g[j] = eps * log_b[j] - eps * detail::softmin_col(cost, f, j, eps);
  }
}

NeighborLists knn(const Eigen::Ref<const Matrix>& train, const Eigen::Ref<const Matrix>& query,
                  Index k) {
  detail::check_knn_args(train, query, k);
  const Matrix train_t = detail::points_as_columns(train);
  const Matrix query_t = detail::points_as_columns(query);
  NeighborLists out;
  out.index.resize(query.rows(), k);
  out.sq_dist.resize(query.rows(), k);
  std::vector<double> dist;
  std::vector<Index> order;
  for (Index q = 0; q < query.rows(); ++q) {
    detail::knn_query(train_t, query_t.col(q).data(), k, q, out, dist, order);
  }
  return out;
}

}  // namespace laot::kernels::serial
