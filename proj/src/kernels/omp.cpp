#include "kernel_body.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace laot::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace omp {

Matrix sq_dists(const Eigen::Ref<const Matrix>& xs, const Eigen::Ref<const Matrix>& xt) {
  detail::check_same_width(xs.cols(), xt.cols(), "sq_dists");
  const Matrix xs_t = detail::points_as_columns(xs);
  const Matrix xt_t = detail::points_as_columns(xt);
  Matrix out(xs.rows(), xt.rows());
  const Index nt = xt.rows();
#pragma omp parallel for schedule(static)
  for (Index j = 0; j < nt; ++j) detail::sq_dists_column(xs_t, xt_t, j, out);
  return out;
}

void softmin_rows(const Eigen::Ref<const Matrix>& cost, const Vector& g, const Vector& log_a,
                  double eps, Vector& f) {
  f.resize(cost.rows());
  const Index n = cost.rows();
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i) {
    f[i] = eps * log_a[i] - eps * detail::softmin_row(cost, g, i, eps);
  }
}

void softmin_cols(const Eigen::Ref<const Matrix>& cost, const Vector& f, const Vector& log_b,
                  double eps, Vector& g) {
  g.resize(cost.cols());
  const Index n = cost.cols();
#pragma omp parallel for schedule(static)
  for (Index j = 0; j < n; ++j) {
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
  const Index nq = query.rows();
#pragma omp parallel
  {
    std::vector<double> dist;
    std::vector<Index> order;
#pragma omp for schedule(static)
    for (Index q = 0; q < nq; ++q) {
      detail::knn_query(train_t, query_t.col(q).data(), k, q, out, dist, order);
    }
  }
  return out;
}

}  // namespace omp
}  // namespace laot::kernels
