#pragma once

// Data-parallel inner loops. Each kernel exists twice with identical
// signatures: `serial` is the plain reference loop kept for testing, `omp`
// parallelizes over independent output rows/columns. Every output element is
// produced by the same sequence of floating-point operations in both
// variants, so results agree bit-for-bit regardless of thread count.

#include "laot/common.hpp"

#include <vector>

namespace laot::kernels {

// Nearest-neighbour lists for a batch of queries: row q holds the k closest
// training indices ordered by (squared distance, index).
struct NeighborLists {
  Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> index;
  RowMatrix sq_dist;
};

namespace serial {

// out(i, j) = ||xs_i - xt_j||^2. xs is n_s x d, xt is n_t x d.
Matrix sq_dists(const Eigen::Ref<const Matrix>& xs, const Eigen::Ref<const Matrix>& xt);

// f_i = -eps * log sum_j exp((g_j - cost_ij) / eps) + eps * log_a_i
void softmin_rows(const Eigen::Ref<const Matrix>& cost, const Vector& g, const Vector& log_a,
                  double eps, Vector& f);

// g_j = -eps * log sum_i exp((f_i - cost_ij) / eps) + eps * log_b_j
void softmin_cols(const Eigen::Ref<const Matrix>& cost, const Vector& f, const Vector& log_b,
                  double eps, Vector& g);

NeighborLists knn(const Eigen::Ref<const Matrix>& train, const Eigen::Ref<const Matrix>& query,
                  Index k);

}  // namespace serial

namespace omp {

Matrix sq_dists(const Eigen::Ref<const Matrix>& xs, const Eigen::Ref<const Matrix>& xt);

void softmin_rows(const Eigen::Ref<const Matrix>& cost, const Vector& g, const Vector& log_a,
                  double eps, Vector& f);

void softmin_cols(const Eigen::Ref<const Matrix>& cost, const Vector& f, const Vector& log_b,
                  double eps, Vector& g);

NeighborLists knn(const Eigen::Ref<const Matrix>& train, const Eigen::Ref<const Matrix>& query,
                  Index k);

}  // namespace omp

// Number of threads the omp variants will use (1 when built without OpenMP).
int max_threads();

}  // namespace laot::kernels
