// Serial reference kernels against their OpenMP versions, and the linear
// Monge map against exact OT at matching sizes.

#include "laot/data.hpp"
#include "laot/discrete_ot.hpp"
#include "laot/gaussian_ot.hpp"
#include "laot/kernels.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace laot;

namespace {

Matrix cloud(Index n, Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Matrix m(n, d);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

template <bool Parallel>
void BM_SqDists(benchmark::State& st) {
  const Matrix a = cloud(st.range(0), 64, 1), b = cloud(st.range(0), 64, 2);
  for (auto _ : st) {
    Matrix c = Parallel ? kernels::omp::sq_dists(a, b) : kernels::serial::sq_dists(a, b);
    benchmark::DoNotOptimize(c.data());
  }
}

template <bool Parallel>
void BM_SoftminRows(benchmark::State& st) {
  const Index n = st.range(0);
  const Matrix c = kernels::serial::sq_dists(cloud(n, 16, 1), cloud(n, 16, 2));
  const Vector g = Vector::Zero(n), log_a = Vector::Constant(n, -std::log(double(n)));
  Vector f(n);
  for (auto _ : st) {
    if (Parallel) {
      kernels::omp::softmin_rows(c, g, log_a, 1.0, f);
    } else {
      kernels::serial::softmin_rows(c, g, log_a, 1.0, f);
    }
    benchmark::DoNotOptimize(f.data());
  }
}

template <bool Parallel>
void BM_Knn(benchmark::State& st) {
  const Matrix train = cloud(st.range(0), 32, 1), query = cloud(st.range(0) / 4, 32, 2);
  for (auto _ : st) {
    auto nl = Parallel ? kernels::omp::knn(train, query, 3) : kernels::serial::knn(train, query, 3);
    benchmark::DoNotOptimize(nl.index.data());
  }
}

void BM_LaotMap(benchmark::State& st) {
  const Matrix a = cloud(st.range(0), 128, 1), b = cloud(st.range(0), 128, 2);
  for (auto _ : st) {
    const auto map = gaussian::fit_linear_monge(gaussian::estimate_stats(a), gaussian::estimate_stats(b));
    Matrix y = gaussian::apply_map(map, a);
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_ExactEmd(benchmark::State& st) {
  const Matrix a = cloud(st.range(0), 128, 1), b = cloud(st.range(0), 128, 2);
  for (auto _ : st) {
    const Matrix c = discrete::cost_matrix(a, b);
    auto cp = discrete::exact_emd(discrete::PointCloud::uniform(a), discrete::PointCloud::uniform(b), c);
    benchmark::DoNotOptimize(cp.cost);
  }
}

}  // namespace

BENCHMARK(BM_SqDists<false>)->Arg(500)->Arg(2000);
BENCHMARK(BM_SqDists<true>)->Arg(500)->Arg(2000);
BENCHMARK(BM_SoftminRows<false>)->Arg(500)->Arg(2000);
BENCHMARK(BM_SoftminRows<true>)->Arg(500)->Arg(2000);
BENCHMARK(BM_Knn<false>)->Arg(2000)->Arg(8000);
BENCHMARK(BM_Knn<true>)->Arg(2000)->Arg(8000);
BENCHMARK(BM_LaotMap)->Arg(500)->Arg(1000)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ExactEmd)->Arg(500)->Arg(1000)->Arg(2000)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
