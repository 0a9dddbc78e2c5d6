#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace laot {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Error hierarchy. Every failure the library reports derives from Error so
// callers that only care about "did it work" can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class InvalidState : public Error {
 public:
  using Error::Error;
};

class NumericalFailure : public Error {
 public:
  using Error::Error;
};

// Iterative solver ran out of iterations. Carries the residual it reached.
class NotConverged : public NumericalFailure {
 public:
  NotConverged(const std::string& what, double achieved)
      : NumericalFailure(what), achieved_(achieved) {}
  double achieved() const noexcept { return achieved_; }

 private:
  double achieved_;
};

// A solver was given a wall-clock budget and exceeded it.
class TimeBudgetExceeded : public Error {
 public:
  TimeBudgetExceeded(const std::string& what, double elapsed_seconds)
      : Error(what), elapsed_(elapsed_seconds) {}
  double elapsed_seconds() const noexcept { return elapsed_; }

 private:
  double elapsed_;
};

// splitmix64 finalizer over (seed, stream): independent-looking child seeds.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

}  // namespace laot
