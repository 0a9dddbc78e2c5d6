#pragma once

// Small fully connected networks with hand-written reverse mode, Adam and
// global-norm gradient clipping. Rows of every batch matrix are samples.

#include "laot/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace laot::nn {

enum class Activation { relu, linear };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct Layer {
  Matrix w;  // out x in
  Vector b;  // out
  Activation act = Activation::linear;

  Index in_dim() const { return w.cols(); }
  Index out_dim() const { return w.rows(); }
};

struct MlpParams {
  std::vector<Layer> layers;
  std::uint64_t rng_seed = 0;
  // Bumped by every in-place update so stale forward caches can be detected.
  std::uint64_t version = 0;

  Index in_dim() const;
  Index out_dim() const;
  Index num_params() const;
  std::vector<Index> dims() const;
  // Throws InvalidInput when shapes do not chain or a parameter is not finite.
  void validate() const;
};

// Gradient (or moment) buffers shaped like MlpParams.
struct Grads {
  std::vector<Matrix> w;
  std::vector<Vector> b;

  static Grads zeros_like(const MlpParams& p);
  double squared_norm() const;
  void scale(double s);
  void add(const Grads& other);
  bool same_shape(const MlpParams& p) const;
};

struct ForwardCache {
  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> pre;     // pre-activation of each layer
  std::uint64_t version = 0;
  std::vector<Index> dims;
};

struct ForwardResult {
  Matrix out;
  ForwardCache cache;
};

struct BackwardResult {
  Grads grads;
  Matrix input_grad;  // batch x in
};

struct AdamState {
  Grads m;
  Grads v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_params(const MlpParams& p);
};

/// Weights and biases ~ U(-1/sqrt(in), 1/sqrt(in)). Only layers whose
/// activation list entry is relu get a ReLU; the list has dims.size()-1 items.
MlpParams init_params(const std::vector<Index>& dims, const std::vector<Activation>& activations,
                      std::uint64_t seed);

/// One hidden ReLU layer of width in/2 (at least 1) followed by a linear layer.
MlpParams one_hidden_layer(Index in, Index out, std::uint64_t seed);

ForwardResult forward(const MlpParams& params, const Eigen::Ref<const Matrix>& x);
/// Forward pass without keeping the cache.
Matrix predict(const MlpParams& params, const Eigen::Ref<const Matrix>& x);

BackwardResult backward(const MlpParams& params, const ForwardCache& cache,
                        const Eigen::Ref<const Matrix>& upstream_grad);

void adam_step(MlpParams& params, const Grads& grads, AdamState& state, double lr);

/// Scales every buffer in `grads` so that their joint L2 norm is at most
/// max_norm. Returns the norm before clipping.
double clip_grad_norm(std::vector<Grads*> grads, double max_norm);
double clip_grad_norm(Grads& grads, double max_norm);

/// Largest per-parameter relative error between backward() and central
/// differences of the scalar loss sum(probe .* forward(x)).
double gradient_check(const MlpParams& params, const Eigen::Ref<const Matrix>& x,
                      const Eigen::Ref<const Matrix>& probe, double h = 1e-5);

// Binary container: "LAOTMLP1", u64 header length, JSON header, then per
// layer W (row-major) followed by b, all little-endian f64.
void save_params(std::ostream& os, const MlpParams& params);
MlpParams load_params(std::istream& is);

}  // namespace laot::nn
