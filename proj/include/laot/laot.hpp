#pragma once

// Coupled autoencoders trained so that the two embedded distributions are
// aligned by the closed-form linear Monge map.

#include "laot/common.hpp"
#include "laot/discrete_ot.hpp"
#include "laot/gaussian_ot.hpp"
#include "laot/nn.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace laot::align {

enum class LaSolver { exact, entropic };
enum class MapGradientMode { stop_gradient, none };
enum class Domain { source, target };

// derive_seed stream ids used for initialization and batch shuffling.
namespace streams {
inline constexpr std::uint64_t encoder = 1;
inline constexpr std::uint64_t decoder = 2;
inline constexpr std::uint64_t source_shuffle = 100;
inline constexpr std::uint64_t target_shuffle = 101;
}  // namespace streams

struct ExperimentConfig {
  Index latent_dim = 64;
  double lambda = 0.1;
  Index batch_size = 64;
  double learning_rate = 1e-4;
  int epochs = 10;
  std::uint64_t seed = 0;
  double cov_reg = gaussian::kDefaultCovReg;
  double grad_clip = 1.0;
  LaSolver la_solver = LaSolver::exact;
  double entropic_epsilon = 0.0;  // <= 0: 0.05 * mean batch cost
  MapGradientMode map_gradient_mode = MapGradientMode::stop_gradient;

  // Throws InvalidInput naming the offending field.
  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

struct LaotModel {
  nn::MlpParams enc_s, dec_s, enc_t, dec_t;
  std::optional<gaussian::AffineMap> fitted_map;
  ExperimentConfig config;

  // Encoders in -> in/2 -> k, decoders k -> in/2 -> in. Networks playing the
  // same role share an init seed, so with equal widths both domains start
  // from the same weights.
  static LaotModel create(Index source_dim, Index target_dim, const ExperimentConfig& config);
  Index latent_dim() const { return enc_s.out_dim(); }
  Index source_dim() const { return enc_s.in_dim(); }
  Index target_dim() const { return enc_t.in_dim(); }
  void validate() const;
};

struct TrainLogRow {
  int epoch = 0;
  int step = 0;
  double l_rec = 0.0;
  double l_la = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
};

struct EpochSummary {
  int epoch = 0;
  double l_rec = 0.0;
  double l_la = 0.0;
  double total = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> steps;
  std::vector<std::string> warnings;  // skipped alignment terms and similar

  std::vector<EpochSummary> epochs() const;
  void write_csv(std::ostream& os) const;
};

struct TrainResult {
  LaotModel model;
  TrainLog log;
};

/// Alignment term of one batch pair together with everything the backward
/// pass needs.
struct LaTerm {
  double value = 0.0;
  gaussian::AffineMap map;
  Matrix plan;    // n_s x n_t coupling between pushed zs and zt
  Matrix pushed;  // A zs + b
};

struct LaGrad {
  double value = 0.0;
  Matrix grad_zs;
  Matrix grad_zt;
};

struct LaOptions {
  double cov_reg = gaussian::kDefaultCovReg;
  LaSolver solver = LaSolver::exact;
  double entropic_epsilon = 0.0;
  // When false the map is pinned to the identity (invariant-feature ablation).
  bool fit_map = true;
};

/// Sum over both domains of the batch-mean squared reconstruction error.
double reconstruction_loss(const LaotModel& model, const Eigen::Ref<const Matrix>& xs_batch,
                           const Eigen::Ref<const Matrix>& xt_batch);

/// Fits the linear Monge map on batch moments, pushes zs through it and
/// returns the exact W2^2 between the pushed batch and zt.
LaTerm la_term(const Eigen::Ref<const Matrix>& zs, const Eigen::Ref<const Matrix>& zt,
               const LaOptions& options);
double la_loss(const Eigen::Ref<const Matrix>& zs, const Eigen::Ref<const Matrix>& zt,
               double cov_reg, gaussian::AffineMap* map_out = nullptr);

/// Gradient of the alignment term with the map and the coupling held fixed.
LaGrad la_loss_grad(const Eigen::Ref<const Matrix>& zs, const Eigen::Ref<const Matrix>& zt,
                    const LaOptions& options, MapGradientMode mode);

/// Gradient for a frozen (map, plan): the plan-weighted squared distances
/// sum_ij P_ij ||A zs_i + b - zt_j||^2.
LaGrad frozen_la_grad(const Eigen::Ref<const Matrix>& zs, const Eigen::Ref<const Matrix>& zt,
                      const gaussian::AffineMap& map, const Matrix& plan);

using StepCallback = std::function<void(const TrainLogRow&)>;

/// Minibatch training of L_rec + lambda L_LA. Source and target batches are
/// paired by zip over independently shuffled streams.
TrainResult train(LaotModel model, const Eigen::Ref<const Matrix>& source,
                  const Eigen::Ref<const Matrix>& target, const StepCallback& on_step = {});

/// Same loop with the alignment term replaced by W2^2(zs, zt).
TrainResult invariant_baseline_train(LaotModel model, const Eigen::Ref<const Matrix>& source,
                                     const Eigen::Ref<const Matrix>& target,
                                     const StepCallback& on_step = {});

/// Re-fits fitted_map on the full encoded datasets.
void fit_embedding_map(LaotModel& model, const Eigen::Ref<const Matrix>& source,
                       const Eigen::Ref<const Matrix>& target);

Matrix encode(const LaotModel& model, const Eigen::Ref<const Matrix>& x, Domain domain);
Matrix decode(const LaotModel& model, const Eigen::Ref<const Matrix>& z, Domain domain);
/// fitted_map applied to the source embeddings.
Matrix transfer(const LaotModel& model, const Eigen::Ref<const Matrix>& xs);

// Checkpoint: "LAOTCKP1", u64 header length, JSON header (config and fitted
// map), then enc_s, dec_s, enc_t, dec_t in the network format.
void save_model(std::ostream& os, const LaotModel& model);
LaotModel load_model(std::istream& is);
void save_model(const std::string& path, const LaotModel& model);
LaotModel load_model(const std::string& path);

std::string to_string(LaSolver s);
std::string to_string(MapGradientMode m);

}  // namespace laot::align
