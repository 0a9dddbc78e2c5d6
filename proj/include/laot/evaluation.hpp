#pragma once

// Downstream evaluation of a transfer: kNN classification in the shared
// embedding, raw-space OT baselines, label-free model selection by reverse
// validation and an empirical check of the worst-case target risk bound.

#include "laot/common.hpp"
#include "laot/laot.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace laot::eval {

class LabeledDataset {
 public:
  Matrix features;  // n x d
  // Target points whose labels may be used for training (semi-supervised
  // protocol). Empty when absent.
  std::vector<bool> labeled_subset_mask;

  LabeledDataset() = default;
  LabeledDataset(Matrix features, std::vector<int> labels, std::vector<bool> mask = {});

  Index size() const { return features.rows(); }
  Index dim() const { return features.cols(); }
  int num_classes() const { return num_classes_; }
  bool has_mask() const { return !labeled_subset_mask.empty(); }

  // Throws InvalidState while a LabelGuard is alive.
  const std::vector<int>& labels() const;
  bool labels_locked() const { return lock_depth_ > 0; }

  LabeledDataset subset(const std::vector<Index>& rows) const;

 private:
  friend class LabelGuard;
  std::vector<int> labels_;
  int num_classes_ = 0;
  mutable int lock_depth_ = 0;
};

// Makes every label read on `data` throw for the guard's lifetime.
class LabelGuard {
 public:
  explicit LabelGuard(const LabeledDataset& data) : data_(data) { ++data_.lock_depth_; }
  ~LabelGuard() { --data_.lock_depth_; }
  LabelGuard(const LabelGuard&) = delete;
  LabelGuard& operator=(const LabelGuard&) = delete;

 private:
  const LabeledDataset& data_;
};

struct EvalReport {
  double accuracy = 0.0;
  Vector per_class_accuracy;  // 0 for classes absent from the scored set
  std::vector<Index> class_counts;
  std::string method_tag;
  double runtime_seconds = 0.0;
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
};

/// Accuracy summary of predictions against labels over C classes.
EvalReport score(const std::vector<int>& predicted, const std::vector<int>& truth, int num_classes,
                 std::string method_tag);

/// Majority vote of the k nearest training points. Ties go to the class with
/// the smallest summed distance, then to the smallest class id.
std::vector<int> knn_predict(const Eigen::Ref<const Matrix>& train_points,
                             const std::vector<int>& train_labels,
                             const Eigen::Ref<const Matrix>& query, int k);
std::vector<int> knn_predict(const LabeledDataset& train, const Eigen::Ref<const Matrix>& query,
                             int k);

/// kNN on transferred source embeddings (plus masked target embeddings when
/// present), scored on the remaining target points.
EvalReport evaluate_transfer(const align::LaotModel& model, const LabeledDataset& source,
                             const LabeledDataset& target, int k = 3);

/// Pseudo-labels for the target embeddings from a kNN on transferred source.
std::vector<int> pseudo_label(const align::LaotModel& model, const LabeledDataset& source,
                              const Eigen::Ref<const Matrix>& target_features, int k = 3);

using ModelFactory =
    std::function<align::LaotModel(Index source_dim, Index target_dim, const align::ExperimentConfig&)>;

struct ReverseValidationOptions {
  double holdout_fraction = 0.2;
  int k = 3;
  std::uint64_t split_seed = 0;
};

struct ReverseValidationResult {
  double score = 0.0;
  bool pseudo_label_collapse = false;
  int pseudo_label_classes = 0;
  nlohmann::json to_json() const;
};

/// Forward train, pseudo-label the target, train the reverse model from the
/// pseudo-labelled target back to the source and score it on held-out
/// labelled source points. Reads no target labels.
ReverseValidationResult reverse_validation_score(const ModelFactory& factory,
                                                 const LabeledDataset& source,
                                                 const Eigen::Ref<const Matrix>& target_features,
                                                 const align::ExperimentConfig& config,
                                                 const ReverseValidationOptions& options = {});
/// Same, with the target labels locked for the duration of the call.
ReverseValidationResult reverse_validation_score(const ModelFactory& factory,
                                                 const LabeledDataset& source,
                                                 const LabeledDataset& target,
                                                 const align::ExperimentConfig& config,
                                                 const ReverseValidationOptions& options = {});

/// Linear Monge map fitted on the raw features, then kNN.
EvalReport ot_gauss_baseline(const LabeledDataset& source, const LabeledDataset& target, int k = 3,
                             double cov_reg = gaussian::kDefaultCovReg);

/// Exact OT on raw features, barycentric projection of the source, then kNN.
EvalReport emd_barycentric_baseline(const LabeledDataset& source, const LabeledDataset& target,
                                    int k = 3, Index max_points = 2000);

struct BoundOptions {
  int k = 3;
  Index lipschitz_pairs = 10000;
  std::uint64_t seed = 0;
};

struct BoundDiagnostic {
  double lhs_risk = 0.0;        // target risk of h
  double source_risk = 0.0;     // risk of h on the mapped source
  double lipschitz = 0.0;       // empirical M_h (a lower estimate)
  double trace_term = 0.0;      // 2 sqrt(2) M_h tr(Sigma_T)^(1/2)
  double joint_term = 0.0;      // risks of a kNN trained on both labelled sets
  double bound = 0.0;
  double slack = 0.0;           // bound - lhs
  Index max_pair_a = -1, max_pair_b = -1;  // pair attaining the Lipschitz ratio
  bool holds() const { return lhs_risk <= bound; }
  nlohmann::json to_json() const;
};

/// Both sides of the worst-case target risk bound for h = kNN on the mapped
/// source, with 0/1 loss and one-hot outputs. Uses target labels.
BoundDiagnostic worst_case_bound_diag(const align::LaotModel& model, const LabeledDataset& source,
                                      const LabeledDataset& target,
                                      const BoundOptions& options = {});

/// k-fold kNN accuracy on the source alone.
double cross_validated_accuracy(const LabeledDataset& data, int folds, int k, std::uint64_t seed);

}  // namespace laot::eval
