#include "laot/evaluation.hpp"

#include "laot/discrete_ot.hpp"
#include "laot/gaussian_ot.hpp"
#include "laot/kernels.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace laot::eval {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int count_classes(const std::vector<int>& labels) {
  int c = 0;
  for (int y : labels) c = std::max(c, y + 1);
  return c;
}

double error_rate(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (truth.empty()) return 0.0;
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) wrong += pred[i] != truth[i];
  return static_cast<double>(wrong) / static_cast<double>(truth.size());
}

std::vector<Index> permutation(Index n, std::uint64_t seed) {
  std::vector<Index> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

Matrix rows_of(const Eigen::Ref<const Matrix>& x, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = x.row(rows[i]);
  return out;
}

}  // namespace

LabeledDataset::LabeledDataset(Matrix f, std::vector<int> labels, std::vector<bool> mask)
    : features(std::move(f)), labeled_subset_mask(std::move(mask)), labels_(std::move(labels)) {
  if (static_cast<Index>(labels_.size()) != features.rows()) {
    throw InvalidInput("LabeledDataset: " + std::to_string(labels_.size()) + " labels for " +
                       std::to_string(features.rows()) + " points");
  }
  if (!labeled_subset_mask.empty() && static_cast<Index>(labeled_subset_mask.size()) != features.rows()) {
    throw InvalidInput("LabeledDataset: mask length differs from the number of points");
  }
  for (int y : labels_) {
    if (y < 0) throw InvalidInput("LabeledDataset: negative class id " + std::to_string(y));
  }
  num_classes_ = count_classes(labels_);
}

const std::vector<int>& LabeledDataset::labels() const {
  if (lock_depth_ > 0) throw InvalidState("LabeledDataset: labels are locked (label-free stage)");
  return labels_;
}

LabeledDataset LabeledDataset::subset(const std::vector<Index>& rows) const {
  const auto& y = labels();
  std::vector<int> ly;
  std::vector<bool> mask;
  for (Index r : rows) {
    ly.push_back(y[static_cast<std::size_t>(r)]);
    if (has_mask()) mask.push_back(labeled_subset_mask[static_cast<std::size_t>(r)]);
  }
  LabeledDataset out(rows_of(features, rows), std::move(ly), std::move(mask));
  out.num_classes_ = std::max(out.num_classes_, num_classes_);
  return out;
}

nlohmann::json EvalReport::to_json() const {
  return {{"method", method_tag},
          {"accuracy", accuracy},
          {"per_class_accuracy", std::vector<double>(per_class_accuracy.data(),
                                                     per_class_accuracy.data() + per_class_accuracy.size())},
          {"class_counts", class_counts},
          {"runtime_seconds", runtime_seconds},
          {"extra", extra}};
}

EvalReport score(const std::vector<int>& predicted, const std::vector<int>& truth, int num_classes,
                 std::string method_tag) {
  if (predicted.size() != truth.size()) throw InvalidInput("score: prediction count mismatch");
  EvalReport r;
  r.method_tag = std::move(method_tag);
  const int c = std::max(num_classes, count_classes(truth));
  r.per_class_accuracy = Vector::Zero(c);
  r.class_counts.assign(static_cast<std::size_t>(c), 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto y = static_cast<std::size_t>(truth[i]);
    ++r.class_counts[y];
    if (predicted[i] == truth[i]) {
      ++correct;
      r.per_class_accuracy[static_cast<Index>(y)] += 1.0;
    }
  }
  for (int k = 0; k < c; ++k) {
    if (r.class_counts[static_cast<std::size_t>(k)] > 0) {
      r.per_class_accuracy[k] /= static_cast<double>(r.class_counts[static_cast<std::size_t>(k)]);
    }
  }
  r.accuracy = truth.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(truth.size());
  return r;
}

std::vector<int> knn_predict(const Eigen::Ref<const Matrix>& train_points,
                             const std::vector<int>& train_labels,
                             const Eigen::Ref<const Matrix>& query, int k) {
  if (static_cast<Index>(train_labels.size()) != train_points.rows()) {
    throw InvalidInput("knn_predict: label count differs from training set size");
  }
  const auto nl = kernels::omp::knn(train_points, query, k);
  const int c = count_classes(train_labels);
  std::vector<int> out(static_cast<std::size_t>(query.rows()));
  std::vector<int> votes(static_cast<std::size_t>(c));
  std::vector<double> dist(static_cast<std::size_t>(c));
  for (Index q = 0; q < query.rows(); ++q) {
    std::fill(votes.begin(), votes.end(), 0);
    std::fill(dist.begin(), dist.end(), 0.0);
    for (int j = 0; j < k; ++j) {
      const auto y = static_cast<std::size_t>(train_labels[static_cast<std::size_t>(nl.index(q, j))]);
      ++votes[y];
      dist[y] += std::sqrt(nl.sq_dist(q, j));
    }
    int best = -1;
    for (int y = 0; y < c; ++y) {
      const auto u = static_cast<std::size_t>(y);
      if (votes[u] == 0) continue;
      if (best < 0) {
        best = y;
        continue;
      }
      const auto b = static_cast<std::size_t>(best);
      if (votes[u] > votes[b] || (votes[u] == votes[b] && dist[u] < dist[b])) best = y;
    }
    out[static_cast<std::size_t>(q)] = best;
  }
  return out;
}

std::vector<int> knn_predict(const LabeledDataset& train, const Eigen::Ref<const Matrix>& query,
                             int k) {
  return knn_predict(train.features, train.labels(), query, k);
}

EvalReport evaluate_transfer(const align::LaotModel& model, const LabeledDataset& source,
                             const LabeledDataset& target, int k) {
  const auto t0 = Clock::now();
  Matrix train_pts = align::transfer(model, source.features);
  std::vector<int> train_y = source.labels();
  const Matrix zt = align::encode(model, target.features, align::Domain::target);
  const auto& ty = target.labels();

  std::vector<Index> scored;
  if (target.has_mask()) {
    std::vector<Index> labeled;
    for (Index i = 0; i < target.size(); ++i) {
      (target.labeled_subset_mask[static_cast<std::size_t>(i)] ? labeled : scored).push_back(i);
    }
    const Matrix extra = rows_of(zt, labeled);
    Matrix joined(train_pts.rows() + extra.rows(), train_pts.cols());
    joined << train_pts, extra;
    train_pts = std::move(joined);
    for (Index i : labeled) train_y.push_back(ty[static_cast<std::size_t>(i)]);
  } else {
    scored.resize(static_cast<std::size_t>(target.size()));
    std::iota(scored.begin(), scored.end(), Index{0});
  }
  const auto pred = knn_predict(train_pts, train_y, rows_of(zt, scored), k);
  std::vector<int> truth;
  for (Index i : scored) truth.push_back(ty[static_cast<std::size_t>(i)]);
  auto r = score(pred, truth, std::max(source.num_classes(), target.num_classes()), "laot");
  r.runtime_seconds = seconds_since(t0);
  return r;
}

std::vector<int> pseudo_label(const align::LaotModel& model, const LabeledDataset& source,
                              const Eigen::Ref<const Matrix>& target_features, int k) {
  return knn_predict(align::transfer(model, source.features), source.labels(),
                     align::encode(model, target_features, align::Domain::target), k);
}

nlohmann::json ReverseValidationResult::to_json() const {
  return {{"score", score},
          {"pseudo_label_collapse", pseudo_label_collapse},
          {"pseudo_label_classes", pseudo_label_classes}};
}

ReverseValidationResult reverse_validation_score(const ModelFactory& factory,
                                                 const LabeledDataset& source,
                                                 const Eigen::Ref<const Matrix>& target_features,
                                                 const align::ExperimentConfig& config,
                                                 const ReverseValidationOptions& options) {
  if (!(options.holdout_fraction > 0.0 && options.holdout_fraction < 1.0)) {
    throw InvalidInput("reverse_validation_score: holdout_fraction must lie in (0, 1)");
  }
  const Index n = source.size();
  const auto perm = permutation(n, options.split_seed);
  const Index n_hold =
      std::max<Index>(1, static_cast<Index>(std::lround(options.holdout_fraction * static_cast<double>(n))));
  if (n - n_hold < options.k) {
    throw InvalidInput("reverse_validation_score: source set too small for the split");
  }
  const std::vector<Index> hold(perm.begin(), perm.begin() + n_hold);
  const std::vector<Index> fit(perm.begin() + n_hold, perm.end());
  const LabeledDataset src_fit = source.subset(fit);
  const LabeledDataset src_hold = source.subset(hold);

  // Forward: source-fit -> target, pseudo-label the target.
  auto fwd = align::train(factory(source.dim(), target_features.cols(), config), src_fit.features,
                          target_features)
                 .model;
  const auto pseudo = pseudo_label(fwd, src_fit, target_features, options.k);
  ReverseValidationResult r;
  r.pseudo_label_classes = static_cast<int>(std::set<int>(pseudo.begin(), pseudo.end()).size());
  r.pseudo_label_collapse = r.pseudo_label_classes <= 1;

  // Reverse: pseudo-labelled target -> source, scored on held-out labels.
  const LabeledDataset tgt_pseudo(Matrix(target_features), pseudo);
  auto rev = align::train(factory(target_features.cols(), source.dim(), config),
                          tgt_pseudo.features, source.features)
                 .model;
  const auto pred = knn_predict(align::transfer(rev, tgt_pseudo.features), pseudo,
                                align::encode(rev, src_hold.features, align::Domain::target),
                                options.k);
  r.score = score(pred, src_hold.labels(), source.num_classes(), "reverse_validation").accuracy;
  return r;
}

ReverseValidationResult reverse_validation_score(const ModelFactory& factory,
                                                 const LabeledDataset& source,
                                                 const LabeledDataset& target,
                                                 const align::ExperimentConfig& config,
                                                 const ReverseValidationOptions& options) {
  LabelGuard guard(target);
  return reverse_validation_score(factory, source, target.features, config, options);
}

EvalReport ot_gauss_baseline(const LabeledDataset& source, const LabeledDataset& target, int k,
                             double cov_reg) {
  if (source.dim() != target.dim()) {
    throw InvalidInput("ot_gauss_baseline: needs equal feature widths (homogeneous DA)");
  }
  const auto t0 = Clock::now();
  const auto map = gaussian::fit_linear_monge(gaussian::estimate_stats(source.features),
                                              gaussian::estimate_stats(target.features), cov_reg);
  const auto pred = knn_predict(gaussian::apply_map(map, source.features), source.labels(),
                                target.features, k);
  auto r = score(pred, target.labels(), std::max(source.num_classes(), target.num_classes()),
                 "ot_gauss");
  r.runtime_seconds = seconds_since(t0);
  return r;
}

EvalReport emd_barycentric_baseline(const LabeledDataset& source, const LabeledDataset& target,
                                    int k, Index max_points) {
  if (source.dim() != target.dim()) {
    throw InvalidInput("emd_barycentric_baseline: needs equal feature widths (homogeneous DA)");
  }
  if (source.size() > max_points || target.size() > max_points) {
    throw InvalidInput("emd_barycentric_baseline: more than " + std::to_string(max_points) +
                       " points per domain");
  }
  const auto t0 = Clock::now();
  const Matrix c = discrete::cost_matrix(source.features, target.features);
  const auto cp = discrete::exact_emd(discrete::PointCloud::uniform(source.features),
                                      discrete::PointCloud::uniform(target.features), c);
  const Matrix mapped = discrete::barycentric_map(cp, target.features);
  const auto pred = knn_predict(mapped, source.labels(), target.features, k);
  auto r = score(pred, target.labels(), std::max(source.num_classes(), target.num_classes()),
                 "emd_barycentric");
  r.runtime_seconds = seconds_since(t0);
  return r;
}

nlohmann::json BoundDiagnostic::to_json() const {
  return {{"lhs_risk", lhs_risk},       {"source_risk", source_risk},
          {"lipschitz", lipschitz},     {"trace_term", trace_term},
          {"joint_term", joint_term},   {"bound", bound},
          {"slack", slack},             {"holds", holds()},
          {"max_pair", {max_pair_a, max_pair_b}}};
}

BoundDiagnostic worst_case_bound_diag(const align::LaotModel& model, const LabeledDataset& source,
                                      const LabeledDataset& target, const BoundOptions& options) {
  const Matrix zs = align::transfer(model, source.features);
  const Matrix zt = align::encode(model, target.features, align::Domain::target);
  const auto& ys = source.labels();
  const auto& yt = target.labels();

  BoundDiagnostic d;
  // h: kNN fitted on the mapped source.
  const auto h_src = knn_predict(zs, ys, zs, options.k);
  const auto h_tgt = knn_predict(zs, ys, zt, options.k);
  d.source_risk = error_rate(h_src, ys);
  d.lhs_risk = error_rate(h_tgt, yt);

  // Empirical Lipschitz constant of the one-hot output over sampled pairs of
  // the pooled embeddings. Different labels are sqrt(2) apart.
  const Index ns = zs.rows(), n = zs.rows() + zt.rows();
  auto point = [&](Index i) { return i < ns ? zs.row(i) : zt.row(i - ns); };
  auto pred_at = [&](Index i) {
    return i < ns ? h_src[static_cast<std::size_t>(i)] : h_tgt[static_cast<std::size_t>(i - ns)];
  };
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<Index> pick(0, n - 1);
  for (Index s = 0; s < options.lipschitz_pairs; ++s) {
    const Index a = pick(rng), b = pick(rng);
    if (pred_at(a) == pred_at(b)) continue;
    const double dist = (point(a) - point(b)).norm();
    if (dist <= 0.0) continue;
    const double ratio = std::sqrt(2.0) / dist;
    if (ratio > d.lipschitz) {
      d.lipschitz = ratio;
      d.max_pair_a = a;
      d.max_pair_b = b;
    }
  }
  const double tr = gaussian::estimate_stats(zt).cov.trace();
  d.trace_term = 2.0 * std::sqrt(2.0) * d.lipschitz * std::sqrt(std::max(tr, 0.0));

  // Joint term surrogate: one kNN trained on both labelled sets.
  Matrix pooled(n, zs.cols());
  pooled << zs, zt;
  std::vector<int> py = ys;
  py.insert(py.end(), yt.begin(), yt.end());
  const auto j_src = knn_predict(pooled, py, zs, options.k);
  const auto j_tgt = knn_predict(pooled, py, zt, options.k);
  d.joint_term = error_rate(j_src, ys) + error_rate(j_tgt, yt);

  d.bound = d.source_risk + d.trace_term + d.joint_term;
  d.slack = d.bound - d.lhs_risk;
  return d;
}

double cross_validated_accuracy(const LabeledDataset& data, int folds, int k, std::uint64_t seed) {
  if (folds < 2 || data.size() < folds) throw InvalidInput("cross_validated_accuracy: bad fold count");
  const auto perm = permutation(data.size(), seed);
  const auto& y = data.labels();
  std::size_t correct = 0;
  for (int f = 0; f < folds; ++f) {
    std::vector<Index> tr, te;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      (static_cast<int>(i % static_cast<std::size_t>(folds)) == f ? te : tr).push_back(perm[i]);
    }
    std::vector<int> ty;
    for (Index i : tr) ty.push_back(y[static_cast<std::size_t>(i)]);
    const auto pred = knn_predict(rows_of(data.features, tr), ty, rows_of(data.features, te), k);
    for (std::size_t i = 0; i < te.size(); ++i) correct += pred[i] == y[static_cast<std::size_t>(te[i])];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace laot::eval
