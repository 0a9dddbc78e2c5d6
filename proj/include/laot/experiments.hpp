#pragma once

// Experiment runner: manifests, the lambda sweep, the transport timing
// harness and the domain adaptation runs, all emitting plot-ready CSV.

#include "laot/data.hpp"
#include "laot/evaluation.hpp"
#include "laot/laot.hpp"

#include <json.hpp>

#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace laot::exp {

/// Lowercase hex SHA-1 of the bytes.
std::string sha1_hex(const std::string& bytes);
/// Git blob id: SHA-1 of "blob <size>\0" followed by the bytes.
std::string git_blob_hash(const std::string& bytes);
/// First 12 hex digits of the SHA-1 of the compact JSON dump (keys sorted).
std::string config_hash(const nlohmann::json& j);

struct DatasetSource {
  // Either a synthetic task name or a pair of feature files.
  std::string task;
  std::string source_path, target_path;
  data::Format format = data::Format::csv;
  data::SyntheticOptions synthetic;

  static DatasetSource synthetic_source(std::string task_name) {
    DatasetSource d;
    d.task = std::move(task_name);
    return d;
  }
  bool synthetic_task() const { return source_path.empty(); }
  nlohmann::json to_json() const;
  static DatasetSource from_json(const nlohmann::json& j);
};

struct RunManifest {
  std::string experiment = "da";
  DatasetSource dataset;
  std::vector<std::uint64_t> seeds{0};
  align::ExperimentConfig config;
  int knn_k = 3;
  std::string output_dir = "runs";
  // Methods to run; empty means all that apply.
  std::vector<std::string> methods;
  // EMD baseline only below this size.
  Index emd_max_points = 2000;

  void validate() const;
  std::string config_hash() const;
  // Hash over the input files, or over the generator parameters of a
  // synthetic task.
  std::string content_hash() const;
  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  static RunManifest load(const std::string& path);
};

struct LoadedTask {
  std::string name;
  eval::LabeledDataset source, target;
  nlohmann::json params;
};

/// Generates or reads the source and target datasets for one seed.
LoadedTask load_task(const DatasetSource& ds, std::uint64_t seed);

// lambda sweep

struct SweepRow {
  double lambda = 0.0;
  std::uint64_t seed = 0;
  double final_la_loss = 0.0;
  double final_rec_loss = 0.0;
  double w2_after_map = 0.0;
  std::string config_hash;
  std::string error;  // empty on success
};

struct SweepOptions {
  std::vector<double> lambdas;
  std::vector<std::uint64_t> seeds;
  align::ExperimentConfig config;  // lambda and seed are overwritten per cell
  DatasetSource dataset = DatasetSource::synthetic_source("nonlinear_da");
  Index w2_points = 1000;  // W2 is evaluated on the first points of each side
};

/// One model per (lambda, seed). Failing cells are recorded and skipped.
std::vector<SweepRow> run_lambda_sweep(const SweepOptions& options);
void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);

// timing

enum class TimedMethod { laot_map, exact_emd, entropic };
TimedMethod timed_method_from_string(const std::string& s);
std::string to_string(TimedMethod m);

struct TimingRow {
  TimedMethod method = TimedMethod::laot_map;
  Index n = 0;
  double seconds = 0.0;  // median over repetitions; the budget when infeasible
  int repetitions = 0;
  bool infeasible = false;
};

struct TimingOptions {
  std::vector<Index> n_list;
  std::vector<TimedMethod> methods{TimedMethod::laot_map, TimedMethod::exact_emd,
                                   TimedMethod::entropic};
  Index dim = 128;
  int repetitions = 3;
  double time_budget_seconds = 300.0;  // per solve, exact and entropic OT
  std::uint64_t seed = 0;
  double sinkhorn_tol = 1e-6;
};

/// Wall-clock for computing the transport object between two seeded clouds
/// of size n. Once a method exceeds the budget, larger n are marked
/// infeasible without running.
std::vector<TimingRow> run_timing_bench(const TimingOptions& options);
void write_timing_csv(std::ostream& os, const std::vector<TimingRow>& rows,
                      const std::string& config_hash);

// domain adaptation runs

struct DaRow {
  std::string task;
  std::string method;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double runtime_seconds = 0.0;
  std::string config_hash;
  std::optional<eval::BoundDiagnostic> bound;  // LaOT rows with target labels
  std::string error;
};

struct DaResult {
  std::vector<DaRow> rows;
  int exit_code = 0;  // 0 all cells succeeded, 2 some failed
  nlohmann::json summary;
};

/// Runs LaOT and the baselines over the manifest seeds. With a non-empty
/// output_dir writes results.csv, summary.json and one
/// <config-hash>/{manifest.json, model.bin, log.csv, report.json} per LaOT
/// run. Manifest errors throw InvalidInput before any cell runs.
DaResult run_da_experiment(const RunManifest& manifest, bool write_files = true);
void write_da_csv(std::ostream& os, const std::vector<DaRow>& rows);

// reverse-validation model selection

struct RvCandidate {
  align::ExperimentConfig config;
  std::vector<double> rv_scores;       // one per seed
  std::vector<double> true_accuracy;   // one per seed, only when requested
  double median_rv = 0.0;
  double median_accuracy = 0.0;
};

struct RvSelection {
  std::vector<RvCandidate> candidates;
  std::size_t selected = 0;  // highest median RV score
  std::size_t best = 0;      // highest median true accuracy (diagnostic)
};

/// Scores every config by reverse validation on each seed. With
/// `reveal_accuracy` also trains the forward model on all source data and
/// records its true target accuracy (never used for the selection).
RvSelection rv_select(const std::vector<align::ExperimentConfig>& grid,
                      const DatasetSource& dataset, const std::vector<std::uint64_t>& seeds,
                      bool reveal_accuracy, int knn_k = 3);

double median(std::vector<double> v);

}  // namespace laot::exp
