#pragma once

// Dataset files and the seeded synthetic tasks.

#include "laot/common.hpp"
#include "laot/evaluation.hpp"
#include "laot/gaussian_ot.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace laot::data {

enum class Format { csv, f64 };

Format format_from_string(const std::string& s);
std::string to_string(Format f);
// .csv -> csv, anything else -> f64.
Format guess_format(const std::string& path);

struct Table {
  Matrix features;
  std::optional<std::vector<int>> labels;

  eval::LabeledDataset labeled() const;
};

/// CSV: optional header row; with `labels` the last column holds integer
/// class ids. f64: `path` holds row-major little-endian doubles and
/// `path.json` the header {rows, cols, has_labels}; labels, when present,
/// are an extra trailing column.
Table load_dataset(const std::string& path, Format format, bool labels);
void save_dataset(const std::string& path, Format format, const Eigen::Ref<const Matrix>& features,
                  const std::vector<int>* labels = nullptr);

struct SyntheticOptions {
  Index n_source = 1000;
  Index n_target = 1000;
  Index dim = 0;         // 0: task default
  Index target_dim = 0;  // heterogeneous task only; 0: task default
  int classes = 0;       // 0: task default
  // Nonlinear tasks: exponent of the coordinate warp sign(u)|u|^p and the
  // angle (radians) of the rotation applied afterwards.
  double warp_power = 1.5;
  double rotation_angle = 2.0;
};

struct SyntheticTask {
  std::string name;
  eval::LabeledDataset source;
  eval::LabeledDataset target;
  nlohmann::json params;  // generator parameters, recorded in run manifests
  std::optional<gaussian::AffineMap> true_map;
};

std::vector<std::string> synthetic_task_names();

/// toy3d, gauss_affine, nonlinear_da, nonlinear_hda or large_n. Deterministic
/// per (task, seed, options).
SyntheticTask gen_synthetic(const std::string& task, std::uint64_t seed,
                            const SyntheticOptions& options = {});

}  // namespace laot::data
