#include "laot/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace laot::data {
namespace {

static_assert(std::endian::native == std::endian::little,
              "the f64 dataset format assumes a little-endian host");

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& s, double& v) {
  const std::string t = trim(s);
  if (t.empty()) return false;
  char* end = nullptr;
  v = std::strtod(t.c_str(), &end);
  return end == t.c_str() + t.size();
}

Matrix normal_matrix(Index rows, Index cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

Matrix random_orthogonal(Index d, std::mt19937_64& rng) {
  Eigen::HouseholderQR<Matrix> qr(normal_matrix(d, d, rng));
  Matrix q = qr.householderQ();
  // Fix column signs so the draw does not depend on QR conventions.
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < d; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  return q;
}

Matrix random_spd(Index d, std::mt19937_64& rng, double lo, double hi) {
  const Matrix q = random_orthogonal(d, rng);
  std::uniform_real_distribution<double> u(lo, hi);
  Vector lam(d);
  for (Index i = 0; i < d; ++i) lam[i] = u(rng);
  Matrix s = q * lam.asDiagonal() * q.transpose();
  return 0.5 * (s + s.transpose());
}

std::vector<int> balanced_labels(Index n, int classes, std::mt19937_64& rng) {
  std::vector<int> y(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = static_cast<int>(i % classes);
  std::shuffle(y.begin(), y.end(), rng);
  return y;
}

// Gaussian blobs: row i = means.row(y_i) + sd * noise.
Matrix blobs(const Matrix& means, const std::vector<int>& y, double sd, std::mt19937_64& rng) {
  Matrix x = normal_matrix(static_cast<Index>(y.size()), means.cols(), rng, sd);
  for (std::size_t i = 0; i < y.size(); ++i) x.row(static_cast<Index>(i)) += means.row(y[i]);
  return x;
}

nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
    rows.push_back(r);
  }
  return rows;
}

std::vector<bool> few_per_class_mask(const std::vector<int>& y, int per_class, std::mt19937_64& rng) {
  std::vector<std::size_t> order(y.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> mask(y.size(), false);
  std::vector<int> taken(static_cast<std::size_t>(*std::max_element(y.begin(), y.end()) + 1), 0);
  for (std::size_t i : order) {
    auto& t = taken[static_cast<std::size_t>(y[i])];
    if (t < per_class) {
      mask[i] = true;
      ++t;
    }
  }
  return mask;
}

SyntheticTask toy3d(std::uint64_t seed, const SyntheticOptions& o) {
  // Both domains are 2-manifolds in R^3 parametrized by the same (t, h):
  // a swiss roll for the source and a bent S-shaped sheet for the target.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ut(1.5 * M_PI, 4.5 * M_PI), uh(0.0, 1.0);
  const int classes = o.classes > 0 ? o.classes : 4;
  auto label = [&](double t) {
    const double f = (t - 1.5 * M_PI) / (3.0 * M_PI);
    return std::min(classes - 1, static_cast<int>(f * classes));
  };
  SyntheticTask task;
  task.name = "toy3d";
  Matrix xs(o.n_source, 3), xt(o.n_target, 3);
  std::vector<int> ys, yt;
  for (Index i = 0; i < o.n_source; ++i) {
    const double t = ut(rng), h = uh(rng);
    xs.row(i) << t * std::cos(t) / 10.0, 2.0 * h, t * std::sin(t) / 10.0;
    ys.push_back(label(t));
  }
  for (Index i = 0; i < o.n_target; ++i) {
    const double t = ut(rng), h = uh(rng);
    const double a = (t - 3.0 * M_PI) / (1.5 * M_PI) * 1.5 * M_PI;  // in [-1.5pi, 1.5pi]
    xt.row(i) << std::sin(a), 2.0 * h + 0.3 * std::sin(2.0 * a), std::copysign(1.0 - std::cos(a), a);
    yt.push_back(label(t));
  }
  task.source = eval::LabeledDataset(std::move(xs), std::move(ys));
  task.target = eval::LabeledDataset(std::move(xt), std::move(yt));
  task.params = {{"task", "toy3d"}, {"seed", seed}, {"classes", classes},
                 {"n_source", o.n_source}, {"n_target", o.n_target}};
  return task;
}

SyntheticTask gauss_affine(std::uint64_t seed, const SyntheticOptions& o) {
  std::mt19937_64 rng(seed);
  const Index d = o.dim > 0 ? o.dim : 5;
  const int classes = o.classes > 0 ? o.classes : 5;
  const double mean_sd = 3.0, noise_sd = 1.0;
  const Matrix means = normal_matrix(classes, d, rng, mean_sd);
  const Matrix a0 = random_spd(d, rng, 0.5, 2.0);
  const Vector b0 = normal_matrix(d, 1, rng, 2.0).col(0);

  const auto ys = balanced_labels(o.n_source, classes, rng);
  Matrix xs = blobs(means, ys, noise_sd, rng);
  // Target: an independent draw from the same mixture pushed through x -> A0 x + b0.
  const auto yt = balanced_labels(o.n_target, classes, rng);
  Matrix xt = blobs(means, yt, noise_sd, rng);
  xt = (xt * a0.transpose()).rowwise() + b0.transpose();

  SyntheticTask task;
  task.name = "gauss_affine";
  task.source = eval::LabeledDataset(std::move(xs), ys);
  task.target = eval::LabeledDataset(std::move(xt), yt);
  task.true_map = gaussian::AffineMap{a0, b0};
  task.params = {{"task", "gauss_affine"}, {"seed", seed},         {"dim", d},
                 {"classes", classes},      {"mean_sd", mean_sd},   {"noise_sd", noise_sd},
                 {"n_source", o.n_source},  {"n_target", o.n_target},
                 {"A0", matrix_json(a0)},   {"b0", std::vector<double>(b0.data(), b0.data() + d)}};
  return task;
}

// Coordinate-wise odd, monotone warp used by the nonlinear tasks.
Matrix warp(const Matrix& x, double power) {
  return x.unaryExpr([power](double u) { return std::copysign(std::pow(std::abs(u), power), u); });
}

// exp(angle * K) for a random skew-symmetric K with unit spectral norm: a
// rotation that turns no vector by more than `angle`.
Matrix random_rotation(Index d, double angle, std::mt19937_64& rng) {
  const Matrix g = normal_matrix(d, d, rng);
  Matrix k = g - g.transpose();
  Eigen::JacobiSVD<Matrix> svd(k);
  k /= svd.singularValues()[0];
  // Taylor series; ||angle K|| = angle keeps it short.
  Matrix r = Matrix::Identity(d, d), term = Matrix::Identity(d, d);
  for (int i = 1; i < 40; ++i) {
    term = term * (angle * k) / static_cast<double>(i);
    r += term;
  }
  return r;
}

SyntheticTask nonlinear_da(std::uint64_t seed, const SyntheticOptions& o) {
  std::mt19937_64 rng(seed);
  const Index d = o.dim > 0 ? o.dim : 20;
  const int classes = o.classes > 0 ? o.classes : 10;
  const double mean_sd = 1.5, noise_sd = 0.6;
  const Matrix means = normal_matrix(classes, d, rng, mean_sd);
  const Matrix rot = random_rotation(d, o.rotation_angle, rng);

  const auto ys = balanced_labels(o.n_source, classes, rng);
  Matrix xs = blobs(means, ys, noise_sd, rng);
  const auto yt = balanced_labels(o.n_target, classes, rng);
  Matrix xt = warp(blobs(means, yt, noise_sd, rng), o.warp_power) * rot.transpose();

  SyntheticTask task;
  task.name = "nonlinear_da";
  task.source = eval::LabeledDataset(std::move(xs), ys);
  task.target = eval::LabeledDataset(std::move(xt), yt);
  task.params = {{"task", "nonlinear_da"}, {"seed", seed},       {"dim", d},
                 {"classes", classes},      {"mean_sd", mean_sd}, {"noise_sd", noise_sd},
                 {"warp_power", o.warp_power}, {"rotation_angle", o.rotation_angle},
                 {"n_source", o.n_source}, {"n_target", o.n_target}};
  return task;
}

SyntheticTask nonlinear_hda(std::uint64_t seed, const SyntheticOptions& o) {
  std::mt19937_64 rng(seed);
  const Index d = o.dim > 0 ? o.dim : 20;
  const Index dt = o.target_dim > 0 ? o.target_dim : 30;
  const int classes = o.classes > 0 ? o.classes : 10;
  const double mean_sd = 1.5, noise_sd = 0.6;
  const Matrix means = normal_matrix(classes, d, rng, mean_sd);
  const Matrix lift = normal_matrix(dt, d, rng, 1.0 / std::sqrt(static_cast<double>(d)));

  const auto ys = balanced_labels(o.n_source, classes, rng);
  Matrix xs = blobs(means, ys, noise_sd, rng);
  const auto yt = balanced_labels(o.n_target, classes, rng);
  const Matrix lifted = blobs(means, yt, noise_sd, rng) * lift.transpose();
  Matrix xt = warp(lifted, o.warp_power);

  SyntheticTask task;
  task.name = "nonlinear_hda";
  task.source = eval::LabeledDataset(std::move(xs), ys);
  task.target = eval::LabeledDataset(std::move(xt), yt, few_per_class_mask(yt, 3, rng));
  task.params = {{"task", "nonlinear_hda"}, {"seed", seed},        {"dim", d},
                 {"target_dim", dt},         {"classes", classes},  {"mean_sd", mean_sd},
                 {"noise_sd", noise_sd},     {"labeled_per_class", 3},
                 {"warp_power", o.warp_power},
                 {"n_source", o.n_source},   {"n_target", o.n_target}};
  return task;
}

SyntheticTask large_n(std::uint64_t seed, const SyntheticOptions& o) {
  std::mt19937_64 rng(seed);
  const Index d = o.dim > 0 ? o.dim : 128;
  Matrix xs = normal_matrix(o.n_source, d, rng);
  const Matrix l = random_spd(d, rng, 0.5, 1.5);
  const Vector m = normal_matrix(d, 1, rng).col(0);
  Matrix xt = (normal_matrix(o.n_target, d, rng) * l).rowwise() + m.transpose();
  SyntheticTask task;
  task.name = "large_n";
  task.source = eval::LabeledDataset(std::move(xs), std::vector<int>(static_cast<std::size_t>(o.n_source), 0));
  task.target = eval::LabeledDataset(std::move(xt), std::vector<int>(static_cast<std::size_t>(o.n_target), 0));
  task.params = {{"task", "large_n"}, {"seed", seed}, {"dim", d},
                 {"n_source", o.n_source}, {"n_target", o.n_target}};
  return task;
}

}  // namespace

Format format_from_string(const std::string& s) {
  if (s == "csv") return Format::csv;
  if (s == "f64" || s == "f64-binary" || s == "bin") return Format::f64;
  throw InvalidInput("unknown dataset format '" + s + "' (expected csv or f64)");
}

std::string to_string(Format f) { return f == Format::csv ? "csv" : "f64"; }

Format guess_format(const std::string& path) {
  return path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0 ? Format::csv : Format::f64;
}

eval::LabeledDataset Table::labeled() const {
  if (!labels) throw InvalidInput("dataset has no labels");
  return eval::LabeledDataset(features, *labels);
}

Table load_dataset(const std::string& path, Format format, bool labels) {
  Table t;
  if (format == Format::csv) {
    std::ifstream f(path);
    if (!f) throw InvalidInput("load_dataset: cannot open '" + path + "'");
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0, width = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      const auto cells = split_csv(line);
      std::vector<double> vals(cells.size());
      bool numeric = true;
      for (std::size_t i = 0; i < cells.size() && numeric; ++i) numeric = parse_double(cells[i], vals[i]);
      if (!numeric) {
        if (rows.empty() && width == 0) {
          width = cells.size();  // header row
          continue;
        }
        throw InvalidInput("load_dataset: " + path + " line " + std::to_string(lineno) +
                           ": non-numeric value");
      }
      if (width == 0) width = cells.size();
      if (cells.size() != width) {
        throw InvalidInput("load_dataset: " + path + " line " + std::to_string(lineno) + " has " +
                           std::to_string(cells.size()) + " fields, expected " + std::to_string(width));
      }
      rows.push_back(std::move(vals));
    }
    const Index n = static_cast<Index>(rows.size());
    const Index cols = static_cast<Index>(width) - (labels ? 1 : 0);
    if (cols < 1 && n > 0) throw InvalidInput("load_dataset: no feature columns in " + path);
    t.features.resize(n, std::max<Index>(cols, 0));
    if (labels) t.labels.emplace();
    for (Index i = 0; i < n; ++i) {
      const auto& r = rows[static_cast<std::size_t>(i)];
      for (Index j = 0; j < cols; ++j) t.features(i, j) = r[static_cast<std::size_t>(j)];
      if (labels) {
        const double y = r.back();
        if (y != std::floor(y) || y < 0) {
          throw InvalidInput("load_dataset: " + path + " row " + std::to_string(i + 1) +
                             ": label is not a non-negative integer");
        }
        t.labels->push_back(static_cast<int>(y));
      }
    }
    return t;
  }

  std::ifstream side(path + ".json");
  if (!side) throw InvalidInput("load_dataset: missing sidecar header '" + path + ".json'");
  nlohmann::json hdr;
  try {
    side >> hdr;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("load_dataset: bad sidecar header: " + std::string(e.what()));
  }
  const Index n = hdr.at("rows").get<Index>();
  const Index cols = hdr.at("cols").get<Index>();
  const bool has_labels = hdr.value("has_labels", false);
  if (labels && !has_labels) throw InvalidInput("load_dataset: " + path + " carries no labels");
  const Index stride = cols + (has_labels ? 1 : 0);
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw InvalidInput("load_dataset: cannot open '" + path + "'");
  const auto bytes = static_cast<Index>(f.tellg());
  if (bytes != n * stride * static_cast<Index>(sizeof(double))) {
    throw InvalidInput("load_dataset: " + path + " holds " + std::to_string(bytes) +
                       " bytes but the sidecar declares " + std::to_string(n) + "x" +
                       std::to_string(stride) + " doubles");
  }
  f.seekg(0);
  RowMatrix raw(n, stride);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  t.features = raw.leftCols(cols);
  if (labels) {
    t.labels.emplace();
    for (Index i = 0; i < n; ++i) t.labels->push_back(static_cast<int>(raw(i, cols)));
  }
  return t;
}

void save_dataset(const std::string& path, Format format, const Eigen::Ref<const Matrix>& features,
                  const std::vector<int>* labels) {
  if (labels && static_cast<Index>(labels->size()) != features.rows()) {
    throw InvalidInput("save_dataset: label count differs from row count");
  }
  if (format == Format::csv) {
    std::ofstream f(path);
    if (!f) throw InvalidInput("save_dataset: cannot open '" + path + "' for writing");
    char buf[64];
    for (Index i = 0; i < features.rows(); ++i) {
      for (Index j = 0; j < features.cols(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", features(i, j));
        f << (j ? "," : "") << buf;
      }
      if (labels) f << "," << (*labels)[static_cast<std::size_t>(i)];
      f << "\n";
    }
    if (!f) throw Error("save_dataset: write failed for " + path);
    return;
  }
  const Index stride = features.cols() + (labels ? 1 : 0);
  RowMatrix raw(features.rows(), stride);
  raw.leftCols(features.cols()) = features;
  if (labels) {
    for (Index i = 0; i < features.rows(); ++i) raw(i, features.cols()) = (*labels)[static_cast<std::size_t>(i)];
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InvalidInput("save_dataset: cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(raw.data()),
          static_cast<std::streamsize>(raw.size() * sizeof(double)));
  std::ofstream side(path + ".json");
  side << nlohmann::json{{"rows", features.rows()}, {"cols", features.cols()},
                         {"has_labels", labels != nullptr}, {"dtype", "float64"},
                         {"order", "row-major"}, {"endianness", "little"}}
              .dump(2)
       << "\n";
  if (!f || !side) throw Error("save_dataset: write failed for " + path);
}

std::vector<std::string> synthetic_task_names() {
  return {"toy3d", "gauss_affine", "nonlinear_da", "nonlinear_hda", "large_n"};
}

SyntheticTask gen_synthetic(const std::string& task, std::uint64_t seed, const SyntheticOptions& o) {
  if (o.n_source < 1 || o.n_target < 1) throw InvalidInput("gen_synthetic: sizes must be positive");
  if (task == "toy3d") return toy3d(seed, o);
  if (task == "gauss_affine") return gauss_affine(seed, o);
  if (task == "nonlinear_da") return nonlinear_da(seed, o);
  if (task == "nonlinear_hda") return nonlinear_hda(seed, o);
  if (task == "large_n") return large_n(seed, o);
  throw InvalidInput("gen_synthetic: unknown task '" + task + "'");
}

}  // namespace laot::data
