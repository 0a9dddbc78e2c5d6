#include "laot/experiments.hpp"

#include "laot/discrete_ot.hpp"
#include "laot/gaussian_ot.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace laot::exp {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidInput("cannot read '" + path + "'");
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw Error("cannot write " + path.string());
}

const std::set<std::string>& known_methods() {
  static const std::set<std::string> m{"laot", "ot_gauss", "emd_barycentric", "invariant"};
  return m;
}

}  // namespace

std::string sha1_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha1(), nullptr) != 1) {
    throw Error("sha1: digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string git_blob_hash(const std::string& bytes) {
  std::string blob = "blob " + std::to_string(bytes.size());
  blob.push_back('\0');
  return sha1_hex(blob + bytes);
}

std::string config_hash(const nlohmann::json& j) { return sha1_hex(j.dump()).substr(0, 12); }

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

nlohmann::json DatasetSource::to_json() const {
  nlohmann::json j;
  if (synthetic_task()) {
    j["task"] = task;
    j["n_source"] = synthetic.n_source;
    j["n_target"] = synthetic.n_target;
    j["dim"] = synthetic.dim;
    j["target_dim"] = synthetic.target_dim;
    j["classes"] = synthetic.classes;
    j["warp_power"] = synthetic.warp_power;
    j["rotation_angle"] = synthetic.rotation_angle;
  } else {
    j["task"] = task.empty() ? "files" : task;
    j["source"] = source_path;
    j["target"] = target_path;
    j["format"] = data::to_string(format);
  }
  return j;
}

DatasetSource DatasetSource::from_json(const nlohmann::json& j) {
  DatasetSource d;
  d.task = j.value("task", std::string{});
  d.source_path = j.value("source", std::string{});
  d.target_path = j.value("target", std::string{});
  if (d.source_path.empty() != d.target_path.empty()) {
    throw InvalidInput("dataset: give both source and target files, or neither");
  }
  if (j.contains("format")) {
    d.format = data::format_from_string(j.at("format").get<std::string>());
  } else if (!d.source_path.empty()) {
    d.format = data::guess_format(d.source_path);
  }
  auto& s = d.synthetic;
  s.n_source = j.value("n_source", s.n_source);
  s.n_target = j.value("n_target", s.n_target);
  s.dim = j.value("dim", s.dim);
  s.target_dim = j.value("target_dim", s.target_dim);
  s.classes = j.value("classes", s.classes);
  s.warp_power = j.value("warp_power", s.warp_power);
  s.rotation_angle = j.value("rotation_angle", s.rotation_angle);
  return d;
}

LoadedTask load_task(const DatasetSource& ds, std::uint64_t seed) {
  LoadedTask t;
  if (ds.synthetic_task()) {
    auto g = data::gen_synthetic(ds.task, seed, ds.synthetic);
    t.name = g.name;
    t.source = std::move(g.source);
    t.target = std::move(g.target);
    t.params = std::move(g.params);
    return t;
  }
  t.name = ds.task.empty() ? "files" : ds.task;
  t.source = data::load_dataset(ds.source_path, ds.format, true).labeled();
  t.target = data::load_dataset(ds.target_path, ds.format, true).labeled();
  t.params = ds.to_json();
  return t;
}

void RunManifest::validate() const {
  if (experiment != "da") throw InvalidInput("manifest: unknown experiment '" + experiment + "'");
  if (seeds.empty()) throw InvalidInput("manifest: seed list is empty");
  if (knn_k < 1) throw InvalidInput("manifest: knn_k must be >= 1");
  config.validate();
  if (dataset.synthetic_task()) {
    const auto names = data::synthetic_task_names();
    if (std::find(names.begin(), names.end(), dataset.task) == names.end()) {
      throw InvalidInput("manifest: unknown synthetic task '" + dataset.task + "'");
    }
  } else {
    for (const auto& p : {dataset.source_path, dataset.target_path}) {
      if (!fs::exists(p)) throw InvalidInput("manifest: dataset file '" + p + "' does not exist");
    }
  }
  for (const auto& m : methods) {
    if (!known_methods().count(m)) throw InvalidInput("manifest: unknown method '" + m + "'");
  }
}

std::string RunManifest::config_hash() const {
  auto j = to_json();
  j.erase("output_dir");
  return exp::config_hash(j);
}

std::string RunManifest::content_hash() const {
  if (dataset.synthetic_task()) {
    std::string acc;
    for (auto s : seeds) acc += load_task(dataset, s).params.dump();
    return sha1_hex(acc);
  }
  return sha1_hex(git_blob_hash(read_file(dataset.source_path)) +
                  git_blob_hash(read_file(dataset.target_path)));
}

nlohmann::json RunManifest::to_json() const {
  return {{"experiment", experiment},
          {"dataset", dataset.to_json()},
          {"seeds", seeds},
          {"config", config.to_json()},
          {"knn_k", knn_k},
          {"output_dir", output_dir},
          {"methods", methods},
          {"emd_max_points", emd_max_points}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.experiment = j.value("experiment", m.experiment);
    m.dataset = DatasetSource::from_json(j.at("dataset"));
    if (j.contains("seeds")) m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("config")) m.config = align::ExperimentConfig::from_json(j.at("config"));
    m.knn_k = j.value("knn_k", m.knn_k);
    m.output_dir = j.value("output_dir", m.output_dir);
    if (j.contains("methods")) m.methods = j.at("methods").get<std::vector<std::string>>();
    m.emd_max_points = j.value("emd_max_points", m.emd_max_points);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("manifest: ") + e.what());
  }
  return m;
}

RunManifest RunManifest::load(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("manifest " + path + ": " + e.what());
  }
  return from_json(j);
}

// ---------------------------------------------------------------------------

std::vector<SweepRow> run_lambda_sweep(const SweepOptions& o) {
  if (o.lambdas.empty() || o.seeds.empty()) throw InvalidInput("sweep: empty lambda or seed list");
  std::vector<SweepRow> rows;
  for (double lambda : o.lambdas) {
    for (auto seed : o.seeds) {
      SweepRow row;
      row.lambda = lambda;
      row.seed = seed;
      auto cfg = o.config;
      cfg.lambda = lambda;
      cfg.seed = seed;
      row.config_hash = config_hash({{"config", cfg.to_json()}, {"dataset", o.dataset.to_json()}});
      try {
        cfg.validate();
        const auto task = load_task(o.dataset, seed);
        auto res = align::train(align::LaotModel::create(task.source.dim(), task.target.dim(), cfg),
                                task.source.features, task.target.features);
        const auto ep = res.log.epochs();
        if (!ep.empty()) {
          row.final_la_loss = ep.back().l_la;
          row.final_rec_loss = ep.back().l_rec;
        }
        const Index ns = std::min(o.w2_points, task.source.size());
        const Index nt = std::min(o.w2_points, task.target.size());
        row.w2_after_map = discrete::w2_empirical(
            align::transfer(res.model, task.source.features.topRows(ns)),
            align::encode(res.model, task.target.features.topRows(nt), align::Domain::target));
      } catch (const Error& e) {
        row.error = e.what();
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "lambda,seed,final_la_loss,final_rec_loss,w2_after_map,config_hash,status\n";
  for (const auto& r : rows) {
    os << fmt(r.lambda) << ',' << r.seed << ',' << fmt(r.final_la_loss) << ','
       << fmt(r.final_rec_loss) << ',' << fmt(r.w2_after_map) << ',' << r.config_hash << ','
       << (r.error.empty() ? "ok" : "error") << '\n';
  }
}

// ---------------------------------------------------------------------------

TimedMethod timed_method_from_string(const std::string& s) {
  if (s == "laot_map") return TimedMethod::laot_map;
  if (s == "exact_emd") return TimedMethod::exact_emd;
  if (s == "entropic") return TimedMethod::entropic;
  throw InvalidInput("unknown timing method '" + s + "'");
}

std::string to_string(TimedMethod m) {
  switch (m) {
    case TimedMethod::laot_map:
      return "laot_map";
    case TimedMethod::exact_emd:
      return "exact_emd";
    case TimedMethod::entropic:
      return "entropic";
  }
  return "?";
}

std::vector<TimingRow> run_timing_bench(const TimingOptions& o) {
  if (o.n_list.empty()) throw InvalidInput("timing: empty n list");
  if (!std::is_sorted(o.n_list.begin(), o.n_list.end())) {
    throw InvalidInput("timing: n values must be sorted ascending");
  }
  if (o.repetitions < 1) throw InvalidInput("timing: repetitions must be >= 1");
  std::vector<TimingRow> rows;
  for (TimedMethod method : o.methods) {
    bool over_budget = false;
    for (Index n : o.n_list) {
      TimingRow row;
      row.method = method;
      row.n = n;
      if (over_budget) {
        row.infeasible = true;
        row.seconds = o.time_budget_seconds;
        rows.push_back(row);
        continue;
      }
      data::SyntheticOptions so;
      so.n_source = so.n_target = n;
      so.dim = o.dim;
      const auto clouds = data::gen_synthetic("large_n", o.seed, so);
      const Matrix& xs = clouds.source.features;
      const Matrix& xt = clouds.target.features;
      std::vector<double> times;
      for (int r = 0; r < o.repetitions && !over_budget; ++r) {
        const auto t0 = Clock::now();
        try {
          switch (method) {
            case TimedMethod::laot_map: {
              const auto map = gaussian::fit_linear_monge(gaussian::estimate_stats(xs),
                                                          gaussian::estimate_stats(xt));
              const Matrix pushed = gaussian::apply_map(map, xs);
              if (!pushed.allFinite()) throw NumericalFailure("timing: non-finite map output");
              break;
            }
            case TimedMethod::exact_emd: {
              discrete::EmdOptions eo;
              eo.time_budget_seconds = o.time_budget_seconds;
              const Matrix c = discrete::cost_matrix(xs, xt);
              discrete::exact_emd(discrete::PointCloud::uniform(xs), discrete::PointCloud::uniform(xt),
                                  c, eo);
              break;
            }
            case TimedMethod::entropic: {
              discrete::SinkhornOptions so2;
              so2.tol = o.sinkhorn_tol;
              so2.max_iter = 100000;
              so2.time_budget_seconds = o.time_budget_seconds;
              const Matrix c = discrete::cost_matrix(xs, xt);
              discrete::sinkhorn(discrete::PointCloud::uniform(xs), discrete::PointCloud::uniform(xt),
                                 c, so2);
              break;
            }
          }
          times.push_back(seconds_since(t0));
        } catch (const TimeBudgetExceeded&) {
          over_budget = true;
        }
      }
      row.repetitions = static_cast<int>(times.size());
      if (over_budget) {
        row.infeasible = true;
        row.seconds = o.time_budget_seconds;
      } else {
        row.seconds = median(times);
      }
      rows.push_back(row);
    }
  }
  return rows;
}

void write_timing_csv(std::ostream& os, const std::vector<TimingRow>& rows,
                      const std::string& hash) {
  os << "method,n,seconds,repetitions,status,config_hash\n";
  for (const auto& r : rows) {
    os << to_string(r.method) << ',' << r.n << ',' << fmt(r.seconds) << ',' << r.repetitions << ','
       << (r.infeasible ? "infeasible" : "ok") << ',' << hash << '\n';
  }
}

// ---------------------------------------------------------------------------

void write_da_csv(std::ostream& os, const std::vector<DaRow>& rows) {
  os << "task,method,seed,accuracy,runtime_seconds,config_hash,status\n";
  for (const auto& r : rows) {
    os << r.task << ',' << r.method << ',' << r.seed << ',' << fmt(r.accuracy) << ','
       << fmt(r.runtime_seconds) << ',' << r.config_hash << ','
       << (r.error.empty() ? "ok" : "error") << '\n';
  }
}

DaResult run_da_experiment(const RunManifest& manifest, bool write_files) {
  manifest.validate();
  auto wants = [&](const std::string& m) {
    return manifest.methods.empty() ||
           std::find(manifest.methods.begin(), manifest.methods.end(), m) != manifest.methods.end();
  };
  const fs::path out(manifest.output_dir);
  if (write_files) fs::create_directories(out);

  DaResult result;
  nlohmann::json cells = nlohmann::json::array();
  for (auto seed : manifest.seeds) {
    auto cfg = manifest.config;
    cfg.seed = seed;
    LoadedTask task;
    try {
      task = load_task(manifest.dataset, seed);
    } catch (const Error& e) {
      DaRow row;
      row.task = manifest.dataset.task;
      row.method = "load";
      row.seed = seed;
      row.error = e.what();
      result.rows.push_back(row);
      continue;
    }
    const bool homogeneous = task.source.dim() == task.target.dim();
    const std::string hash =
        config_hash({{"config", cfg.to_json()}, {"task", task.params}, {"knn_k", manifest.knn_k}});

    auto run_cell = [&](const std::string& method, auto&& body) {
      DaRow row;
      row.task = task.name;
      row.method = method;
      row.seed = seed;
      row.config_hash = hash;
      const auto t0 = Clock::now();
      try {
        body(row);
      } catch (const Error& e) {
        row.error = e.what();
      }
      if (row.runtime_seconds == 0.0) row.runtime_seconds = seconds_since(t0);
      cells.push_back({{"task", row.task}, {"method", method}, {"seed", seed},
                       {"status", row.error.empty() ? "ok" : "error"}, {"error", row.error}});
      result.rows.push_back(std::move(row));
    };

    if (wants("laot")) {
      run_cell("laot", [&](DaRow& row) {
        const auto t0 = Clock::now();
        auto res = align::train(align::LaotModel::create(task.source.dim(), task.target.dim(), cfg),
                                task.source.features, task.target.features);
        auto rep = eval::evaluate_transfer(res.model, task.source, task.target, manifest.knn_k);
        row.runtime_seconds = seconds_since(t0);
        row.accuracy = rep.accuracy;
        rep.runtime_seconds = row.runtime_seconds;
        row.bound = eval::worst_case_bound_diag(res.model, task.source, task.target,
                                                eval::BoundOptions{manifest.knn_k, 10000, seed});
        rep.extra["bound"] = row.bound->to_json();
        rep.extra["warnings"] = res.log.warnings;
        if (write_files) {
          const fs::path dir = out / hash;
          fs::create_directories(dir);
          auto m = manifest;
          m.seeds = {seed};
          m.config = cfg;
          nlohmann::json mj = m.to_json();
          mj["config_hash"] = hash;
          mj["content_hash"] = m.content_hash();
          mj["task_params"] = task.params;
          write_file(dir / "manifest.json", mj.dump(2) + "\n");
          align::save_model((dir / "model.bin").string(), res.model);
          std::ostringstream log;
          res.log.write_csv(log);
          write_file(dir / "log.csv", log.str());
          nlohmann::json rj = rep.to_json();
          rj["task"] = task.name;
          rj["seed"] = seed;
          rj["config_hash"] = hash;
          write_file(dir / "report.json", rj.dump(2) + "\n");
        }
      });
    }
    if (homogeneous && wants("ot_gauss")) {
      run_cell("ot_gauss", [&](DaRow& row) {
        const auto r = eval::ot_gauss_baseline(task.source, task.target, manifest.knn_k, cfg.cov_reg);
        row.accuracy = r.accuracy;
        row.runtime_seconds = r.runtime_seconds;
      });
    }
    if (homogeneous && wants("emd_barycentric") && task.source.size() <= manifest.emd_max_points &&
        task.target.size() <= manifest.emd_max_points) {
      run_cell("emd_barycentric", [&](DaRow& row) {
        const auto r = eval::emd_barycentric_baseline(task.source, task.target, manifest.knn_k,
                                                      manifest.emd_max_points);
        row.accuracy = r.accuracy;
        row.runtime_seconds = r.runtime_seconds;
      });
    }
    if (wants("invariant")) {
      run_cell("invariant", [&](DaRow& row) {
        const auto t0 = Clock::now();
        auto res = align::invariant_baseline_train(
            align::LaotModel::create(task.source.dim(), task.target.dim(), cfg), task.source.features,
            task.target.features);
        row.accuracy = eval::evaluate_transfer(res.model, task.source, task.target, manifest.knn_k).accuracy;
        row.runtime_seconds = seconds_since(t0);
      });
    }
  }

  std::size_t failed = 0;
  for (const auto& r : result.rows) failed += !r.error.empty();
  result.exit_code = failed ? 2 : 0;

  nlohmann::json methods = nlohmann::json::object();
  std::map<std::string, std::vector<double>> acc;
  for (const auto& r : result.rows)
    if (r.error.empty()) acc[r.method].push_back(r.accuracy);
  for (const auto& [m, v] : acc) methods[m] = {{"median_accuracy", median(v)}, {"runs", v.size()}};
  result.summary = {{"manifest", manifest.to_json()},
                    {"config_hash", manifest.config_hash()},
                    {"cells", cells},
                    {"failed", failed},
                    {"methods", methods}};
  if (write_files) {
    std::ostringstream csv;
    write_da_csv(csv, result.rows);
    write_file(out / "results.csv", csv.str());
    write_file(out / "summary.json", result.summary.dump(2) + "\n");
  }
  return result;
}

// ---------------------------------------------------------------------------

RvSelection rv_select(const std::vector<align::ExperimentConfig>& grid, const DatasetSource& dataset,
                      const std::vector<std::uint64_t>& seeds, bool reveal_accuracy, int knn_k) {
  if (grid.empty() || seeds.empty()) throw InvalidInput("rv_select: empty grid or seed list");
  RvSelection sel;
  const eval::ModelFactory factory = [](Index ds, Index dt, const align::ExperimentConfig& c) {
    return align::LaotModel::create(ds, dt, c);
  };
  for (const auto& base : grid) {
    RvCandidate cand;
    cand.config = base;
    for (auto seed : seeds) {
      auto cfg = base;
      cfg.seed = seed;
      const auto task = load_task(dataset, seed);
      eval::ReverseValidationOptions ro;
      ro.k = knn_k;
      ro.split_seed = seed;
      cand.rv_scores.push_back(
          eval::reverse_validation_score(factory, task.source, task.target, cfg, ro).score);
      if (reveal_accuracy) {
        auto res = align::train(factory(task.source.dim(), task.target.dim(), cfg),
                                task.source.features, task.target.features);
        cand.true_accuracy.push_back(
            eval::evaluate_transfer(res.model, task.source, task.target, knn_k).accuracy);
      }
    }
    cand.median_rv = median(cand.rv_scores);
    cand.median_accuracy = median(cand.true_accuracy);
    sel.candidates.push_back(std::move(cand));
  }
  for (std::size_t i = 1; i < sel.candidates.size(); ++i) {
    if (sel.candidates[i].median_rv > sel.candidates[sel.selected].median_rv) sel.selected = i;
    if (sel.candidates[i].median_accuracy > sel.candidates[sel.best].median_accuracy) sel.best = i;
  }
  return sel;
}

}  // namespace laot::exp
