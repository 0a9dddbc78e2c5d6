// laot: command line front end for the experiment runner.

#include "laot/data.hpp"
#include "laot/evaluation.hpp"
#include "laot/experiments.hpp"
#include "laot/laot.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace laot;

namespace {

struct ConfigFlags {
  align::ExperimentConfig cfg;
  std::string la_solver = "exact";
  std::string map_gradient_mode = "stop_gradient";

  void add(CLI::App* app) {
    app->add_option("--latent_dim", cfg.latent_dim, "embedding width k")->capture_default_str();
    app->add_option("--lambda", cfg.lambda, "weight of the alignability loss")->capture_default_str();
    app->add_option("--batch_size", cfg.batch_size)->capture_default_str();
    app->add_option("--learning_rate", cfg.learning_rate)->capture_default_str();
    app->add_option("--epochs", cfg.epochs)->capture_default_str();
    app->add_option("--cov_reg", cfg.cov_reg, "ridge added to covariances")->capture_default_str();
    app->add_option("--grad_clip", cfg.grad_clip, "max gradient norm per autoencoder")
        ->capture_default_str();
    app->add_option("--la_solver", la_solver, "exact | entropic")->capture_default_str();
    app->add_option("--entropic_epsilon", cfg.entropic_epsilon)->capture_default_str();
    app->add_option("--map_gradient_mode", map_gradient_mode, "stop_gradient | none")
        ->capture_default_str();
  }

  align::ExperimentConfig finish(std::uint64_t seed) {
    if (la_solver == "exact") {
      cfg.la_solver = align::LaSolver::exact;
    } else if (la_solver == "entropic") {
      cfg.la_solver = align::LaSolver::entropic;
    } else {
      throw InvalidInput("--la_solver must be exact or entropic");
    }
    if (map_gradient_mode == "stop_gradient") {
      cfg.map_gradient_mode = align::MapGradientMode::stop_gradient;
    } else if (map_gradient_mode == "none") {
      cfg.map_gradient_mode = align::MapGradientMode::none;
    } else {
      throw InvalidInput("--map_gradient_mode must be stop_gradient or none");
    }
    cfg.seed = seed;
    cfg.validate();
    return cfg;
  }
};

struct DataFlags {
  std::string task;
  std::string source, target, format;
  data::SyntheticOptions syn;

  void add(CLI::App* app) {
    app->add_option("--task", task, "synthetic task name");
    app->add_option("--source", source, "source feature file (last column = label)");
    app->add_option("--target", target, "target feature file (last column = label)");
    app->add_option("--format", format, "csv | f64 (default: from extension)");
    app->add_option("--n_source", syn.n_source)->capture_default_str();
    app->add_option("--n_target", syn.n_target)->capture_default_str();
    app->add_option("--dim", syn.dim, "0 = task default");
    app->add_option("--target_dim", syn.target_dim, "0 = task default");
    app->add_option("--classes", syn.classes, "0 = task default");
    app->add_option("--warp_power", syn.warp_power)->capture_default_str();
    app->add_option("--rotation_angle", syn.rotation_angle)->capture_default_str();
  }

  exp::DatasetSource finish() const {
    exp::DatasetSource d;
    d.task = task;
    d.source_path = source;
    d.target_path = target;
    d.synthetic = syn;
    if (source.empty() != target.empty()) throw InvalidInput("give both --source and --target");
    if (source.empty() && task.empty()) throw InvalidInput("give --task or --source/--target");
    if (!source.empty()) d.format = format.empty() ? data::guess_format(source) : data::format_from_string(format);
    return d;
  }
};

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  f << text;
  if (!f) throw Error("cannot write " + p.string());
}

void emit(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    write_text(out, text);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linearly alignable optimal transport: training, evaluation and benchmarks"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "write a seeded synthetic task to disk");
  std::string gen_task, gen_out = ".", gen_format = "csv";
  std::uint64_t gen_seed = 0;
  data::SyntheticOptions gen_opts;
  gen->add_option("--task", gen_task, "toy3d | gauss_affine | nonlinear_da | nonlinear_hda | large_n")
      ->required();
  gen->add_option("--seed", gen_seed)->required();
  gen->add_option("--out_dir", gen_out)->capture_default_str();
  gen->add_option("--format", gen_format, "csv | f64")->capture_default_str();
  gen->add_option("--n_source", gen_opts.n_source)->capture_default_str();
  gen->add_option("--n_target", gen_opts.n_target)->capture_default_str();
  gen->add_option("--dim", gen_opts.dim);
  gen->add_option("--target_dim", gen_opts.target_dim);
  gen->add_option("--classes", gen_opts.classes);
  gen->add_option("--warp_power", gen_opts.warp_power)->capture_default_str();
  gen->add_option("--rotation_angle", gen_opts.rotation_angle)->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "train one LaOT model");
  ConfigFlags train_cfg;
  DataFlags train_data;
  std::uint64_t train_seed = 0;
  std::string train_out = "runs";
  train->add_option("--seed", train_seed, "initialization, shuffling and data seed")->required();
  train->add_option("--out_dir", train_out)->capture_default_str();
  train_cfg.add(train);
  train_data.add(train);

  // eval
  auto* evalc = app.add_subcommand("eval", "evaluate a trained model, or run a DA manifest");
  std::string eval_model, eval_manifest, eval_out;
  std::uint64_t eval_seed = 0;
  int eval_k = 3;
  DataFlags eval_data;
  evalc->add_option("--model", eval_model, "checkpoint written by train");
  evalc->add_option("--manifest", eval_manifest, "DA experiment manifest (JSON)");
  evalc->add_option("--seed", eval_seed, "data seed for synthetic tasks")->capture_default_str();
  evalc->add_option("--k", eval_k, "neighbours of the kNN classifier")->capture_default_str();
  evalc->add_option("--out", eval_out, "report path (default stdout)");
  eval_data.add(evalc);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "lambda sweep on a synthetic task");
  ConfigFlags sweep_cfg;
  DataFlags sweep_data;
  std::vector<std::uint64_t> sweep_seeds;
  std::vector<double> sweep_lambdas{0.0, 0.01, 0.1, 1.0};
  std::string sweep_out;
  sweep->add_option("--seed", sweep_seeds, "one or more seeds")->required();
  sweep->add_option("--lambdas", sweep_lambdas)->capture_default_str();
  sweep->add_option("--out", sweep_out, "CSV path (default stdout)");
  sweep_cfg.add(sweep);
  sweep_data.add(sweep);

  // bench
  auto* bench = app.add_subcommand("bench", "time transport computations");
  std::uint64_t bench_seed = 0;
  std::vector<Index> bench_n{100, 1000, 10000};
  std::vector<std::string> bench_methods{"laot_map", "exact_emd", "entropic"};
  exp::TimingOptions bench_opts;
  std::string bench_out;
  bench->add_option("--seed", bench_seed)->required();
  bench->add_option("--n", bench_n, "ascending sample sizes")->capture_default_str();
  bench->add_option("--methods", bench_methods)->capture_default_str();
  bench->add_option("--dim", bench_opts.dim)->capture_default_str();
  bench->add_option("--repetitions", bench_opts.repetitions)->capture_default_str();
  bench->add_option("--time_budget", bench_opts.time_budget_seconds, "seconds per solve")
      ->capture_default_str();
  bench->add_option("--out", bench_out, "CSV path (default stdout)");

  // rv-select
  auto* rv = app.add_subcommand("rv-select", "pick a configuration by reverse validation");
  ConfigFlags rv_cfg;
  DataFlags rv_data;
  std::vector<std::uint64_t> rv_seeds{0};
  std::vector<double> rv_lambdas{0.1, 0.05, 0.01};
  std::vector<Index> rv_latent;
  bool rv_reveal = false;
  int rv_k = 3;
  std::string rv_out;
  rv->add_option("--seed", rv_seeds)->capture_default_str();
  rv->add_option("--lambdas", rv_lambdas)->capture_default_str();
  rv->add_option("--latent_dims", rv_latent, "grid over k (default: --latent_dim only)");
  rv->add_flag("--reveal_accuracy", rv_reveal, "also report true target accuracy per config");
  rv->add_option("--k", rv_k)->capture_default_str();
  rv->add_option("--out", rv_out, "JSON path (default stdout)");
  rv_cfg.add(rv);
  rv_data.add(rv);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto task = data::gen_synthetic(gen_task, gen_seed, gen_opts);
      const auto fmt = data::format_from_string(gen_format);
      const std::string ext = fmt == data::Format::csv ? ".csv" : ".bin";
      fs::create_directories(gen_out);
      data::save_dataset((fs::path(gen_out) / ("source" + ext)).string(), fmt, task.source.features,
                         &task.source.labels());
      data::save_dataset((fs::path(gen_out) / ("target" + ext)).string(), fmt, task.target.features,
                         &task.target.labels());
      nlohmann::json params = task.params;
      if (task.target.has_mask()) {
        std::vector<int> m(task.target.labeled_subset_mask.begin(), task.target.labeled_subset_mask.end());
        params["target_labeled_mask"] = m;
      }
      write_text(fs::path(gen_out) / "params.json", params.dump(2) + "\n");
      return 0;
    }

    if (train->parsed()) {
      const auto cfg = train_cfg.finish(train_seed);
      const auto ds = train_data.finish();
      const auto task = exp::load_task(ds, train_seed);
      exp::RunManifest m;
      m.experiment = "da";
      m.dataset = ds;
      m.seeds = {train_seed};
      m.config = cfg;
      m.output_dir = train_out;
      const std::string hash = m.config_hash();
      const fs::path dir = fs::path(train_out) / hash;
      fs::create_directories(dir);
      auto res = align::train(align::LaotModel::create(task.source.dim(), task.target.dim(), cfg),
                              task.source.features, task.target.features);
      nlohmann::json mj = m.to_json();
      mj["config_hash"] = hash;
      mj["content_hash"] = m.content_hash();
      mj["task_params"] = task.params;
      write_text(dir / "manifest.json", mj.dump(2) + "\n");
      align::save_model((dir / "model.bin").string(), res.model);
      std::ostringstream log;
      res.log.write_csv(log);
      write_text(dir / "log.csv", log.str());
      auto rep = eval::evaluate_transfer(res.model, task.source, task.target);
      nlohmann::json rj = rep.to_json();
      rj["warnings"] = res.log.warnings;
      write_text(dir / "report.json", rj.dump(2) + "\n");
      std::cout << dir.string() << "\n";
      return 0;
    }

    if (evalc->parsed()) {
      if (!eval_manifest.empty()) {
        exp::RunManifest m;
        try {
          m = exp::RunManifest::load(eval_manifest);
          m.validate();
        } catch (const Error& e) {
          std::cerr << "manifest error: " << e.what() << "\n";
          return 1;
        }
        const auto res = exp::run_da_experiment(m);
        std::ostringstream csv;
        exp::write_da_csv(csv, res.rows);
        emit(eval_out, csv.str());
        return res.exit_code;
      }
      if (eval_model.empty()) throw InvalidInput("eval needs --model or --manifest");
      const auto model = align::load_model(eval_model);
      const auto task = exp::load_task(eval_data.finish(), eval_seed);
      auto rep = eval::evaluate_transfer(model, task.source, task.target, eval_k);
      nlohmann::json rj = rep.to_json();
      rj["bound"] = eval::worst_case_bound_diag(model, task.source, task.target,
                                                eval::BoundOptions{eval_k, 10000, eval_seed})
                        .to_json();
      if (task.source.dim() == task.target.dim()) {
        rj["ot_gauss_accuracy"] = eval::ot_gauss_baseline(task.source, task.target, eval_k).accuracy;
      }
      emit(eval_out, rj.dump(2) + "\n");
      return 0;
    }

    if (sweep->parsed()) {
      exp::SweepOptions o;
      o.lambdas = sweep_lambdas;
      o.seeds = sweep_seeds;
      o.config = sweep_cfg.finish(sweep_seeds.front());
      if (sweep_data.task.empty() && sweep_data.source.empty()) sweep_data.task = "nonlinear_da";
      o.dataset = sweep_data.finish();
      const auto rows = exp::run_lambda_sweep(o);
      std::ostringstream csv;
      exp::write_sweep_csv(csv, rows);
      emit(sweep_out, csv.str());
      for (const auto& r : rows)
        if (!r.error.empty()) return 2;
      return 0;
    }

    if (bench->parsed()) {
      bench_opts.seed = bench_seed;
      bench_opts.n_list = bench_n;
      bench_opts.methods.clear();
      for (const auto& m : bench_methods) bench_opts.methods.push_back(exp::timed_method_from_string(m));
      const auto rows = exp::run_timing_bench(bench_opts);
      std::ostringstream csv;
      exp::write_timing_csv(csv, rows,
                            exp::config_hash({{"n", bench_n},
                                              {"methods", bench_methods},
                                              {"dim", bench_opts.dim},
                                              {"repetitions", bench_opts.repetitions},
                                              {"time_budget", bench_opts.time_budget_seconds},
                                              {"seed", bench_seed}}));
      emit(bench_out, csv.str());
      return 0;
    }

    if (rv->parsed()) {
      const auto base = rv_cfg.finish(rv_seeds.front());
      if (rv_latent.empty()) rv_latent = {base.latent_dim};
      std::vector<align::ExperimentConfig> grid;
      for (Index k : rv_latent) {
        for (double l : rv_lambdas) {
          auto c = base;
          c.latent_dim = k;
          c.lambda = l;
          c.validate();
          grid.push_back(c);
        }
      }
      if (rv_data.task.empty() && rv_data.source.empty()) rv_data.task = "nonlinear_da";
      const auto sel = exp::rv_select(grid, rv_data.finish(), rv_seeds, rv_reveal, rv_k);
      nlohmann::json out = nlohmann::json::array();
      for (const auto& c : sel.candidates) {
        nlohmann::json j = {{"config", c.config.to_json()},
                            {"rv_scores", c.rv_scores},
                            {"median_rv", c.median_rv}};
        if (rv_reveal) {
          j["true_accuracy"] = c.true_accuracy;
          j["median_accuracy"] = c.median_accuracy;
        }
        out.push_back(j);
      }
      nlohmann::json doc = {{"candidates", out}, {"selected", sel.selected}};
      if (rv_reveal) doc["best_by_true_accuracy"] = sel.best;
      emit(rv_out, doc.dump(2) + "\n");
      return 0;
    }
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
