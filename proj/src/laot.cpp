#include "laot/laot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace laot::align {
namespace {

constexpr char kMagic[8] = {'L', 'A', 'O', 'T', 'C', 'K', 'P', '1'};

void check_width(const Eigen::Ref<const Matrix>& x, Index expected, const char* what) {
  if (x.cols() != expected) {
    throw InvalidInput(std::string(what) + ": data has width " + std::to_string(x.cols()) +
                       ", model expects " + std::to_string(expected));
  }
}

const nn::MlpParams& encoder(const LaotModel& m, Domain d) {
  return d == Domain::source ? m.enc_s : m.enc_t;
}
const nn::MlpParams& decoder(const LaotModel& m, Domain d) {
  return d == Domain::source ? m.dec_s : m.dec_t;
}

Matrix gather_rows(const Eigen::Ref<const Matrix>& x, const std::vector<Index>& perm,
                   std::size_t begin, std::size_t end) {
  Matrix out(static_cast<Index>(end - begin), x.cols());
  for (std::size_t r = begin; r < end; ++r) out.row(static_cast<Index>(r - begin)) = x.row(perm[r]);
  return out;
}

nlohmann::json map_to_json(const gaussian::AffineMap& m) {
  const RowMatrix a = m.a;
  return {{"dim", m.dim()},
          {"a", std::vector<double>(a.data(), a.data() + a.size())},
          {"b", std::vector<double>(m.b.data(), m.b.data() + m.b.size())}};
}

gaussian::AffineMap map_from_json(const nlohmann::json& j) {
  const Index d = j.at("dim").get<Index>();
  const auto a = j.at("a").get<std::vector<double>>();
  const auto b = j.at("b").get<std::vector<double>>();
  if (static_cast<Index>(a.size()) != d * d || static_cast<Index>(b.size()) != d) {
    throw InvalidInput("checkpoint: fitted_map has inconsistent sizes");
  }
  gaussian::AffineMap m;
  m.a = Eigen::Map<const RowMatrix>(a.data(), d, d);
  m.b = Eigen::Map<const Vector>(b.data(), d);
  return m;
}

// One domain's autoencoder pass: reconstruction loss, decoder gradients and
// the gradient flowing back into the embedding.
struct AePass {
  nn::ForwardResult enc;
  nn::ForwardResult dec;
  double loss = 0.0;
  nn::Grads dec_grads;
  Matrix dz;
};

AePass autoencoder_pass(const nn::MlpParams& enc, const nn::MlpParams& dec, const Matrix& x) {
  AePass p;
  p.enc = nn::forward(enc, x);
  p.dec = nn::forward(dec, p.enc.out);
  const Matrix diff = p.dec.out - x;
  const double n = static_cast<double>(x.rows());
  p.loss = diff.squaredNorm() / n;
  auto br = nn::backward(dec, p.dec.cache, (2.0 / n) * diff);
  p.dec_grads = std::move(br.grads);
  p.dz = std::move(br.input_grad);
  return p;
}

TrainResult run_training(LaotModel model, const Eigen::Ref<const Matrix>& source,
                         const Eigen::Ref<const Matrix>& target, bool fit_map,
                         const StepCallback& on_step) {
  const ExperimentConfig cfg = model.config;
  cfg.validate();
  model.validate();
  check_width(source, model.source_dim(), "train (source)");
  check_width(target, model.target_dim(), "train (target)");
  if (source.rows() == 0 || target.rows() == 0) throw InvalidInput("train: empty dataset");
  if (!source.allFinite() || !target.allFinite()) throw InvalidInput("train: non-finite data");

  LaOptions la;
  la.cov_reg = cfg.cov_reg;
  la.solver = cfg.la_solver;
  la.entropic_epsilon = cfg.entropic_epsilon;
  la.fit_map = fit_map;

  auto st_enc_s = nn::AdamState::for_params(model.enc_s);
  auto st_dec_s = nn::AdamState::for_params(model.dec_s);
  auto st_enc_t = nn::AdamState::for_params(model.enc_t);
  auto st_dec_t = nn::AdamState::for_params(model.dec_t);

  std::mt19937_64 rng_s(derive_seed(cfg.seed, streams::source_shuffle));
  std::mt19937_64 rng_t(derive_seed(cfg.seed, streams::target_shuffle));
  std::vector<Index> perm_s(static_cast<std::size_t>(source.rows()));
  std::vector<Index> perm_t(static_cast<std::size_t>(target.rows()));
  std::iota(perm_s.begin(), perm_s.end(), Index{0});
  std::iota(perm_t.begin(), perm_t.end(), Index{0});

  const std::size_t bsz = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t nb = std::min((perm_s.size() + bsz - 1) / bsz, (perm_t.size() + bsz - 1) / bsz);

  TrainResult out;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(perm_s.begin(), perm_s.end(), rng_s);
    std::shuffle(perm_t.begin(), perm_t.end(), rng_t);
    for (std::size_t step = 0; step < nb; ++step) {
      auto where = [&] {
        return "epoch " + std::to_string(epoch) + " step " + std::to_string(step);
      };
      const Matrix xs =
          gather_rows(source, perm_s, step * bsz, std::min(perm_s.size(), (step + 1) * bsz));
      const Matrix xt =
          gather_rows(target, perm_t, step * bsz, std::min(perm_t.size(), (step + 1) * bsz));

      AePass ps, pt;
      try {
        ps = autoencoder_pass(model.enc_s, model.dec_s, xs);
        pt = autoencoder_pass(model.enc_t, model.dec_t, xt);
      } catch (const NumericalFailure& e) {
        throw NumericalFailure("train: " + where() + ": " + e.what());
      }
      double l_la = 0.0;
      if (cfg.lambda > 0.0) {
        if (xs.rows() < 2 || xt.rows() < 2) {
          out.log.warnings.push_back(where() + ": alignment term skipped (batch smaller than 2)");
        } else {
          try {
            const auto g = la_loss_grad(ps.enc.out, pt.enc.out, la, cfg.map_gradient_mode);
            l_la = g.value;
            ps.dz += cfg.lambda * g.grad_zs;
            pt.dz += cfg.lambda * g.grad_zt;
          } catch (const NumericalFailure& e) {
            out.log.warnings.push_back(where() + ": alignment term skipped: " + e.what());
          }
        }
      }
      const double l_rec = ps.loss + pt.loss;
      const double total = l_rec + cfg.lambda * l_la;
      if (!std::isfinite(total)) {
        throw NumericalFailure("train: non-finite loss at " + where() + " (l_rec=" +
                               std::to_string(l_rec) + ", l_la=" + std::to_string(l_la) + ")");
      }

      auto g_enc_s = nn::backward(model.enc_s, ps.enc.cache, ps.dz).grads;
      auto g_enc_t = nn::backward(model.enc_t, pt.enc.cache, pt.dz).grads;
      // Each domain's autoencoder is clipped on its own, which keeps the two
      // trajectories fully independent when lambda is zero.
      const double ns = nn::clip_grad_norm({&g_enc_s, &ps.dec_grads}, cfg.grad_clip);
      const double nt = nn::clip_grad_norm({&g_enc_t, &pt.dec_grads}, cfg.grad_clip);

      nn::adam_step(model.enc_s, g_enc_s, st_enc_s, cfg.learning_rate);
      nn::adam_step(model.dec_s, ps.dec_grads, st_dec_s, cfg.learning_rate);
      nn::adam_step(model.enc_t, g_enc_t, st_enc_t, cfg.learning_rate);
      nn::adam_step(model.dec_t, pt.dec_grads, st_dec_t, cfg.learning_rate);

      TrainLogRow row{epoch, static_cast<int>(step), l_rec, l_la, total, std::hypot(ns, nt)};
      out.log.steps.push_back(row);
      if (on_step) on_step(row);
    }
  }
  try {
    fit_embedding_map(model, source, target);
  } catch (const NumericalFailure& e) {
    throw NumericalFailure(std::string("train: fitting the embedding map on full data: ") +
                           e.what());
  }
  out.model = std::move(model);
  return out;
}

}  // namespace

std::string to_string(LaSolver s) { return s == LaSolver::exact ? "exact" : "entropic"; }
std::string to_string(MapGradientMode m) {
  return m == MapGradientMode::stop_gradient ? "stop_gradient" : "none";
}

void ExperimentConfig::validate() const {
  auto bad = [](const std::string& msg) { throw InvalidInput("ExperimentConfig: " + msg); };
  if (latent_dim < 1) bad("latent_dim must be >= 1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) bad("lambda must be finite and >= 0");
  if (batch_size < 2) bad("batch_size must be >= 2");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) bad("learning_rate must be > 0");
  if (epochs < 0) bad("epochs must be >= 0");
  if (!(cov_reg >= 0.0) || !std::isfinite(cov_reg)) bad("cov_reg must be finite and >= 0");
  if (!(grad_clip > 0.0)) bad("grad_clip must be > 0");
  if (!std::isfinite(entropic_epsilon)) bad("entropic_epsilon must be finite");
  if (map_gradient_mode == MapGradientMode::none && lambda > 0.0) {
    bad("map_gradient_mode 'none' is not implemented; use stop_gradient");
  }
}

nlohmann::json ExperimentConfig::to_json() const {
  return {{"latent_dim", latent_dim},
          {"lambda", lambda},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"epochs", epochs},
          {"seed", seed},
          {"cov_reg", cov_reg},
          {"grad_clip", grad_clip},
          {"la_solver", to_string(la_solver)},
          {"entropic_epsilon", entropic_epsilon},
          {"map_gradient_mode", to_string(map_gradient_mode)}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.lambda = j.value("lambda", c.lambda);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.cov_reg = j.value("cov_reg", c.cov_reg);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.entropic_epsilon = j.value("entropic_epsilon", c.entropic_epsilon);
    const auto solver = j.value("la_solver", std::string("exact"));
    if (solver == "exact") {
      c.la_solver = LaSolver::exact;
    } else if (solver == "entropic") {
      c.la_solver = LaSolver::entropic;
    } else {
      throw InvalidInput("ExperimentConfig: unknown la_solver '" + solver + "'");
    }
    const auto mode = j.value("map_gradient_mode", std::string("stop_gradient"));
    if (mode == "stop_gradient") {
      c.map_gradient_mode = MapGradientMode::stop_gradient;
    } else if (mode == "none") {
      c.map_gradient_mode = MapGradientMode::none;
    } else {
      throw InvalidInput("ExperimentConfig: unknown map_gradient_mode '" + mode + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("ExperimentConfig: ") + e.what());
  }
  return c;
}

LaotModel LaotModel::create(Index source_dim, Index target_dim, const ExperimentConfig& config) {
  config.validate();
  if (source_dim < 1 || target_dim < 1) throw InvalidInput("LaotModel: input widths must be >= 1");
  const Index k = config.latent_dim;
  const auto enc_seed = derive_seed(config.seed, streams::encoder);
  const auto dec_seed = derive_seed(config.seed, streams::decoder);
  const std::vector<nn::Activation> acts{nn::Activation::relu, nn::Activation::linear};
  LaotModel m;
  m.config = config;
  m.enc_s = nn::one_hidden_layer(source_dim, k, enc_seed);
  m.enc_t = nn::one_hidden_layer(target_dim, k, enc_seed);
  m.dec_s = nn::init_params({k, std::max<Index>(1, source_dim / 2), source_dim}, acts, dec_seed);
  m.dec_t = nn::init_params({k, std::max<Index>(1, target_dim / 2), target_dim}, acts, dec_seed);
  return m;
}

void LaotModel::validate() const {
  enc_s.validate();
  dec_s.validate();
  enc_t.validate();
  dec_t.validate();
  if (enc_s.out_dim() != enc_t.out_dim()) {
    throw InvalidInput("LaotModel: source and target encoders disagree on the latent width");
  }
  if (dec_s.in_dim() != enc_s.out_dim() || dec_s.out_dim() != enc_s.in_dim() ||
      dec_t.in_dim() != enc_t.out_dim() || dec_t.out_dim() != enc_t.in_dim()) {
    throw InvalidInput("LaotModel: decoder widths do not invert the encoder widths");
  }
  if (fitted_map && fitted_map->dim() != enc_s.out_dim()) {
    throw InvalidInput("LaotModel: fitted_map dimension differs from the latent width");
  }
}

std::vector<EpochSummary> TrainLog::epochs() const {
  std::vector<EpochSummary> out;
  std::size_t count = 0;
  for (const auto& r : steps) {
    if (out.empty() || out.back().epoch != r.epoch) {
      if (!out.empty()) {
        out.back().l_rec /= static_cast<double>(count);
        out.back().l_la /= static_cast<double>(count);
        out.back().total /= static_cast<double>(count);
      }
      out.push_back(EpochSummary{r.epoch, 0.0, 0.0, 0.0});
      count = 0;
    }
    out.back().l_rec += r.l_rec;
    out.back().l_la += r.l_la;
    out.back().total += r.total;
    ++count;
  }
  if (!out.empty()) {
    out.back().l_rec /= static_cast<double>(count);
    out.back().l_la /= static_cast<double>(count);
    out.back().total /= static_cast<double>(count);
  }
  return out;
}

void TrainLog::write_csv(std::ostream& os) const {
  os << "epoch,step,l_rec,l_la,total,grad_norm\n";
  char buf[256];
  for (const auto& r : steps) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.step, r.l_rec,
                  r.l_la, r.total, r.grad_norm);
    os << buf;
  }
}

double reconstruction_loss(const LaotModel& model, const Eigen::Ref<const Matrix>& xs_batch,
                           const Eigen::Ref<const Matrix>& xt_batch) {
  check_width(xs_batch, model.source_dim(), "reconstruction_loss (source)");
  check_width(xt_batch, model.target_dim(), "reconstruction_loss (target)");
  auto term = [](const nn::MlpParams& enc, const nn::MlpParams& dec,
                 const Eigen::Ref<const Matrix>& x) {
    if (x.rows() == 0) return 0.0;
    const Matrix r = nn::predict(dec, nn::predict(enc, x));
    return (r - x).squaredNorm() / static_cast<double>(x.rows());
  };
  return term(model.enc_s, model.dec_s, xs_batch) + term(model.enc_t, model.dec_t, xt_batch);
}

LaTerm la_term(const Eigen::Ref<const Matrix>& zs, const Eigen::Ref<const Matrix>& zt,
               const LaOptions& options) {
  if (zs.cols() != zt.cols()) {
    throw InvalidInput("la_loss: embedding widths differ (" + std::to_string(zs.cols()) + " vs " +
                       std::to_string(zt.cols()) + ")");
  }
  if (zs.rows() < 2 || zt.rows() < 2) {
    throw InvalidInput("la_loss: need at least 2 points per batch");
  }
  LaTerm t;
  if (options.fit_map) {
    const auto s_stats = gaussian::estimate_stats(zs);
    const auto t_stats = gaussian::estimate_stats(zt);
    try {
      t.map = gaussian::fit_linear_monge(s_stats, t_stats, options.cov_reg);
    } catch (const NumericalFailure& e) {
      std::ostringstream os;
      os << "la_loss: map fit failed on a " << zs.rows() << "/" << zt.rows()
         << " batch (tr cov_s=" << s_stats.cov.trace() << ", tr cov_t=" << t_stats.cov.trace()
         << "): " << e.what();
      throw NumericalFailure(os.str());
    }
    t.pushed = gaussian::apply_map(t.map, zs);
  } else {
    t.map = gaussian::AffineMap::identity(zs.cols());
    t.pushed = zs;
  }
  const Matrix c = discrete::cost_matrix(t.pushed, zt);
  const auto src = discrete::PointCloud::uniform(t.pushed);
  const auto tgt = discrete::PointCloud::uniform(zt);
  discrete::Coupling cp;
  if (options.solver == LaSolver::exact) {
    cp = discrete::solve_emd(src.weights, tgt.weights, c).coupling;
  } else {
    const double eps =
        options.entropic_epsilon > 0.0 ? options.entropic_epsilon : discrete::default_epsilon(c);
    cp = discrete::sinkhorn(src, tgt, c, eps, 5000, 1e-6);
  }
  t.value = cp.cost;
  t.plan = std::move(cp.plan);
  return t;
}

double la_loss(const Eigen::Ref<const Matrix>& zs, const Eigen::Ref<const Matrix>& zt,
               double cov_reg, gaussian::AffineMap* map_out) {
  LaOptions o;
  o.cov_reg = cov_reg;
  auto t = la_term(zs, zt, o);
  if (map_out) *map_out = std::move(t.map);
  return t.value;
}

LaGrad frozen_la_grad(const Eigen::Ref<const Matrix>& zs, const Eigen::Ref<const Matrix>& zt,
                      const gaussian::AffineMap& map, const Matrix& plan) {
  if (plan.rows() != zs.rows() || plan.cols() != zt.rows()) {
    throw InvalidInput("frozen_la_grad: plan shape does not match the batches");
  }
  const Matrix pushed = gaussian::apply_map(map, zs);
  const Vector row_mass = plan.rowwise().sum();
  const Vector col_mass = plan.colwise().sum().transpose();
  // Row i of gp is 2 sum_j P_ij (p_i - t_j).
  const Matrix gp = 2.0 * (row_mass.asDiagonal() * pushed - plan * zt);
  LaGrad g;
  g.grad_zs = gp * map.a;
  g.grad_zt = -2.0 * (plan.transpose() * pushed - col_mass.asDiagonal() * zt);
  g.value = plan.cwiseProduct(discrete::cost_matrix(pushed, zt)).sum();
  return g;
}

LaGrad la_loss_grad(const Eigen::Ref<const Matrix>& zs, const Eigen::Ref<const Matrix>& zt,
                    const LaOptions& options, MapGradientMode mode) {
  if (mode != MapGradientMode::stop_gradient) {
    throw InvalidInput("la_loss_grad: only the stop_gradient mode is implemented");
  }
  const auto t = la_term(zs, zt, options);
  auto g = frozen_la_grad(zs, zt, t.map, t.plan);
  g.value = t.value;
  return g;
}

TrainResult train(LaotModel model, const Eigen::Ref<const Matrix>& source,
                  const Eigen::Ref<const Matrix>& target, const StepCallback& on_step) {
  return run_training(std::move(model), source, target, true, on_step);
}

TrainResult invariant_baseline_train(LaotModel model, const Eigen::Ref<const Matrix>& source,
                                     const Eigen::Ref<const Matrix>& target,
                                     const StepCallback& on_step) {
  return run_training(std::move(model), source, target, false, on_step);
}

void fit_embedding_map(LaotModel& model, const Eigen::Ref<const Matrix>& source,
                       const Eigen::Ref<const Matrix>& target) {
  const auto s = gaussian::estimate_stats(encode(model, source, Domain::source));
  const auto t = gaussian::estimate_stats(encode(model, target, Domain::target));
  model.fitted_map = gaussian::fit_linear_monge(s, t, model.config.cov_reg);
}

Matrix encode(const LaotModel& model, const Eigen::Ref<const Matrix>& x, Domain domain) {
  const auto& enc = encoder(model, domain);
  check_width(x, enc.in_dim(), "encode");
  return nn::predict(enc, x);
}

Matrix decode(const LaotModel& model, const Eigen::Ref<const Matrix>& z, Domain domain) {
  const auto& dec = decoder(model, domain);
  check_width(z, dec.in_dim(), "decode");
  return nn::predict(dec, z);
}

Matrix transfer(const LaotModel& model, const Eigen::Ref<const Matrix>& xs) {
  if (!model.fitted_map) throw InvalidState("transfer: model has no fitted map (train it first)");
  return gaussian::apply_map(*model.fitted_map, encode(model, xs, Domain::source));
}

void save_model(std::ostream& os, const LaotModel& model) {
  model.validate();
  nlohmann::json hdr;
  hdr["format"] = "laot-model";
  hdr["version"] = 1;
  hdr["config"] = model.config.to_json();
  hdr["fitted_map"] = model.fitted_map ? map_to_json(*model.fitted_map) : nlohmann::json(nullptr);
  const std::string text = hdr.dump();
  const std::uint64_t len = text.size();
  os.write(kMagic, sizeof kMagic);
  os.write(reinterpret_cast<const char*>(&len), sizeof len);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  nn::save_params(os, model.enc_s);
  nn::save_params(os, model.dec_s);
  nn::save_params(os, model.enc_t);
  nn::save_params(os, model.dec_t);
  if (!os) throw Error("save_model: write failed");
}

LaotModel load_model(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw InvalidInput("load_model: not a model checkpoint (bad magic)");
  }
  std::uint64_t len = 0;
  if (!is.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1u << 30)) {
    throw InvalidInput("load_model: corrupt header length");
  }
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) {
    throw InvalidInput("load_model: truncated header");
  }
  LaotModel m;
  try {
    const auto hdr = nlohmann::json::parse(text);
    m.config = ExperimentConfig::from_json(hdr.at("config"));
    if (!hdr.at("fitted_map").is_null()) m.fitted_map = map_from_json(hdr.at("fitted_map"));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("load_model: bad header: ") + e.what());
  }
  m.enc_s = nn::load_params(is);
  m.dec_s = nn::load_params(is);
  m.enc_t = nn::load_params(is);
  m.dec_t = nn::load_params(is);
  m.validate();
  return m;
}

void save_model(const std::string& path, const LaotModel& model) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InvalidInput("save_model: cannot open '" + path + "' for writing");
  save_model(f, model);
}

LaotModel load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidInput("load_model: cannot open '" + path + "'");
  return load_model(f);
}

}  // namespace laot::align
