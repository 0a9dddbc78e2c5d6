#include "laot/nn.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace laot::nn {
namespace {

static_assert(std::endian::native == std::endian::little,
              "the checkpoint format assumes a little-endian host");

constexpr char kMagic[8] = {'L', 'A', 'O', 'T', 'M', 'L', 'P', '1'};

// Uniform in [0, 1) from the top 53 bits; avoids the implementation-defined
// behaviour of std::uniform_real_distribution so checkpoints are portable.
double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::string shape_str(Index r, Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

void check_cache(const MlpParams& params, const ForwardCache& cache) {
  if (cache.version != params.version || cache.dims != params.dims() ||
      cache.inputs.size() != params.layers.size() || cache.pre.size() != params.layers.size()) {
    throw InvalidInput("backward: cache does not belong to these parameters (stale or mismatched)");
  }
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "linear"; }

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "linear") return Activation::linear;
  throw InvalidInput("unknown activation '" + s + "'");
}

Index MlpParams::in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
Index MlpParams::out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

Index MlpParams::num_params() const {
  Index n = 0;
  for (const auto& l : layers) n += l.w.size() + l.b.size();
  return n;
}

std::vector<Index> MlpParams::dims() const {
  std::vector<Index> d;
  if (layers.empty()) return d;
  d.push_back(layers.front().in_dim());
  for (const auto& l : layers) d.push_back(l.out_dim());
  return d;
}

void MlpParams::validate() const {
  if (layers.empty()) throw InvalidInput("MlpParams: no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.b.size() != l.out_dim()) {
      throw InvalidInput("MlpParams: layer " + std::to_string(i) + " bias has wrong length");
    }
    if (i > 0 && layers[i - 1].out_dim() != l.in_dim()) {
      throw InvalidInput("MlpParams: layer " + std::to_string(i) + " expects input width " +
                         std::to_string(l.in_dim()) + " but previous layer outputs " +
                         std::to_string(layers[i - 1].out_dim()));
    }
    if (!l.w.allFinite() || !l.b.allFinite()) {
      throw InvalidInput("MlpParams: layer " + std::to_string(i) + " has non-finite parameters");
    }
  }
}

Grads Grads::zeros_like(const MlpParams& p) {
  Grads g;
  for (const auto& l : p.layers) {
    g.w.push_back(Matrix::Zero(l.w.rows(), l.w.cols()));
    g.b.push_back(Vector::Zero(l.b.size()));
  }
  return g;
}

double Grads::squared_norm() const {
  double s = 0.0;
  for (const auto& m : w) s += m.squaredNorm();
  for (const auto& v : b) s += v.squaredNorm();
  return s;
}

void Grads::scale(double s) {
  for (auto& m : w) m *= s;
  for (auto& v : b) v *= s;
}

void Grads::add(const Grads& other) {
  if (other.w.size() != w.size()) throw InvalidInput("Grads::add: layer count mismatch");
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] += other.w[i];
    b[i] += other.b[i];
  }
}

bool Grads::same_shape(const MlpParams& p) const {
  if (w.size() != p.layers.size() || b.size() != p.layers.size()) return false;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i].rows() != p.layers[i].w.rows() || w[i].cols() != p.layers[i].w.cols() ||
        b[i].size() != p.layers[i].b.size()) {
      return false;
    }
  }
  return true;
}

AdamState AdamState::for_params(const MlpParams& p) {
  AdamState s;
  s.m = Grads::zeros_like(p);
  s.v = Grads::zeros_like(p);
  return s;
}

MlpParams init_params(const std::vector<Index>& dims, const std::vector<Activation>& activations,
                      std::uint64_t seed) {
  if (dims.size() < 2) throw InvalidInput("init_params: need at least input and output sizes");
  if (activations.size() != dims.size() - 1) {
    throw InvalidInput("init_params: expected " + std::to_string(dims.size() - 1) +
                       " activations, got " + std::to_string(activations.size()));
  }
  for (Index d : dims) {
    if (d < 1) throw InvalidInput("init_params: layer sizes must be positive");
  }
  MlpParams p;
  p.rng_seed = seed;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const Index in = dims[i];
    const Index out = dims[i + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Layer l;
    l.act = activations[i];
    l.w.resize(out, in);
    for (Index r = 0; r < out; ++r)
      for (Index c = 0; c < in; ++c) l.w(r, c) = (2.0 * unit_uniform(rng) - 1.0) * bound;
    l.b.resize(out);
    for (Index r = 0; r < out; ++r) l.b[r] = (2.0 * unit_uniform(rng) - 1.0) * bound;
    p.layers.push_back(std::move(l));
  }
  return p;
}

MlpParams one_hidden_layer(Index in, Index out, std::uint64_t seed) {
  const Index hidden = std::max<Index>(1, in / 2);
  return init_params({in, hidden, out}, {Activation::relu, Activation::linear}, seed);
}

ForwardResult forward(const MlpParams& params, const Eigen::Ref<const Matrix>& x) {
  if (params.layers.empty()) throw InvalidInput("forward: network has no layers");
  if (x.cols() != params.in_dim()) {
    throw InvalidInput("forward: input has width " + std::to_string(x.cols()) +
                       ", network expects " + std::to_string(params.in_dim()));
  }
  ForwardResult r;
  r.cache.version = params.version;
  r.cache.dims = params.dims();
  Matrix h = x;
  for (const auto& l : params.layers) {
    Matrix z = h * l.w.transpose();
    z.rowwise() += l.b.transpose();
    r.cache.inputs.push_back(std::move(h));
    h = l.act == Activation::relu ? Matrix(z.cwiseMax(0.0)) : z;
    r.cache.pre.push_back(std::move(z));
  }
  if (!h.allFinite()) throw NumericalFailure("forward: non-finite network output");
  r.out = std::move(h);
  return r;
}

Matrix predict(const MlpParams& params, const Eigen::Ref<const Matrix>& x) {
  if (params.layers.empty()) throw InvalidInput("forward: network has no layers");
  if (x.cols() != params.in_dim()) {
    throw InvalidInput("forward: input has width " + std::to_string(x.cols()) +
                       ", network expects " + std::to_string(params.in_dim()));
  }
  Matrix h = x;
  for (const auto& l : params.layers) {
    Matrix z = h * l.w.transpose();
    z.rowwise() += l.b.transpose();
    if (l.act == Activation::relu) z = z.cwiseMax(0.0);
    h = std::move(z);
  }
  if (!h.allFinite()) throw NumericalFailure("forward: non-finite network output");
  return h;
}

BackwardResult backward(const MlpParams& params, const ForwardCache& cache,
                        const Eigen::Ref<const Matrix>& upstream_grad) {
  check_cache(params, cache);
  const Index batch = cache.inputs.front().rows();
  if (upstream_grad.rows() != batch || upstream_grad.cols() != params.out_dim()) {
    throw InvalidInput("backward: upstream gradient is " +
                       shape_str(upstream_grad.rows(), upstream_grad.cols()) + ", expected " +
                       shape_str(batch, params.out_dim()));
  }
  BackwardResult r;
  r.grads.w.resize(params.layers.size());
  r.grads.b.resize(params.layers.size());
  Matrix delta = upstream_grad;
  for (std::size_t k = params.layers.size(); k-- > 0;) {
    const auto& l = params.layers[k];
    if (l.act == Activation::relu) {
      // Subgradient 0 at exactly zero.
      delta = (cache.pre[k].array() > 0.0).select(delta, 0.0);
    }
    r.grads.w[k] = delta.transpose() * cache.inputs[k];
    r.grads.b[k] = delta.colwise().sum().transpose();
    delta = delta * l.w;
  }
  r.input_grad = std::move(delta);
  return r;
}

void adam_step(MlpParams& params, const Grads& grads, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw InvalidInput("adam_step: learning rate must be positive");
  if (!grads.same_shape(params)) throw InvalidInput("adam_step: gradient shapes do not match");
  if (!state.m.same_shape(params) || !state.v.same_shape(params)) {
    throw InvalidInput("adam_step: optimizer state shapes do not match");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const double b1 = state.beta1, b2 = state.beta2, eps = state.epsilon;

  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseAbs2();
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    update(params.layers[i].w, grads.w[i], state.m.w[i], state.v.w[i]);
    update(params.layers[i].b, grads.b[i], state.m.b[i], state.v.b[i]);
  }
  ++params.version;
}

double clip_grad_norm(std::vector<Grads*> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw InvalidInput("clip_grad_norm: max_norm must be positive");
  double sq = 0.0;
  for (const auto* g : grads) sq += g->squared_norm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto* g : grads) g->scale(s);
  }
  return norm;
}

double clip_grad_norm(Grads& grads, double max_norm) {
  return clip_grad_norm(std::vector<Grads*>{&grads}, max_norm);
}

double gradient_check(const MlpParams& params, const Eigen::Ref<const Matrix>& x,
                      const Eigen::Ref<const Matrix>& probe, double h) {
  const auto fr = forward(params, x);
  if (probe.rows() != fr.out.rows() || probe.cols() != fr.out.cols()) {
    throw InvalidInput("gradient_check: probe shape does not match network output");
  }
  const auto br = backward(params, fr.cache, probe);
  MlpParams p = params;
  auto loss = [&]() { return predict(p, x).cwiseProduct(probe).sum(); };
  auto rel = [](double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-7});
  };
  double worst = 0.0;
  auto probe_entry = [&](double& slot, double analytic) {
    const double keep = slot;
    slot = keep + h;
    const double up = loss();
    slot = keep - h;
    const double down = loss();
    slot = keep;
    worst = std::max(worst, rel(analytic, (up - down) / (2.0 * h)));
  };
  for (std::size_t k = 0; k < p.layers.size(); ++k) {
    auto& l = p.layers[k];
    for (Index c = 0; c < l.w.cols(); ++c)
      for (Index r = 0; r < l.w.rows(); ++r) probe_entry(l.w(r, c), br.grads.w[k](r, c));
    for (Index r = 0; r < l.b.size(); ++r) probe_entry(l.b[r], br.grads.b[k][r]);
  }
  return worst;
}

void save_params(std::ostream& os, const MlpParams& params) {
  params.validate();
  nlohmann::json hdr;
  hdr["format"] = "laot-mlp";
  hdr["version"] = 1;
  hdr["dims"] = params.dims();
  std::vector<std::string> acts;
  for (const auto& l : params.layers) acts.push_back(to_string(l.act));
  hdr["activations"] = acts;
  hdr["seed"] = params.rng_seed;
  const std::string text = hdr.dump();
  const std::uint64_t len = text.size();
  os.write(kMagic, sizeof kMagic);
  os.write(reinterpret_cast<const char*>(&len), sizeof len);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& l : params.layers) {
    const RowMatrix w = l.w;
    os.write(reinterpret_cast<const char*>(w.data()),
             static_cast<std::streamsize>(w.size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(l.b.data()),
             static_cast<std::streamsize>(l.b.size() * sizeof(double)));
  }
  if (!os) throw Error("save_params: write failed");
}

MlpParams load_params(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw InvalidInput("load_params: not a network checkpoint (bad magic)");
  }
  std::uint64_t len = 0;
  if (!is.read(reinterpret_cast<char*>(&len), sizeof len) || len > (1u << 24)) {
    throw InvalidInput("load_params: corrupt header length");
  }
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) {
    throw InvalidInput("load_params: truncated header");
  }
  nlohmann::json hdr;
  try {
    hdr = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("load_params: bad JSON header: ") + e.what());
  }
  const auto dims = hdr.at("dims").get<std::vector<Index>>();
  const auto acts = hdr.at("activations").get<std::vector<std::string>>();
  if (dims.size() < 2 || acts.size() != dims.size() - 1) {
    throw InvalidInput("load_params: header dims and activations disagree");
  }
  MlpParams p;
  p.rng_seed = hdr.at("seed").get<std::uint64_t>();
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    Layer l;
    l.act = activation_from_string(acts[i]);
    RowMatrix w(dims[i + 1], dims[i]);
    l.b.resize(dims[i + 1]);
    is.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(double)));
    is.read(reinterpret_cast<char*>(l.b.data()),
            static_cast<std::streamsize>(l.b.size() * sizeof(double)));
    if (!is) throw InvalidInput("load_params: truncated payload in layer " + std::to_string(i));
    l.w = w;
    p.layers.push_back(std::move(l));
  }
  p.validate();
  return p;
}

}  // namespace laot::nn
