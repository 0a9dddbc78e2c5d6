#include "laot/nn.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <sstream>

using namespace laot;
using namespace laot::nn;
using laot::testing::random_normal;

namespace {

MlpParams linear_layer(const Matrix& w, const Vector& b) {
  MlpParams p;
  p.layers.push_back(Layer{w, b, Activation::linear});
  return p;
}

// Scalar loops only, no Eigen products.
Matrix naive_forward(const MlpParams& p, const Matrix& x) {
  Matrix h = x;
  for (const auto& l : p.layers) {
    Matrix z(h.rows(), l.w.rows());
    for (Index n = 0; n < h.rows(); ++n) {
      for (Index o = 0; o < l.w.rows(); ++o) {
        double s = l.b[o];
        for (Index i = 0; i < l.w.cols(); ++i) s += l.w(o, i) * h(n, i);
        z(n, o) = (l.act == Activation::relu && s < 0.0) ? 0.0 : s;
      }
    }
    h = z;
  }
  return h;
}

}  // namespace

TEST(InitParams, SameSeedIsBitIdentical) {
  const auto a = init_params({4, 2, 4}, {Activation::relu, Activation::linear}, 0);
  const auto b = init_params({4, 2, 4}, {Activation::relu, Activation::linear}, 0);
  ASSERT_EQ(a.layers.size(), 2u);
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    EXPECT_EQ(a.layers[i].w, b.layers[i].w);
    EXPECT_EQ(a.layers[i].b, b.layers[i].b);
  }
  const auto c = init_params({4, 2, 4}, {Activation::relu, Activation::linear}, 1);
  EXPECT_NE(a.layers[0].w, c.layers[0].w);
}

TEST(InitParams, HiddenLayerIsHalfTheInput) {
  const auto p = one_hidden_layer(4096, 128, 3);
  EXPECT_EQ(p.dims(), (std::vector<Index>{4096, 2048, 128}));
  EXPECT_EQ(p.layers[0].act, Activation::relu);
  EXPECT_EQ(p.layers[1].act, Activation::linear);
}

TEST(InitParams, WeightsInsideFanInRange) {
  const auto p = init_params({50, 25, 7}, {Activation::relu, Activation::linear}, 11);
  for (const auto& l : p.layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_dim()));
    EXPECT_LT(l.w.cwiseAbs().maxCoeff(), bound);
    EXPECT_LT(l.b.cwiseAbs().maxCoeff(), bound);
    // Spread sanity: the draws should reach most of the interval.
    EXPECT_GT(l.w.cwiseAbs().maxCoeff(), 0.8 * bound);
  }
}

TEST(InitParams, RejectsBadArguments) {
  EXPECT_THROW(init_params({4}, {}, 0), InvalidInput);
  EXPECT_THROW(init_params({4, 2}, {Activation::relu, Activation::linear}, 0), InvalidInput);
  EXPECT_THROW(init_params({4, 0, 2}, {Activation::relu, Activation::linear}, 0), InvalidInput);

  auto p = init_params({4, 3, 2}, {Activation::relu, Activation::linear}, 0);
  p.layers[1].w = Matrix::Zero(2, 5);  // no longer chains with the 3-wide hidden layer
  EXPECT_THROW(p.validate(), InvalidInput);
}

TEST(Forward, ZeroParametersGiveZeroOutput) {
  auto p = init_params({3, 2, 4}, {Activation::relu, Activation::linear}, 0);
  for (auto& l : p.layers) {
    l.w.setZero();
    l.b.setZero();
  }
  std::mt19937_64 rng(1);
  const Matrix x = random_normal(5, 3, rng);
  EXPECT_EQ(forward(p, x).out, Matrix::Zero(5, 4));
}

TEST(Forward, IdentityLayer) {
  const auto p = linear_layer(Matrix::Identity(3, 3), Vector::Zero(3));
  std::mt19937_64 rng(2);
  const Matrix x = random_normal(4, 3, rng);
  EXPECT_EQ(forward(p, x).out, x);
}

TEST(Forward, MatchesScalarReference) {
  std::mt19937_64 rng(3);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = init_params({6, 3, 4}, {Activation::relu, Activation::linear}, seed);
    const Matrix x = random_normal(3, 6, rng);
    const Matrix ref = naive_forward(p, x);
    EXPECT_LT((forward(p, x).out - ref).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((predict(p, x) - ref).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Forward, WidthMismatchAndOverflow) {
  auto p = init_params({3, 2}, {Activation::linear}, 0);
  EXPECT_THROW(forward(p, Matrix::Zero(2, 4)), InvalidInput);
  p.layers[0].w.setConstant(1e308);
  EXPECT_THROW(forward(p, Matrix::Constant(1, 3, 10.0)), NumericalFailure);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  const auto p = init_params({4, 2, 3}, {Activation::relu, Activation::linear}, 5);
  std::mt19937_64 rng(4);
  const Matrix x = random_normal(6, 4, rng);
  const auto fr = forward(p, x);
  const auto br = backward(p, fr.cache, Matrix::Zero(6, 3));
  EXPECT_EQ(br.grads.squared_norm(), 0.0);
  EXPECT_EQ(br.input_grad.squaredNorm(), 0.0);
}

TEST(Backward, LinearLayerSumLoss) {
  std::mt19937_64 rng(6);
  const auto p = linear_layer(random_normal(3, 4, rng), random_normal(3, 1, rng).col(0));
  const Matrix x = random_normal(5, 4, rng);
  const auto fr = forward(p, x);
  const auto br = backward(p, fr.cache, Matrix::Ones(5, 3));
  // d sum(XW^T + b) / dW_oi = sum_n x_ni for every output o.
  for (Index o = 0; o < 3; ++o) {
    for (Index i = 0; i < 4; ++i) EXPECT_NEAR(br.grads.w[0](o, i), x.col(i).sum(), 1e-12);
    EXPECT_NEAR(br.grads.b[0][o], 5.0, 1e-12);
  }
  for (Index n = 0; n < 5; ++n)
    for (Index i = 0; i < 4; ++i) EXPECT_NEAR(br.input_grad(n, i), p.layers[0].w.col(i).sum(), 1e-12);
}

TEST(Backward, FiniteDifferencesTwoLayer) {
  std::mt19937_64 rng(7);
  const auto p = init_params({5, 4, 3}, {Activation::relu, Activation::linear}, 9);
  const Matrix x = random_normal(8, 5, rng);
  const Matrix probe = random_normal(8, 3, rng);
  EXPECT_LT(gradient_check(p, x, probe), 1e-4);
}

TEST(Backward, InputGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  const auto p = init_params({5, 4, 3}, {Activation::relu, Activation::linear}, 10);
  Matrix x = random_normal(4, 5, rng);
  const Matrix probe = random_normal(4, 3, rng);
  const auto br = backward(p, forward(p, x).cache, probe);
  const double h = 1e-5;
  for (Index n = 0; n < x.rows(); ++n) {
    for (Index i = 0; i < x.cols(); ++i) {
      const double keep = x(n, i);
      x(n, i) = keep + h;
      const double up = predict(p, x).cwiseProduct(probe).sum();
      x(n, i) = keep - h;
      const double down = predict(p, x).cwiseProduct(probe).sum();
      x(n, i) = keep;
      EXPECT_NEAR(br.input_grad(n, i), (up - down) / (2 * h), 1e-7);
    }
  }
}

TEST(Backward, ReluSubgradientAtZeroIsZero) {
  MlpParams p;
  p.layers.push_back(Layer{Matrix::Identity(1, 1), Vector::Zero(1), Activation::relu});
  const auto fr = forward(p, Matrix::Zero(1, 1));
  const auto br = backward(p, fr.cache, Matrix::Ones(1, 1));
  EXPECT_EQ(br.grads.w[0](0, 0), 0.0);
  EXPECT_EQ(br.grads.b[0][0], 0.0);
}

TEST(Backward, StaleCacheRejected) {
  auto p = init_params({3, 2}, {Activation::linear}, 0);
  const auto fr = forward(p, Matrix::Ones(2, 3));
  auto st = AdamState::for_params(p);
  adam_step(p, Grads::zeros_like(p), st, 0.1);
  EXPECT_THROW(backward(p, fr.cache, Matrix::Ones(2, 2)), InvalidInput);

  const auto other = init_params({3, 4}, {Activation::linear}, 0);
  const auto fr2 = forward(p, Matrix::Ones(2, 3));
  EXPECT_THROW(backward(other, fr2.cache, Matrix::Ones(2, 4)), InvalidInput);
  EXPECT_THROW(backward(p, fr2.cache, Matrix::Ones(3, 2)), InvalidInput);
}

TEST(GradientCheck, ExperimentArchitecturesTenSeeds) {
  // Encoder in -> in/2 -> k and the mirrored decoder k -> in/2 -> in.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const auto enc = one_hidden_layer(20, 6, seed);
    const auto dec = init_params({6, 10, 20}, {Activation::relu, Activation::linear}, seed + 50);
    const Matrix x = random_normal(7, 20, rng);
    EXPECT_LT(gradient_check(enc, x, random_normal(7, 6, rng)), 1e-4) << "seed " << seed;
    const Matrix z = random_normal(7, 6, rng);
    EXPECT_LT(gradient_check(dec, z, random_normal(7, 20, rng)), 1e-4) << "seed " << seed;
  }
}

TEST(Adam, ZeroGradientsLeaveParamsUnchanged) {
  auto p = init_params({3, 2}, {Activation::linear}, 4);
  const auto before = p;
  auto st = AdamState::for_params(p);
  adam_step(p, Grads::zeros_like(p), st, 0.01);
  EXPECT_EQ(st.step, 1);
  EXPECT_EQ(p.layers[0].w, before.layers[0].w);
  EXPECT_EQ(p.layers[0].b, before.layers[0].b);
}

TEST(Adam, FirstStepIsSignLike) {
  std::mt19937_64 rng(12);
  auto p = init_params({4, 3}, {Activation::linear}, 4);
  const auto before = p;
  auto g = Grads::zeros_like(p);
  g.w[0] = random_normal(3, 4, rng);
  g.b[0] = random_normal(3, 1, rng).col(0);
  auto st = AdamState::for_params(p);
  const double lr = 0.01;
  adam_step(p, g, st, lr);
  // t=1: m_hat = g, v_hat = g^2, so the step is -lr g / (|g| + eps).
  const Matrix expect_w =
      before.layers[0].w.array() - lr * g.w[0].array() / (g.w[0].array().abs() + 1e-8);
  EXPECT_LT((p.layers[0].w - expect_w).cwiseAbs().maxCoeff(), 1e-15);
  const Vector expect_b =
      before.layers[0].b.array() - lr * g.b[0].array() / (g.b[0].array().abs() + 1e-8);
  EXPECT_LT((p.layers[0].b - expect_b).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Adam, MinimizesQuadratic) {
  MlpParams p = linear_layer(Matrix::Ones(1, 2), Vector::Zero(1));
  auto st = AdamState::for_params(p);
  double prev = p.layers[0].w.norm();
  int increases = 0;
  for (int i = 0; i < 200; ++i) {
    auto g = Grads::zeros_like(p);
    g.w[0] = 2.0 * p.layers[0].w;
    adam_step(p, g, st, 0.05);
    const double now = p.layers[0].w.norm();
    if (now > prev) ++increases;
    prev = now;
  }
  EXPECT_LT(p.layers[0].w.norm(), 1e-2);
  EXPECT_LT(increases, 100);
}

TEST(Adam, DirectionInvariantToGradientScale) {
  std::mt19937_64 rng(13);
  const auto p0 = init_params({5, 3}, {Activation::linear}, 2);
  auto g = Grads::zeros_like(p0);
  g.w[0] = random_normal(3, 5, rng);
  g.b[0] = random_normal(3, 1, rng).col(0);
  auto g10 = g;
  g10.scale(10.0);

  auto step_of = [&](const Grads& gr) {
    auto p = p0;
    auto st = AdamState::for_params(p);
    adam_step(p, gr, st, 1e-3);
    Vector d(p.num_params());
    Eigen::Map<Matrix>(d.data(), 3, 5) = p.layers[0].w - p0.layers[0].w;
    d.tail(3) = p.layers[0].b - p0.layers[0].b;
    return d;
  };
  const Vector d1 = step_of(g), d10 = step_of(g10);
  EXPECT_GT(d1.dot(d10) / (d1.norm() * d10.norm()), 1.0 - 1e-3);
}

TEST(Adam, ShapeMismatchRejected) {
  auto p = init_params({3, 2}, {Activation::linear}, 0);
  auto st = AdamState::for_params(p);
  const auto other = init_params({3, 4}, {Activation::linear}, 0);
  EXPECT_THROW(adam_step(p, Grads::zeros_like(other), st, 0.1), InvalidInput);
  EXPECT_THROW(adam_step(p, Grads::zeros_like(p), st, 0.0), InvalidInput);
}

TEST(ClipGradNorm, Examples) {
  MlpParams p = linear_layer(Matrix::Zero(1, 2), Vector::Zero(1));
  auto g = Grads::zeros_like(p);
  g.w[0] << 0.3, 0.4;
  EXPECT_NEAR(clip_grad_norm(g, 1.0), 0.5, 1e-15);
  EXPECT_EQ(g.w[0](0, 0), 0.3);
  EXPECT_EQ(g.w[0](0, 1), 0.4);

  g.w[0] << 3.0, 4.0;
  EXPECT_NEAR(clip_grad_norm(g, 1.0), 5.0, 1e-15);
  EXPECT_NEAR(g.w[0](0, 0), 0.6, 1e-15);
  EXPECT_NEAR(g.w[0](0, 1), 0.8, 1e-15);
  EXPECT_THROW(clip_grad_norm(g, 0.0), InvalidInput);
}

TEST(ClipGradNorm, GlobalNormAcrossBuffers) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = init_params({6, 3, 2}, {Activation::relu, Activation::linear}, trial);
    auto a = Grads::zeros_like(p), b = Grads::zeros_like(p);
    for (std::size_t i = 0; i < a.w.size(); ++i) {
      a.w[i] = 5.0 * random_normal(a.w[i].rows(), a.w[i].cols(), rng);
      b.b[i] = 5.0 * random_normal(b.b[i].size(), 1, rng).col(0);
    }
    clip_grad_norm({&a, &b}, 0.7);
    EXPECT_LE(std::sqrt(a.squared_norm() + b.squared_norm()), 0.7 + 1e-12);
  }
}

TEST(Serialization, RoundTripIsBitExact) {
  const auto p = init_params({7, 3, 5}, {Activation::relu, Activation::linear}, 77);
  std::stringstream ss;
  save_params(ss, p);
  const auto q = load_params(ss);
  EXPECT_EQ(q.rng_seed, 77u);
  ASSERT_EQ(q.dims(), p.dims());
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    EXPECT_EQ(q.layers[i].act, p.layers[i].act);
    EXPECT_EQ(std::memcmp(q.layers[i].w.data(), p.layers[i].w.data(),
                          sizeof(double) * p.layers[i].w.size()),
              0);
    EXPECT_EQ(q.layers[i].b, p.layers[i].b);
  }
}

TEST(Serialization, RejectsCorruptInput) {
  std::stringstream bad("not a checkpoint at all");
  EXPECT_THROW(load_params(bad), InvalidInput);

  const auto p = init_params({4, 2}, {Activation::linear}, 1);
  std::stringstream ss;
  save_params(ss, p);
  std::string bytes = ss.str();
  bytes.resize(bytes.size() - 8);
  std::stringstream trunc(bytes);
  EXPECT_THROW(load_params(trunc), InvalidInput);
}

TEST(Determinism, RepeatedTrainingIsBitIdentical) {
  auto run = [] {
    std::mt19937_64 rng(5);
    auto p = one_hidden_layer(8, 3, 42);
    auto st = AdamState::for_params(p);
    for (int step = 0; step < 50; ++step) {
      const Matrix x = random_normal(16, 8, rng);
      const auto fr = forward(p, x);
      auto br = backward(p, fr.cache, 2.0 * fr.out / 16.0);
      clip_grad_norm(br.grads, 1.0);
      adam_step(p, br.grads, st, 1e-2);
    }
    return p;
  };
  const auto a = run(), b = run();
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    EXPECT_EQ(a.layers[i].w, b.layers[i].w);
    EXPECT_EQ(a.layers[i].b, b.layers[i].b);
  }
}
