#include <gtest/gtest.h>

#include "dtvae/errors.hpp"
#include "dtvae/gaussian.hpp"
#include "dtvae/nn.hpp"
#include "oracles.hpp"

namespace dtvae {
namespace {

using testing::random_matrix;

ModelConfig tiny_config() {
  ModelConfig c;
  c.input = 12;
  c.hidden = 5;
  c.latent = 3;
  c.rank = 2;
  c.epsilon = 0.1;
  return c;
}

// Random weights and biases everywhere, including the u/v heads.
ModelParams random_params(const ModelConfig& c, std::mt19937_64& rng, double scale = 0.5) {
  ModelParams p = ModelParams::zeros(c);
  for (DenseLayer* l : p.layers()) {
    l->w = random_matrix(l->w.rows(), l->w.cols(), rng, scale);
    l->b = random_matrix(l->b.size(), 1, rng, scale);
  }
  return p;
}

double max_abs(const ModelParams& p) {
  double m = 0.0;
  for (const DenseLayer* l : p.layers()) {
    if (l->w.size()) m = std::max(m, l->w.cwiseAbs().maxCoeff());
    if (l->b.size()) m = std::max(m, l->b.cwiseAbs().maxCoeff());
  }
  return m;
}

bool bitwise_equal(const ModelParams& a, const ModelParams& b) {
  const auto la = a.layers();
  const auto lb = b.layers();
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    if (la[i]->w != lb[i]->w || la[i]->b != lb[i]->b) return false;
  }
  return true;
}

TEST(ModelParams, ShapesForPaperConfiguration) {
  ModelConfig c;
  c.rank = 10;
  const ModelParams p = ModelParams::zeros(c);
  EXPECT_EQ(p.enc1.w.rows(), 500);
  EXPECT_EQ(p.enc1.w.cols(), 784);
  EXPECT_EQ(p.mu_head.out(), 50);
  EXPECT_EQ(p.log_var_head.out(), 50);
  EXPECT_EQ(p.u_head.out(), 500);
  EXPECT_EQ(p.v_head.out(), 500);
  EXPECT_EQ(p.dec1.in(), 50);
  EXPECT_EQ(p.dec1.out(), 500);
  EXPECT_EQ(p.dec2.out(), 500);
  EXPECT_EQ(p.dec_out.out(), 784);
}

TEST(ModelParams, RankZeroHasEmptyDyadHeads) {
  ModelConfig c;
  const ModelParams p = ModelParams::zeros(c);
  EXPECT_EQ(p.u_head.w.size(), 0);
  EXPECT_EQ(p.v_head.b.size(), 0);
}

TEST(Encoder, ZeroNetwork) {
  ModelConfig c;
  c.rank = 10;
  const ModelParams p = ModelParams::zeros(c);
  std::mt19937_64 rng(1);
  const Matrix x = random_matrix(784, 3, rng).cwiseAbs();
  const auto [enc, tape] = encoder_forward(p, x);
  EXPECT_EQ(enc.mu.rows(), 50);
  EXPECT_EQ(enc.u_flat.rows(), 500);
  EXPECT_EQ(enc.v_flat.rows(), 500);
  EXPECT_EQ(enc.mu.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(enc.log_var.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(enc.u_flat.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(enc.v_flat.cwiseAbs().maxCoeff(), 0.0);
  const EncoderOutputs one = enc.at(1, 50, 10);
  EXPECT_EQ(one.u.rows(), 50);
  EXPECT_EQ(one.u.cols(), 10);
  EXPECT_EQ(one.v.rows(), 10);
  EXPECT_EQ(one.v.cols(), 50);
}

TEST(Decoder, ZeroNetworkGivesZeroLogits) {
  ModelConfig c;
  const ModelParams p = ModelParams::zeros(c);
  std::mt19937_64 rng(2);
  const auto [logits, tape] = decoder_forward(p, random_matrix(50, 4, rng));
  EXPECT_EQ(logits.rows(), 784);
  EXPECT_EQ(logits.cols(), 4);
  EXPECT_EQ(logits.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(tape.h1.rows(), 500);
  EXPECT_EQ(tape.h2.rows(), 500);
}

TEST(Encoder, ProbeGradientMatchesFiniteDifferences) {
  const ModelConfig c = tiny_config();
  std::mt19937_64 rng(3);
  ModelParams p = random_params(c, rng);
  const Matrix x = random_matrix(c.input, 2, rng);
  const auto [enc0, tape0] = encoder_forward(p, x);
  EncoderUpstream up;
  up.d_mu = random_matrix(enc0.mu.rows(), 2, rng);
  up.d_log_var = random_matrix(enc0.log_var.rows(), 2, rng);
  up.d_u_flat = random_matrix(enc0.u_flat.rows(), 2, rng);
  up.d_v_flat = random_matrix(enc0.v_flat.rows(), 2, rng);
  auto probe = [&] {
    const EncoderBatch e = encoder_forward(p, x).first;
    return (e.mu.cwiseProduct(up.d_mu)).sum() + (e.log_var.cwiseProduct(up.d_log_var)).sum() +
           (e.u_flat.cwiseProduct(up.d_u_flat)).sum() + (e.v_flat.cwiseProduct(up.d_v_flat)).sum();
  };
  ParamGrads g = ModelParams::zeros(c);
  encoder_backward(p, tape0, up, g);
  const auto layers = p.layers();
  const auto grads = g.layers();
  for (std::size_t li = 0; li < 6; ++li) {
    auto fd_block = [&](double* data, Index size) {
      Vector fd(size);
      for (Index i = 0; i < size; ++i) {
        const double saved = data[i];
        data[i] = saved + 1e-6;
        const double up_v = probe();
        data[i] = saved - 1e-6;
        const double dn_v = probe();
        data[i] = saved;
        fd(i) = (up_v - dn_v) / 2e-6;
      }
      return fd;
    };
    const Vector fd_w = fd_block(layers[li]->w.data(), layers[li]->w.size());
    const Vector fd_b = fd_block(layers[li]->b.data(), layers[li]->b.size());
    EXPECT_LE(testing::rel_error(testing::flatten(grads[li]->w), fd_w), 1e-5) << kLayerNames[li];
    EXPECT_LE(testing::rel_error(grads[li]->b, fd_b), 1e-5) << kLayerNames[li];
  }
  for (std::size_t li = 6; li < kNumLayers; ++li) {
    EXPECT_EQ(grads[li]->w.cwiseAbs().maxCoeff(), 0.0) << "decoder untouched by encoder_backward";
  }
}

TEST(Decoder, ProbeGradientMatchesFiniteDifferences) {
  const ModelConfig c = tiny_config();
  std::mt19937_64 rng(4);
  ModelParams p = random_params(c, rng);
  Matrix z = random_matrix(c.latent, 3, rng);
  const Matrix weights = random_matrix(c.input, 3, rng);
  auto probe = [&] { return decoder_forward(p, z).first.cwiseProduct(weights).sum(); };
  ParamGrads g = ModelParams::zeros(c);
  const Matrix d_z = decoder_backward(p, decoder_forward(p, z).second, weights, g);
  auto fd_block = [&](double* data, Index size) {
    Vector fd(size);
    for (Index i = 0; i < size; ++i) {
      const double saved = data[i];
      data[i] = saved + 1e-6;
      const double a = probe();
      data[i] = saved - 1e-6;
      const double b = probe();
      data[i] = saved;
      fd(i) = (a - b) / 2e-6;
    }
    return fd;
  };
  EXPECT_LE(testing::rel_error(testing::flatten(d_z), fd_block(z.data(), z.size())), 1e-5);
  for (std::size_t li = 6; li < kNumLayers; ++li) {
    DenseLayer* l = p.layers()[li];
    const DenseLayer& gl = *g.layers()[li];
    EXPECT_LE(testing::rel_error(testing::flatten(gl.w), fd_block(l->w.data(), l->w.size())), 1e-5);
    EXPECT_LE(testing::rel_error(gl.b, fd_block(l->b.data(), l->b.size())), 1e-5);
  }
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  const ModelConfig c = tiny_config();
  std::mt19937_64 rng(5);
  const ModelParams p = random_params(c, rng);
  const Matrix x = random_matrix(c.input, 2, rng);
  const auto [enc, etape] = encoder_forward(p, x);
  EncoderUpstream up{Matrix::Zero(c.latent, 2), Matrix::Zero(c.latent, 2),
                     Matrix::Zero(c.latent * c.rank, 2), Matrix::Zero(c.latent * c.rank, 2)};
  ParamGrads g = ModelParams::zeros(c);
  encoder_backward(p, etape, up, g);
  const auto dtape = decoder_forward(p, enc.mu).second;
  const Matrix d_z = decoder_backward(p, dtape, Matrix::Zero(c.input, 2), g);
  EXPECT_EQ(max_abs(g), 0.0);
  EXPECT_EQ(d_z.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backward, OutputBiasGradientIsUpstreamSum) {
  const ModelConfig c = tiny_config();
  std::mt19937_64 rng(6);
  const ModelParams p = random_params(c, rng);
  const Matrix z = random_matrix(c.latent, 4, rng);
  const Matrix d_logits = random_matrix(c.input, 4, rng);
  ParamGrads g = ModelParams::zeros(c);
  decoder_backward(p, decoder_forward(p, z).second, d_logits, g);
  EXPECT_LE((g.dec_out.b - d_logits.rowwise().sum()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Backward, ClampedLogVarianceReceivesNoGradient) {
  ModelConfig c = tiny_config();
  c.rank = 0;
  std::mt19937_64 rng(7);
  ModelParams p = random_params(c, rng);
  p.log_var_head.b(0) = 50.0;  // pinned at the upper clamp
  const Matrix x = random_matrix(c.input, 1, rng);
  const auto [enc, tape] = encoder_forward(p, x);
  EXPECT_EQ(enc.log_var(0, 0), kLogVarMax);
  EncoderUpstream up{Matrix::Zero(c.latent, 1), Matrix::Ones(c.latent, 1), Matrix(0, 1), Matrix(0, 1)};
  ParamGrads g = ModelParams::zeros(c);
  encoder_backward(p, tape, up, g);
  EXPECT_EQ(g.log_var_head.b(0), 0.0);
  EXPECT_EQ(g.log_var_head.b(1), 1.0);
}

TEST(Forward, DeterministicAndBounded) {
  const ModelConfig c = tiny_config();
  std::mt19937_64 rng(8);
  const ModelParams p = random_params(c, rng, 50.0);
  const Matrix x = random_matrix(c.input, 3, rng, 1e6);
  const auto a = encoder_forward(p, x);
  const auto b = encoder_forward(p, x);
  EXPECT_EQ(a.first.mu, b.first.mu);
  EXPECT_EQ(a.first.u_flat, b.first.u_flat);
  EXPECT_TRUE(a.second.h1.allFinite());
  EXPECT_LE(a.second.h1.cwiseAbs().maxCoeff(), 1.0);
  EXPECT_LE(a.second.h2.cwiseAbs().maxCoeff(), 1.0);
  EXPECT_TRUE(a.first.log_var.allFinite());
  const auto d = decoder_forward(p, random_matrix(c.latent, 3, rng, 1e6));
  EXPECT_TRUE(d.first.allFinite());
  EXPECT_LE(d.second.h2.cwiseAbs().maxCoeff(), 1.0);
}

TEST(Adam, ZeroGradientIsIdentity) {
  const ModelConfig c = tiny_config();
  std::mt19937_64 rng(9);
  ModelParams p = random_params(c, rng);
  const ModelParams before = p;
  AdamState s = AdamState::zeros(c);
  adam_step(p, s, ModelParams::zeros(c), 1e-3);
  EXPECT_TRUE(bitwise_equal(p, before));
  EXPECT_EQ(s.step, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  const ModelConfig c = tiny_config();
  std::mt19937_64 rng(10);
  ModelParams p = random_params(c, rng);
  const ModelParams before = p;
  ParamGrads g = random_params(c, rng);
  AdamState s = AdamState::zeros(c);
  const double lr = 1e-3;
  adam_step(p, s, g, lr);
  // m_hat = g, v_hat = g^2, so each entry moves by lr * g / (|g| + 1e-8).
  const auto lp = p.layers();
  const auto lb = before.layers();
  const auto lg = g.layers();
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    const Matrix delta = lb[i]->w - lp[i]->w;
    const Matrix expect = lr * lg[i]->w.array() / (lg[i]->w.array().abs() + 1e-8);
    EXPECT_LE((delta - expect).cwiseAbs().maxCoeff(), 1e-12) << kLayerNames[i];
  }
}

TEST(Adam, DeterministicOverTenSteps) {
  const ModelConfig c = tiny_config();
  auto run = [&] {
    std::mt19937_64 rng(11);
    ModelParams p = init_params(c, 5);
    AdamState s = AdamState::zeros(c);
    for (int t = 0; t < 10; ++t) adam_step(p, s, random_params(c, rng), 1e-2);
    return p;
  };
  EXPECT_TRUE(bitwise_equal(run(), run()));
}

TEST(Adam, NonFiniteGradientIsRejectedWithoutSideEffects) {
  const ModelConfig c = tiny_config();
  std::mt19937_64 rng(12);
  ModelParams p = random_params(c, rng);
  const ModelParams before = p;
  ParamGrads g = random_params(c, rng);
  g.dec2.w(1, 1) = std::nan("");
  AdamState s = AdamState::zeros(c);
  try {
    adam_step(p, s, g, 1e-3);
    FAIL() << "expected PoisonedUpdateError";
  } catch (const PoisonedUpdateError& e) {
    EXPECT_NE(std::string(e.what()).find("dec2"), std::string::npos);
  }
  EXPECT_TRUE(bitwise_equal(p, before));
  EXPECT_EQ(s.step, 0);
  EXPECT_EQ(max_abs(s.m), 0.0);
}

TEST(InitParams, SameSeedSameParameters) {
  ModelConfig c;
  c.rank = 10;
  EXPECT_TRUE(bitwise_equal(init_params(c, 7), init_params(c, 7)));
  EXPECT_FALSE(bitwise_equal(init_params(c, 7), init_params(c, 8)));
}

TEST(InitParams, WeightMomentsAndBiases) {
  ModelConfig c;
  const ModelParams p = init_params(c, 3);
  const Matrix& w = p.enc2.w;  // 500 x 500
  const double limit = std::sqrt(6.0 / 1000.0);
  const double mean = w.mean();
  const double se = (limit / std::sqrt(3.0)) / std::sqrt(static_cast<double>(w.size()));
  EXPECT_LE(std::abs(mean), 4 * se);
  EXPECT_LE(w.cwiseAbs().maxCoeff(), limit);
  const double var = (w.array() - mean).square().mean();
  EXPECT_NEAR(var, limit * limit / 3.0, 0.02 * limit * limit / 3.0);
  EXPECT_EQ(p.enc2.b.cwiseAbs().maxCoeff(), 0.0);
}

TEST(InitParams, DyadHeadsAreShrunk) {
  ModelConfig c;
  c.rank = 10;
  const ModelParams p = init_params(c, 4);
  const double bound = 0.01 * std::sqrt(6.0 / (500.0 + 500.0)) * 1.0001;
  EXPECT_LE(p.u_head.w.cwiseAbs().maxCoeff(), bound);
  EXPECT_LE(p.v_head.w.cwiseAbs().maxCoeff(), bound);
  EXPECT_GT(p.u_head.w.cwiseAbs().maxCoeff(), 0.5 * bound);
}

TEST(InitParams, TrunkIndependentOfRank) {
  ModelConfig base;
  ModelConfig dt = base;
  dt.rank = 10;
  const ModelParams a = init_params(base, 9);
  const ModelParams b = init_params(dt, 9);
  const auto la = a.layers();
  const auto lb = b.layers();
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    if (kLayerNames[i] == "u_head" || kLayerNames[i] == "v_head") continue;
    EXPECT_EQ(la[i]->w, lb[i]->w) << kLayerNames[i];
    EXPECT_EQ(la[i]->b, lb[i]->b) << kLayerNames[i];
  }
}

}  // namespace
}  // namespace dtvae
