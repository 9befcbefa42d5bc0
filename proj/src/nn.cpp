#include "dtvae/nn.hpp"

#include <cmath>
#include <random>
#include <string>

#include "dtvae/errors.hpp"
#include "dtvae/gaussian.hpp"

namespace dtvae {
namespace {

DenseLayer zero_layer(Index out, Index in) { return {Matrix::Zero(out, in), Vector::Zero(out)}; }

void glorot_fill(DenseLayer& layer, std::mt19937_64& rng, double scale) {
  const double limit = std::sqrt(6.0 / static_cast<double>(layer.in() + layer.out()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Index j = 0; j < layer.w.cols(); ++j) {
    for (Index i = 0; i < layer.w.rows(); ++i) layer.w(i, j) = scale * dist(rng);
  }
  layer.b.setZero();
}

Matrix affine(const DenseLayer& layer, const Matrix& x) {
  Matrix out = layer.w * x;
  out.colwise() += layer.b;
  return out;
}

void check_input(const Matrix& x, Index rows, const char* what) {
  if (x.rows() != rows) {
    throw ContractError(std::string(what) + ": expected " + std::to_string(rows) +
                        " rows, got " + std::to_string(x.rows()));
  }
}

// Accumulates dL/dW, dL/db for out = W x + b and returns dL/dx.
Matrix affine_backward(const DenseLayer& layer, const Matrix& x, const Matrix& d_out,
                       DenseLayer& grad) {
  grad.w.noalias() += d_out * x.transpose();
  grad.b += d_out.rowwise().sum();
  return layer.w.transpose() * d_out;
}

}  // namespace

ModelParams ModelParams::zeros(const ModelConfig& c) {
  if (c.input < 1 || c.hidden < 1 || c.latent < 1 || c.rank < 0) {
    throw ContractError("ModelConfig: dimensions must be positive (rank >= 0)");
  }
  if (c.rank > c.latent) throw ContractError("ModelConfig: rank must not exceed latent size");
  ModelParams p;
  p.config = c;
  const Index nk = c.latent * c.rank;
  p.enc1 = zero_layer(c.hidden, c.input);
  p.enc2 = zero_layer(c.hidden, c.hidden);
  p.mu_head = zero_layer(c.latent, c.hidden);
  p.log_var_head = zero_layer(c.latent, c.hidden);
  p.u_head = zero_layer(nk, c.hidden);
  p.v_head = zero_layer(nk, c.hidden);
  p.dec1 = zero_layer(c.hidden, c.latent);
  p.dec2 = zero_layer(c.hidden, c.hidden);
  p.dec_out = zero_layer(c.input, c.hidden);
  return p;
}

std::array<DenseLayer*, kNumLayers> ModelParams::layers() {
  return {&enc1, &enc2, &mu_head, &log_var_head, &u_head, &v_head, &dec1, &dec2, &dec_out};
}

std::array<const DenseLayer*, kNumLayers> ModelParams::layers() const {
  return {&enc1, &enc2, &mu_head, &log_var_head, &u_head, &v_head, &dec1, &dec2, &dec_out};
}

Index ModelParams::size() const {
  Index total = 0;
  for (const DenseLayer* l : layers()) total += l->w.size() + l->b.size();
  return total;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = ModelParams::zeros(config);
  std::seed_seq trunk_seq{seed, std::uint64_t{0x7472756e6b}};
  std::seed_seq uv_seq{seed, std::uint64_t{0x7576686561}};
  std::mt19937_64 trunk_rng(trunk_seq);
  std::mt19937_64 uv_rng(uv_seq);
  for (DenseLayer* l : {&p.enc1, &p.enc2, &p.mu_head, &p.log_var_head, &p.dec1, &p.dec2, &p.dec_out}) {
    glorot_fill(*l, trunk_rng, 1.0);
  }
  glorot_fill(p.u_head, uv_rng, kUvHeadInitScale);
  glorot_fill(p.v_head, uv_rng, kUvHeadInitScale);
  return p;
}

EncoderOutputs EncoderBatch::at(Index i, Index latent, Index rank) const {
  EncoderOutputs out;
  out.mu = mu.col(i);
  out.log_var = log_var.col(i);
  out.u = Eigen::Map<const Matrix>(u_flat.col(i).data(), latent, rank);
  out.v = Eigen::Map<const Matrix>(v_flat.col(i).data(), rank, latent);
  return out;
}

std::pair<EncoderBatch, EncoderTape> encoder_forward(const ModelParams& p, const Matrix& x) {
  check_input(x, p.config.input, "encoder_forward");
  EncoderTape tape;
  tape.x = x;
  tape.h1 = affine(p.enc1, x).array().tanh().matrix();
  tape.h2 = affine(p.enc2, tape.h1).array().tanh().matrix();
  tape.log_var_raw = affine(p.log_var_head, tape.h2);

  EncoderBatch out;
  out.mu = affine(p.mu_head, tape.h2);
  out.log_var = tape.log_var_raw.cwiseMax(kLogVarMin).cwiseMin(kLogVarMax);
  // Bounded dyad entries: |eps V U| <= eps * n * k, so det B stays positive
  // whenever eps * n * k < 1 no matter where training drives the heads.
  out.u_flat = affine(p.u_head, tape.h2).array().tanh().matrix();
  out.v_flat = affine(p.v_head, tape.h2).array().tanh().matrix();
  tape.u_flat = out.u_flat;
  tape.v_flat = out.v_flat;
  return {std::move(out), std::move(tape)};
}

std::pair<Matrix, DecoderTape> decoder_forward(const ModelParams& p, const Matrix& z) {
  check_input(z, p.config.latent, "decoder_forward");
  DecoderTape tape;
  tape.z = z;
  tape.h1 = affine(p.dec1, z).array().tanh().matrix();
  tape.h2 = affine(p.dec2, tape.h1).array().tanh().matrix();
  Matrix logits = affine(p.dec_out, tape.h2);
  return {std::move(logits), std::move(tape)};
}

Matrix decoder_backward(const ModelParams& p, const DecoderTape& tape, const Matrix& d_logits,
                        ParamGrads& grads) {
  if (d_logits.rows() != p.config.input || d_logits.cols() != tape.z.cols()) {
    throw ContractError("decoder_backward: upstream gradient does not match tape");
  }
  Matrix d_h2 = affine_backward(p.dec_out, tape.h2, d_logits, grads.dec_out);
  Matrix d_a2 = d_h2.cwiseProduct((1.0 - tape.h2.array().square()).matrix());
  Matrix d_h1 = affine_backward(p.dec2, tape.h1, d_a2, grads.dec2);
  Matrix d_a1 = d_h1.cwiseProduct((1.0 - tape.h1.array().square()).matrix());
  return affine_backward(p.dec1, tape.z, d_a1, grads.dec1);
}

void encoder_backward(const ModelParams& p, const EncoderTape& tape, const EncoderUpstream& up,
                      ParamGrads& grads) {
  const Index m = tape.x.cols();
  if (up.d_mu.cols() != m || up.d_log_var.cols() != m || up.d_mu.rows() != p.config.latent) {
    throw ContractError("encoder_backward: upstream gradient does not match tape");
  }
  const Matrix active =
      ((tape.log_var_raw.array() >= kLogVarMin) && (tape.log_var_raw.array() <= kLogVarMax))
          .cast<double>()
          .matrix();
  const Matrix d_log_var_raw = up.d_log_var.cwiseProduct(active);

  // The u/v heads are accumulated last so that a zero dyadic gradient leaves
  // the trunk gradient bit-identical to the rank-0 model.
  Matrix d_h2 = affine_backward(p.mu_head, tape.h2, up.d_mu, grads.mu_head);
  d_h2 += affine_backward(p.log_var_head, tape.h2, d_log_var_raw, grads.log_var_head);
  if (p.config.rank > 0) {
    const Matrix d_u_pre = up.d_u_flat.cwiseProduct((1.0 - tape.u_flat.array().square()).matrix());
    const Matrix d_v_pre = up.d_v_flat.cwiseProduct((1.0 - tape.v_flat.array().square()).matrix());
    d_h2 += affine_backward(p.u_head, tape.h2, d_u_pre, grads.u_head);
    d_h2 += affine_backward(p.v_head, tape.h2, d_v_pre, grads.v_head);
  }
  Matrix d_a2 = d_h2.cwiseProduct((1.0 - tape.h2.array().square()).matrix());
  Matrix d_h1 = affine_backward(p.enc2, tape.h1, d_a2, grads.enc2);
  Matrix d_a1 = d_h1.cwiseProduct((1.0 - tape.h1.array().square()).matrix());
  affine_backward(p.enc1, tape.x, d_a1, grads.enc1);
}

AdamState AdamState::zeros(const ModelConfig& config) {
  return {ModelParams::zeros(config), ModelParams::zeros(config), 0};
}

void adam_step(ModelParams& p, AdamState& s, const ParamGrads& g, double lr,
               const AdamHyper& hyper) {
  const auto g_layers = g.layers();
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    if (!all_finite(g_layers[i]->w) || !all_finite(g_layers[i]->b)) {
      throw PoisonedUpdateError("adam_step: non-finite gradient in block " +
                                std::string(kLayerNames[i]) + " at step " +
                                std::to_string(s.step + 1));
    }
  }
  s.step += 1;
  const double t = static_cast<double>(s.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);

  auto update = [&](auto& param, auto& m, auto& v, const auto& grad) {
    m = hyper.beta1 * m + (1.0 - hyper.beta1) * grad;
    v = hyper.beta2 * v + (1.0 - hyper.beta2) * grad.cwiseProduct(grad);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + hyper.eps);
  };
  const auto p_layers = p.layers();
  const auto m_layers = s.m.layers();
  const auto v_layers = s.v.layers();
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    update(p_layers[i]->w, m_layers[i]->w, v_layers[i]->w, g_layers[i]->w);
    update(p_layers[i]->b, m_layers[i]->b, v_layers[i]->b, g_layers[i]->b);
  }
}

}  // namespace dtvae
