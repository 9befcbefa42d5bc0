#pragma once

// Encoder/decoder MLPs with hand-written reverse mode, and Adam.
//
// Everything is batched column-wise: an input batch is an (input x M) matrix
// with one datapoint per column, and every activation follows suit.

#include <array>
#include <cstdint>
#include <string_view>

#include "dtvae/linalg.hpp"

namespace dtvae {

struct ModelConfig {
  Index input = 784;
  Index hidden = 500;
  Index latent = 50;
  Index rank = 0;  // 0 disables the dyadic transform
  double epsilon = 1e-3;
};

struct DenseLayer {
  Matrix w;  // out x in
  Vector b;  // out

  Index in() const { return w.cols(); }
  Index out() const { return w.rows(); }
};

inline constexpr std::size_t kNumLayers = 9;
inline constexpr std::array<std::string_view, kNumLayers> kLayerNames = {
    "enc1", "enc2", "mu_head", "log_var_head", "u_head", "v_head", "dec1", "dec2", "dec_out"};

/// All trainable weights. Also used as the gradient and Adam moment container.
struct ModelParams {
  ModelConfig config;
  DenseLayer enc1, enc2;
  DenseLayer mu_head, log_var_head, u_head, v_head;
  DenseLayer dec1, dec2, dec_out;

  /// Correctly shaped, all-zero parameters.
  static ModelParams zeros(const ModelConfig& config);

  std::array<DenseLayer*, kNumLayers> layers();
  std::array<const DenseLayer*, kNumLayers> layers() const;

  /// Total number of scalars across all blocks.
  Index size() const;
};

using ParamGrads = ModelParams;

/// Glorot-uniform weights, zero biases. The u/v heads draw from their own
/// stream and are shrunk by 0.01 so eps * U V starts near zero; the remaining
/// layers therefore initialize identically for every rank.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

inline constexpr double kUvHeadInitScale = 0.01;

/// Per-datapoint view of the encoder heads.
struct EncoderOutputs {
  Vector mu;
  Vector log_var;
  Matrix u;  // n x k
  Matrix v;  // k x n
};

struct EncoderBatch {
  Matrix mu;       // n x M
  Matrix log_var;  // n x M, clamped
  Matrix u_flat;   // (n k) x M, column-major n x k per datapoint, entries in (-1, 1)
  Matrix v_flat;   // (k n) x M, column-major k x n per datapoint

  Index batch() const { return mu.cols(); }
  EncoderOutputs at(Index i, Index latent, Index rank) const;
};

struct EncoderTape {
  Matrix x;
  Matrix h1;
  Matrix h2;
  Matrix log_var_raw;  // before clamping
  Matrix u_flat;       // dyad head outputs, after tanh
  Matrix v_flat;
};

struct DecoderTape {
  Matrix z;
  Matrix h1;
  Matrix h2;
};

/// Upstream gradients arriving at the four encoder heads.
struct EncoderUpstream {
  Matrix d_mu;
  Matrix d_log_var;
  Matrix d_u_flat;
  Matrix d_v_flat;
};

std::pair<EncoderBatch, EncoderTape> encoder_forward(const ModelParams& p, const Matrix& x);
std::pair<Matrix, DecoderTape> decoder_forward(const ModelParams& p, const Matrix& z);

/// Accumulates decoder parameter gradients into `grads`; returns dL/dz.
Matrix decoder_backward(const ModelParams& p, const DecoderTape& tape, const Matrix& d_logits,
                        ParamGrads& grads);

/// Accumulates encoder parameter gradients into `grads`. The log-variance
/// gradient is zeroed where the clamp was active.
void encoder_backward(const ModelParams& p, const EncoderTape& tape, const EncoderUpstream& up,
                      ParamGrads& grads);

struct AdamState {
  ModelParams m;
  ModelParams v;
  std::int64_t step = 0;

  static AdamState zeros(const ModelConfig& config);
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update in place. Throws PoisonedUpdateError, with
/// nothing modified, if any gradient entry is non-finite.
void adam_step(ModelParams& p, AdamState& s, const ParamGrads& g, double lr,
               const AdamHyper& hyper = {});

}  // namespace dtvae
