#pragma once

// Encoder -> reparameterized sample -> dyadic transform -> decoder, the
// minibatch ELBO with its exact gradient, the training loop and evaluation.

#include <cstdint>
#include <functional>
#include <optional>

#include "dtvae/data.hpp"
#include "dtvae/nn.hpp"

namespace dtvae {

/// Batch means in nats per datapoint. elbo is always recon - kl.
struct ElboBreakdown {
  double recon = 0.0;
  double kl = 0.0;
  double elbo = 0.0;

  static ElboBreakdown from(double recon, double kl) { return {recon, kl, recon - kl}; }
};

struct TrainConfig {
  ModelConfig model;
  Index batch = 128;
  int epochs = 1;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  Index eval_samples = 1;

  void validate() const;
};

struct ElboResult {
  ElboBreakdown value;
  ParamGrads grads;  // gradient of -elbo
};

/// Per datapoint: encode, y = mu + alpha * sigma, z = B y (z = y when rank is
/// 0), decode, score. Returns the batch-mean breakdown and the exact gradient
/// of the negative mean ELBO. `alphas` is latent x M.
ElboResult elbo_minibatch(const ModelParams& p, const Matrix& x, const Matrix& alphas);

/// Forward-only variant of elbo_minibatch.
ElboBreakdown elbo_forward(const ModelParams& p, const Matrix& x, const Matrix& alphas);

/// Standard normal draws, latent x count.
Matrix draw_noise(Index latent, Index count, Rng& rng);

/// Mean over datapoints of the S-sample average single-sample ELBO. Each image
/// is binarized once from a generator keyed by `seed`. Pure.
ElboBreakdown evaluate(const ModelParams& p, const Matrix& images, Index samples,
                       std::uint64_t seed);

struct TrainState {
  ModelParams params;
  AdamState adam;
  int epoch = 0;  // completed epochs

  static TrainState fresh(const TrainConfig& config);
};

struct EpochMetrics {
  int epoch = 0;  // 1-based
  ElboBreakdown train;
  std::optional<ElboBreakdown> valid;
  double wall_seconds = 0.0;
};

using EpochCallback = std::function<void(const TrainState&, const EpochMetrics&)>;

/// Runs epochs state.epoch .. config.epochs - 1. All randomness of epoch e is
/// keyed by (seed, e), so resuming from a saved state reproduces an
/// uninterrupted run. A PoisonedUpdateError propagates with `state` holding
/// the parameters from before the failing step.
std::vector<EpochMetrics> train(TrainState& state, const TrainConfig& config, const Matrix& images,
                                const Matrix* valid_images = nullptr,
                                const EpochCallback& on_epoch = {});

}  // namespace dtvae
