#include "dtvae/vae.hpp"

#include <chrono>
#include <random>
#include <string>

#include "dtvae/dyadic.hpp"
#include "dtvae/errors.hpp"
#include "dtvae/gaussian.hpp"

namespace dtvae {
namespace {

struct ForwardPass {
  EncoderBatch enc;
  EncoderTape enc_tape;
  Matrix y;
  Matrix z;
  Matrix logits;
  DecoderTape dec_tape;
  Vector recon;  // per datapoint
  Vector kl;     // per datapoint
};

void check_batch(const ModelParams& p, const Matrix& x, const Matrix& alphas) {
  if (x.cols() < 1) throw ContractError("elbo: empty batch");
  if (alphas.rows() != p.config.latent || alphas.cols() != x.cols()) {
    throw ContractError("elbo: alphas must be latent x batch");
  }
}

DyadicTransform<double> transform_at(const ModelParams& p, const EncoderBatch& enc, Index i) {
  const Index n = p.config.latent;
  const Index k = p.config.rank;
  return DyadicTransform<double>(p.config.epsilon,
                                 Eigen::Map<const Matrix>(enc.u_flat.col(i).data(), n, k),
                                 Eigen::Map<const Matrix>(enc.v_flat.col(i).data(), k, n));
}

ForwardPass run_forward(const ModelParams& p, const Matrix& x, const Matrix& alphas) {
  check_batch(p, x, alphas);
  const Index m = x.cols();
  const bool dyadic = p.config.rank > 0;
  ForwardPass f;
  std::tie(f.enc, f.enc_tape) = encoder_forward(p, x);
  f.y.resize(p.config.latent, m);
  f.z.resize(p.config.latent, m);
  f.kl.resize(m);
  for (Index i = 0; i < m; ++i) {
    const DiagGaussian<double> g(f.enc.mu.col(i), f.enc.log_var.col(i));
    f.y.col(i) = sample(g, alphas.col(i));
    if (dyadic) {
      const auto b = transform_at(p, f.enc, i);
      f.z.col(i) = apply(b, f.y.col(i));
      try {
        f.kl(i) = kl_dt(g, b);
      } catch (const NonPdPosteriorError& e) {
        throw NonPdPosteriorError(std::string(e.what()) + " (datapoint " + std::to_string(i) + ")", i);
      }
    } else {
      f.z.col(i) = f.y.col(i);
      f.kl(i) = kl_diag(g);
    }
  }
  std::tie(f.logits, f.dec_tape) = decoder_forward(p, f.z);
  f.recon.resize(m);
  for (Index i = 0; i < m; ++i) f.recon(i) = bernoulli_logprob(x.col(i), f.logits.col(i));
  return f;
}

ElboBreakdown batch_mean(const ForwardPass& f) {
  const double m = static_cast<double>(f.recon.size());
  return ElboBreakdown::from(f.recon.sum() / m, f.kl.sum() / m);
}

}  // namespace

void TrainConfig::validate() const {
  if (model.latent < 1) throw ContractError("TrainConfig: latent must be >= 1");
  if (model.rank < 0 || model.rank > model.latent) {
    throw ContractError("TrainConfig: rank must be in [0, latent]");
  }
  if (!(model.epsilon >= 0.0)) throw ContractError("TrainConfig: epsilon must be >= 0");
  if (batch < 1) throw ContractError("TrainConfig: batch must be >= 1");
  if (epochs < 0) throw ContractError("TrainConfig: epochs must be >= 0");
  if (!(lr > 0.0)) throw ContractError("TrainConfig: lr must be > 0");
  if (eval_samples < 1) throw ContractError("TrainConfig: eval samples must be >= 1");
}

ElboBreakdown elbo_forward(const ModelParams& p, const Matrix& x, const Matrix& alphas) {
  return batch_mean(run_forward(p, x, alphas));
}

ElboResult elbo_minibatch(const ModelParams& p, const Matrix& x, const Matrix& alphas) {
  const ForwardPass f = run_forward(p, x, alphas);
  const Index m = x.cols();
  const Index n = p.config.latent;
  const Index nk = n * p.config.rank;
  const double inv_m = 1.0 / static_cast<double>(m);

  ElboResult out{batch_mean(f), ParamGrads::zeros(p.config)};

  // loss = mean(kl - recon); d loss / d logits = (s(l) - x) / M
  const Matrix sig = (1.0 + (-f.logits.array()).exp()).inverse().matrix();
  const Matrix d_logits = (sig - x) * inv_m;
  const Matrix d_z = decoder_backward(p, f.dec_tape, d_logits, out.grads);

  EncoderUpstream up{Matrix(n, m), Matrix(n, m), Matrix(nk, m), Matrix(nk, m)};
  for (Index i = 0; i < m; ++i) {
    const DiagGaussian<double> g(f.enc.mu.col(i), f.enc.log_var.col(i));
    Vector d_y;
    KlBackward<double> kl_grad;
    if (p.config.rank > 0) {
      const auto b = transform_at(p, f.enc, i);
      auto through = apply_backward(b, f.y.col(i), d_z.col(i));
      kl_grad = kl_dt_backward(g, b, inv_m);
      d_y = std::move(through.d_y);
      Eigen::Map<Matrix>(up.d_u_flat.col(i).data(), n, p.config.rank) =
          through.grads.d_u + kl_grad.grads.d_u;
      Eigen::Map<Matrix>(up.d_v_flat.col(i).data(), p.config.rank, n) =
          through.grads.d_v + kl_grad.grads.d_v;
    } else {
      kl_grad = kl_diag_backward(g, inv_m);
      d_y = d_z.col(i);
    }
    // y = mu + alpha * exp(log_var / 2)
    const Vector sigma = g.stddev();
    up.d_mu.col(i) = d_y + kl_grad.d_mu;
    const Vector d_sigma = d_y.cwiseProduct(alphas.col(i));
    up.d_log_var.col(i) = 0.5 * d_sigma.cwiseProduct(sigma) + kl_grad.d_log_var;
  }
  encoder_backward(p, f.enc_tape, up, out.grads);
  return out;
}

Matrix draw_noise(Index latent, Index count, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix a(latent, count);
  for (Index j = 0; j < count; ++j) {
    for (Index i = 0; i < latent; ++i) a(i, j) = normal(rng);
  }
  return a;
}

ElboBreakdown evaluate(const ModelParams& p, const Matrix& images, Index samples,
                       std::uint64_t seed) {
  if (samples < 1) throw ContractError("evaluate: samples must be >= 1");
  const Index count = images.cols();
  if (count == 0) return {};
  constexpr Index kChunk = 500;
  Rng bin_rng = make_rng(seed, 0, Stream::Eval);
  Rng noise_rng = make_rng(seed, 0, Stream::Noise);
  double recon_sum = 0.0;
  double kl_sum = 0.0;
  std::vector<Index> cols;
  for (Index start = 0; start < count; start += kChunk) {
    const Index m = std::min(kChunk, count - start);
    cols.resize(static_cast<std::size_t>(m));
    for (Index j = 0; j < m; ++j) cols[static_cast<std::size_t>(j)] = start + j;
    const Matrix x = binarize_columns(images, cols, bin_rng);
    for (Index s = 0; s < samples; ++s) {
      const ForwardPass f = run_forward(p, x, draw_noise(p.config.latent, m, noise_rng));
      recon_sum += f.recon.sum();
      kl_sum += f.kl.sum();
    }
  }
  const double denom = static_cast<double>(count) * static_cast<double>(samples);
  return ElboBreakdown::from(recon_sum / denom, kl_sum / denom);
}

TrainState TrainState::fresh(const TrainConfig& config) {
  config.validate();
  return {init_params(config.model, config.seed), AdamState::zeros(config.model), 0};
}

std::vector<EpochMetrics> train(TrainState& state, const TrainConfig& config, const Matrix& images,
                                const Matrix* valid_images, const EpochCallback& on_epoch) {
  config.validate();
  if (images.rows() != config.model.input) throw ContractError("train: image size mismatch");
  std::vector<EpochMetrics> history;
  while (state.epoch < config.epochs) {
    const auto started = std::chrono::steady_clock::now();
    const auto epoch = static_cast<std::uint64_t>(state.epoch);
    EpochBatches batches(images, config.batch, config.seed, epoch);
    Rng noise_rng = make_rng(config.seed, epoch, Stream::Noise);
    double recon_sum = 0.0;
    double kl_sum = 0.0;
    Minibatch mb;
    while (batches.next(mb)) {
      const Matrix alphas = draw_noise(config.model.latent, mb.x.cols(), noise_rng);
      const ElboResult r = elbo_minibatch(state.params, mb.x, alphas);
      adam_step(state.params, state.adam, r.grads, config.lr);
      const double m = static_cast<double>(mb.x.cols());
      recon_sum += r.value.recon * m;
      kl_sum += r.value.kl * m;
    }
    state.epoch += 1;
    EpochMetrics metrics;
    metrics.epoch = state.epoch;
    const double count = static_cast<double>(images.cols());
    metrics.train = ElboBreakdown::from(recon_sum / count, kl_sum / count);
    if (valid_images != nullptr) {
      metrics.valid = evaluate(state.params, *valid_images, config.eval_samples, config.seed);
    }
    metrics.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    history.push_back(metrics);
    if (on_epoch) on_epoch(state, metrics);
  }
  return history;
}

}  // namespace dtvae
