#include "dtvae/commands.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>

#include "dtvae/checkpoint.hpp"
#include "dtvae/data.hpp"
#include "dtvae/errors.hpp"
#include "dtvae/metrics.hpp"
#include "dtvae/vae.hpp"

namespace dtvae {
namespace {

constexpr Index kValidationSize = 10000;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

int cmd_train(const TrainOptions& opts, std::ostream& out, std::ostream& err) {
  TrainConfig config;
  TrainState state;
  Matrix train_images;
  Matrix valid_images;
  namespace fs = std::filesystem;
  try {
    if (opts.resume) {
      Checkpoint ckpt = load_checkpoint(*opts.resume);
      config = ckpt.config;
      config.epochs = opts.epochs;
      state = std::move(ckpt.state);
    } else {
      config.model.hidden = opts.hidden;
      config.model.latent = opts.latent;
      config.model.rank = opts.rank;
      config.model.epsilon = opts.epsilon;
      config.batch = opts.batch;
      config.epochs = opts.epochs;
      config.lr = opts.lr;
      config.seed = opts.seed;
      config.eval_samples = opts.eval_samples;
      config.validate();
      state = TrainState::fresh(config);
      if (opts.zero_init) state.params = ModelParams::zeros(config.model);
    }
    if (opts.subset && *opts.subset < 1) throw ContractError("--subset must be >= 1");

    Dataset full = load_mnist(opts.data_dir, "train");
    Dataset train_set = std::move(full);
    if (opts.validate) {
      if (train_set.size() <= kValidationSize) throw ContractError("--validate needs more than 10,000 images");
      valid_images = train_set.images.rightCols(kValidationSize);
      train_set = train_set.head(train_set.size() - kValidationSize);
    }
    if (opts.subset) train_set = train_set.head(*opts.subset);
    train_images = std::move(train_set.images);
    if (train_images.cols() == 0) throw ContractError("training set is empty");

    fs::create_directories(opts.out_dir);
  } catch (const std::exception& e) {
    err << "dtvae train: " << e.what() << "\n";
    return kExitUsage;
  }

  const fs::path metrics_path = opts.out_dir / kMetricsFile;
  const fs::path ckpt_path = opts.out_dir / kCheckpointFile;
  std::ofstream metrics;
  if (opts.resume && fs::exists(metrics_path)) {
    metrics.open(metrics_path, std::ios::app);
  } else {
    metrics.open(metrics_path, std::ios::trunc);
    metrics << kMetricsHeader << "\n";
  }
  if (!metrics) {
    err << "dtvae train: cannot write " << metrics_path << "\n";
    return kExitUsage;
  }

  out << "training latent=" << config.model.latent << " rank=" << config.model.rank
      << " epsilon=" << config.model.epsilon << " batch=" << config.batch
      << " images=" << train_images.cols() << " epochs=" << state.epoch << ".." << config.epochs
      << "\n";
  save_checkpoint(ckpt_path, {config, state});

  try {
    train(state, config, train_images, opts.validate ? &valid_images : nullptr,
          [&](const TrainState& s, const EpochMetrics& m) {
            save_checkpoint(ckpt_path, {config, s});
            metrics << format_metrics_row(MetricsRow::from(m.epoch, "train", m.train, m.wall_seconds))
                    << "\n";
            if (m.valid) {
              metrics << format_metrics_row(MetricsRow::from(m.epoch, "valid", *m.valid, m.wall_seconds))
                      << "\n";
            }
            metrics.flush();
            out << "epoch " << m.epoch << " train_elbo=" << format_double(m.train.elbo)
                << " recon=" << format_double(m.train.recon) << " kl=" << format_double(m.train.kl);
            if (m.valid) out << " valid_elbo=" << format_double(m.valid->elbo);
            out << " seconds=" << m.wall_seconds << "\n";
          });
  } catch (const PoisonedUpdateError& e) {
    err << "dtvae train: aborted: " << e.what() << "; last checkpoint kept at " << ckpt_path << "\n";
    return kExitPoisoned;
  } catch (const NonPdPosteriorError& e) {
    err << "dtvae train: aborted: " << e.what() << "; last checkpoint kept at " << ckpt_path << "\n";
    return kExitPoisoned;
  }
  return kExitOk;
}

int cmd_eval(const EvalOptions& opts, std::ostream& out, std::ostream& err) {
  try {
    if (opts.samples < 1) throw ContractError("--samples must be >= 1");
    const Checkpoint ckpt = load_checkpoint(opts.checkpoint);
    Dataset test = load_mnist(opts.data_dir, "t10k");
    if (opts.subset) test = test.head(*opts.subset);
    const ElboBreakdown e = evaluate(ckpt.state.params, test.images, opts.samples, opts.seed);
    out << "test_elbo=" << format_double(e.elbo) << "\n";
    err << "recon=" << format_double(e.recon) << " kl=" << format_double(e.kl)
        << " images=" << test.size() << " samples=" << opts.samples << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "dtvae eval: " << e.what() << "\n";
    return kExitUsage;
  }
}

int cmd_sample(const SampleOptions& opts, std::ostream& out, std::ostream& err) {
  try {
    if (opts.count < 0) throw ContractError("--count must be >= 0");
    if (opts.count == 0) return kExitOk;
    const Checkpoint ckpt = load_checkpoint(opts.checkpoint);
    const ModelParams& p = ckpt.state.params;
    std::filesystem::create_directories(opts.out_dir);
    Rng rng = make_rng(opts.seed, 0, Stream::Sample);
    const Matrix z = draw_noise(p.config.latent, opts.count, rng);
    const Matrix logits = decoder_forward(p, z).first;
    const Matrix means = (1.0 + (-logits.array()).exp()).inverse().matrix();
    for (Index i = 0; i < opts.count; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "sample_%04ld.pgm", static_cast<long>(i));
      write_pgm(opts.out_dir / name, means.col(i));
    }
    out << "wrote " << opts.count << " samples to " << opts.out_dir.string() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "dtvae sample: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace dtvae
