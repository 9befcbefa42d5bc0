#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dtvae/vae.hpp"

namespace dtvae {

inline constexpr const char* kMetricsHeader = "epoch,split,elbo,recon,kl,wall_seconds";

struct MetricsRow {
  int epoch = 0;
  std::string split;  // "train" or "valid"
  double elbo = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  double wall_seconds = 0.0;

  static MetricsRow from(int epoch, std::string split, const ElboBreakdown& e, double wall_seconds);
};

/// CSV line without trailing newline. Doubles are written with 17 significant
/// digits so they parse back to the same bits.
std::string format_metrics_row(const MetricsRow& row);

/// Parses a metrics.csv file; throws FormatError on a bad header or row.
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

/// Binary PGM (P5), 28 x 28, maxval 255, from per-pixel means in [0, 1].
void write_pgm(const std::filesystem::path& path, const Vector& means);

}  // namespace dtvae
