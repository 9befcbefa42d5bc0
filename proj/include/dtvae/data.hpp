#pragma once

// MNIST-shaped IDX ingestion, dynamic binarization and seeded minibatching.

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dtvae/linalg.hpp"

namespace dtvae {

inline constexpr Index kImageSide = 28;
inline constexpr Index kImagePixels = kImageSide * kImageSide;
inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Images as columns of intensities byte/255 in [0, 1], plus digit labels.
struct Dataset {
  Matrix images;  // 784 x N
  std::vector<std::uint8_t> labels;

  Index size() const { return images.cols(); }

  /// First `count` images (all of them when count exceeds the size).
  Dataset head(Index count) const;
  /// Columns [begin, end).
  Dataset slice(Index begin, Index end) const;
};

using Rng = std::mt19937_64;

/// Independent generator streams derived from the run seed.
enum class Stream : std::uint64_t { Shuffle = 1, Binarize = 2, Noise = 3, Eval = 4, Sample = 5 };

Rng make_rng(std::uint64_t seed, std::uint64_t epoch, Stream stream);

/// Returns `bytes` inflated when they start with the gzip magic 0x1f 0x8b,
/// otherwise unchanged.
std::vector<std::uint8_t> maybe_gunzip(std::vector<std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Parses an IDX3 image file (optionally gzipped). Throws FormatError.
Matrix load_idx_images(std::span<const std::uint8_t> bytes);

/// Parses an IDX1 label file (optionally gzipped). Throws FormatError.
std::vector<std::uint8_t> load_idx_labels(std::span<const std::uint8_t> bytes);

/// Loads `<prefix>-images-idx3-ubyte[.gz]` and `<prefix>-labels-idx1-ubyte[.gz]`
/// from `dir`; prefix is "train" or "t10k".
Dataset load_mnist(const std::filesystem::path& dir, const std::string& prefix);

/// Each pixel is 1 with probability equal to its intensity.
Vector dynamic_binarize(const Eigen::Ref<const Vector>& image, Rng& rng);

/// Binarizes the selected columns of `images` into the columns of the result.
Matrix binarize_columns(const Matrix& images, std::span<const Index> columns, Rng& rng);

/// Per-epoch shuffled index batches keyed by (seed, epoch); the last batch
/// may be short.
std::vector<std::vector<Index>> batch_order(Index count, Index batch, std::uint64_t seed,
                                            std::uint64_t epoch);

struct Minibatch {
  std::vector<Index> indices;
  Matrix x;  // binarized, 784 x m
};

/// Minibatches for one epoch, binarized lazily with an owned generator so
/// every use of an image draws fresh bits.
class EpochBatches {
 public:
  EpochBatches(const Matrix& images, Index batch, std::uint64_t seed, std::uint64_t epoch);

  bool next(Minibatch& out);
  std::size_t num_batches() const { return order_.size(); }

 private:
  const Matrix* images_;
  std::vector<std::vector<Index>> order_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

}  // namespace dtvae
