#include "dtvae/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <numeric>

#include "dtvae/errors.hpp"

namespace dtvae {
namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  if (bytes.size() < offset + 4) throw FormatError("IDX: truncated header", bytes.size());
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

bool is_gzip(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

std::filesystem::path find_variant(const std::filesystem::path& dir, const std::string& name) {
  for (const auto& candidate : {dir / name, dir / (name + ".gz")}) {
    if (std::filesystem::exists(candidate)) return candidate;
  }
  throw std::runtime_error("missing data file " + (dir / name).string() + "[.gz]");
}

}  // namespace

Dataset Dataset::head(Index count) const { return slice(0, std::min(count, size())); }

Dataset Dataset::slice(Index begin, Index end) const {
  if (begin < 0 || end > size() || begin > end) throw ContractError("Dataset::slice: bad range");
  Dataset out;
  out.images = images.middleCols(begin, end - begin);
  if (!labels.empty()) {
    out.labels.assign(labels.begin() + begin, labels.begin() + end);
  }
  return out;
}

Rng make_rng(std::uint64_t seed, std::uint64_t epoch, Stream stream) {
  std::seed_seq seq{seed, epoch, static_cast<std::uint64_t>(stream)};
  return Rng(seq);
}

std::vector<std::uint8_t> maybe_gunzip(std::vector<std::uint8_t> bytes) {
  if (!is_gzip(bytes)) return bytes;
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw FormatError("gzip: inflateInit failed", 0);
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> chunk(1 << 20);
  zs.next_in = bytes.data();
  zs.avail_in = static_cast<uInt>(bytes.size());
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      const auto offset = static_cast<std::size_t>(zs.total_in);
      inflateEnd(&zs);
      throw FormatError("gzip: corrupt or truncated stream", offset);
    }
    out.insert(out.end(), chunk.begin(), chunk.begin() + (chunk.size() - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      const auto offset = static_cast<std::size_t>(zs.total_in);
      inflateEnd(&zs);
      throw FormatError("gzip: truncated stream", offset);
    }
  }
  inflateEnd(&zs);
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Matrix load_idx_images(std::span<const std::uint8_t> raw) {
  std::vector<std::uint8_t> inflated;
  if (is_gzip(raw)) {
    inflated = maybe_gunzip({raw.begin(), raw.end()});
    raw = inflated;
  }
  const std::uint32_t magic = read_be32(raw, 0);
  if (magic != kIdxImageMagic) throw FormatError("IDX images: bad magic", 0);
  const std::uint32_t count = read_be32(raw, 4);
  const std::uint32_t rows = read_be32(raw, 8);
  const std::uint32_t cols = read_be32(raw, 12);
  if (rows != kImageSide) throw FormatError("IDX images: expected 28 rows", 8);
  if (cols != kImageSide) throw FormatError("IDX images: expected 28 columns", 12);
  constexpr std::size_t header = 16;
  const std::size_t need = header + std::size_t{count} * kImagePixels;
  if (raw.size() < need) throw FormatError("IDX images: truncated payload", raw.size());

  Matrix images(kImagePixels, count);
  const std::uint8_t* px = raw.data() + header;
  for (Index j = 0; j < static_cast<Index>(count); ++j) {
    for (Index i = 0; i < kImagePixels; ++i) images(i, j) = static_cast<double>(*px++) / 255.0;
  }
  return images;
}

std::vector<std::uint8_t> load_idx_labels(std::span<const std::uint8_t> raw) {
  std::vector<std::uint8_t> inflated;
  if (is_gzip(raw)) {
    inflated = maybe_gunzip({raw.begin(), raw.end()});
    raw = inflated;
  }
  if (read_be32(raw, 0) != kIdxLabelMagic) throw FormatError("IDX labels: bad magic", 0);
  const std::uint32_t count = read_be32(raw, 4);
  constexpr std::size_t header = 8;
  if (raw.size() < header + count) throw FormatError("IDX labels: truncated payload", raw.size());
  std::vector<std::uint8_t> labels(raw.begin() + header, raw.begin() + header + count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 9) throw FormatError("IDX labels: label out of range 0-9", header + i);
  }
  return labels;
}

Dataset load_mnist(const std::filesystem::path& dir, const std::string& prefix) {
  Dataset ds;
  ds.images = load_idx_images(read_file(find_variant(dir, prefix + "-images-idx3-ubyte")));
  ds.labels = load_idx_labels(read_file(find_variant(dir, prefix + "-labels-idx1-ubyte")));
  if (static_cast<Index>(ds.labels.size()) != ds.images.cols()) {
    throw FormatError("MNIST: image and label counts differ", 4);
  }
  return ds;
}

Vector dynamic_binarize(const Eigen::Ref<const Vector>& image, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vector out(image.size());
  for (Index i = 0; i < image.size(); ++i) out(i) = unif(rng) < image(i) ? 1.0 : 0.0;
  return out;
}

Matrix binarize_columns(const Matrix& images, std::span<const Index> columns, Rng& rng) {
  Matrix out(images.rows(), static_cast<Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) {
    out.col(static_cast<Index>(j)) = dynamic_binarize(images.col(columns[j]), rng);
  }
  return out;
}

std::vector<std::vector<Index>> batch_order(Index count, Index batch, std::uint64_t seed,
                                            std::uint64_t epoch) {
  if (batch < 1) throw ContractError("batch_order: batch size must be >= 1");
  std::vector<Index> perm(static_cast<std::size_t>(count));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng = make_rng(seed, epoch, Stream::Shuffle);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<Index>> batches;
  for (Index start = 0; start < count; start += batch) {
    const Index end = std::min(count, start + batch);
    batches.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return batches;
}

EpochBatches::EpochBatches(const Matrix& images, Index batch, std::uint64_t seed,
                           std::uint64_t epoch)
    : images_(&images),
      order_(batch_order(images.cols(), batch, seed, epoch)),
      rng_(make_rng(seed, epoch, Stream::Binarize)) {}

bool EpochBatches::next(Minibatch& out) {
  if (cursor_ >= order_.size()) return false;
  out.indices = order_[cursor_++];
  out.x = binarize_columns(*images_, out.indices, rng_);
  return true;
}

}  // namespace dtvae
