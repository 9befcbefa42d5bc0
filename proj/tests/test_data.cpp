#include <gtest/gtest.h>
#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "dtvae/data.hpp"
#include "dtvae/errors.hpp"
#include "support.hpp"

namespace dtvae {
namespace {

using Bytes = std::vector<std::uint8_t>;

void put_be32(Bytes& out, std::uint32_t v) {
  for (int shift : {24, 16, 8, 0}) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

Bytes image_fixture(const std::vector<std::uint8_t>& pixels, std::uint32_t count,
                    std::uint32_t magic = kIdxImageMagic, std::uint32_t side = 28) {
  Bytes out;
  put_be32(out, magic);
  put_be32(out, count);
  put_be32(out, side);
  put_be32(out, side);
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

Bytes label_fixture(const std::vector<std::uint8_t>& labels) {
  Bytes out;
  put_be32(out, kIdxLabelMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

Bytes gzip(const Bytes& in) {
  z_stream zs{};
  EXPECT_EQ(deflateInit2(&zs, Z_BEST_COMPRESSION, Z_DEFLATED, 16 + MAX_WBITS, 8, Z_DEFAULT_STRATEGY), Z_OK);
  Bytes out(deflateBound(&zs, static_cast<uLong>(in.size())) + 32);
  zs.next_in = const_cast<Bytes::value_type*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  EXPECT_EQ(deflate(&zs, Z_FINISH), Z_STREAM_END);
  out.resize(zs.total_out);
  deflateEnd(&zs);
  return out;
}

// Two images: a ramp over all bytes and its reverse.
std::vector<std::uint8_t> two_image_pixels() {
  std::vector<std::uint8_t> px(2 * kImagePixels);
  for (Index i = 0; i < kImagePixels; ++i) {
    px[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i % 256);
    px[static_cast<std::size_t>(kImagePixels + i)] = static_cast<std::uint8_t>(255 - i % 256);
  }
  return px;
}

void write_bytes(const std::filesystem::path& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

TEST(LoadIdxImages, HandcraftedFixtureExactIntensities) {
  const auto px = two_image_pixels();
  const Matrix m = load_idx_images(image_fixture(px, 2));
  ASSERT_EQ(m.rows(), 784);
  ASSERT_EQ(m.cols(), 2);
  for (Index j = 0; j < 2; ++j) {
    for (Index i = 0; i < kImagePixels; ++i) {
      EXPECT_EQ(m(i, j), px[static_cast<std::size_t>(j * kImagePixels + i)] / 255.0);
    }
  }
  EXPECT_EQ(m(0, 0), 0.0);
  EXPECT_EQ(m(255, 0), 1.0);
}

TEST(LoadIdxImages, GzipFixtureMatchesPlain) {
  const Bytes plain = image_fixture(two_image_pixels(), 2);
  const Bytes packed = gzip(plain);
  ASSERT_EQ(packed[0], 0x1f);
  EXPECT_EQ(load_idx_images(packed), load_idx_images(plain));
  EXPECT_EQ(maybe_gunzip(packed), plain);
  EXPECT_EQ(maybe_gunzip(plain), plain);
}

TEST(LoadIdxImages, WrongMagicIsFormatError) {
  try {
    load_idx_images(image_fixture(two_image_pixels(), 2, kIdxLabelMagic));
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
    EXPECT_NE(std::string(e.what()).find("byte offset 0"), std::string::npos);
  }
}

TEST(LoadIdxImages, WrongDimensionsAndTruncation) {
  EXPECT_THROW(load_idx_images(image_fixture({}, 0, kIdxImageMagic, 27)), FormatError);
  auto px = two_image_pixels();
  px.pop_back();
  try {
    load_idx_images(image_fixture(px, 2));
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 16u + 2 * 784 - 1);
  }
  EXPECT_THROW(load_idx_images(Bytes{0, 0, 8}), FormatError);
  Bytes packed = gzip(image_fixture(two_image_pixels(), 2));
  packed.resize(packed.size() / 2);
  EXPECT_THROW(load_idx_images(packed), FormatError);
}

TEST(LoadIdxImages, EmptyCount) {
  EXPECT_EQ(load_idx_images(image_fixture({}, 0)).cols(), 0);
}

TEST(LoadIdxLabels, FixtureAndEdgeCases) {
  EXPECT_EQ(load_idx_labels(label_fixture({3, 7})), (std::vector<std::uint8_t>{3, 7}));
  EXPECT_EQ(load_idx_labels(gzip(label_fixture({3, 7}))), (std::vector<std::uint8_t>{3, 7}));
  EXPECT_TRUE(load_idx_labels(label_fixture({})).empty());
  try {
    load_idx_labels(label_fixture({1, 10}));
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 9u);
  }
  EXPECT_THROW(load_idx_labels(image_fixture({}, 0)), FormatError);
}

TEST(LoadMnist, DirectoryWithPlainAndGzipFiles) {
  testing::TempDir dir;
  write_bytes(dir / "t10k-images-idx3-ubyte.gz", gzip(image_fixture(two_image_pixels(), 2)));
  write_bytes(dir / "t10k-labels-idx1-ubyte", label_fixture({3, 7}));
  const Dataset d = load_mnist(dir.path(), "t10k");
  EXPECT_EQ(d.size(), 2);
  EXPECT_EQ(d.labels, (std::vector<std::uint8_t>{3, 7}));
  EXPECT_EQ(d.slice(1, 2).labels, std::vector<std::uint8_t>{7});
  EXPECT_EQ(d.head(10).size(), 2);
  EXPECT_THROW(load_mnist(dir.path(), "train"), std::runtime_error);
  write_bytes(dir / "t10k-labels-idx1-ubyte", label_fixture({3}));
  EXPECT_THROW(load_mnist(dir.path(), "t10k"), FormatError);
}

TEST(LoadMnist, OfficialFiles) {
  DTVAE_REQUIRE_MNIST();
  const Dataset train = load_mnist(testing::mnist_dir(), "train");
  const Dataset test = load_mnist(testing::mnist_dir(), "t10k");
  EXPECT_EQ(train.size(), 60000);
  EXPECT_EQ(test.size(), 10000);
  EXPECT_EQ(test.labels.size(), 10000u);
  EXPECT_EQ(train.labels[0], 5);  // the first training digit is a five
  EXPECT_EQ(test.labels[0], 7);
  EXPECT_GE(train.images.minCoeff(), 0.0);
  EXPECT_LE(train.images.maxCoeff(), 1.0);
}

TEST(DynamicBinarize, DegeneratePixels) {
  Rng rng = make_rng(1, 0, Stream::Binarize);
  Vector img = Vector::Zero(kImagePixels);
  img.tail(392).setOnes();
  for (int rep = 0; rep < 50; ++rep) {
    const Vector b = dynamic_binarize(img, rng);
    EXPECT_EQ(b.head(392).sum(), 0.0);
    EXPECT_EQ(b.tail(392).sum(), 392.0);
  }
}

TEST(DynamicBinarize, HalfIntensityFrequency) {
  Rng rng = make_rng(2, 0, Stream::Binarize);
  const Vector img = Vector::Constant(1, 0.5);
  double ones = 0;
  for (int rep = 0; rep < 10000; ++rep) ones += dynamic_binarize(img, rng)(0);
  EXPECT_NEAR(ones / 10000, 0.5, 0.02);
}

TEST(DynamicBinarize, DeterministicAndBinary) {
  Rng a = make_rng(3, 1, Stream::Binarize);
  Rng b = make_rng(3, 1, Stream::Binarize);
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> unif(0, 1);
  Vector img(kImagePixels);
  for (Index i = 0; i < img.size(); ++i) img(i) = unif(gen);
  const Vector x = dynamic_binarize(img, a);
  EXPECT_EQ(x, dynamic_binarize(img, b));
  EXPECT_TRUE((x.array() == 0.0 || x.array() == 1.0).all());
}

TEST(BatchOrder, RemainderBatch) {
  const auto batches = batch_order(5, 2, 0, 0);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].size(), 2u);
  EXPECT_EQ(batches[1].size(), 2u);
  EXPECT_EQ(batches[2].size(), 1u);
  EXPECT_THROW(batch_order(5, 0, 0, 0), ContractError);
  EXPECT_TRUE(batch_order(0, 4, 0, 0).empty());
}

TEST(BatchOrder, PermutationAndDeterminism) {
  const auto e0 = batch_order(1000, 128, 7, 0);
  std::vector<Index> flat;
  for (const auto& b : e0) flat.insert(flat.end(), b.begin(), b.end());
  std::vector<Index> sorted = flat;
  std::sort(sorted.begin(), sorted.end());
  for (Index i = 0; i < 1000; ++i) ASSERT_EQ(sorted[static_cast<std::size_t>(i)], i);
  EXPECT_EQ(e0, batch_order(1000, 128, 7, 0));
  EXPECT_NE(e0, batch_order(1000, 128, 7, 1));
  EXPECT_NE(e0, batch_order(1000, 128, 8, 0));
}

TEST(EpochBatches, CoversEveryImageOnceWithFreshBits) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> unif(0.2, 0.8);
  Matrix images(kImagePixels, 10);
  for (Index i = 0; i < images.size(); ++i) images.data()[i] = unif(gen);
  EpochBatches batches(images, 4, 9, 0);
  EXPECT_EQ(batches.num_batches(), 3u);
  std::multiset<Index> seen;
  Minibatch mb;
  std::vector<Matrix> xs;
  while (batches.next(mb)) {
    EXPECT_EQ(mb.x.cols(), static_cast<Index>(mb.indices.size()));
    seen.insert(mb.indices.begin(), mb.indices.end());
    xs.push_back(mb.x);
  }
  EXPECT_EQ(seen.size(), 10u);
  EXPECT_EQ(std::set<Index>(seen.begin(), seen.end()).size(), 10u);

  EpochBatches again(images, 4, 9, 0);
  for (const Matrix& x : xs) {
    ASSERT_TRUE(again.next(mb));
    EXPECT_EQ(mb.x, x);
  }
  EpochBatches next_epoch(images, 4, 9, 1);
  next_epoch.next(mb);
  EXPECT_NE(mb.x, xs[0]);
}

TEST(MakeRng, StreamsAreIndependent) {
  Rng a = make_rng(1, 0, Stream::Shuffle);
  Rng b = make_rng(1, 0, Stream::Noise);
  Rng c = make_rng(1, 1, Stream::Shuffle);
  Rng a2 = make_rng(1, 0, Stream::Shuffle);
  const auto va = a();
  EXPECT_NE(va, b());
  EXPECT_NE(va, c());
  EXPECT_EQ(va, a2());
}

}  // namespace
}  // namespace dtvae
