#pragma once

// Fixtures shared by the data-dependent tests.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

namespace dtvae::testing {

/// Directory holding the MNIST IDX files, or empty when unavailable.
inline std::filesystem::path mnist_dir() {
  const char* env = std::getenv("DTVAE_MNIST_DIR");
  const std::filesystem::path dir = env ? env : "/root/data/mnist";
  for (const char* name : {"train-images-idx3-ubyte", "train-images-idx3-ubyte.gz"}) {
    if (std::filesystem::exists(dir / name)) return dir;
  }
  return {};
}

#define DTVAE_REQUIRE_MNIST()                                              \
  do {                                                                     \
    if (::dtvae::testing::mnist_dir().empty()) GTEST_SKIP() << "MNIST not found"; \
  } while (0)

/// Fresh scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("dtvae_test_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace dtvae::testing
