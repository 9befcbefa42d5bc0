#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dtvae {

/// Precondition on shapes or values was violated by the caller.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A matrix that had to be inverted or factored was numerically singular.
class SingularityError : public std::runtime_error {
 public:
  SingularityError(const std::string& what, double magnitude)
      : std::runtime_error(what), magnitude_(magnitude) {}

  /// Pivot magnitude (dense inverse) or |det| estimate (capacitance).
  double magnitude() const noexcept { return magnitude_; }

 private:
  double magnitude_;
};

/// The transformed posterior covariance is not positive definite because
/// det(B) <= 0, i.e. the transform left the small-epsilon regime.
class NonPdPosteriorError : public std::runtime_error {
 public:
  explicit NonPdPosteriorError(const std::string& what, std::ptrdiff_t index = -1)
      : std::runtime_error(what), index_(index) {}

  /// Datapoint index inside the minibatch, or -1 when not attached.
  std::ptrdiff_t index() const noexcept { return index_; }

 private:
  std::ptrdiff_t index_;
};

/// Malformed input file. `offset` is the byte offset where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Non-finite gradient reached the optimizer.
class PoisonedUpdateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dtvae
