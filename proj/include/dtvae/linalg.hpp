#pragma once

// Small dense linear algebra on top of Eigen: a partial-pivot LU used for
// k x k capacitance work in the hot path and as the n x n brute-force
// reference in tests.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dtvae/errors.hpp"

namespace dtvae {

using Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

/// Relative singularity threshold: a pivot is treated as zero when its
/// magnitude is at most this times the largest absolute entry of the input.
inline constexpr double kSingularTolerance = 1e-12;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.derived().array().isFinite().all();
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& m, const char* what) {
  if (!all_finite(m)) throw ContractError(std::string(what) + ": non-finite entry");
}

template <typename Derived>
void require_square(const Eigen::MatrixBase<Derived>& m, const char* what) {
  if (m.rows() != m.cols()) {
    throw ContractError(std::string(what) + ": matrix is " + std::to_string(m.rows()) + "x" +
                        std::to_string(m.cols()) + ", expected square");
  }
}

/// Checked product. Throws ContractError when a.cols() != b.rows().
template <typename DerivedA, typename DerivedB>
auto matmul(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.cols() != b.rows()) {
    throw ContractError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                        std::to_string(b.rows()) + " differ");
  }
  MatrixX<Scalar> out = a * b;
  return out;
}

template <typename Derived>
typename Derived::Scalar trace(const Eigen::MatrixBase<Derived>& m) {
  require_square(m, "trace");
  return m.diagonal().sum();
}

/// Sign and log-magnitude of a determinant. A singular matrix is reported
/// as sign 0 with log_abs = -inf.
template <typename Scalar>
struct LogDet {
  int sign = 1;
  Scalar log_abs = Scalar(0);

  bool singular() const { return sign == 0; }
};

/// Packed LU factors with row permutation: P m = L U, L unit lower.
template <typename Scalar>
struct LuFactor {
  MatrixX<Scalar> lu;
  std::vector<Index> perm;  // perm[i] = original row placed at row i
  int parity = 1;
  bool singular = false;
  Index singular_pivot = -1;  // first pivot found below threshold
  Scalar min_pivot = Scalar(0);

  Index size() const { return lu.rows(); }
};

template <typename Derived>
LuFactor<typename Derived::Scalar> lu_factor(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  require_square(m, "lu_factor");
  const Index n = m.rows();
  LuFactor<Scalar> f;
  f.lu = m;
  f.perm.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) f.perm[static_cast<std::size_t>(i)] = i;
  if (n == 0) return f;

  const Scalar scale = f.lu.cwiseAbs().maxCoeff();
  const Scalar threshold = Scalar(kSingularTolerance) * scale;
  f.min_pivot = std::numeric_limits<Scalar>::infinity();

  for (Index col = 0; col < n; ++col) {
    Index pivot_row = col;
    Scalar best = std::abs(f.lu(col, col));
    for (Index r = col + 1; r < n; ++r) {
      const Scalar v = std::abs(f.lu(r, col));
      if (v > best) {
        best = v;
        pivot_row = r;
      }
    }
    f.min_pivot = std::min(f.min_pivot, best);
    if (!(best > threshold)) {
      if (!f.singular) f.singular_pivot = col;
      f.singular = true;
      continue;
    }
    if (pivot_row != col) {
      f.lu.row(col).swap(f.lu.row(pivot_row));
      std::swap(f.perm[static_cast<std::size_t>(col)], f.perm[static_cast<std::size_t>(pivot_row)]);
      f.parity = -f.parity;
    }
    const Scalar pivot = f.lu(col, col);
    for (Index r = col + 1; r < n; ++r) {
      const Scalar factor = f.lu(r, col) / pivot;
      f.lu(r, col) = factor;
      if (factor != Scalar(0)) {
        f.lu.row(r).tail(n - col - 1) -= factor * f.lu.row(col).tail(n - col - 1);
      }
    }
  }
  return f;
}

template <typename Scalar>
LogDet<Scalar> logdet_from(const LuFactor<Scalar>& f) {
  LogDet<Scalar> out;
  if (f.singular) {
    out.sign = 0;
    out.log_abs = -std::numeric_limits<Scalar>::infinity();
    return out;
  }
  out.sign = f.parity;
  for (Index i = 0; i < f.size(); ++i) {
    const Scalar p = f.lu(i, i);
    if (p < Scalar(0)) out.sign = -out.sign;
    out.log_abs += std::log(std::abs(p));
  }
  return out;
}

/// Determinant of a square matrix as (sign, log|det|) via partial-pivot LU.
template <typename Derived>
LogDet<typename Derived::Scalar> lu_logdet(const Eigen::MatrixBase<Derived>& m) {
  return logdet_from(lu_factor(m));
}

/// Solves A X = B given the factors of A. Factor must be nonsingular.
template <typename Scalar, typename Derived>
MatrixX<Scalar> lu_solve(const LuFactor<Scalar>& f, const Eigen::MatrixBase<Derived>& rhs) {
  const Index n = f.size();
  if (rhs.rows() != n) throw ContractError("lu_solve: right-hand side has wrong row count");
  MatrixX<Scalar> x(n, rhs.cols());
  for (Index i = 0; i < n; ++i) x.row(i) = rhs.row(f.perm[static_cast<std::size_t>(i)]);
  x = f.lu.template triangularView<Eigen::UnitLower>().solve(x);
  x = f.lu.template triangularView<Eigen::Upper>().solve(x);
  return x;
}

/// Solves A^T X = B given the factors of A.
template <typename Scalar, typename Derived>
MatrixX<Scalar> lu_solve_transposed(const LuFactor<Scalar>& f,
                                    const Eigen::MatrixBase<Derived>& rhs) {
  const Index n = f.size();
  if (rhs.rows() != n) throw ContractError("lu_solve_transposed: right-hand side has wrong row count");
  // A^T = U^T L^T P, so solve U^T w = b, L^T t = w, then x = P^T t.
  MatrixX<Scalar> t = f.lu.template triangularView<Eigen::Upper>().transpose().solve(rhs);
  t = f.lu.template triangularView<Eigen::UnitLower>().transpose().solve(t);
  MatrixX<Scalar> x(n, rhs.cols());
  for (Index i = 0; i < n; ++i) x.row(f.perm[static_cast<std::size_t>(i)]) = t.row(i);
  return x;
}

/// Dense inverse. Throws SingularityError naming the offending pivot.
template <typename Derived>
MatrixX<typename Derived::Scalar> dense_inverse(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  require_square(m, "dense_inverse");
  const auto f = lu_factor(m);
  if (f.singular) {
    throw SingularityError("dense_inverse: singular matrix, pivot " +
                               std::to_string(f.singular_pivot) + " below tolerance",
                           static_cast<double>(f.min_pivot));
  }
  return lu_solve(f, MatrixX<Scalar>::Identity(m.rows(), m.rows()));
}

}  // namespace dtvae
