#pragma once

// The dyadic transform B = I + eps * U * V, with U of shape n x k and V of
// shape k x n, held in factored form. Nothing in here forms the n x n matrix
// except `dense()` and `first_order_diagnostics`, which exist for testing.
//
// Inverse. Woodbury with A = I_n and middle factor eps * I_k gives
//
//   (I + U (eps I) V)^-1 = I - U ((1/eps) I + V U)^-1 V
//                        = I - eps U (I_k + eps V U)^-1 V,
//
// so every inverse-apply reduces to one solve with the k x k capacitance
// C = I_k + eps V U. The second form stays valid at eps = 0.
//
// Determinant. Sylvester's identity det(I_n + (eps U) V) = det(I_k + V (eps U))
// gives det B = det C, factored by LU in O(k^3) after the O(n k^2) product.

#include <cmath>
#include <string>

#include "dtvae/linalg.hpp"

namespace dtvae {

template <typename Scalar>
class DyadicTransform {
 public:
  DyadicTransform(Scalar epsilon, MatrixX<Scalar> u, MatrixX<Scalar> v)
      : epsilon_(epsilon), u_(std::move(u)), v_(std::move(v)) {
    const Index n = u_.rows();
    const Index k = u_.cols();
    if (k < 1 || k > n) {
      throw ContractError("DyadicTransform: rank k=" + std::to_string(k) +
                          " must satisfy 1 <= k <= n=" + std::to_string(n));
    }
    if (v_.rows() != k || v_.cols() != n) {
      throw ContractError("DyadicTransform: V must be " + std::to_string(k) + "x" +
                          std::to_string(n));
    }
    if (!std::isfinite(epsilon_)) throw ContractError("DyadicTransform: epsilon is not finite");
    require_finite(u_, "DyadicTransform U");
    require_finite(v_, "DyadicTransform V");
  }

  Index dim() const { return u_.rows(); }
  Index rank() const { return u_.cols(); }
  Scalar epsilon() const { return epsilon_; }
  const MatrixX<Scalar>& u() const { return u_; }
  const MatrixX<Scalar>& v() const { return v_; }

  /// C = I_k + eps V U.
  MatrixX<Scalar> capacitance() const {
    MatrixX<Scalar> c = epsilon_ * (v_ * u_);
    c.diagonal().array() += Scalar(1);
    return c;
  }

  /// Materialized B. Tests and diagnostics only.
  MatrixX<Scalar> dense() const {
    MatrixX<Scalar> b = epsilon_ * (u_ * v_);
    b.diagonal().array() += Scalar(1);
    return b;
  }

 private:
  Scalar epsilon_;
  MatrixX<Scalar> u_;
  MatrixX<Scalar> v_;
};

template <typename Scalar>
struct DyadicGrads {
  MatrixX<Scalar> d_u;  // n x k
  MatrixX<Scalar> d_v;  // k x n
};

namespace detail {

template <typename Scalar, typename Derived>
void require_len(const DyadicTransform<Scalar>& b, const Eigen::MatrixBase<Derived>& x,
                 const char* what) {
  if (x.size() != b.dim() || x.cols() != 1) {
    throw ContractError(std::string(what) + ": length " + std::to_string(x.size()) +
                        " does not match transform dimension " + std::to_string(b.dim()));
  }
}

template <typename Scalar>
LuFactor<Scalar> factor_capacitance(const DyadicTransform<Scalar>& b, const char* what) {
  auto f = lu_factor(b.capacitance());
  if (f.singular) {
    Scalar det_estimate = f.lu.diagonal().cwiseAbs().prod();
    throw SingularityError(std::string(what) + ": capacitance I + eps V U is singular (|det C| ~ " +
                               std::to_string(static_cast<double>(det_estimate)) + ")",
                           static_cast<double>(det_estimate));
  }
  return f;
}

// diag(U V) without forming U V.
template <typename Scalar>
VectorX<Scalar> dyad_diagonal(const DyadicTransform<Scalar>& b) {
  return b.u().cwiseProduct(b.v().transpose()).rowwise().sum();
}

}  // namespace detail

/// z = y + eps U (V y), O(nk).
template <typename Scalar, typename Derived>
VectorX<Scalar> apply(const DyadicTransform<Scalar>& b, const Eigen::MatrixBase<Derived>& y) {
  detail::require_len(b, y, "apply");
  VectorX<Scalar> vy = b.v() * y;
  VectorX<Scalar> z = y + b.epsilon() * (b.u() * vy);
  return z;
}

/// y with apply(b, y) == z, via the capacitance solve. O(nk + k^3).
template <typename Scalar, typename Derived>
VectorX<Scalar> apply_inverse(const DyadicTransform<Scalar>& b,
                              const Eigen::MatrixBase<Derived>& z) {
  detail::require_len(b, z, "apply_inverse");
  const auto f = detail::factor_capacitance(b, "apply_inverse");
  VectorX<Scalar> vz = b.v() * z;
  VectorX<Scalar> w = lu_solve(f, vz);
  VectorX<Scalar> y = z - b.epsilon() * (b.u() * w);
  return y;
}

/// log|det B| and its sign, computed as det(I_k + eps V U).
template <typename Scalar>
LogDet<Scalar> logdet(const DyadicTransform<Scalar>& b) {
  return lu_logdet(b.capacitance());
}

/// Tr(B diag(var) B^T) - sum(var)
///   = 2 eps sum_j var_j (UV)_jj + eps^2 Tr((U^T U)(V diag(var) V^T)).
/// Exactly zero when eps == 0.
template <typename Scalar, typename Derived>
Scalar trace_bdbt_excess(const DyadicTransform<Scalar>& b,
                         const Eigen::MatrixBase<Derived>& var) {
  detail::require_len(b, var, "trace_bdbt");
  if (!(var.array() > Scalar(0)).all()) throw ContractError("trace_bdbt: variance must be positive");
  const Scalar eps = b.epsilon();
  const Scalar linear = var.dot(detail::dyad_diagonal(b));
  const MatrixX<Scalar> gram_u = b.u().transpose() * b.u();
  const MatrixX<Scalar> v_scaled = b.v() * var.asDiagonal();
  const MatrixX<Scalar> weighted_v = v_scaled * b.v().transpose();
  const Scalar quadratic = gram_u.cwiseProduct(weighted_v).sum();
  return Scalar(2) * eps * linear + eps * eps * quadratic;
}

/// Tr(B diag(var) B^T) in O(nk^2).
template <typename Scalar, typename Derived>
Scalar trace_bdbt(const DyadicTransform<Scalar>& b, const Eigen::MatrixBase<Derived>& var) {
  const Scalar excess = trace_bdbt_excess(b, var);
  return var.sum() + excess;
}

/// ||B mu||^2 - ||mu||^2 = 2 eps mu.(U V mu) + eps^2 ||U V mu||^2.
template <typename Scalar, typename Derived>
Scalar transformed_mean_sqnorm_excess(const DyadicTransform<Scalar>& b,
                                      const Eigen::MatrixBase<Derived>& mu) {
  detail::require_len(b, mu, "transformed_mean_sqnorm");
  const VectorX<Scalar> w = b.u() * (b.v() * mu);
  const Scalar eps = b.epsilon();
  return Scalar(2) * eps * mu.dot(w) + eps * eps * w.squaredNorm();
}

/// ||B mu||^2.
template <typename Scalar, typename Derived>
Scalar transformed_mean_sqnorm(const DyadicTransform<Scalar>& b,
                               const Eigen::MatrixBase<Derived>& mu) {
  detail::require_len(b, mu, "transformed_mean_sqnorm");
  return apply(b, mu).squaredNorm();
}

template <typename Scalar>
struct FirstOrderGaps {
  Scalar det_gap;  // |det B - (1 + eps Tr(UV))|
  Scalar inv_gap;  // max |B^-1 - (I - eps UV)|
};

inline constexpr Index kDiagnosticsMaxDim = 256;

/// Distance of det B and B^-1 from their first-order expansions in eps.
/// Both gaps are O(eps^2). Densifies B, so n is capped.
template <typename Scalar>
FirstOrderGaps<Scalar> first_order_diagnostics(const DyadicTransform<Scalar>& b) {
  if (b.dim() > kDiagnosticsMaxDim) {
    throw ContractError("first_order_diagnostics: n=" + std::to_string(b.dim()) +
                        " exceeds the dense diagnostic cap of " +
                        std::to_string(kDiagnosticsMaxDim));
  }
  const MatrixX<Scalar> dense_b = b.dense();
  const MatrixX<Scalar> uv = b.u() * b.v();
  const auto ld = lu_logdet(dense_b);
  const Scalar det_b = Scalar(ld.sign) * std::exp(ld.log_abs);
  const Scalar det_first = Scalar(1) + b.epsilon() * uv.trace();

  MatrixX<Scalar> inv_first = -b.epsilon() * uv;
  inv_first.diagonal().array() += Scalar(1);
  const MatrixX<Scalar> inv_b = dense_inverse(dense_b);
  return {std::abs(det_b - det_first), (inv_b - inv_first).cwiseAbs().maxCoeff()};
}

template <typename Scalar>
struct ApplyBackward {
  VectorX<Scalar> d_y;
  DyadicGrads<Scalar> grads;
};

/// Reverse pass of z = apply(b, y) given dL/dz.
template <typename Scalar, typename DerivedY, typename DerivedZ>
ApplyBackward<Scalar> apply_backward(const DyadicTransform<Scalar>& b,
                                     const Eigen::MatrixBase<DerivedY>& y,
                                     const Eigen::MatrixBase<DerivedZ>& d_z) {
  detail::require_len(b, y, "apply_backward y");
  detail::require_len(b, d_z, "apply_backward d_z");
  const Scalar eps = b.epsilon();
  const VectorX<Scalar> ut_dz = b.u().transpose() * d_z;
  const VectorX<Scalar> vy = b.v() * y;
  ApplyBackward<Scalar> out;
  out.d_y = d_z + eps * (b.v().transpose() * ut_dz);
  out.grads.d_u = eps * (d_z * vy.transpose());
  out.grads.d_v = eps * (ut_dz * y.transpose());
  return out;
}

template <typename Scalar>
struct KlTermsBackward {
  VectorX<Scalar> d_mu;
  VectorX<Scalar> d_var;
  DyadicGrads<Scalar> grads;
};

/// Gradient of weight * (Tr(B D B^T) + ||B mu||^2 - 2 log|det B|) with
/// D = diag(var), with respect to mu, var, U and V.
///
/// Writing m = B mu and G = U^T U:
///   d mu  = 2 w B^T m
///   d var = w (1 + 2 eps (UV)_jj + eps^2 v_j^T G v_j)       (v_j = column j of V)
///   d U   = 2 w eps (B D V^T + m (V mu)^T - (C^-1 V)^T)
///   d V   = 2 w eps (U^T B D + (U^T m) mu^T - C^-T U^T)
/// where the log-det terms come from d log|det C| = Tr(C^-1 dC) with
/// C = I_k + eps V U. Each eps-free part is computed first and the
/// eps-dependent part added afterwards, so eps = 0 reproduces the diagonal
/// gradients bit for bit.
template <typename Scalar, typename DerivedM, typename DerivedV>
KlTermsBackward<Scalar> kl_terms_backward(const DyadicTransform<Scalar>& b,
                                          const Eigen::MatrixBase<DerivedM>& mu,
                                          const Eigen::MatrixBase<DerivedV>& var, Scalar weight) {
  detail::require_len(b, mu, "kl_terms_backward mu");
  detail::require_len(b, var, "kl_terms_backward var");
  if (!(var.array() > Scalar(0)).all()) {
    throw ContractError("kl_terms_backward: variance must be positive");
  }
  const auto cap = detail::factor_capacitance(b, "kl_terms_backward");
  const Scalar eps = b.epsilon();
  const Index n = b.dim();
  const auto& u = b.u();
  const auto& v = b.v();

  const VectorX<Scalar> v_mu = v * mu;
  const VectorX<Scalar> shift = eps * (u * v_mu);  // B mu - mu
  const VectorX<Scalar> m = mu + shift;
  const VectorX<Scalar> ut_m = u.transpose() * m;
  const MatrixX<Scalar> gram_u = u.transpose() * u;
  const MatrixX<Scalar> vd = v * var.asDiagonal();  // V D, k x n
  const MatrixX<Scalar> c_inv_t_ut = lu_solve_transposed(cap, u.transpose());  // C^-T U^T
  const MatrixX<Scalar> c_inv_v = lu_solve(cap, v);                            // C^-1 V

  KlTermsBackward<Scalar> out;
  const Scalar two_w = Scalar(2) * weight;

  // B^T m - mu = shift + eps V^T U^T m
  const VectorX<Scalar> mu_excess = shift + eps * (v.transpose() * ut_m);
  out.d_mu = two_w * mu + two_w * mu_excess;

  const VectorX<Scalar> col_quad = (gram_u * v).cwiseProduct(v).colwise().sum().transpose();
  const VectorX<Scalar> var_excess =
      Scalar(2) * eps * detail::dyad_diagonal(b) + eps * eps * col_quad;
  out.d_var = VectorX<Scalar>::Constant(n, weight) + weight * var_excess;

  // B D V^T = D V^T + eps U (V D V^T)
  const MatrixX<Scalar> bdvt = vd.transpose() + eps * (u * (vd * v.transpose()));
  out.grads.d_u = (two_w * eps) * (bdvt + m * v_mu.transpose() - c_inv_v.transpose());

  // U^T B D = U^T D + eps G V D
  const MatrixX<Scalar> utbd = u.transpose() * var.asDiagonal() + eps * (gram_u * vd);
  out.grads.d_v = (two_w * eps) * (utbd + ut_m * mu.transpose() - c_inv_t_ut);
  return out;
}

}  // namespace dtvae
