#pragma once

// Gaussian posteriors and their divergences from the standard normal prior.
//
// Every KL here is returned as a nonnegative divergence; the ELBO subtracts it.

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <string>

#include "dtvae/dyadic.hpp"
#include "dtvae/linalg.hpp"

namespace dtvae {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;
inline constexpr Index kDenseKlMaxDim = 64;

/// N(mu, diag(exp(log_var))). log_var is clamped to [-10, 10].
template <typename Scalar>
class DiagGaussian {
 public:
  DiagGaussian(VectorX<Scalar> mu, VectorX<Scalar> log_var)
      : mu_(std::move(mu)), log_var_(std::move(log_var)) {
    if (mu_.size() != log_var_.size()) throw ContractError("DiagGaussian: mu/log_var length mismatch");
    require_finite(mu_, "DiagGaussian mu");
    require_finite(log_var_, "DiagGaussian log_var");
    log_var_ = log_var_.cwiseMax(Scalar(kLogVarMin)).cwiseMin(Scalar(kLogVarMax));
  }

  Index dim() const { return mu_.size(); }
  const VectorX<Scalar>& mu() const { return mu_; }
  const VectorX<Scalar>& log_var() const { return log_var_; }
  VectorX<Scalar> variance() const { return log_var_.array().exp().matrix(); }
  VectorX<Scalar> stddev() const { return (Scalar(0.5) * log_var_.array()).exp().matrix(); }

 private:
  VectorX<Scalar> mu_;
  VectorX<Scalar> log_var_;
};

/// The noise draw and both ends of the sampling chain, kept for the
/// backward pass. y == mu + alpha * sigma, z == B y.
template <typename Scalar>
struct ReparamSample {
  VectorX<Scalar> alpha;
  VectorX<Scalar> y;
  VectorX<Scalar> z;
};

/// y = mu + alpha * sigma.
template <typename Scalar, typename Derived>
VectorX<Scalar> sample(const DiagGaussian<Scalar>& g, const Eigen::MatrixBase<Derived>& alpha) {
  if (alpha.size() != g.dim()) throw ContractError("sample: alpha length mismatch");
  return g.mu() + alpha.cwiseProduct(g.stddev());
}

/// Draws y and pushes it through B.
template <typename Scalar, typename Derived>
ReparamSample<Scalar> sample_transformed(const DiagGaussian<Scalar>& g,
                                         const DyadicTransform<Scalar>& b,
                                         const Eigen::MatrixBase<Derived>& alpha) {
  ReparamSample<Scalar> s;
  s.alpha = alpha;
  s.y = sample(g, alpha);
  s.z = apply(b, s.y);
  return s;
}

/// KL(N(mu, diag(sigma^2)) || N(0, I)) = -1/2 sum(1 + log sigma^2 - mu^2 - sigma^2).
template <typename Scalar>
Scalar kl_diag(const DiagGaussian<Scalar>& g) {
  const auto& lv = g.log_var().array();
  return Scalar(-0.5) *
         (Scalar(1) + lv - g.mu().array().square() - lv.exp()).sum();
}

template <typename Scalar>
struct KlBackward {
  VectorX<Scalar> d_mu;
  VectorX<Scalar> d_log_var;
  DyadicGrads<Scalar> grads;  // empty for the diagonal posterior
};

/// Gradient of weight * kl_diag with respect to mu and the (unclamped) log_var.
template <typename Scalar>
KlBackward<Scalar> kl_diag_backward(const DiagGaussian<Scalar>& g, Scalar weight) {
  const Scalar half_w = Scalar(0.5) * weight;
  const Scalar two_w = Scalar(2) * half_w;
  KlBackward<Scalar> out;
  out.d_mu = two_w * g.mu();
  const VectorX<Scalar> d_var = VectorX<Scalar>::Constant(g.dim(), half_w);
  out.d_log_var = (d_var.cwiseProduct(g.variance()).array() - half_w).matrix();
  return out;
}

/// General Gaussian KL(N(mu0, sigma0) || N(mu1, sigma1)) by dense inversion.
/// Brute-force reference; n <= 64.
template <typename Scalar>
Scalar kl_dense_oracle(const VectorX<Scalar>& mu0, const MatrixX<Scalar>& sigma0,
                       const VectorX<Scalar>& mu1, const MatrixX<Scalar>& sigma1) {
  const Index n = mu0.size();
  if (n > kDenseKlMaxDim) throw ContractError("kl_dense_oracle: dimension above test-scale cap");
  if (mu1.size() != n || sigma0.rows() != n || sigma0.cols() != n || sigma1.rows() != n ||
      sigma1.cols() != n) {
    throw ContractError("kl_dense_oracle: shape mismatch");
  }
  const MatrixX<Scalar> s0 = Scalar(0.5) * (sigma0 + sigma0.transpose());
  const MatrixX<Scalar> s1 = Scalar(0.5) * (sigma1 + sigma1.transpose());
  for (const auto* s : {&s0, &s1}) {
    Eigen::LLT<MatrixX<Scalar>> llt(*s);
    if (llt.info() != Eigen::Success) throw ContractError("kl_dense_oracle: covariance not positive definite");
  }
  const auto ld0 = lu_logdet(s0);
  const auto ld1 = lu_logdet(s1);
  if (ld0.sign != 1 || ld1.sign != 1) throw ContractError("kl_dense_oracle: covariance not positive definite");

  const MatrixX<Scalar> s1_inv = dense_inverse(s1);
  const VectorX<Scalar> diff = mu1 - mu0;
  const Scalar tr = trace(MatrixX<Scalar>(s1_inv * s0));
  const Scalar quad = diff.dot(s1_inv * diff);
  return Scalar(0.5) * (tr + quad - Scalar(n) + ld1.log_abs - ld0.log_abs);
}

namespace detail {

template <typename Scalar>
LogDet<Scalar> require_positive_det(const DyadicTransform<Scalar>& b) {
  const auto ld = logdet(b);
  if (ld.sign != 1) {
    throw NonPdPosteriorError("kl_dt: det B has sign " + std::to_string(ld.sign) +
                              "; eps U V has left the small-perturbation regime");
  }
  return ld;
}

}  // namespace detail

/// KL(N(B mu, B diag(sigma^2) B^T) || N(0, I)) in O(nk^2 + k^3).
///
/// Evaluated as kl_diag(g) plus the eps-dependent excess
///   1/2 (Tr(B D B^T) - tr D + ||B mu||^2 - ||mu||^2 - 2 log det B),
/// which is the same quantity as 1/2 (Tr(Sigma) + ||B mu||^2 - n - ln det Sigma)
/// without the cancellation against n, and equals kl_diag exactly at eps = 0.
/// Throws NonPdPosteriorError when det B <= 0.
template <typename Scalar>
Scalar kl_dt(const DiagGaussian<Scalar>& g, const DyadicTransform<Scalar>& b) {
  if (b.dim() != g.dim()) throw ContractError("kl_dt: transform and posterior dimensions differ");
  const auto ld = detail::require_positive_det(b);
  const Scalar excess = trace_bdbt_excess(b, g.variance()) +
                        transformed_mean_sqnorm_excess(b, g.mu()) - Scalar(2) * ld.log_abs;
  return kl_diag(g) + Scalar(0.5) * excess;
}

/// Gradient of weight * kl_dt with respect to mu, log_var, U and V. Same
/// det B <= 0 error as kl_dt.
template <typename Scalar>
KlBackward<Scalar> kl_dt_backward(const DiagGaussian<Scalar>& g, const DyadicTransform<Scalar>& b,
                                  Scalar weight) {
  if (b.dim() != g.dim()) throw ContractError("kl_dt_backward: dimension mismatch");
  detail::require_positive_det(b);
  const Scalar half_w = Scalar(0.5) * weight;
  const VectorX<Scalar> var = g.variance();
  auto terms = kl_terms_backward(b, g.mu(), var, half_w);
  KlBackward<Scalar> out;
  out.d_mu = std::move(terms.d_mu);
  out.d_log_var = (terms.d_var.cwiseProduct(var).array() - half_w).matrix();
  out.grads = std::move(terms.grads);
  return out;
}

/// sum_j x_j log s(l_j) + (1 - x_j) log(1 - s(l_j)), s the logistic function,
/// evaluated as x l - softplus(l).
template <typename DerivedX, typename DerivedL>
typename DerivedL::Scalar bernoulli_logprob(const Eigen::MatrixBase<DerivedX>& x,
                                            const Eigen::MatrixBase<DerivedL>& logits) {
  using Scalar = typename DerivedL::Scalar;
  if (x.size() != logits.size()) throw ContractError("bernoulli_logprob: length mismatch");
  const auto l = logits.array();
  const auto softplus = l.max(Scalar(0)) + (-l.abs()).exp().log1p();
  return (x.array() * l - softplus).sum();
}

/// d bernoulli_logprob / d logits = x - s(l).
template <typename DerivedX, typename DerivedL>
VectorX<typename DerivedL::Scalar> bernoulli_logprob_grad(const Eigen::MatrixBase<DerivedX>& x,
                                                          const Eigen::MatrixBase<DerivedL>& logits) {
  using Scalar = typename DerivedL::Scalar;
  const auto sig = (Scalar(1) + (-logits.array()).exp()).inverse();
  return (x.array() - sig).matrix();
}

}  // namespace dtvae
