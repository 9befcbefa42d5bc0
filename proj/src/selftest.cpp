#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>

#include "dtvae/commands.hpp"
#include "dtvae/data.hpp"
#include "dtvae/dyadic.hpp"
#include "dtvae/errors.hpp"
#include "dtvae/gaussian.hpp"
#include "dtvae/vae.hpp"

namespace dtvae {
namespace {

struct BlockRef {
  std::string name;
  Eigen::Map<Vector> param;
  Eigen::Map<Vector> grad;
};

std::vector<BlockRef> blocks_of(ModelParams& p, ParamGrads& g) {
  std::vector<BlockRef> out;
  const auto pl = p.layers();
  const auto gl = g.layers();
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    if (pl[i]->w.size() == 0) continue;
    const std::string base(kLayerNames[i]);
    out.push_back({base + ".w", Eigen::Map<Vector>(pl[i]->w.data(), pl[i]->w.size()),
                   Eigen::Map<Vector>(gl[i]->w.data(), gl[i]->w.size())});
    out.push_back({base + ".b", Eigen::Map<Vector>(pl[i]->b.data(), pl[i]->b.size()),
                   Eigen::Map<Vector>(gl[i]->b.data(), gl[i]->b.size())});
  }
  return out;
}

std::string fmt(const char* format, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, format, a, b);
  return buf;
}

Matrix normal_matrix(Index rows, Index cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

// Instance family shared by the Woodbury and Sylvester suites.
DyadicTransform<double> random_transform(Rng& rng) {
  static constexpr double kEps[] = {1e-3, 0.1, 1.0};
  std::uniform_int_distribution<Index> n_dist(8, 64);
  std::uniform_int_distribution<Index> k_dist(1, 8);
  std::uniform_int_distribution<int> e_dist(0, 2);
  const Index n = n_dist(rng);
  const Index k = k_dist(rng);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  return {kEps[e_dist(rng)], normal_matrix(n, k, rng, std::sqrt(scale)),
          normal_matrix(k, n, rng, std::sqrt(scale))};
}

CheckResult woodbury_suite(Rng& rng) {
  double worst = 0.0;
  int used = 0;
  for (int t = 0; t < 200; ++t) {
    const auto b = random_transform(rng);
    if (std::exp(logdet(b).log_abs) <= 1e-8) continue;
    const Vector y = normal_matrix(b.dim(), 1, rng);
    const Vector back = apply_inverse(b, apply(b, y));
    worst = std::max(worst, (back - y).cwiseAbs().maxCoeff() / (1.0 + y.cwiseAbs().maxCoeff()));
    ++used;
  }
  return {"woodbury round trip", worst <= 1e-10,
          fmt("worst scaled error %.3e over %.0f instances (limit 1e-10)", worst, used)};
}

CheckResult sylvester_suite(Rng& rng) {
  double worst = 0.0;
  bool signs = true;
  for (int t = 0; t < 200; ++t) {
    const auto b = random_transform(rng);
    const auto fast = logdet(b);
    const auto dense = lu_logdet(b.dense());
    signs = signs && fast.sign == dense.sign;
    if (fast.sign != 0) worst = std::max(worst, std::abs(fast.log_abs - dense.log_abs));
  }
  return {"sylvester log-det", signs && worst <= 1e-9,
          fmt("worst |log det| gap %.3e (limit 1e-9), signs ", worst) + (signs ? "agree" : "DIFFER")};
}

CheckResult kl_dense_suite(Rng& rng) {
  double worst = 0.0;
  std::uniform_int_distribution<Index> n_dist(2, 32);
  std::uniform_real_distribution<double> eps_dist(0.0, 0.1);
  for (int t = 0; t < 100; ++t) {
    const Index n = n_dist(rng);
    const Index k = std::uniform_int_distribution<Index>(1, std::min<Index>(8, n))(rng);
    const DiagGaussian<double> g(normal_matrix(n, 1, rng), normal_matrix(n, 1, rng, 0.5));
    const double scale = std::pow(static_cast<double>(n), -0.25);
    const DyadicTransform<double> b(eps_dist(rng), normal_matrix(n, k, rng, scale), normal_matrix(k, n, rng, scale));
    if (logdet(b).sign != 1) continue;
    const Matrix bd = b.dense();
    const double dense = kl_dense_oracle<double>(bd * g.mu(), bd * g.variance().asDiagonal() * bd.transpose(),
                                                 Vector::Zero(n), Matrix::Identity(n, n));
    worst = std::max(worst, std::abs(kl_dt(g, b) - dense) / std::max(1.0, std::abs(dense)));
  }
  return {"kl vs dense oracle", worst <= 1e-9, fmt("worst relative gap %.3e (limit 1e-9)", worst)};
}

CheckResult kl_monte_carlo_suite(Rng& rng) {
  const Index n = 4;
  const Index k = 2;
  const DiagGaussian<double> g(normal_matrix(n, 1, rng, 0.7), normal_matrix(n, 1, rng, 0.5));
  const DyadicTransform<double> b(0.3, normal_matrix(n, k, rng), normal_matrix(k, n, rng));
  const double exact = kl_dt(g, b);
  // log q(z) = log N(y; mu, D) - log|det B| for z = B y; log det from the dense LU.
  const Matrix bd = b.dense();
  const double log_det_b = lu_logdet(bd).log_abs;
  const double log_norm_d = -0.5 * (static_cast<double>(n) * std::log(2.0 * M_PI) + g.log_var().sum());
  const double log_norm_p = -0.5 * static_cast<double>(n) * std::log(2.0 * M_PI);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int draws = 1000000;
  double sum = 0.0;
  double sum_sq = 0.0;
  Vector alpha(n);
  for (int s = 0; s < draws; ++s) {
    for (Index i = 0; i < n; ++i) alpha(i) = normal(rng);
    const Vector y = sample(g, alpha);
    const Vector z = bd * y;
    const double log_q = log_norm_d - 0.5 * alpha.squaredNorm() - log_det_b;
    const double log_p = log_norm_p - 0.5 * z.squaredNorm();
    const double d = log_q - log_p;
    sum += d;
    sum_sq += d * d;
  }
  const double mean = sum / draws;
  const double se = std::sqrt((sum_sq / draws - mean * mean) / draws);
  const double z_score = std::abs(mean - exact) / se;
  return {"kl vs monte carlo", z_score <= 3.0,
          fmt("|MC - exact| = %.2f standard errors (limit 3), exact %.6f", z_score, exact)};
}

double log_log_slope(const std::vector<double>& eps, const std::vector<double>& gap) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    mx += std::log(eps[i]);
    my += std::log(gap[i]);
  }
  mx /= static_cast<double>(eps.size());
  my /= static_cast<double>(eps.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    sxy += (std::log(eps[i]) - mx) * (std::log(gap[i]) - my);
    sxx += (std::log(eps[i]) - mx) * (std::log(eps[i]) - mx);
  }
  return sxy / sxx;
}

CheckResult first_order_suite(Rng& rng) {
  const Matrix u = normal_matrix(8, 2, rng);
  const Matrix v = normal_matrix(2, 8, rng);
  const std::vector<double> eps = {1e-2, 1e-3, 1e-4};
  std::vector<double> det_gap, inv_gap;
  for (double e : eps) {
    const auto gaps = first_order_diagnostics(DyadicTransform<double>(e, u, v));
    det_gap.push_back(gaps.det_gap);
    inv_gap.push_back(gaps.inv_gap);
  }
  const double s_det = log_log_slope(eps, det_gap);
  const double s_inv = log_log_slope(eps, inv_gap);
  const bool ok = std::abs(s_det - 2.0) <= 0.2 && std::abs(s_inv - 2.0) <= 0.2;
  return {"first-order eps slopes", ok,
          fmt("det gap slope %.4f, inverse gap slope %.4f (target 2 +/- 0.2)", s_det, s_inv)};
}

CheckResult non_pd_suite() {
  // B = I + 10 * e1 (-e1)^T has det -9.
  Matrix u = Matrix::Zero(2, 1);
  Matrix v = Matrix::Zero(1, 2);
  u(0, 0) = 1.0;
  v(0, 0) = -1.0;
  const DyadicTransform<double> b(10.0, u, v);
  const DiagGaussian<double> g(Vector::Zero(2), Vector::Zero(2));
  try {
    (void)kl_dt(g, b);
  } catch (const NonPdPosteriorError& e) {
    return {"non-PD posterior rejected", true, std::string("eps=10 raised: ") + e.what()};
  }
  return {"non-PD posterior rejected", false, "eps=10 with det B = -9 was accepted"};
}

}  // namespace

std::vector<BlockError> gradcheck(const GradcheckOptions& opts) {
  ModelConfig config;
  config.input = opts.input;
  config.hidden = opts.hidden;
  config.latent = opts.latent;
  config.rank = opts.rank;
  config.epsilon = opts.epsilon;
  ModelParams p = init_params(config, opts.seed);
  // Undo the u/v shrink and give biases random values so every term of the
  // gradient, including the transform, is exercised at a generic point.
  p.u_head.w /= kUvHeadInitScale;
  p.v_head.w /= kUvHeadInitScale;
  Rng rng = make_rng(opts.seed, 0, Stream::Sample);
  std::uniform_real_distribution<double> unif(-0.1, 0.1);
  for (DenseLayer* l : p.layers()) {
    for (Index i = 0; i < l->b.size(); ++i) l->b(i) = unif(rng);
  }
  Matrix x(config.input, 1);
  std::bernoulli_distribution bit(0.3);
  for (Index i = 0; i < x.size(); ++i) x(i) = bit(rng) ? 1.0 : 0.0;
  const Matrix alpha = draw_noise(config.latent, 1, rng);

  ParamGrads analytic = elbo_minibatch(p, x, alpha).grads;
  auto params = blocks_of(p, analytic);
  if (!opts.corrupt_block.empty()) {
    bool found = false;
    for (auto& blk : params) {
      if (blk.name == opts.corrupt_block || blk.name.rfind(opts.corrupt_block + ".", 0) == 0) {
        blk.grad = 1.1 * blk.grad.array() + 1e-3;
        found = true;
      }
    }
    if (!found) throw ContractError("gradcheck: unknown block " + opts.corrupt_block);
  }

  auto loss = [&] { return -elbo_forward(p, x, alpha).elbo; };
  std::vector<BlockError> out;
  for (auto& blk : params) {
    Vector numeric(blk.param.size());
    for (Index i = 0; i < blk.param.size(); ++i) {
      const double saved = blk.param(i);
      blk.param(i) = saved + opts.step;
      const double up = loss();
      blk.param(i) = saved - opts.step;
      const double down = loss();
      blk.param(i) = saved;
      numeric(i) = (up - down) / (2.0 * opts.step);
    }
    const double denom = std::max({blk.grad.norm(), numeric.norm(), 1e-8});
    out.push_back({blk.name, (blk.grad - numeric).norm() / denom, blk.param.size()});
  }
  return out;
}

int cmd_gradcheck(const GradcheckOptions& opts, std::ostream& out, std::ostream& err) {
  std::vector<BlockError> errors;
  try {
    errors = gradcheck(opts);
  } catch (const std::exception& e) {
    err << "dtvae gradcheck: " << e.what() << "\n";
    return kExitUsage;
  }
  int status = kExitOk;
  double worst = 0.0;
  for (const auto& e : errors) {
    const bool ok = e.rel_error <= opts.tolerance;
    char line[160];
    std::snprintf(line, sizeof line, "%-16s entries=%-6ld rel_error=%.3e %s\n", e.name.c_str(),
                  static_cast<long>(e.entries), e.rel_error, ok ? "ok" : "FAIL");
    out << line;
    worst = std::max(worst, e.rel_error);
    if (!ok) {
      err << "dtvae gradcheck: block " << e.name << " exceeds tolerance " << opts.tolerance << "\n";
      status = kExitFailure;
    }
  }
  char summary[96];
  std::snprintf(summary, sizeof summary, "worst_rel_error=%.3e\n", worst);
  out << summary;
  return status;
}

std::vector<CheckResult> run_selftest(const SelftestOptions& opts) {
  Rng rng = make_rng(opts.seed, 0, Stream::Sample);
  std::vector<CheckResult> results;
  results.push_back(woodbury_suite(rng));
  results.push_back(sylvester_suite(rng));
  results.push_back(kl_dense_suite(rng));
  results.push_back(kl_monte_carlo_suite(rng));
  results.push_back(first_order_suite(rng));
  results.push_back(non_pd_suite());
  return results;
}

int cmd_selftest(const SelftestOptions& opts, std::ostream& out, std::ostream& err) {
  std::vector<CheckResult> results;
  try {
    results = run_selftest(opts);
  } catch (const std::exception& e) {
    err << "dtvae selftest: unexpected error: " << e.what() << "\n";
    return kExitFailure;
  }
  bool all = true;
  for (const auto& r : results) {
    char line[96];
    std::snprintf(line, sizeof line, "%-4s  %-28s ", r.passed ? "PASS" : "FAIL", r.name.c_str());
    out << line << r.detail << "\n";
    all = all && r.passed;
  }
  return all ? kExitOk : kExitFailure;
}

}  // namespace dtvae
