#include "nemo/kernels.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "nemo/errors.hpp"

namespace nemo {

void SEKernelParams::validate() const {
  if (!(tau_sq > 0.0) || !(len_sq > 0.0) || !std::isfinite(tau_sq) || !std::isfinite(len_sq))
    throw DomainError("kernel parameters must be positive and finite (tau_sq=" + std::to_string(tau_sq) +
                      ", len_sq=" + std::to_string(len_sq) + ")");
}

void HyperpriorConfig::validate() const {
  if (!(alpha > 0.0) || !(beta > 0.0) || !(gamma > 0.0))
    throw DomainError("hyperprior constants must be strictly positive");
}

double se_kernel(double s, double t, const SEKernelParams& params) {
  const double d = s - t;
  return params.tau_sq * std::exp(-d * d / (2.0 * params.len_sq));
}

Eigen::MatrixXd se_cov_matrix(const Eigen::VectorXd& points, const SEKernelParams& params, double jitter) {
  params.validate();
  const Eigen::Index m = points.size();
  Eigen::MatrixXd c(m, m);
  const double inv_two_len = 1.0 / (2.0 * params.len_sq);
  for (Eigen::Index j = 0; j < m; ++j) {
    c(j, j) = params.tau_sq + jitter;
    for (Eigen::Index i = j + 1; i < m; ++i) {
      const double d = points[i] - points[j];
      const double v = params.tau_sq * std::exp(-d * d * inv_two_len);
      c(i, j) = v;
      c(j, i) = v;
    }
  }
  return c;
}

Eigen::MatrixXd se_cov_matrix(const Grid& grid, const SEKernelParams& params, double jitter) {
  return se_cov_matrix(grid.points(), params, jitter);
}

Eigen::VectorXd CholeskyFactor::solve(const Eigen::VectorXd& b) const {
  Eigen::VectorXd y = lower.triangularView<Eigen::Lower>().solve(b);
  return lower.transpose().triangularView<Eigen::Upper>().solve(y);
}

Eigen::MatrixXd CholeskyFactor::inverse() const {
  Eigen::MatrixXd linv = lower.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(size(), size()));
  return linv.transpose() * linv;
}

Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& a) { return 0.5 * (a + a.transpose()); }

CholeskyFactor cholesky_escalating(const Eigen::MatrixXd& a, double scale, const JitterPolicy& policy) {
  if (a.rows() != a.cols()) throw DimensionError("cholesky: matrix is not square");
  if (a.rows() == 0) return {};
  if (!(scale > 0.0) || !std::isfinite(scale)) scale = 1.0;
  double jitter = 0.0;
  Eigen::LLT<Eigen::MatrixXd> llt;
  while (true) {
    if (jitter == 0.0) {
      llt.compute(a);
    } else {
      Eigen::MatrixXd loaded = a;
      loaded.diagonal().array() += jitter;
      llt.compute(loaded);
    }
    if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().diagonal().allFinite()) {
      return {llt.matrixL().toDenseMatrix(), jitter};
    }
    const double next = jitter == 0.0 ? policy.initial * scale : jitter * policy.factor;
    if (next > policy.max * scale * (1.0 + 1e-12))
      throw NumericalError("Cholesky factorization failed after jitter escalation to " + std::to_string(jitter));
    jitter = next;
  }
}

double gp_log_density(const Eigen::VectorXd& f, const CholeskyFactor& chol) {
  if (f.size() != chol.size()) throw DimensionError("gp_log_density: length mismatch");
  const Eigen::VectorXd z = chol.lower.triangularView<Eigen::Lower>().solve(f);
  const double n = static_cast<double>(f.size());
  return -0.5 * (n * std::log(2.0 * std::numbers::pi) + chol.log_det() + z.squaredNorm());
}

double gp_log_density(const Eigen::VectorXd& f, const Eigen::MatrixXd& cov, const JitterPolicy& policy) {
  const double scale = cov.rows() > 0 ? cov.diagonal().mean() : 1.0;
  return gp_log_density(f, cholesky_escalating(symmetrized(cov), scale, policy));
}

Eigen::VectorXd sample_mvn_zero(const CholeskyFactor& chol, Rng& rng) {
  return chol.lower * rng.normal_vector(chol.size());
}

Eigen::VectorXd sample_gp(const Grid& grid, const SEKernelParams& params, Rng& rng, const JitterPolicy& policy) {
  const Eigen::MatrixXd c = se_cov_matrix(grid, params, policy);
  return sample_mvn_zero(cholesky_escalating(c, params.tau_sq, policy), rng);
}

double log_precision_gamma_density(double len_sq, double alpha, double beta) {
  if (!(len_sq > 0.0)) throw DomainError("length-scale must be positive");
  const double x = 1.0 / len_sq;
  // gamma density of the precision times the Jacobian |d(1/l)/dl| = l^{-2}.
  return alpha * std::log(beta) - std::lgamma(alpha) + (alpha - 1.0) * std::log(x) - beta * x -
         2.0 * std::log(len_sq);
}

double log_half_normal_density(double x, double gamma) {
  if (x < 0.0) throw DomainError("half-normal evaluated at a negative value");
  return 0.5 * std::log(2.0 / std::numbers::pi) - std::log(gamma) - x * x / (2.0 * gamma * gamma);
}

double log_hyperprior(const SEKernelParams& params, const HyperpriorConfig& cfg) {
  params.validate();
  cfg.validate();
  return log_precision_gamma_density(params.len_sq, cfg.alpha, cfg.beta) +
         log_half_normal_density(params.tau_sq, cfg.gamma);
}

SEKernelParams sample_hyperprior(const HyperpriorConfig& cfg, Rng& rng) {
  SEKernelParams p;
  p.len_sq = 1.0 / rng.gamma(cfg.alpha, cfg.beta);
  p.tau_sq = std::abs(rng.normal(0.0, cfg.gamma));
  if (p.tau_sq < 1e-6 * cfg.gamma) p.tau_sq = 1e-6 * cfg.gamma;
  return p;
}

}  // namespace nemo
