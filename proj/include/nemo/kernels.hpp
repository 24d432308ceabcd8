#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "nemo/grid.hpp"
#include "nemo/random.hpp"

namespace nemo {

/// Squared-exponential kernel tau_sq * exp(-(s - t)^2 / (2 len_sq)).
struct SEKernelParams {
  double tau_sq = 1.0;
  double len_sq = 1.0;

  void validate() const;
  friend bool operator==(const SEKernelParams&, const SEKernelParams&) = default;
};

/// gamma(alpha, beta) (shape/rate) on the precision 1/len_sq and a
/// half-normal with scale gamma on tau_sq.
struct HyperpriorConfig {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;

  void validate() const;
  friend bool operator==(const HyperpriorConfig&, const HyperpriorConfig&) = default;
};

/// Diagonal loading added to covariance matrices, relative to a scale
/// (tau_sq for kernel matrices). On a failed Cholesky the loading grows by
/// `factor` until it exceeds `max`.
struct JitterPolicy {
  double initial = 1e-8;
  double max = 1e-4;
  double factor = 10.0;

  friend bool operator==(const JitterPolicy&, const JitterPolicy&) = default;
};

double se_kernel(double s, double t, const SEKernelParams& params);

/// Kernel matrix on the grid points plus `jitter` on the diagonal.
Eigen::MatrixXd se_cov_matrix(const Grid& grid, const SEKernelParams& params, double jitter);
Eigen::MatrixXd se_cov_matrix(const Eigen::VectorXd& points, const SEKernelParams& params, double jitter);

/// Kernel matrix with the policy's default jitter (initial * tau_sq).
inline Eigen::MatrixXd se_cov_matrix(const Grid& grid, const SEKernelParams& params, const JitterPolicy& policy) {
  return se_cov_matrix(grid, params, policy.initial * params.tau_sq);
}

/// Lower Cholesky factor together with the extra diagonal loading that was
/// needed to obtain it.
struct CholeskyFactor {
  Eigen::MatrixXd lower;
  double added_jitter = 0.0;

  double log_det() const { return 2.0 * lower.diagonal().array().log().sum(); }
  Eigen::Index size() const { return lower.rows(); }
  /// Solves A x = b.
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  Eigen::MatrixXd inverse() const;
};

/// Cholesky of a symmetric matrix. Tries the matrix as given, then adds
/// policy.initial * scale, growing by policy.factor up to policy.max * scale.
/// Throws NumericalError when every attempt fails.
CholeskyFactor cholesky_escalating(const Eigen::MatrixXd& a, double scale, const JitterPolicy& policy = {});

/// (A + A^T) / 2.
Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& a);

/// log N(f; 0, cov), normalizing constant included.
double gp_log_density(const Eigen::VectorXd& f, const Eigen::MatrixXd& cov, const JitterPolicy& policy = {});
double gp_log_density(const Eigen::VectorXd& f, const CholeskyFactor& chol);

/// One draw from N(0, se_cov_matrix(grid, params, policy.initial * tau_sq)).
Eigen::VectorXd sample_gp(const Grid& grid, const SEKernelParams& params, Rng& rng, const JitterPolicy& policy = {});

/// Draw from N(0, cov) through its Cholesky factor.
Eigen::VectorXd sample_mvn_zero(const CholeskyFactor& chol, Rng& rng);

/// log density, in len_sq, of a gamma(alpha, beta) prior placed on 1/len_sq.
double log_precision_gamma_density(double len_sq, double alpha, double beta);
/// log density of a half-normal with scale gamma, evaluated at x >= 0.
double log_half_normal_density(double x, double gamma);
/// Sum of the two densities above for (len_sq, tau_sq).
double log_hyperprior(const SEKernelParams& params, const HyperpriorConfig& cfg);

/// Draws (tau_sq, len_sq) from the hyperprior.
SEKernelParams sample_hyperprior(const HyperpriorConfig& cfg, Rng& rng);

}  // namespace nemo
