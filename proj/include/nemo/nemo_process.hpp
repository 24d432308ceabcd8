#pragma once

#include <span>

#include <Eigen/Core>

#include "nemo/grid.hpp"
#include "nemo/kernels.hpp"
#include "nemo/random.hpp"

namespace nemo {

/// K loadings evaluated on the common grid (row k = lambda_k) together with
/// the orthogonality penalty nu_lambda.
struct LoadingSet {
  Eigen::MatrixXd lambda;
  double nu_lambda = 1e-4;

  Eigen::Index num_factors() const { return lambda.rows(); }
};

/// sum_{j<k} <lambda_j, lambda_k>^2, the exponent of the NeMO tilt up to -1/(2 nu).
double orthogonality_penalty(const Eigen::MatrixXd& lambda, const Grid& grid);
inline double orthogonality_penalty(const LoadingSet& set, const Grid& grid) {
  return orthogonality_penalty(set.lambda, grid);
}

/// Covariance of lambda_k given the other loadings (rows of `others`):
///   C - h (nu I + H)^{-1} h^T,   h = C W others^T,   H = others W C W others^T.
/// Integrals use the grid's trapezoid weights. The result is symmetrized.
Eigen::MatrixXd nemo_conditional_cov(const Eigen::MatrixXd& c_k, const Eigen::MatrixXd& others, const Grid& grid,
                                     double nu_lambda);

/// Precision-form counterpart: C^{-1} + (1/nu) W others^T others W.
Eigen::MatrixXd nemo_conditional_precision(const Eigen::MatrixXd& c_k_inverse, const Eigen::MatrixXd& others,
                                           const Grid& grid, double nu_lambda);

/// One draw from N(0, nemo_conditional_cov(...)).
Eigen::VectorXd sample_nemo_conditional(const Eigen::MatrixXd& c_k, const Eigen::MatrixXd& others, const Grid& grid,
                                        double nu_lambda, Rng& rng, const JitterPolicy& policy = {});

/// Prior simulation of a full loading set: starting from zero functions,
/// runs `n_sweeps` Gibbs sweeps over k of the conditional prior.
LoadingSet sample_nemo_joint(std::span<const SEKernelParams> kernel_params, const Grid& grid, double nu_lambda,
                             int n_sweeps, Rng& rng, const JitterPolicy& policy = {});

/// Every row except `k`.
Eigen::MatrixXd rows_except(const Eigen::MatrixXd& m, Eigen::Index k);

}  // namespace nemo
