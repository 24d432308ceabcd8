#include "nemo/nemo_process.hpp"

#include <Eigen/Cholesky>
#include <vector>

#include "nemo/errors.hpp"

namespace nemo {

double orthogonality_penalty(const Eigen::MatrixXd& lambda, const Grid& grid) {
  if (lambda.cols() != grid.size()) throw DimensionError("orthogonality_penalty: loading length != grid size");
  const Eigen::MatrixXd gram = lambda * grid.weights().asDiagonal() * lambda.transpose();
  double total = 0.0;
  for (Eigen::Index k = 0; k < gram.rows(); ++k)
    for (Eigen::Index j = 0; j < k; ++j) total += gram(j, k) * gram(j, k);
  return total;
}

Eigen::MatrixXd rows_except(const Eigen::MatrixXd& m, Eigen::Index k) {
  Eigen::MatrixXd out(m.rows() - 1, m.cols());
  for (Eigen::Index r = 0, o = 0; r < m.rows(); ++r) {
    if (r != k) out.row(o++) = m.row(r);
  }
  return out;
}

Eigen::MatrixXd nemo_conditional_cov(const Eigen::MatrixXd& c_k, const Eigen::MatrixXd& others, const Grid& grid,
                                     double nu_lambda) {
  const Eigen::Index m = grid.size();
  if (c_k.rows() != m || c_k.cols() != m) throw DimensionError("nemo_conditional_cov: C_k must be m x m");
  if (others.rows() > 0 && others.cols() != m) throw DimensionError("nemo_conditional_cov: others must have m columns");
  if (!(nu_lambda > 0.0)) throw DomainError("nu_lambda must be positive");
  if (others.rows() == 0) return c_k;

  const Eigen::MatrixXd w_others = grid.weights().asDiagonal() * others.transpose();  // m x (K-1)
  const Eigen::MatrixXd h = c_k * w_others;                                          // m x (K-1)
  Eigen::MatrixXd big_h = w_others.transpose() * h;                                  // (K-1) x (K-1)
  big_h = symmetrized(big_h);
  big_h.diagonal().array() += nu_lambda;
  Eigen::LLT<Eigen::MatrixXd> llt(big_h);
  if (llt.info() != Eigen::Success) throw NumericalError("nemo_conditional_cov: (nu I + H) is not positive definite");
  const Eigen::MatrixXd half = llt.matrixL().solve(h.transpose());  // L^{-1} h^T
  return symmetrized(c_k - half.transpose() * half);
}

Eigen::MatrixXd nemo_conditional_precision(const Eigen::MatrixXd& c_k_inverse, const Eigen::MatrixXd& others,
                                           const Grid& grid, double nu_lambda) {
  if (!(nu_lambda > 0.0)) throw DomainError("nu_lambda must be positive");
  if (others.rows() == 0) return c_k_inverse;
  const Eigen::MatrixXd w_others = grid.weights().asDiagonal() * others.transpose();
  return c_k_inverse + (w_others * w_others.transpose()) / nu_lambda;
}

Eigen::VectorXd sample_nemo_conditional(const Eigen::MatrixXd& c_k, const Eigen::MatrixXd& others, const Grid& grid,
                                        double nu_lambda, Rng& rng, const JitterPolicy& policy) {
  const Eigen::MatrixXd cov = nemo_conditional_cov(c_k, others, grid, nu_lambda);
  return sample_mvn_zero(cholesky_escalating(cov, c_k.diagonal().mean(), policy), rng);
}

LoadingSet sample_nemo_joint(std::span<const SEKernelParams> kernel_params, const Grid& grid, double nu_lambda,
                             int n_sweeps, Rng& rng, const JitterPolicy& policy) {
  if (n_sweeps < 1) throw DomainError("sample_nemo_joint: n_sweeps must be >= 1");
  if (kernel_params.empty()) throw DomainError("sample_nemo_joint: need at least one loading");
  const auto k_total = static_cast<Eigen::Index>(kernel_params.size());
  std::vector<Eigen::MatrixXd> covs;
  covs.reserve(kernel_params.size());
  for (const auto& p : kernel_params) covs.push_back(se_cov_matrix(grid, p, policy));

  LoadingSet set{Eigen::MatrixXd::Zero(k_total, grid.size()), nu_lambda};
  for (int sweep = 0; sweep < n_sweeps; ++sweep) {
    for (Eigen::Index k = 0; k < k_total; ++k) {
      set.lambda.row(k) =
          sample_nemo_conditional(covs[static_cast<std::size_t>(k)], rows_except(set.lambda, k), grid, nu_lambda, rng,
                                  policy)
              .transpose();
    }
  }
  return set;
}

}  // namespace nemo
