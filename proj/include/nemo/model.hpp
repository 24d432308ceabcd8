#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nemo/grid.hpp"
#include "nemo/kernels.hpp"
#include "nemo/random.hpp"

namespace nemo {

enum class DataKind { continuous, binary };

std::string to_string(DataKind kind);
DataKind parse_data_kind(const std::string& s);

struct Subject {
  std::string id;
  SubjectIndexMap map;
  Eigen::VectorXd values;
};

/// Sparse functional observations on a shared grid. Subject i is observed at
/// grid.points()[map[j]] with value values[j].
class SparseFunctionalDataset {
 public:
  SparseFunctionalDataset() = default;
  SparseFunctionalDataset(Grid grid, std::vector<Subject> subjects, DataKind kind);

  const Grid& grid() const { return grid_; }
  const std::vector<Subject>& subjects() const { return subjects_; }
  const Subject& subject(Eigen::Index i) const { return subjects_[static_cast<std::size_t>(i)]; }
  Eigen::Index num_subjects() const { return static_cast<Eigen::Index>(subjects_.size()); }
  Eigen::Index total_observations() const { return total_obs_; }
  DataKind kind() const { return kind_; }

  /// Number of subjects observed at each grid point (the diagonal of sum_i O_i^T O_i).
  Eigen::VectorXd observation_counts() const;

  /// Same layout with different values, e.g. the latent probit responses.
  SparseFunctionalDataset with_values(const std::vector<Eigen::VectorXd>& values, DataKind kind) const;

 private:
  Grid grid_;
  std::vector<Subject> subjects_;
  DataKind kind_ = DataKind::continuous;
  Eigen::Index total_obs_ = 0;
};

/// One full parameter configuration of the factor model.
struct FFAState {
  Eigen::VectorXd mu;           // m
  Eigen::MatrixXd lambda;       // K x m
  Eigen::MatrixXd eta;          // n x K
  Eigen::VectorXd psi;          // K
  double sigma_sq = 1.0;
  SEKernelParams mu_kernel;
  std::vector<SEKernelParams> loading_kernels;  // K
  std::optional<Eigen::MatrixXd> theta;         // K x q
  std::optional<Eigen::MatrixXd> covariates;    // n x q

  Eigen::Index num_factors() const { return lambda.rows(); }
  /// Throws DimensionError/DomainError on inconsistency with (n, m).
  void validate(Eigen::Index n, Eigen::Index m) const;
  /// Latent-factor residual xi = eta - X Theta^T (eta itself without covariates).
  Eigen::MatrixXd xi() const;
};

struct PriorConfig {
  double nu_lambda = 1e-4;
  double nu_eta = 1e-4;
  HyperpriorConfig mu_hyper;
  HyperpriorConfig loading_hyper;
  double alpha_sigma = 1.0;
  double beta_sigma = 1.0;
  double alpha_eta = 1.0;
  double beta_eta = 1.0;
  int k_max = 5;
  JitterPolicy jitter;

  void validate() const;
};

/// psi (I_n - 1 1^T / (nu_eta + n)) = psi (I_n + 1 1^T / nu_eta)^{-1}.
Eigen::MatrixXd eta_prior_covariance(Eigen::Index n, double nu_eta, double psi);

/// Draw from N(0, eta_prior_covariance(n, nu_eta, psi)) in O(n).
Eigen::VectorXd sample_eta_prior(Eigen::Index n, double nu_eta, double psi, Rng& rng);

struct SimulationConfig {
  Eigen::Index n = 100;
  Eigen::Index m = 30;
  Eigen::Index k = 2;
  double domain_lo = 0.0;
  double domain_hi = 1.0;
  SEKernelParams mu_kernel{1.0, 0.4};
  SEKernelParams loading_kernel{1.0, 0.4};
  double sigma_sq = 1.0;
  double sparsity = 0.0;
  double nu_lambda = 1e-4;
  double nu_eta = 1e-4;
  int nemo_sweeps = 10;
  Eigen::Index q = 1;

  void validate() const;
};

/// Binary defaults: tau_sq = 10 for the mean and loadings.
SimulationConfig binary_simulation_defaults();

struct SimulatedData {
  SparseFunctionalDataset data;
  FFAState truth;
  /// Latent curves f_i on the full grid (n x m).
  Eigen::MatrixXd curves;
};

/// Draws mu, loadings, and latent factors from the generating prior (psi = 1).
FFAState draw_truth(const SimulationConfig& cfg, const Grid& grid, Rng& rng);

/// f_i = mu + Lambda^T eta_i for every subject, as rows.
Eigen::MatrixXd latent_curves(const FFAState& state);

/// Keeps a uniformly random subset of each subject's points: round(fraction * m)
/// points are removed but at least two are kept.
SparseFunctionalDataset thin_observations(const Grid& grid, const Eigen::MatrixXd& full_values, double fraction,
                                          DataKind kind, Rng& rng);

/// Bernoulli(Phi(f)) draws, entrywise.
Eigen::MatrixXd probit_responses(const Eigen::MatrixXd& curves, Rng& rng);

SimulatedData simulate_ffa(const SimulationConfig& cfg, Rng& rng);
SimulatedData simulate_gffa_binary(const SimulationConfig& cfg, Rng& rng);
/// eta = X Theta^T + xi with standard-normal X (n x q) and Theta (K x q);
/// xi follows the relaxed sum-to-zero prior with psi = 1.
SimulatedData simulate_latent_regression(const SimulationConfig& cfg, Rng& rng);

/// Gaussian log-likelihood sum_i log N(y_i; O_i(mu + Lambda^T eta_i), sigma^2 I).
double log_likelihood(const FFAState& state, const SparseFunctionalDataset& data);
/// Probit log-likelihood sum log Phi((2y - 1) f).
double probit_log_likelihood(const FFAState& state, const SparseFunctionalDataset& data);
/// Per-observation log-likelihood, subjects concatenated in order.
Eigen::VectorXd pointwise_log_likelihood(const FFAState& state, const SparseFunctionalDataset& data);

/// mu + Lambda^T eta_i on the full grid.
Eigen::VectorXd fitted_values(const FFAState& state, Eigen::Index subject);
/// mu + Lambda^T eta_i at subject i's observed points.
Eigen::VectorXd fitted_values(const FFAState& state, const SparseFunctionalDataset& data, Eigen::Index subject);

double normal_cdf(double x);
double log_normal_cdf(double x);
Eigen::VectorXd normal_cdf(const Eigen::VectorXd& x);

}  // namespace nemo
