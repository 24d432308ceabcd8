#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "nemo/grid.hpp"
#include "nemo/model.hpp"
#include "nemo/random.hpp"
#include "nemo/sampler.hpp"

namespace nemo {

/// Moves the expansion scale onto the loadings: lambda_k <- sqrt(psi_k) lambda_k,
/// eta_k and theta_k divided by sqrt(psi_k), psi <- 1. Products lambda_k eta_ik
/// are unchanged up to rounding.
FFAState absorb_expansion(const FFAState& state);
PosteriorDraws absorb_expansion(const PosteriorDraws& draws);

/// Aligned factor j is sign[j] times original factor perm[j].
struct FactorTransform {
  std::vector<Eigen::Index> perm;
  Eigen::VectorXd sign;

  static FactorTransform identity(Eigen::Index k);
  bool is_identity() const;
};

/// Applies the transform to lambda rows, eta columns, theta rows, psi and the
/// loading hyperparameters.
FFAState apply_transform(const FFAState& state, const FactorTransform& t);

/// Greedy matching of the rows of `lambda` to the rows of `reference` by
/// largest |weighted inner product|; matched rows come first (in reference
/// order), unmatched rows follow in their original order with sign +1.
FactorTransform match_to_reference(const Eigen::MatrixXd& lambda, const Eigen::MatrixXd& reference, const Grid& grid);

struct AlignedDraws {
  PosteriorDraws draws;
  std::vector<FactorTransform> transforms;  // one per saved state
  std::size_t pivot = 0;
};

/// Pivot is the saved state with the largest log-likelihood; every state is
/// matched to it. Throws EmptyDataset with no saved draws.
AlignedDraws align_draws(const PosteriorDraws& draws, const Grid& grid);

/// Per-factor terms lambda_k(t) eta_ik summed in ascending order of value, so
/// the result depends only on the multiset of terms and not on factor order.
Eigen::MatrixXd factor_surface(const FFAState& state);

struct CredibleBand {
  Eigen::VectorXd lower;
  Eigen::VectorXd mean;
  Eigen::VectorXd upper;
  double level = 0.95;
  double multiplier = 0.0;  // q

  bool excludes_zero() const;
};

/// mean +- q sd with q the empirical level-quantile of max_t |draw - mean| / sd.
/// Points with sd < 1e-12 use the draw range and do not enter the max.
CredibleBand simultaneous_band(const std::vector<Eigen::VectorXd>& draws, double level);

/// One band per function family with a single q from the max over all families.
std::vector<CredibleBand> simultaneous_bands_pooled(const std::vector<std::vector<Eigen::VectorXd>>& families,
                                                    double level);

enum class BandPooling { per_factor, pooled };

struct FactorSelection {
  Eigen::Index k_selected = 0;
  std::vector<bool> keep;
  std::vector<CredibleBand> bands;
};

/// Keeps factor k iff its band for lambda_k (expansion absorbed) excludes zero
/// somewhere on the grid.
FactorSelection select_num_factors(const AlignedDraws& aligned, double level,
                                   BandPooling pooling = BandPooling::per_factor);

struct EssResult {
  double value = 0.0;
  bool degenerate = false;
};

/// Geyer initial positive sequence estimator, clipped to [1, N].
EssResult effective_sample_size(const Eigen::VectorXd& series);

/// sqrt(sum_l w_l lambda_k(t_l)^2) for every saved state, expansion absorbed.
Eigen::VectorXd loading_norm_trace(const PosteriorDraws& draws, Eigen::Index k, const Grid& grid);

struct WaicResult {
  double waic = 0.0;
  double lppd = 0.0;
  double p_waic = 0.0;
  Eigen::VectorXd pointwise;  // -2 (lppd_j - p_j)
};

WaicResult waic(const Eigen::MatrixXd& pointwise_log_lik);

struct WaicComparison {
  double difference = 0.0;  // waic(a) - waic(b)
  double standard_error = 0.0;
};

/// Paired comparison on the same observations: SE = sqrt(P) sd(pointwise differences).
WaicComparison compare_waic(const WaicResult& a, const WaicResult& b);

double mise(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth, const Grid& grid);

enum class PredictiveStatistic { magnitude, pointwise_mean, covariance_eigenvalue };

struct PredictiveCheck {
  Eigen::MatrixXd replicated;  // saved states x statistic dimension
  Eigen::VectorXd observed;
};

/// Subject norms ||y_i||.
Eigen::VectorXd magnitude_statistic(const std::vector<Eigen::VectorXd>& values);
/// Cross-sectional mean at every grid point; NaN where nobody is observed.
Eigen::VectorXd pointwise_mean_statistic(const SparseFunctionalDataset& layout,
                                         const std::vector<Eigen::VectorXd>& values);
/// Pairwise-complete covariance over the grid (pairs seen by < 2 subjects get 0).
Eigen::MatrixXd pairwise_covariance(const SparseFunctionalDataset& layout, const std::vector<Eigen::VectorXd>& values);

/// One replicate y_i ~ N(O_i f_i, sigma^2 I) per saved state on the observed maps.
/// `eigen_index` is 1-based and only used for the eigenvalue statistic.
PredictiveCheck posterior_predictive(const PosteriorDraws& draws, const SparseFunctionalDataset& data,
                                     PredictiveStatistic statistic, Rng& rng, Eigen::Index eigen_index = 1);

/// Posterior mean of a per-state curve.
Eigen::VectorXd posterior_mean(const std::vector<Eigen::VectorXd>& draws);

std::vector<Eigen::VectorXd> mu_draws(const PosteriorDraws& draws);
std::vector<Eigen::VectorXd> loading_draws(const PosteriorDraws& draws, Eigen::Index k);
std::vector<Eigen::VectorXd> fitted_draws(const PosteriorDraws& draws, Eigen::Index subject);

}  // namespace nemo
