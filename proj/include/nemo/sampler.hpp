#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "nemo/kernels.hpp"
#include "nemo/model.hpp"
#include "nemo/random.hpp"

namespace nemo {

/// Scale on which kernel hyperparameters take random-walk steps. `log` walks
/// on log(len_sq) and log(tau_sq) with the Jacobian in the acceptance ratio;
/// `raw` walks on the parameters themselves and rejects non-positive proposals.
enum class ProposalScale { log, raw };

struct ChainConfig {
  int n_iter = 2000;
  int burn_in = 500;
  int thin = 1;
  double target_accept = 0.44;
  double adapt_rate_decay = 0.7;
  double initial_step = 0.5;
  std::uint64_t seed = 20240917;
  ProposalScale proposal = ProposalScale::log;
  bool record_pointwise = true;

  void validate() const;
  int num_saved() const { return (n_iter - burn_in) / thin; }
};

struct AcceptanceStats {
  std::uint64_t attempts = 0;
  std::uint64_t accepts = 0;
  double rate() const { return attempts == 0 ? 0.0 : static_cast<double>(accepts) / static_cast<double>(attempts); }
};

/// Random-walk proposal standard deviation adapted on the log scale by a
/// Robbins-Monro recursion: log sd += n^{-decay} (accept_prob - target).
struct AdaptiveStep {
  double log_sd = std::log(0.5);
  double target = 0.44;
  double decay = 0.7;
  std::uint64_t steps = 0;
  bool frozen = false;

  AdaptiveStep() = default;
  AdaptiveStep(double initial_sd, double target_accept, double rate_decay)
      : log_sd(initial_sd > 0.0 ? std::log(initial_sd) : -INFINITY), target(target_accept), decay(rate_decay) {}

  double sd() const { return std::exp(log_sd); }
  void adapt(double accept_prob);
};

/// One Metropolis random-walk step on a scalar coordinate. `current_log_target`
/// must hold log_target(x) on entry and is updated on acceptance. Non-finite
/// candidate targets are rejected.
bool random_walk_step(double& x, double& current_log_target, const std::function<double(double)>& log_target,
                      AdaptiveStep& step, AcceptanceStats& stats, Rng& rng);

struct HyperAdapters {
  AdaptiveStep len;
  AdaptiveStep tau;
  AcceptanceStats len_stats;
  AcceptanceStats tau_stats;

  HyperAdapters() = default;
  explicit HyperAdapters(const ChainConfig& cfg)
      : len(cfg.initial_step, cfg.target_accept, cfg.adapt_rate_decay),
        tau(cfg.initial_step, cfg.target_accept, cfg.adapt_rate_decay) {}
  void freeze() {
    len.frozen = true;
    tau.frozen = true;
  }
};

struct HyperStepResult {
  bool len_accepted = false;
  bool tau_accepted = false;
};

/// Metropolis updates of len_sq then tau_sq for a function with log density
/// `function_log_density(params)` (log N(f; 0, cov(params))) and the
/// hyperprior `cfg`.
HyperStepResult mh_update_kernel_hyper(SEKernelParams& params,
                                       const std::function<double(const SEKernelParams&)>& function_log_density,
                                       const HyperpriorConfig& cfg, HyperAdapters& adapters, ProposalScale scale,
                                       Rng& rng);

/// Gaussian full conditional held through its precision factor.
struct GaussianConditional {
  Eigen::VectorXd mean;
  CholeskyFactor precision;

  Eigen::MatrixXd covariance() const { return precision.inverse(); }
  Eigen::VectorXd draw(Rng& rng) const;
};

/// N(Q^{-1} b, Q^{-1}).
GaussianConditional gaussian_from_precision(const Eigen::MatrixXd& precision, const Eigen::VectorXd& linear,
                                            const JitterPolicy& policy = {});

/// eta_{.k} conditional: precision diag(d) + c 1 1^T, handled by Sherman-Morrison.
struct EtaConditional {
  Eigen::VectorXd diag;
  double rank_one = 0.0;
  Eigen::VectorXd mean;

  Eigen::MatrixXd precision() const;
  Eigen::MatrixXd covariance() const;
  /// (diag(d) + c 1 1^T)^{-1} v.
  Eigen::VectorXd solve(const Eigen::VectorXd& v) const;
  Eigen::VectorXd draw(Rng& rng) const;
};

/// Conditional of a precision parameter: gamma(shape, rate).
struct GammaConditional {
  double shape = 1.0;
  double rate = 1.0;

  /// Draws the precision and returns its reciprocal (a variance).
  double draw_variance(Rng& rng) const { return 1.0 / rng.gamma(shape, rate); }
};

/// Inverse of the jittered kernel matrix on the grid.
Eigen::MatrixXd kernel_precision(const Grid& grid, const SEKernelParams& params, const JitterPolicy& policy);

GaussianConditional mu_conditional(const FFAState& state, const SparseFunctionalDataset& data,
                                   const Eigen::MatrixXd& mu_prior_precision, const JitterPolicy& policy = {});
GaussianConditional lambda_conditional(const FFAState& state, const SparseFunctionalDataset& data, Eigen::Index k,
                                       double nu_lambda, const Eigen::MatrixXd& loading_prior_precision,
                                       const JitterPolicy& policy = {});
/// With covariates the prior mean of eta_{.k} is X theta_k.
EtaConditional eta_conditional(const FFAState& state, const SparseFunctionalDataset& data, Eigen::Index k,
                               double nu_eta);
GammaConditional psi_conditional(const FFAState& state, Eigen::Index k, const PriorConfig& prior);
GammaConditional sigma_conditional(const FFAState& state, const SparseFunctionalDataset& data,
                                   const PriorConfig& prior);
/// theta_k | eta_{.k}, X, psi_k with theta_k ~ N(0, psi_k I_q).
GaussianConditional theta_conditional(const FFAState& state, Eigen::Index k, double nu_eta,
                                      const JitterPolicy& policy = {});

/// Theta_k given everything except eta_k (eta_k integrated out). Drawing this
/// and then eta_k is a blocked update of (Theta_k, eta_k).
GaussianConditional theta_collapsed_conditional(const FFAState& state, const SparseFunctionalDataset& data,
                                                Eigen::Index k, double nu_eta, const JitterPolicy& policy = {});

void gibbs_update_mu(FFAState& state, const SparseFunctionalDataset& data, const PriorConfig& prior, Rng& rng);
void gibbs_update_lambda_k(FFAState& state, const SparseFunctionalDataset& data, Eigen::Index k,
                           const PriorConfig& prior, Rng& rng);
void gibbs_update_eta_k(FFAState& state, const SparseFunctionalDataset& data, Eigen::Index k, double nu_eta, Rng& rng);
void gibbs_update_psi_k(FFAState& state, Eigen::Index k, const PriorConfig& prior, Rng& rng);
void gibbs_update_sigma2(FFAState& state, const SparseFunctionalDataset& data, const PriorConfig& prior, Rng& rng);
void gibbs_update_theta(FFAState& state, double nu_eta, Rng& rng, const JitterPolicy& policy = {});

enum class TruncationSide { positive, negative };

/// Exact draw from N(mean, sd^2) restricted to (0, inf) or (-inf, 0).
/// Far-tail truncations use Robert's exponential-proposal rejection sampler.
double sample_truncated_normal(double mean, double sd, TruncationSide side, Rng& rng);

/// Latent probit responses z* at each subject's observed points.
std::vector<Eigen::VectorXd> gibbs_update_latent_z(const FFAState& state, const SparseFunctionalDataset& binary_data,
                                                   Rng& rng);

enum class ChainKind { ffa, gffa_binary, regression };
std::string to_string(ChainKind kind);
ChainKind parse_chain_kind(const std::string& s);

struct PosteriorDraws {
  ChainKind chain_kind = ChainKind::ffa;
  Eigen::Index num_factors = 0;
  std::vector<FFAState> states;
  std::vector<double> state_log_likelihood;  // one per saved state
  std::vector<double> log_likelihood_trace;  // one per iteration
  Eigen::MatrixXd pointwise_log_likelihood;  // saved states x observations, may be empty
  std::map<std::string, AcceptanceStats> acceptance;

  std::size_t size() const { return states.size(); }
};

/// Metropolis-within-Gibbs chain for the three model variants. One sweep:
///   [binary] z*; mu; mu hypers; for each k: lambda_k, lambda_k hypers,
///   [regression] Theta_k with eta_k integrated out; eta_k, psi_k; [regression] Theta;
///   [continuous] sigma^2.
class ChainRunner {
 public:
  ChainRunner(SparseFunctionalDataset data, PriorConfig prior, ChainConfig chain, Eigen::Index num_factors,
              ChainKind kind, std::optional<Eigen::MatrixXd> covariates = std::nullopt);

  /// Runs the remaining iterations.
  void run();
  /// Runs up to `count` more iterations.
  void run_iterations(int count);
  /// One full Gibbs sweep without bookkeeping or adaptation control.
  void sweep();

  int iteration() const { return iteration_; }
  bool done() const { return iteration_ >= chain_.n_iter; }
  const FFAState& state() const { return state_; }
  FFAState& mutable_state() { return state_; }
  const PosteriorDraws& draws() const { return draws_; }
  PosteriorDraws take_draws() { return std::move(draws_); }
  const SparseFunctionalDataset& data() const { return data_; }
  /// Replaces the current parameters, e.g. to share an initialization between
  /// chains. Covariates stay those of the runner.
  void set_state(FFAState state);
  /// Replaces the observed response values (continuous chains only).
  void set_response(const std::vector<Eigen::VectorXd>& values);
  Rng& rng() { return rng_; }

  nlohmann::json checkpoint() const;
  static ChainRunner resume(const nlohmann::json& checkpoint, SparseFunctionalDataset data,
                            std::optional<Eigen::MatrixXd> covariates = std::nullopt);

 private:
  struct ResumeTag {};
  ChainRunner(ResumeTag, SparseFunctionalDataset data, PriorConfig prior, ChainConfig chain, Eigen::Index num_factors,
              ChainKind kind, std::optional<Eigen::MatrixXd> covariates);

  void initialize();
  void step();
  void refresh_precisions();
  double current_log_likelihood() const;
  void record_acceptance();

  SparseFunctionalDataset data_;
  SparseFunctionalDataset working_;
  PriorConfig prior_;
  ChainConfig chain_;
  ChainKind kind_;
  Eigen::Index num_factors_;
  FFAState state_;
  Rng rng_;
  HyperAdapters mu_adapters_;
  std::vector<HyperAdapters> loading_adapters_;
  Eigen::MatrixXd mu_precision_;
  std::vector<Eigen::MatrixXd> loading_precisions_;
  int iteration_ = 0;
  PosteriorDraws draws_;
};

PosteriorDraws run_ffa_chain(const SparseFunctionalDataset& data, const PriorConfig& prior, const ChainConfig& chain,
                             Eigen::Index num_factors);
PosteriorDraws run_gffa_chain(const SparseFunctionalDataset& data, const PriorConfig& prior,
                              const ChainConfig& chain, Eigen::Index num_factors);
PosteriorDraws run_regression_chain(const SparseFunctionalDataset& data, const Eigen::MatrixXd& covariates,
                                    const PriorConfig& prior, const ChainConfig& chain, Eigen::Index num_factors);

}  // namespace nemo
