#include "nemo/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>

#include "nemo/errors.hpp"
#include "nemo/nemo_process.hpp"
#include "nemo/serialization.hpp"

namespace nemo {

void ChainConfig::validate() const {
  if (n_iter < 1) throw ConfigError("n_iter must be >= 1");
  if (burn_in < 0 || burn_in >= n_iter) throw ConfigError("burn_in must lie in [0, n_iter)");
  if (thin < 1) throw ConfigError("thin must be >= 1");
  if (num_saved() < 1) throw ConfigError("(n_iter - burn_in) / thin must be >= 1");
  if (!(target_accept > 0.0 && target_accept < 1.0)) throw ConfigError("target_accept must lie in (0, 1)");
  if (!(adapt_rate_decay > 0.5 && adapt_rate_decay <= 1.0)) throw ConfigError("adapt_rate_decay must lie in (0.5, 1]");
  if (!(initial_step > 0.0)) throw ConfigError("initial_step must be positive");
}

void AdaptiveStep::adapt(double accept_prob) {
  if (frozen) return;
  ++steps;
  log_sd += std::pow(static_cast<double>(steps), -decay) * (accept_prob - target);
}

bool random_walk_step(double& x, double& current_log_target, const std::function<double(double)>& log_target,
                      AdaptiveStep& step, AcceptanceStats& stats, Rng& rng) {
  const double sd = step.sd();
  const double candidate = x + sd * rng.normal();
  const double cand_target = log_target(candidate);
  double log_ratio = cand_target - current_log_target;
  if (!std::isfinite(cand_target) || std::isnan(log_ratio)) log_ratio = -INFINITY;
  const double accept_prob = log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
  ++stats.attempts;
  bool accepted = std::log(rng.uniform()) < log_ratio;
  if (accepted) {
    ++stats.accepts;
    x = candidate;
    current_log_target = cand_target;
  }
  step.adapt(accept_prob);
  return accepted;
}

HyperStepResult mh_update_kernel_hyper(SEKernelParams& params,
                                       const std::function<double(const SEKernelParams&)>& function_log_density,
                                       const HyperpriorConfig& cfg, HyperAdapters& adapters, ProposalScale scale,
                                       Rng& rng) {
  // Proposals that make the covariance unfactorizable are rejected, not fatal.
  auto safe_density = [&](const SEKernelParams& p) -> double {
    if (!(p.len_sq > 0.0) || !(p.tau_sq > 0.0) || !std::isfinite(p.len_sq) || !std::isfinite(p.tau_sq))
      return -INFINITY;
    try {
      return function_log_density(p) + log_hyperprior(p, cfg);
    } catch (const NumericalError&) {
      return -INFINITY;
    }
  };
  const bool on_log = scale == ProposalScale::log;
  auto target_len = [&](double x) {
    SEKernelParams p = params;
    p.len_sq = on_log ? std::exp(x) : x;
    return safe_density(p) + (on_log ? x : 0.0);
  };
  auto target_tau = [&](double x) {
    SEKernelParams p = params;
    p.tau_sq = on_log ? std::exp(x) : x;
    return safe_density(p) + (on_log ? x : 0.0);
  };

  HyperStepResult result;
  double x = on_log ? std::log(params.len_sq) : params.len_sq;
  double current = target_len(x);
  result.len_accepted = random_walk_step(x, current, target_len, adapters.len, adapters.len_stats, rng);
  params.len_sq = on_log ? std::exp(x) : x;

  double y = on_log ? std::log(params.tau_sq) : params.tau_sq;
  double current_tau = target_tau(y);
  result.tau_accepted = random_walk_step(y, current_tau, target_tau, adapters.tau, adapters.tau_stats, rng);
  params.tau_sq = on_log ? std::exp(y) : y;
  return result;
}

Eigen::VectorXd GaussianConditional::draw(Rng& rng) const {
  Eigen::VectorXd z = rng.normal_vector(mean.size());
  // Q = L L^T, so L^{-T} z ~ N(0, Q^{-1}).
  return mean + precision.lower.transpose().triangularView<Eigen::Upper>().solve(z);
}

GaussianConditional gaussian_from_precision(const Eigen::MatrixXd& precision, const Eigen::VectorXd& linear,
                                            const JitterPolicy& policy) {
  GaussianConditional g;
  const double scale = precision.rows() > 0 ? precision.diagonal().mean() : 1.0;
  g.precision = cholesky_escalating(symmetrized(precision), scale, policy);
  g.mean = g.precision.solve(linear);
  return g;
}

Eigen::MatrixXd EtaConditional::precision() const {
  const Eigen::Index n = diag.size();
  Eigen::MatrixXd q = Eigen::MatrixXd::Constant(n, n, rank_one);
  q.diagonal() += diag;
  return q;
}

Eigen::VectorXd EtaConditional::solve(const Eigen::VectorXd& v) const {
  const Eigen::ArrayXd dinv = diag.array().inverse();
  const Eigen::VectorXd a = (dinv * v.array()).matrix();
  const double num = rank_one * a.sum();
  const double den = 1.0 + rank_one * dinv.sum();
  return a - (num / den) * dinv.matrix();
}

Eigen::MatrixXd EtaConditional::covariance() const {
  const Eigen::ArrayXd dinv = diag.array().inverse();
  const double den = 1.0 + rank_one * dinv.sum();
  Eigen::MatrixXd cov = -(rank_one / den) * (dinv.matrix() * dinv.matrix().transpose());
  cov.diagonal() += dinv.matrix();
  return cov;
}

Eigen::VectorXd EtaConditional::draw(Rng& rng) const {
  // x = Q^{-1}(b + e) with e ~ N(0, Q) built from the diagonal and rank-one parts.
  const Eigen::Index n = diag.size();
  Eigen::VectorXd e = (diag.array().sqrt() * rng.normal_vector(n).array()).matrix();
  e.array() += std::sqrt(rank_one) * rng.normal();
  return mean + solve(e);
}

Eigen::MatrixXd kernel_precision(const Grid& grid, const SEKernelParams& params, const JitterPolicy& policy) {
  return cholesky_escalating(se_cov_matrix(grid, params, policy), params.tau_sq, policy).inverse();
}

namespace {

// Lambda^T eta_i on the full grid, optionally leaving out factor `skip`.
Eigen::VectorXd factor_part(const FFAState& s, Eigen::Index i, Eigen::Index skip = -1) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(s.mu.size());
  for (Eigen::Index k = 0; k < s.num_factors(); ++k) {
    if (k == skip) continue;
    f.noalias() += s.eta(i, k) * s.lambda.row(k).transpose();
  }
  return f;
}

void require_continuous(const SparseFunctionalDataset& data, const char* what) {
  if (data.kind() != DataKind::continuous)
    throw KindMismatch(std::string(what) + " needs continuous (or latent) responses");
}

}  // namespace

GaussianConditional mu_conditional(const FFAState& state, const SparseFunctionalDataset& data,
                                   const Eigen::MatrixXd& mu_prior_precision, const JitterPolicy& policy) {
  require_continuous(data, "mu update");
  const double inv_s2 = 1.0 / state.sigma_sq;
  Eigen::MatrixXd q = mu_prior_precision;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(state.mu.size());
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(state.mu.size());
  for (Eigen::Index i = 0; i < data.num_subjects(); ++i) {
    const Subject& s = data.subject(i);
    Eigen::VectorXd r = s.values - s.map.gather(factor_part(state, i));
    s.map.scatter_add(r, b);
    s.map.scatter_add(Eigen::VectorXd::Ones(s.map.size()), counts);
  }
  q.diagonal() += inv_s2 * counts;
  return gaussian_from_precision(q, inv_s2 * b, policy);
}

GaussianConditional lambda_conditional(const FFAState& state, const SparseFunctionalDataset& data, Eigen::Index k,
                                       double nu_lambda, const Eigen::MatrixXd& loading_prior_precision,
                                       const JitterPolicy& policy) {
  require_continuous(data, "lambda update");
  if (k < 0 || k >= state.num_factors()) throw DomainError("lambda update: factor index out of range");
  const double inv_s2 = 1.0 / state.sigma_sq;
  Eigen::MatrixXd q = nemo_conditional_precision(loading_prior_precision, rows_except(state.lambda, k),
                                                 data.grid(), nu_lambda);
  const Eigen::Index m = state.mu.size();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd d = Eigen::VectorXd::Zero(m);
  for (Eigen::Index i = 0; i < data.num_subjects(); ++i) {
    const Subject& s = data.subject(i);
    const double e = state.eta(i, k);
    if (e == 0.0) continue;
    Eigen::VectorXd r = s.values - s.map.gather(state.mu + factor_part(state, i, k));
    s.map.scatter_add(e * r, b);
    s.map.scatter_add(Eigen::VectorXd::Constant(s.map.size(), e * e), d);
  }
  q.diagonal() += inv_s2 * d;
  return gaussian_from_precision(q, inv_s2 * b, policy);
}

EtaConditional eta_conditional(const FFAState& state, const SparseFunctionalDataset& data, Eigen::Index k,
                               double nu_eta) {
  require_continuous(data, "eta update");
  if (k < 0 || k >= state.num_factors()) throw DomainError("eta update: factor index out of range");
  const Eigen::Index n = data.num_subjects();
  const double inv_s2 = 1.0 / state.sigma_sq;
  const double inv_psi = 1.0 / state.psi[k];
  EtaConditional c;
  c.diag.resize(n);
  c.rank_one = inv_psi / nu_eta;
  Eigen::VectorXd b(n);
  const Eigen::VectorXd lam = state.lambda.row(k).transpose();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Subject& s = data.subject(i);
    const Eigen::VectorXd lk = s.map.gather(lam);
    const Eigen::VectorXd r = s.values - s.map.gather(state.mu + factor_part(state, i, k));
    c.diag[i] = inv_s2 * lk.squaredNorm() + inv_psi;
    b[i] = inv_s2 * lk.dot(r);
  }
  if (state.theta && state.covariates) {
    // prior N(X theta_k, psi M^{-1}) contributes M (X theta_k) / psi, M = I + 1 1^T / nu
    const Eigen::VectorXd m0 = (*state.covariates) * state.theta->row(k).transpose();
    b += inv_psi * m0;
    b.array() += inv_psi * m0.sum() / nu_eta;
  }
  c.mean = c.solve(b);
  return c;
}

GammaConditional psi_conditional(const FFAState& state, Eigen::Index k, const PriorConfig& prior) {
  if (k < 0 || k >= state.num_factors()) throw DomainError("psi update: factor index out of range");
  const Eigen::Index n = state.eta.rows();
  Eigen::VectorXd xi = state.eta.col(k);
  if (state.theta && state.covariates) xi -= (*state.covariates) * state.theta->row(k).transpose();
  // xi^T (I + 1 1^T / nu) xi: the precision of the relaxed sum-to-zero prior
  const double s = xi.sum();
  double quad = xi.squaredNorm() + s * s / prior.nu_eta;
  double shape = prior.alpha_eta + 0.5 * static_cast<double>(n);
  if (state.theta && state.covariates) {
    quad += state.theta->row(k).squaredNorm();
    shape += 0.5 * static_cast<double>(state.theta->cols());
  }
  return GammaConditional{shape, prior.beta_eta + 0.5 * quad};
}

GammaConditional sigma_conditional(const FFAState& state, const SparseFunctionalDataset& data,
                                   const PriorConfig& prior) {
  require_continuous(data, "sigma update");
  double ss = 0.0;
  for (Eigen::Index i = 0; i < data.num_subjects(); ++i)
    ss += (data.subject(i).values - fitted_values(state, data, i)).squaredNorm();
  return GammaConditional{prior.alpha_sigma + 0.5 * static_cast<double>(data.total_observations()),
                          prior.beta_sigma + 0.5 * ss};
}

GaussianConditional theta_conditional(const FFAState& state, Eigen::Index k, double nu_eta,
                                      const JitterPolicy& policy) {
  if (!state.theta || !state.covariates) throw DimensionError("theta update needs covariates");
  if (k < 0 || k >= state.num_factors()) throw DomainError("theta update: factor index out of range");
  const Eigen::MatrixXd& x = *state.covariates;
  const Eigen::Index q = x.cols();
  const double inv_psi = 1.0 / state.psi[k];
  const Eigen::VectorXd xsum = x.colwise().sum().transpose();
  Eigen::MatrixXd xmx = x.transpose() * x + (xsum * xsum.transpose()) / nu_eta;
  const Eigen::VectorXd e = state.eta.col(k);
  const Eigen::VectorXd xme = x.transpose() * e + xsum * (e.sum() / nu_eta);
  Eigen::MatrixXd prec = inv_psi * (xmx + Eigen::MatrixXd::Identity(q, q));
  return gaussian_from_precision(prec, inv_psi * xme, policy);
}

GaussianConditional theta_collapsed_conditional(const FFAState& state, const SparseFunctionalDataset& data,
                                                Eigen::Index k, double nu_eta, const JitterPolicy& policy) {
  if (!state.theta || !state.covariates) throw DimensionError("theta update needs covariates");
  if (k < 0 || k >= state.num_factors()) throw DomainError("theta update: factor index out of range");
  // With eta_k integrated out: A = D + P is the eta_k precision without the
  // theta term, P = (I + 1 1^T / nu) / psi its prior part. Then
  //   precision = X^T (P - P A^{-1} P) X + I / psi,  linear = X^T P A^{-1} b,
  // and P - P A^{-1} P = P A^{-1} D avoids cancelling along 1 when nu is small.
  FFAState bare = state;
  bare.theta.reset();
  const EtaConditional a = eta_conditional(bare, data, k, nu_eta);
  const Eigen::MatrixXd& x = *state.covariates;
  const double inv_psi = 1.0 / state.psi[k];
  auto apply_p = [&](Eigen::MatrixXd v) {
    const Eigen::RowVectorXd sums = v.colwise().sum();
    v.rowwise() += sums / nu_eta;
    return Eigen::MatrixXd(inv_psi * v);
  };
  const Eigen::VectorXd d = a.diag.array() - inv_psi;
  Eigen::MatrixXd dx = d.asDiagonal() * x;
  for (Eigen::Index j = 0; j < dx.cols(); ++j) dx.col(j) = a.solve(dx.col(j));
  Eigen::MatrixXd prec = x.transpose() * apply_p(dx);
  prec = 0.5 * (prec + prec.transpose()).eval();
  prec.diagonal().array() += inv_psi;
  const Eigen::VectorXd lin = x.transpose() * apply_p(a.mean);
  return gaussian_from_precision(prec, lin, policy);
}

void gibbs_update_mu(FFAState& state, const SparseFunctionalDataset& data, const PriorConfig& prior, Rng& rng) {
  const Eigen::MatrixXd p = kernel_precision(data.grid(), state.mu_kernel, prior.jitter);
  state.mu = mu_conditional(state, data, p, prior.jitter).draw(rng);
}

void gibbs_update_lambda_k(FFAState& state, const SparseFunctionalDataset& data, Eigen::Index k,
                           const PriorConfig& prior, Rng& rng) {
  if (k < 0 || k >= state.num_factors()) throw DomainError("lambda update: factor index out of range");
  const Eigen::MatrixXd p =
      kernel_precision(data.grid(), state.loading_kernels[static_cast<std::size_t>(k)], prior.jitter);
  state.lambda.row(k) = lambda_conditional(state, data, k, prior.nu_lambda, p, prior.jitter).draw(rng).transpose();
}

void gibbs_update_eta_k(FFAState& state, const SparseFunctionalDataset& data, Eigen::Index k, double nu_eta,
                        Rng& rng) {
  state.eta.col(k) = eta_conditional(state, data, k, nu_eta).draw(rng);
}

void gibbs_update_psi_k(FFAState& state, Eigen::Index k, const PriorConfig& prior, Rng& rng) {
  state.psi[k] = psi_conditional(state, k, prior).draw_variance(rng);
}

void gibbs_update_sigma2(FFAState& state, const SparseFunctionalDataset& data, const PriorConfig& prior, Rng& rng) {
  state.sigma_sq = sigma_conditional(state, data, prior).draw_variance(rng);
}

void gibbs_update_theta(FFAState& state, double nu_eta, Rng& rng, const JitterPolicy& policy) {
  if (!state.theta) throw DimensionError("theta update needs covariates");
  for (Eigen::Index k = 0; k < state.num_factors(); ++k)
    state.theta->row(k) = theta_conditional(state, k, nu_eta, policy).draw(rng).transpose();
}

namespace {

// z ~ N(0, 1) conditioned on z > a.
double standard_lower_truncated(double a, Rng& rng) {
  if (a < 0.0) {
    for (;;) {
      const double z = rng.normal();
      if (z > a) return z;
    }
  }
  const double rate = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double z = a + rng.exponential(rate);
    const double d = z - rate;
    if (std::log(rng.uniform()) < -0.5 * d * d) return z;
  }
}

}  // namespace

double sample_truncated_normal(double mean, double sd, TruncationSide side, Rng& rng) {
  if (!(sd > 0.0)) throw DomainError("truncated normal: sd must be positive");
  if (side == TruncationSide::positive) return mean + sd * standard_lower_truncated(-mean / sd, rng);
  return -(-mean + sd * standard_lower_truncated(mean / sd, rng));
}

std::vector<Eigen::VectorXd> gibbs_update_latent_z(const FFAState& state, const SparseFunctionalDataset& binary_data,
                                                   Rng& rng) {
  if (binary_data.kind() != DataKind::binary) throw KindMismatch("latent probit update needs binary data");
  std::vector<Eigen::VectorXd> z(static_cast<std::size_t>(binary_data.num_subjects()));
  for (Eigen::Index i = 0; i < binary_data.num_subjects(); ++i) {
    const Subject& s = binary_data.subject(i);
    const Eigen::VectorXd f = fitted_values(state, binary_data, i);
    Eigen::VectorXd& zi = z[static_cast<std::size_t>(i)];
    zi.resize(f.size());
    for (Eigen::Index j = 0; j < f.size(); ++j)
      zi[j] = sample_truncated_normal(f[j], 1.0, s.values[j] > 0.5 ? TruncationSide::positive
                                                                   : TruncationSide::negative, rng);
  }
  return z;
}

std::string to_string(ChainKind kind) {
  switch (kind) {
    case ChainKind::ffa: return "ffa";
    case ChainKind::gffa_binary: return "gffa_binary";
    case ChainKind::regression: return "regression";
  }
  return "ffa";
}

ChainKind parse_chain_kind(const std::string& s) {
  if (s == "ffa") return ChainKind::ffa;
  if (s == "gffa_binary") return ChainKind::gffa_binary;
  if (s == "regression") return ChainKind::regression;
  throw ConfigError("unknown chain kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// ChainRunner

namespace {

void check_chain_inputs(const SparseFunctionalDataset& data, ChainKind kind, Eigen::Index k,
                        const std::optional<Eigen::MatrixXd>& covariates) {
  if (data.num_subjects() < 1) throw EmptyDataset("chain needs at least one subject");
  if (data.grid().size() < 2) throw InvalidGrid("chain needs a grid with at least two points");
  if (k < 1) throw ConfigError("number of factors must be >= 1");
  if (kind == ChainKind::gffa_binary) {
    if (data.kind() != DataKind::binary) throw KindMismatch("binary chain needs binary data");
  } else if (data.kind() != DataKind::continuous) {
    throw KindMismatch("continuous chain needs continuous data; use the binary chain for 0/1 data");
  }
  if (kind == ChainKind::regression) {
    if (!covariates) throw DimensionError("regression chain needs covariates");
    if (covariates->rows() != data.num_subjects()) throw DimensionError("covariates must have one row per subject");
    if (covariates->cols() < 1) throw DimensionError("covariates need at least one column");
    if (!covariates->allFinite()) throw ParseError("covariates contain non-finite values");
  }
}

std::string factor_key(Eigen::Index k, const char* what) {
  return "lambda" + std::to_string(k + 1) + "." + what;
}

}  // namespace

ChainRunner::ChainRunner(SparseFunctionalDataset data, PriorConfig prior, ChainConfig chain, Eigen::Index num_factors,
                         ChainKind kind, std::optional<Eigen::MatrixXd> covariates)
    : ChainRunner(ResumeTag{}, std::move(data), std::move(prior), chain, num_factors, kind, std::move(covariates)) {
  initialize();
}

ChainRunner::ChainRunner(ResumeTag, SparseFunctionalDataset data, PriorConfig prior, ChainConfig chain,
                         Eigen::Index num_factors, ChainKind kind, std::optional<Eigen::MatrixXd> covariates)
    : data_(std::move(data)),
      prior_(std::move(prior)),
      chain_(chain),
      kind_(kind),
      num_factors_(num_factors),
      rng_(chain.seed),
      mu_adapters_(chain),
      loading_adapters_(static_cast<std::size_t>(std::max<Eigen::Index>(num_factors, 0)), HyperAdapters(chain)) {
  prior_.validate();
  chain_.validate();
  check_chain_inputs(data_, kind_, num_factors_, covariates);
  working_ = data_;
  if (covariates) state_.covariates = std::move(covariates);
  draws_.chain_kind = kind_;
  draws_.num_factors = num_factors_;
}

void ChainRunner::initialize() {
  const Grid& grid = data_.grid();
  const Eigen::Index n = data_.num_subjects();
  const Eigen::Index k_count = num_factors_;

  state_.mu_kernel = sample_hyperprior(prior_.mu_hyper, rng_);
  state_.mu = sample_gp(grid, state_.mu_kernel, rng_, prior_.jitter);
  state_.loading_kernels.clear();
  for (Eigen::Index k = 0; k < k_count; ++k) state_.loading_kernels.push_back(sample_hyperprior(prior_.loading_hyper, rng_));
  state_.lambda = sample_nemo_joint(state_.loading_kernels, grid, prior_.nu_lambda, 1, rng_, prior_.jitter).lambda;
  state_.psi.resize(k_count);
  for (Eigen::Index k = 0; k < k_count; ++k) state_.psi[k] = 1.0 / rng_.gamma(prior_.alpha_eta, prior_.beta_eta);
  if (kind_ == ChainKind::regression) {
    const Eigen::Index q = state_.covariates->cols();
    Eigen::MatrixXd theta(k_count, q);
    for (Eigen::Index k = 0; k < k_count; ++k)
      for (Eigen::Index c = 0; c < q; ++c) theta(k, c) = std::sqrt(state_.psi[k]) * rng_.normal();
    state_.theta = theta;
  }
  state_.eta.resize(n, k_count);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    state_.eta.col(k) = sample_eta_prior(n, prior_.nu_eta, state_.psi[k], rng_);
    if (state_.theta) state_.eta.col(k) += (*state_.covariates) * state_.theta->row(k).transpose();
  }

  if (kind_ == ChainKind::gffa_binary) {
    state_.sigma_sq = 1.0;
  } else {
    state_.sigma_sq = 1.0 / rng_.gamma(prior_.alpha_sigma, prior_.beta_sigma);
    double sum = 0.0, sum_sq = 0.0;
    for (const Subject& s : data_.subjects()) {
      sum += s.values.sum();
      sum_sq += s.values.squaredNorm();
    }
    const double count = static_cast<double>(data_.total_observations());
    if (count > 1.0) {
      const double var = (sum_sq - sum * sum / count) / (count - 1.0);
      if (var > 0.0 && state_.sigma_sq > 100.0 * var) state_.sigma_sq = var;
    }
  }

  refresh_precisions();
  if (kind_ == ChainKind::gffa_binary)
    working_ = data_.with_values(gibbs_update_latent_z(state_, data_, rng_), DataKind::continuous);

  if (chain_.record_pointwise)
    draws_.pointwise_log_likelihood.resize(chain_.num_saved(), data_.total_observations());
  draws_.states.reserve(static_cast<std::size_t>(chain_.num_saved()));
  if (chain_.burn_in == 0) {
    mu_adapters_.freeze();
    for (auto& a : loading_adapters_) a.freeze();
  }
  record_acceptance();
}

void ChainRunner::refresh_precisions() {
  mu_precision_ = kernel_precision(data_.grid(), state_.mu_kernel, prior_.jitter);
  loading_precisions_.clear();
  for (const auto& p : state_.loading_kernels)
    loading_precisions_.push_back(kernel_precision(data_.grid(), p, prior_.jitter));
}

double ChainRunner::current_log_likelihood() const {
  return kind_ == ChainKind::gffa_binary ? probit_log_likelihood(state_, data_) : log_likelihood(state_, data_);
}

void ChainRunner::set_state(FFAState state) {
  if (state.num_factors() != num_factors_) throw DimensionError("set_state: wrong number of factors");
  if (kind_ == ChainKind::regression) {
    state.covariates = state_.covariates;
    if (!state.theta) throw DimensionError("set_state: regression chains need theta");
  } else {
    state.covariates.reset();
    state.theta.reset();
  }
  if (kind_ == ChainKind::gffa_binary) state.sigma_sq = 1.0;
  state.validate(data_.num_subjects(), data_.grid().size());
  state_ = std::move(state);
  refresh_precisions();
}

void ChainRunner::set_response(const std::vector<Eigen::VectorXd>& values) {
  if (kind_ == ChainKind::gffa_binary) throw KindMismatch("set_response is for continuous chains");
  data_ = data_.with_values(values, DataKind::continuous);
  working_ = data_;
}

void ChainRunner::sweep() {
  const Grid& grid = data_.grid();
  const JitterPolicy& jit = prior_.jitter;
  const char* param = "";
  try {
    if (kind_ == ChainKind::gffa_binary) {
      param = "z";
      working_ = data_.with_values(gibbs_update_latent_z(state_, data_, rng_), DataKind::continuous);
    }

    param = "mu";
    state_.mu = mu_conditional(state_, working_, mu_precision_, jit).draw(rng_);

    param = "mu hyperparameters";
    {
      const Eigen::VectorXd& f = state_.mu;
      auto density = [&](const SEKernelParams& p) { return gp_log_density(f, se_cov_matrix(grid, p, jit), jit); };
      const SEKernelParams before = state_.mu_kernel;
      mh_update_kernel_hyper(state_.mu_kernel, density, prior_.mu_hyper, mu_adapters_, chain_.proposal, rng_);
      if (!(before == state_.mu_kernel)) mu_precision_ = kernel_precision(grid, state_.mu_kernel, jit);
    }

    for (Eigen::Index k = 0; k < num_factors_; ++k) {
      const auto ks = static_cast<std::size_t>(k);
      param = "lambda";
      state_.lambda.row(k) =
          lambda_conditional(state_, working_, k, prior_.nu_lambda, loading_precisions_[ks], jit).draw(rng_).transpose();

      param = "lambda hyperparameters";
      {
        const Eigen::VectorXd f = state_.lambda.row(k).transpose();
        const Eigen::MatrixXd others = rows_except(state_.lambda, k);
        auto density = [&](const SEKernelParams& p) {
          return gp_log_density(f, nemo_conditional_cov(se_cov_matrix(grid, p, jit), others, grid, prior_.nu_lambda),
                                jit);
        };
        const SEKernelParams before = state_.loading_kernels[ks];
        mh_update_kernel_hyper(state_.loading_kernels[ks], density, prior_.loading_hyper, loading_adapters_[ks],
                               chain_.proposal, rng_);
        if (!(before == state_.loading_kernels[ks]))
          loading_precisions_[ks] = kernel_precision(grid, state_.loading_kernels[ks], jit);
      }

      if (kind_ == ChainKind::regression) {
        // blocked (theta_k, eta_k): the sum-to-zero prior ties theta_k to the
        // sum of eta_k so tightly that alternating them barely moves theta_k
        param = "theta";
        state_.theta->row(k) =
            theta_collapsed_conditional(state_, working_, k, prior_.nu_eta, jit).draw(rng_).transpose();
      }
      param = "eta";
      state_.eta.col(k) = eta_conditional(state_, working_, k, prior_.nu_eta).draw(rng_);
      param = "psi";
      state_.psi[k] = psi_conditional(state_, k, prior_).draw_variance(rng_);
    }

    if (kind_ == ChainKind::regression) {
      param = "theta";
      gibbs_update_theta(state_, prior_.nu_eta, rng_, jit);
    }
    if (kind_ != ChainKind::gffa_binary) {
      param = "sigma_sq";
      state_.sigma_sq = sigma_conditional(state_, working_, prior_).draw_variance(rng_);
    }
  } catch (const NumericalError& e) {
    throw NumericalError("iteration " + std::to_string(iteration_) + ", parameter " + param + ": " + e.what());
  }
}

void ChainRunner::record_acceptance() {
  draws_.acceptance["mu.len_sq"] = mu_adapters_.len_stats;
  draws_.acceptance["mu.tau_sq"] = mu_adapters_.tau_stats;
  for (std::size_t k = 0; k < loading_adapters_.size(); ++k) {
    draws_.acceptance[factor_key(static_cast<Eigen::Index>(k), "len_sq")] = loading_adapters_[k].len_stats;
    draws_.acceptance[factor_key(static_cast<Eigen::Index>(k), "tau_sq")] = loading_adapters_[k].tau_stats;
  }
}

void ChainRunner::step() {
  const int i = iteration_;
  sweep();
  ++iteration_;
  if (iteration_ == chain_.burn_in) {
    mu_adapters_.freeze();
    for (auto& a : loading_adapters_) a.freeze();
  }
  const double ll = current_log_likelihood();
  draws_.log_likelihood_trace.push_back(ll);
  if (i >= chain_.burn_in && (i - chain_.burn_in + 1) % chain_.thin == 0) {
    const auto row = static_cast<Eigen::Index>(draws_.states.size());
    draws_.states.push_back(state_);
    draws_.state_log_likelihood.push_back(ll);
    if (chain_.record_pointwise && row < draws_.pointwise_log_likelihood.rows())
      draws_.pointwise_log_likelihood.row(row) = pointwise_log_likelihood(state_, data_).transpose();
  }
  record_acceptance();
}

void ChainRunner::run_iterations(int count) {
  for (int c = 0; c < count && !done(); ++c) step();
}

void ChainRunner::run() {
  while (!done()) step();
}

namespace {
constexpr int kCheckpointVersion = 1;
}

nlohmann::json ChainRunner::checkpoint() const {
  json j;
  j["format"] = "nemo-ffa-checkpoint";
  j["version"] = kCheckpointVersion;
  j["chain_kind"] = to_string(kind_);
  j["num_factors"] = num_factors_;
  j["num_subjects"] = data_.num_subjects();
  j["total_observations"] = data_.total_observations();
  j["prior"] = prior_;
  j["chain"] = chain_;
  j["iteration"] = iteration_;
  j["state"] = state_;
  j["rng"] = rng_.serialize();
  j["mu_adapters"] = mu_adapters_;
  j["loading_adapters"] = loading_adapters_;
  if (kind_ == ChainKind::gffa_binary) {
    json z = json::array();
    for (const Subject& s : working_.subjects()) z.push_back(vector_to_json(s.values));
    j["latent_z"] = std::move(z);
  }
  json d;
  json states = json::array();
  for (const auto& s : draws_.states) states.push_back(s);
  d["states"] = std::move(states);
  d["state_log_likelihood"] = draws_.state_log_likelihood;
  d["log_likelihood_trace"] = draws_.log_likelihood_trace;
  if (chain_.record_pointwise) {
    const auto saved = static_cast<Eigen::Index>(draws_.states.size());
    d["pointwise_log_likelihood"] = matrix_to_json(draws_.pointwise_log_likelihood.topRows(saved));
  }
  j["draws"] = std::move(d);
  return j;
}

ChainRunner ChainRunner::resume(const nlohmann::json& cp, SparseFunctionalDataset data,
                                std::optional<Eigen::MatrixXd> covariates) {
  try {
    if (cp.at("format").get<std::string>() != "nemo-ffa-checkpoint") throw ParseError("not a checkpoint file");
    if (cp.at("version").get<int>() != kCheckpointVersion) throw ParseError("unsupported checkpoint version");
    if (cp.at("num_subjects").get<Eigen::Index>() != data.num_subjects() ||
        cp.at("total_observations").get<Eigen::Index>() != data.total_observations())
      throw DimensionError("checkpoint does not belong to this dataset");
    ChainRunner r(ResumeTag{}, std::move(data), cp.at("prior").get<PriorConfig>(), cp.at("chain").get<ChainConfig>(),
                  cp.at("num_factors").get<Eigen::Index>(), parse_chain_kind(cp.at("chain_kind").get<std::string>()),
                  std::move(covariates));
    r.iteration_ = cp.at("iteration").get<int>();
    const auto cov = r.state_.covariates;
    r.state_ = cp.at("state").get<FFAState>();
    if (cov) r.state_.covariates = cov;
    r.state_.validate(r.data_.num_subjects(), r.data_.grid().size());
    r.rng_ = Rng::deserialize(cp.at("rng").get<std::string>());
    r.mu_adapters_ = cp.at("mu_adapters").get<HyperAdapters>();
    r.loading_adapters_ = cp.at("loading_adapters").get<std::vector<HyperAdapters>>();
    if (r.kind_ == ChainKind::gffa_binary) {
      std::vector<Eigen::VectorXd> z;
      for (const auto& v : cp.at("latent_z")) z.push_back(vector_from_json(v));
      r.working_ = r.data_.with_values(z, DataKind::continuous);
    }
    r.refresh_precisions();
    const json& d = cp.at("draws");
    for (const auto& s : d.at("states")) r.draws_.states.push_back(s.get<FFAState>());
    r.draws_.state_log_likelihood = d.at("state_log_likelihood").get<std::vector<double>>();
    r.draws_.log_likelihood_trace = d.at("log_likelihood_trace").get<std::vector<double>>();
    if (r.chain_.record_pointwise) {
      r.draws_.pointwise_log_likelihood.resize(r.chain_.num_saved(), r.data_.total_observations());
      const Eigen::MatrixXd saved = matrix_from_json(d.at("pointwise_log_likelihood"));
      if (saved.rows() > 0) r.draws_.pointwise_log_likelihood.topRows(saved.rows()) = saved;
    }
    r.record_acceptance();
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  }
}

PosteriorDraws run_ffa_chain(const SparseFunctionalDataset& data, const PriorConfig& prior, const ChainConfig& chain,
                             Eigen::Index num_factors) {
  ChainRunner r(data, prior, chain, num_factors, ChainKind::ffa);
  r.run();
  return r.take_draws();
}

PosteriorDraws run_gffa_chain(const SparseFunctionalDataset& data, const PriorConfig& prior,
                              const ChainConfig& chain, Eigen::Index num_factors) {
  ChainRunner r(data, prior, chain, num_factors, ChainKind::gffa_binary);
  r.run();
  return r.take_draws();
}

PosteriorDraws run_regression_chain(const SparseFunctionalDataset& data, const Eigen::MatrixXd& covariates,
                                    const PriorConfig& prior, const ChainConfig& chain, Eigen::Index num_factors) {
  ChainRunner r(data, prior, chain, num_factors, ChainKind::regression, covariates);
  r.run();
  return r.take_draws();
}

}  // namespace nemo
