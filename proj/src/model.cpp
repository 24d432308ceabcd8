#include "nemo/model.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <numbers>
#include <numeric>

#include "nemo/errors.hpp"
#include "nemo/nemo_process.hpp"

namespace nemo {

std::string to_string(DataKind kind) { return kind == DataKind::binary ? "binary" : "continuous"; }

DataKind parse_data_kind(const std::string& s) {
  if (s == "continuous") return DataKind::continuous;
  if (s == "binary") return DataKind::binary;
  throw ConfigError("unknown data kind '" + s + "' (expected continuous or binary)");
}

SparseFunctionalDataset::SparseFunctionalDataset(Grid grid, std::vector<Subject> subjects, DataKind kind)
    : grid_(std::move(grid)), subjects_(std::move(subjects)), kind_(kind) {
  for (std::size_t i = 0; i < subjects_.size(); ++i) {
    const auto& s = subjects_[i];
    if (s.values.size() != s.map.size())
      throw DimensionError("subject " + s.id + ": values length differs from index map length");
    for (Eigen::Index j = 0; j < s.map.size(); ++j) {
      if (s.map[j] >= grid_.size()) throw InvalidGrid("subject " + s.id + ": index outside grid");
      const double v = s.values[j];
      if (!std::isfinite(v)) throw ParseError("subject " + s.id + ": non-finite value");
      if (kind_ == DataKind::binary && v != 0.0 && v != 1.0)
        throw ParseError("subject " + s.id + ": binary value must be 0 or 1");
    }
    total_obs_ += s.map.size();
  }
}

Eigen::VectorXd SparseFunctionalDataset::observation_counts() const {
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(grid_.size());
  for (const auto& s : subjects_)
    for (auto idx : s.map.indices()) counts[idx] += 1.0;
  return counts;
}

SparseFunctionalDataset SparseFunctionalDataset::with_values(const std::vector<Eigen::VectorXd>& values,
                                                             DataKind kind) const {
  if (values.size() != subjects_.size()) throw DimensionError("with_values: subject count mismatch");
  std::vector<Subject> subjects = subjects_;
  for (std::size_t i = 0; i < subjects.size(); ++i) subjects[i].values = values[i];
  return SparseFunctionalDataset(grid_, std::move(subjects), kind);
}

void FFAState::validate(Eigen::Index n, Eigen::Index m) const {
  const Eigen::Index k = lambda.rows();
  if (mu.size() != m) throw DimensionError("state: mu length != grid size");
  if (k > 0 && lambda.cols() != m) throw DimensionError("state: lambda columns != grid size");
  if (eta.rows() != n || eta.cols() != k) throw DimensionError("state: eta must be n x K");
  if (psi.size() != k) throw DimensionError("state: psi must have K entries");
  if (static_cast<Eigen::Index>(loading_kernels.size()) != k) throw DimensionError("state: need K loading kernels");
  if (!(sigma_sq > 0.0)) throw DomainError("state: sigma_sq must be positive");
  if (k > 0 && !(psi.array() > 0.0).all()) throw DomainError("state: psi must be positive");
  if (theta.has_value() != covariates.has_value()) throw DimensionError("state: theta and covariates go together");
  if (theta) {
    if (theta->rows() != k || theta->cols() != covariates->cols()) throw DimensionError("state: theta must be K x q");
    if (covariates->rows() != n) throw DimensionError("state: covariates must be n x q");
  }
}

Eigen::MatrixXd FFAState::xi() const {
  if (!theta) return eta;
  return eta - (*covariates) * theta->transpose();
}

void PriorConfig::validate() const {
  if (!(nu_lambda > 0.0)) throw ConfigError("nu_lambda must be positive");
  if (!(nu_eta > 0.0)) throw ConfigError("nu_eta must be positive");
  if (k_max < 1) throw ConfigError("k_max must be >= 1");
  if (!(alpha_sigma > 0.0 && beta_sigma > 0.0 && alpha_eta > 0.0 && beta_eta > 0.0))
    throw ConfigError("gamma hyperprior constants must be positive");
  mu_hyper.validate();
  loading_hyper.validate();
  if (!(jitter.initial > 0.0) || !(jitter.max >= jitter.initial) || !(jitter.factor > 1.0))
    throw ConfigError("jitter policy needs 0 < initial <= max and factor > 1");
}

Eigen::MatrixXd eta_prior_covariance(Eigen::Index n, double nu_eta, double psi) {
  if (n < 1) throw DomainError("eta_prior_covariance: n must be >= 1");
  Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(n, n);
  cov.array() -= 1.0 / (nu_eta + static_cast<double>(n));
  return psi * cov;
}

Eigen::VectorXd sample_eta_prior(Eigen::Index n, double nu_eta, double psi, Rng& rng) {
  // Symmetric square root of I - n/(nu+n) P with P the averaging projection.
  const Eigen::VectorXd z = rng.normal_vector(n);
  const double shrink = 1.0 - std::sqrt(nu_eta / (nu_eta + static_cast<double>(n)));
  return std::sqrt(psi) * (z.array() - shrink * z.mean()).matrix();
}

void SimulationConfig::validate() const {
  if (n < 1 || m < 2 || k < 1) throw ConfigError("simulation needs n >= 1, m >= 2, K >= 1");
  if (!(domain_hi > domain_lo)) throw ConfigError("simulation domain must have positive length");
  if (!(sparsity >= 0.0) || !(sparsity < 1.0)) throw ConfigError("sparsity must lie in [0, 1)");
  if (!(sigma_sq > 0.0)) throw ConfigError("sigma_sq must be positive");
  if (nemo_sweeps < 1) throw ConfigError("nemo_sweeps must be >= 1");
  if (q < 1) throw ConfigError("q must be >= 1");
  mu_kernel.validate();
  loading_kernel.validate();
}

SimulationConfig binary_simulation_defaults() {
  SimulationConfig cfg;
  cfg.mu_kernel = {10.0, 0.4};
  cfg.loading_kernel = {10.0, 0.4};
  return cfg;
}

FFAState draw_truth(const SimulationConfig& cfg, const Grid& grid, Rng& rng) {
  cfg.validate();
  FFAState s;
  s.mu_kernel = cfg.mu_kernel;
  s.loading_kernels.assign(static_cast<std::size_t>(cfg.k), cfg.loading_kernel);
  s.mu = sample_gp(grid, cfg.mu_kernel, rng);
  s.lambda = sample_nemo_joint(s.loading_kernels, grid, cfg.nu_lambda, cfg.nemo_sweeps, rng).lambda;
  s.psi = Eigen::VectorXd::Ones(cfg.k);
  s.eta.resize(cfg.n, cfg.k);
  for (Eigen::Index k = 0; k < cfg.k; ++k) s.eta.col(k) = sample_eta_prior(cfg.n, cfg.nu_eta, 1.0, rng);
  s.sigma_sq = cfg.sigma_sq;
  return s;
}

Eigen::MatrixXd latent_curves(const FFAState& state) {
  Eigen::MatrixXd f = state.eta * state.lambda;  // n x m
  f.rowwise() += state.mu.transpose();
  return f;
}

SparseFunctionalDataset thin_observations(const Grid& grid, const Eigen::MatrixXd& full_values, double fraction,
                                          DataKind kind, Rng& rng) {
  if (!(fraction >= 0.0) || !(fraction < 1.0)) throw ConfigError("sparsity must lie in [0, 1)");
  const Eigen::Index m = grid.size();
  if (full_values.cols() != m) throw DimensionError("thin_observations: values must have m columns");
  const auto keep_min = std::min<Eigen::Index>(2, m);
  const Eigen::Index drop = std::min<Eigen::Index>(static_cast<Eigen::Index>(std::lround(fraction * static_cast<double>(m))),
                                                   m - keep_min);
  std::vector<Subject> subjects;
  subjects.reserve(static_cast<std::size_t>(full_values.rows()));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < full_values.rows(); ++i) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    // Partial Fisher-Yates: the first `drop` entries are the removed points.
    for (Eigen::Index j = 0; j < drop; ++j) {
      const auto r = j + static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(m - j)));
      std::swap(order[static_cast<std::size_t>(j)], order[static_cast<std::size_t>(r)]);
    }
    std::vector<Eigen::Index> kept(order.begin() + drop, order.end());
    std::sort(kept.begin(), kept.end());
    Eigen::VectorXd values(static_cast<Eigen::Index>(kept.size()));
    for (std::size_t j = 0; j < kept.size(); ++j) values[static_cast<Eigen::Index>(j)] = full_values(i, kept[j]);
    char id[32];
    std::snprintf(id, sizeof id, "s%04ld", static_cast<long>(i));
    subjects.push_back({id, SubjectIndexMap(std::move(kept), m), std::move(values)});
  }
  return SparseFunctionalDataset(grid, std::move(subjects), kind);
}

namespace {

Eigen::MatrixXd add_noise(const Eigen::MatrixXd& curves, double sigma_sq, Rng& rng) {
  Eigen::MatrixXd y = curves;
  const double sd = std::sqrt(sigma_sq);
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (Eigen::Index l = 0; l < y.cols(); ++l) y(i, l) += sd * rng.normal();
  return y;
}

}  // namespace

Eigen::MatrixXd probit_responses(const Eigen::MatrixXd& curves, Rng& rng) {
  Eigen::MatrixXd y(curves.rows(), curves.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (Eigen::Index l = 0; l < y.cols(); ++l) y(i, l) = rng.bernoulli(normal_cdf(curves(i, l))) ? 1.0 : 0.0;
  return y;
}

SimulatedData simulate_ffa(const SimulationConfig& cfg, Rng& rng) {
  cfg.validate();
  const Grid grid = Grid::uniform(cfg.domain_lo, cfg.domain_hi, cfg.m);
  FFAState truth = draw_truth(cfg, grid, rng);
  Eigen::MatrixXd curves = latent_curves(truth);
  Eigen::MatrixXd y = add_noise(curves, cfg.sigma_sq, rng);
  auto data = thin_observations(grid, y, cfg.sparsity, DataKind::continuous, rng);
  return {std::move(data), std::move(truth), std::move(curves)};
}

SimulatedData simulate_gffa_binary(const SimulationConfig& cfg, Rng& rng) {
  cfg.validate();
  const Grid grid = Grid::uniform(cfg.domain_lo, cfg.domain_hi, cfg.m);
  FFAState truth = draw_truth(cfg, grid, rng);
  truth.sigma_sq = 1.0;
  Eigen::MatrixXd curves = latent_curves(truth);
  Eigen::MatrixXd y = probit_responses(curves, rng);
  auto data = thin_observations(grid, y, cfg.sparsity, DataKind::binary, rng);
  return {std::move(data), std::move(truth), std::move(curves)};
}

SimulatedData simulate_latent_regression(const SimulationConfig& cfg, Rng& rng) {
  cfg.validate();
  const Grid grid = Grid::uniform(cfg.domain_lo, cfg.domain_hi, cfg.m);
  FFAState truth = draw_truth(cfg, grid, rng);
  Eigen::MatrixXd x(cfg.n, cfg.q);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  Eigen::MatrixXd theta(cfg.k, cfg.q);
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta.data()[i] = rng.normal();
  // draw_truth's eta plays the role of xi.
  truth.eta += x * theta.transpose();
  truth.theta = theta;
  truth.covariates = x;
  Eigen::MatrixXd curves = latent_curves(truth);
  Eigen::MatrixXd y = add_noise(curves, cfg.sigma_sq, rng);
  auto data = thin_observations(grid, y, cfg.sparsity, DataKind::continuous, rng);
  return {std::move(data), std::move(truth), std::move(curves)};
}

Eigen::VectorXd fitted_values(const FFAState& state, Eigen::Index subject) {
  return state.mu + state.lambda.transpose() * state.eta.row(subject).transpose();
}

Eigen::VectorXd fitted_values(const FFAState& state, const SparseFunctionalDataset& data, Eigen::Index subject) {
  const auto& s = data.subject(subject);
  Eigen::VectorXd out(s.map.size());
  for (Eigen::Index j = 0; j < s.map.size(); ++j) {
    const Eigen::Index l = s.map[j];
    out[j] = state.mu[l] + state.eta.row(subject).dot(state.lambda.col(l));
  }
  return out;
}

double log_likelihood(const FFAState& state, const SparseFunctionalDataset& data) {
  if (data.kind() != DataKind::continuous)
    throw KindMismatch("Gaussian log-likelihood requested for binary data; binary data use probit augmentation");
  state.validate(data.num_subjects(), data.grid().size());
  const double log_norm = -0.5 * std::log(2.0 * std::numbers::pi * state.sigma_sq);
  double total = 0.0;
  for (Eigen::Index i = 0; i < data.num_subjects(); ++i) {
    const Eigen::VectorXd r = data.subject(i).values - fitted_values(state, data, i);
    total += static_cast<double>(r.size()) * log_norm - 0.5 * r.squaredNorm() / state.sigma_sq;
  }
  return total;
}

double probit_log_likelihood(const FFAState& state, const SparseFunctionalDataset& data) {
  if (data.kind() != DataKind::binary) throw KindMismatch("probit log-likelihood needs binary data");
  return pointwise_log_likelihood(state, data).sum();
}

Eigen::VectorXd pointwise_log_likelihood(const FFAState& state, const SparseFunctionalDataset& data) {
  Eigen::VectorXd out(data.total_observations());
  const double log_norm = -0.5 * std::log(2.0 * std::numbers::pi * state.sigma_sq);
  Eigen::Index o = 0;
  for (Eigen::Index i = 0; i < data.num_subjects(); ++i) {
    const Eigen::VectorXd f = fitted_values(state, data, i);
    const auto& y = data.subject(i).values;
    for (Eigen::Index j = 0; j < f.size(); ++j, ++o) {
      if (data.kind() == DataKind::binary) {
        out[o] = log_normal_cdf(y[j] == 1.0 ? f[j] : -f[j]);
      } else {
        const double r = y[j] - f[j];
        out[o] = log_norm - 0.5 * r * r / state.sigma_sq;
      }
    }
  }
  return out;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double log_normal_cdf(double x) {
  if (x > -30.0) return std::log(normal_cdf(x));
  // Asymptotic Mills-ratio expansion for the far lower tail.
  const double x2 = x * x;
  return -0.5 * x2 - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(-x) +
         std::log1p(-1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2));
}

Eigen::VectorXd normal_cdf(const Eigen::VectorXd& x) {
  return x.unaryExpr([](double v) { return normal_cdf(v); });
}

}  // namespace nemo
