#pragma once

// Frozen toy instance and dense joint-Gaussian oracles for the Gibbs full
// conditionals, shared by the unit tests and the acceptance binary.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nemo/model.hpp"
#include "nemo/nemo_process.hpp"
#include "oracles.hpp"

namespace toy {

using namespace nemo;

struct Toy {
  SparseFunctionalDataset data;
  FFAState state;
};

// n = 3 subjects on a 4-point irregular grid, K = 2, all hyperparameters fixed.
inline Toy make_toy(std::uint64_t seed, Eigen::Index q = 0) {
  Rng rng(seed);
  Grid g(std::vector<double>{0.0, 0.3, 0.55, 1.0});
  std::vector<Subject> subs{{"a", SubjectIndexMap({0, 1, 3}, 4), rng.normal_vector(3)},
                            {"b", SubjectIndexMap({1, 2}, 4), rng.normal_vector(2)},
                            {"c", SubjectIndexMap({0, 1, 2, 3}, 4), rng.normal_vector(4)}};
  Toy t{SparseFunctionalDataset(g, subs, DataKind::continuous), {}};
  FFAState& s = t.state;
  s.mu = rng.normal_vector(4);
  s.lambda.resize(2, 4);
  s.lambda.row(0) = rng.normal_vector(4).transpose();
  s.lambda.row(1) = rng.normal_vector(4).transpose();
  s.eta.resize(3, 2);
  for (Eigen::Index i = 0; i < 6; ++i) s.eta.data()[i] = rng.normal();
  s.psi = Eigen::Vector2d(0.8, 1.7);
  s.sigma_sq = 0.6;
  s.mu_kernel = {1.3, 0.4};
  s.loading_kernels = {{0.9, 0.2}, {1.4, 0.6}};
  if (q > 0) {
    Eigen::MatrixXd x(3, q), th(2, q);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < th.size(); ++i) th.data()[i] = rng.normal();
    s.covariates = x;
    s.theta = th;
  }
  return t;
}

inline Eigen::MatrixXd selection(const Subject& s, Eigen::Index m) {
  Eigen::MatrixXd o = Eigen::MatrixXd::Zero(s.map.size(), m);
  for (Eigen::Index j = 0; j < s.map.size(); ++j) o(j, s.map[j]) = 1.0;
  return o;
}

inline Eigen::VectorXd stacked_y(const SparseFunctionalDataset& d) {
  Eigen::VectorXd y(d.total_observations());
  Eigen::Index o = 0;
  for (const auto& s : d.subjects()) {
    y.segment(o, s.values.size()) = s.values;
    o += s.values.size();
  }
  return y;
}

inline Eigen::MatrixXd kernel_with_jitter(const Grid& g, const SEKernelParams& p) {
  return oracle::se_matrix(g.points(), p.tau_sq, p.len_sq, 1e-8 * p.tau_sq);
}


// Posterior of mu under the dense joint Gaussian.
inline oracle::GaussianPosterior mu_oracle(const Toy& t) {
  const Eigen::Index m = 4, n_obs = t.data.total_observations();
  Eigen::MatrixXd a(n_obs, m);
  Eigen::VectorXd c(n_obs);
  Eigen::Index o = 0;
  for (Eigen::Index i = 0; i < 3; ++i) {
    const auto& s = t.data.subject(i);
    const Eigen::MatrixXd oi = selection(s, m);
    a.middleRows(o, oi.rows()) = oi;
    c.segment(o, oi.rows()) = oi * (t.state.lambda.transpose() * t.state.eta.row(i).transpose());
    o += oi.rows();
  }
  return oracle::condition_linear_gaussian(Eigen::VectorXd::Zero(m), kernel_with_jitter(t.data.grid(), t.state.mu_kernel),
                                           a, c, t.state.sigma_sq * Eigen::MatrixXd::Identity(n_obs, n_obs),
                                           stacked_y(t.data));
}

inline oracle::GaussianPosterior lambda_oracle(const Toy& t, Eigen::Index k, double nu) {
  const Eigen::Index m = 4, n_obs = t.data.total_observations();
  Eigen::MatrixXd a(n_obs, m);
  Eigen::VectorXd c(n_obs);
  Eigen::Index o = 0;
  for (Eigen::Index i = 0; i < 3; ++i) {
    const auto& s = t.data.subject(i);
    const Eigen::MatrixXd oi = selection(s, m);
    a.middleRows(o, oi.rows()) = t.state.eta(i, k) * oi;
    Eigen::VectorXd rest = t.state.mu;
    for (Eigen::Index j = 0; j < 2; ++j)
      if (j != k) rest += t.state.eta(i, j) * t.state.lambda.row(j).transpose();
    c.segment(o, oi.rows()) = oi * rest;
    o += oi.rows();
  }
  const Eigen::MatrixXd ck = kernel_with_jitter(t.data.grid(), t.state.loading_kernels[static_cast<std::size_t>(k)]);
  const Eigen::MatrixXd prior = oracle::conditional_cov(ck, rows_except(t.state.lambda, k), t.data.grid().weights(), nu);
  return oracle::condition_linear_gaussian(Eigen::VectorXd::Zero(m), prior, a, c,
                                           t.state.sigma_sq * Eigen::MatrixXd::Identity(n_obs, n_obs),
                                           stacked_y(t.data));
}

inline Eigen::MatrixXd eta_cov_oracle(Eigen::Index n, double nu, double psi) {
  return psi * (Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Ones(n, n) / (nu + static_cast<double>(n)));
}

inline oracle::GaussianPosterior eta_oracle(const Toy& t, Eigen::Index k, double nu) {
  const Eigen::Index n = 3, m = 4, n_obs = t.data.total_observations();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n_obs, n);
  Eigen::VectorXd c(n_obs);
  Eigen::Index o = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = t.data.subject(i);
    const Eigen::MatrixXd oi = selection(s, m);
    a.block(o, i, oi.rows(), 1) = oi * t.state.lambda.row(k).transpose();
    Eigen::VectorXd rest = t.state.mu;
    for (Eigen::Index j = 0; j < 2; ++j)
      if (j != k) rest += t.state.eta(i, j) * t.state.lambda.row(j).transpose();
    c.segment(o, oi.rows()) = oi * rest;
    o += oi.rows();
  }
  Eigen::VectorXd m0 = Eigen::VectorXd::Zero(n);
  if (t.state.theta) m0 = *t.state.covariates * t.state.theta->row(k).transpose();
  return oracle::condition_linear_gaussian(m0, eta_cov_oracle(n, nu, t.state.psi[k]), a, c,
                                           t.state.sigma_sq * Eigen::MatrixXd::Identity(n_obs, n_obs),
                                           stacked_y(t.data));
}

// Theta_k with eta_k integrated out: y = A (X theta_k + xi) + c + e, xi ~ N(0, psi M^{-1}).
inline oracle::GaussianPosterior theta_marginal_oracle(const Toy& t, Eigen::Index k, double nu) {
  const Eigen::Index n = 3, m = 4, n_obs = t.data.total_observations();
  const Eigen::MatrixXd& x = *t.state.covariates;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n_obs, n);
  Eigen::VectorXd c(n_obs);
  Eigen::Index o = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = t.data.subject(i);
    const Eigen::MatrixXd oi = selection(s, m);
    a.block(o, i, oi.rows(), 1) = oi * t.state.lambda.row(k).transpose();
    Eigen::VectorXd rest = t.state.mu;
    for (Eigen::Index j = 0; j < 2; ++j)
      if (j != k) rest += t.state.eta(i, j) * t.state.lambda.row(j).transpose();
    c.segment(o, oi.rows()) = oi * rest;
    o += oi.rows();
  }
  const double psi = t.state.psi[k];
  const Eigen::MatrixXd noise =
      a * eta_cov_oracle(n, nu, psi) * a.transpose() + t.state.sigma_sq * Eigen::MatrixXd::Identity(n_obs, n_obs);
  return oracle::condition_linear_gaussian(Eigen::VectorXd::Zero(x.cols()),
                                           psi * Eigen::MatrixXd::Identity(x.cols(), x.cols()), a * x, c, noise,
                                           stacked_y(t.data));
}

}  // namespace toy
