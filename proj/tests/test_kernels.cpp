#include <doctest.h>

#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>

#include "nemo/errors.hpp"
#include "nemo/kernels.hpp"
#include "oracles.hpp"

using namespace nemo;

TEST_CASE("kernel entries") {
  CHECK(se_kernel(0.3, 0.3, {2.0, 0.7}) == 2.0);
  CHECK(se_kernel(0.0, 1.0, {1.0, 0.5}) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  Grid g(std::vector<double>{0.0, 0.5, 1.0});
  const Eigen::MatrixXd c = se_cov_matrix(g, {2.0, 0.3}, 1e-3);
  CHECK(c(1, 1) == doctest::Approx(2.001));
  CHECK(c(0, 2) == c(2, 0));
}

TEST_CASE("kernel matrix on 30 points is PSD with small jitter") {
  Grid g = Grid::uniform(0.0, 1.0, 30);
  for (double len : {0.01, 0.1, 0.4, 2.0}) {
    const Eigen::MatrixXd c = se_cov_matrix(g, {1.0, len}, 1e-8);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
    // eigenvalues of C + 1e-8 I are >= 1e-8 in exact arithmetic; allow rounding
    CHECK(es.eigenvalues().minCoeff() >= -1e-14);
  }
}

TEST_CASE("kernel entries positive, bounded and decreasing in distance") {
  Grid g = Grid::uniform(0.0, 3.0, 25);
  const SEKernelParams p{1.7, 0.3};
  const Eigen::MatrixXd c = se_cov_matrix(g, p, 0.0);
  for (Eigen::Index i = 0; i < 25; ++i) {
    for (Eigen::Index j = 0; j < 25; ++j) {
      CHECK(c(i, j) <= p.tau_sq);
      if (std::abs(i - j) < 10) CHECK(c(i, j) > 0.0);
      if (j + 1 < 25 && j >= i) CHECK(c(i, j + 1) < c(i, j));
    }
  }
}

TEST_CASE("jitter never decreases the smallest eigenvalue") {
  Grid g = Grid::uniform(0.0, 1.0, 20);
  double prev = -1e300;
  for (double j : {0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2}) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(se_cov_matrix(g, {1.0, 0.2}, j));
    CHECK(es.eigenvalues().minCoeff() >= prev - 1e-15);
    prev = es.eigenvalues().minCoeff();
  }
}

TEST_CASE("gp log density closed forms") {
  CHECK(gp_log_density(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1)) ==
        doctest::Approx(-0.918938533204673).epsilon(1e-12));
  CHECK(gp_log_density(Eigen::VectorXd::Ones(2), Eigen::MatrixXd::Identity(2, 2)) ==
        doctest::Approx(-2.837877066409345).epsilon(1e-12));
}

TEST_CASE("gp log density matches dense oracle") {
  Rng rng(9);
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::MatrixXd a(5, 5);
    for (Eigen::Index i = 0; i < 25; ++i) a.data()[i] = rng.normal();
    const Eigen::MatrixXd cov = a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(5, 5);
    const Eigen::VectorXd f = rng.normal_vector(5);
    CHECK(std::abs(gp_log_density(f, cov) - oracle::mvn_log_density(f, cov)) < 1e-10);
  }
}

TEST_CASE("gp log density permutation invariance") {
  Rng rng(21);
  Grid g = Grid::uniform(0.0, 1.0, 12);
  const Eigen::MatrixXd cov = se_cov_matrix(g, {1.3, 0.05}, 1e-6);
  const Eigen::VectorXd f = rng.normal_vector(12);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(12);
  perm.setIdentity();
  for (Eigen::Index i = 11; i > 0; --i) std::swap(perm.indices()[i], perm.indices()[static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(i + 1)))]);
  const Eigen::MatrixXd pcov = perm * cov * perm.transpose();
  const Eigen::VectorXd pf = perm * f;
  CHECK(gp_log_density(pf, pcov) == doctest::Approx(gp_log_density(f, cov)).epsilon(1e-9));
}

TEST_CASE("cholesky escalation") {
  Eigen::MatrixXd singular = Eigen::MatrixXd::Ones(3, 3);
  const CholeskyFactor c = cholesky_escalating(singular, 1.0);
  CHECK(c.added_jitter > 0.0);
  CHECK(c.added_jitter <= 1e-4);
  Eigen::MatrixXd neg = -Eigen::MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(cholesky_escalating(neg, 1.0), NumericalError);
}

TEST_CASE("gp draws") {
  Grid g = Grid::uniform(0.0, 1.0, 30);
  SUBCASE("near-zero variance") {
    Rng rng(1);
    for (int rep = 0; rep < 20; ++rep) CHECK(sample_gp(g, {1e-12, 0.4}, rng).cwiseAbs().maxCoeff() < 1e-4);
  }
  SUBCASE("moments") {
    Rng rng(2);
    const SEKernelParams p{1.0, 0.1};
    const int n = 10000;
    std::vector<double> a(n), b(n);
    for (int r = 0; r < n; ++r) {
      const Eigen::VectorXd f = sample_gp(g, p, rng);
      a[r] = f[5];
      b[r] = f[9];
    }
    CHECK(std::abs(oracle::variance(a) - 1.0) < 0.05);
    double cov = 0.0;
    const double ma = oracle::mean(a), mb = oracle::mean(b);
    std::vector<double> prod(n);
    for (int r = 0; r < n; ++r) prod[r] = (a[r] - ma) * (b[r] - mb);
    cov = oracle::mean(prod);
    const double se = std::sqrt(oracle::variance(prod) / n);
    const double truth = se_kernel(g.points()[5], g.points()[9], p);
    CHECK(std::abs(cov - truth) < 3.0 * se);
  }
}

TEST_CASE("hyperprior densities") {
  CHECK(log_precision_gamma_density(1.0, 1.0, 1.0) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(log_half_normal_density(0.0, 1.0) == doctest::Approx(-0.225791352644727).epsilon(1e-12));
  CHECK_THROWS_AS(log_hyperprior({-1.0, 1.0}, {}), DomainError);
  CHECK_THROWS_AS(log_hyperprior({1.0, 0.0}, {}), DomainError);

  // independent evaluation: density of 1/l^2 under gamma(a, b), times l^{-4}... written out from scratch
  Rng rng(4);
  for (int rep = 0; rep < 5; ++rep) {
    const double tau = 0.1 + 3.0 * rng.uniform(), len = 0.05 + 2.0 * rng.uniform();
    const HyperpriorConfig cfg{0.5 + 3.0 * rng.uniform(), 0.5 + 3.0 * rng.uniform(), 0.2 + 2.0 * rng.uniform()};
    const double prec = 1.0 / len;
    const double gamma_pdf = std::pow(cfg.beta, cfg.alpha) / std::tgamma(cfg.alpha) * std::pow(prec, cfg.alpha - 1.0) *
                             std::exp(-cfg.beta * prec);
    const double hn_pdf = std::sqrt(2.0 / oracle::kPi) / cfg.gamma * std::exp(-tau * tau / (2.0 * cfg.gamma * cfg.gamma));
    const double expected = std::log(gamma_pdf / (len * len) * hn_pdf);
    CHECK(std::abs(log_hyperprior({tau, len}, cfg) - expected) < 1e-10);
  }
}

TEST_CASE("hyperprior integrates to one in len_sq") {
  const HyperpriorConfig cfg{2.0, 1.5, 1.0};
  // substitute l = e^u to cover the heavy tail
  const double total = oracle::integrate(
      [&](double u) { return std::exp(log_precision_gamma_density(std::exp(u), cfg.alpha, cfg.beta) + u); }, -20.0,
      30.0, 1e-10);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}
