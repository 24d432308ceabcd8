#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "nemo/analysis.hpp"
#include "nemo/errors.hpp"
#include "oracles.hpp"

using namespace nemo;

namespace {

FFAState base_state(const Grid& g, Eigen::Index n, Rng& rng) {
  const Eigen::Index m = g.size();
  FFAState s;
  s.mu = Eigen::VectorXd::Zero(m);
  s.lambda.resize(3, m);
  for (Eigen::Index l = 0; l < m; ++l) {
    const double t = g.points()[l];
    s.lambda(0, l) = 2.0 * std::sin(oracle::kPi * t);
    s.lambda(1, l) = 1.5 * std::cos(oracle::kPi * t);
    s.lambda(2, l) = 0.8 * std::sin(3.0 * oracle::kPi * t);
  }
  s.eta.resize(n, 3);
  for (Eigen::Index i = 0; i < s.eta.size(); ++i) s.eta.data()[i] = rng.normal();
  s.psi = Eigen::Vector3d(1.0, 2.0, 0.5);
  s.sigma_sq = 0.3;
  s.loading_kernels = {{1.0, 0.1}, {2.0, 0.2}, {3.0, 0.3}};
  return s;
}

FactorTransform random_transform(Eigen::Index k, Rng& rng) {
  FactorTransform t = FactorTransform::identity(k);
  for (Eigen::Index j = k - 1; j > 0; --j) {
    const auto r = static_cast<Eigen::Index>(rng.uniform() * static_cast<double>(j + 1));
    std::swap(t.perm[static_cast<std::size_t>(j)], t.perm[static_cast<std::size_t>(std::min(r, j))]);
  }
  for (Eigen::Index j = 0; j < k; ++j) t.sign[j] = rng.uniform() < 0.5 ? -1.0 : 1.0;
  return t;
}

std::vector<double> product_multiset(const FFAState& s, Eigen::Index i, Eigen::Index l) {
  std::vector<double> v;
  for (Eigen::Index k = 0; k < s.num_factors(); ++k) v.push_back(s.lambda(k, l) * s.eta(i, k));
  std::sort(v.begin(), v.end());
  return v;
}

// sum over the grid of the pointwise SD of loading k across draws
double loading_spread(const PosteriorDraws& d, Eigen::Index k) {
  const Eigen::Index m = d.states.front().lambda.cols();
  double total = 0.0;
  for (Eigen::Index l = 0; l < m; ++l) {
    std::vector<double> v;
    for (const auto& s : d.states) v.push_back(s.lambda(k, l));
    total += std::sqrt(oracle::variance(v));
  }
  return total;
}

PosteriorDraws scrambled_chain(const Grid& g, Rng& rng, std::size_t n_draws, std::vector<FactorTransform>* applied) {
  const FFAState base = base_state(g, 6, rng);
  PosteriorDraws d;
  d.num_factors = 3;
  for (std::size_t s = 0; s < n_draws; ++s) {
    FFAState st = base;
    for (Eigen::Index i = 0; i < st.lambda.size(); ++i) st.lambda.data()[i] += 0.1 * rng.normal();
    for (Eigen::Index i = 0; i < st.eta.size(); ++i) st.eta.data()[i] += 0.1 * rng.normal();
    FactorTransform t = s == 0 ? FactorTransform::identity(3) : random_transform(3, rng);
    if (applied) applied->push_back(t);
    d.states.push_back(apply_transform(st, t));
    d.state_log_likelihood.push_back(s == 0 ? 0.0 : -1.0 - rng.uniform());
  }
  return d;
}

}  // namespace

TEST_CASE("absorbing the expansion scale") {
  Rng rng(1);
  Grid g = Grid::uniform(0.0, 1.0, 9);
  FFAState s = base_state(g, 5, rng);
  s.covariates = Eigen::MatrixXd::Ones(5, 2);
  s.theta = Eigen::MatrixXd::Ones(3, 2);
  const FFAState a = absorb_expansion(s);
  CHECK(a.psi == Eigen::VectorXd::Ones(3));
  CHECK(a.lambda.row(1).isApprox(std::sqrt(2.0) * s.lambda.row(1)));
  CHECK(a.eta.col(2).isApprox(s.eta.col(2) / std::sqrt(0.5)));
  CHECK(a.theta->row(1).isApprox(s.theta->row(1) / std::sqrt(2.0)));
  CHECK((latent_curves(a) - latent_curves(s)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("match_to_reference") {
  Rng rng(2);
  Grid g = Grid::uniform(0.0, 1.0, 25);
  const FFAState s = base_state(g, 4, rng);
  SUBCASE("already aligned") {
    const auto t = match_to_reference(s.lambda, s.lambda, g);
    CHECK(t.is_identity());
  }
  SUBCASE("swap and flip are recovered exactly") {
    FactorTransform scramble = FactorTransform::identity(3);
    std::swap(scramble.perm[0], scramble.perm[2]);
    scramble.sign[1] = -1.0;
    const FFAState x = apply_transform(s, scramble);
    const auto t = match_to_reference(x.lambda, s.lambda, g);
    const FFAState back = apply_transform(x, t);
    CHECK(back.lambda == s.lambda);
    CHECK(back.eta == s.eta);
    CHECK(back.psi == s.psi);
    CHECK(back.loading_kernels == s.loading_kernels);
  }
  SUBCASE("more factors than the reference") {
    const Eigen::MatrixXd ref = s.lambda.topRows(2);
    FactorTransform scramble = FactorTransform::identity(3);
    scramble.perm = {2, 1, 0};
    scramble.sign = Eigen::Vector3d(1.0, -1.0, 1.0);
    const auto t = match_to_reference(apply_transform(s, scramble).lambda, ref, g);
    CHECK(t.perm == std::vector<Eigen::Index>{2, 1, 0});
    CHECK(t.sign == Eigen::Vector3d(1.0, -1.0, 1.0));
  }
}

TEST_CASE("align_draws") {
  Rng rng(3);
  Grid g = Grid::uniform(0.0, 1.0, 20);
  std::vector<FactorTransform> applied;
  const PosteriorDraws raw = scrambled_chain(g, rng, 200, &applied);
  const AlignedDraws al = align_draws(raw, g);
  CHECK(al.pivot == 0);
  CHECK(al.transforms.size() == raw.size());

  SUBCASE("scrambling is undone and spread shrinks for every factor") {
    for (Eigen::Index k = 0; k < 3; ++k) CHECK(loading_spread(al.draws, k) < loading_spread(raw, k));
    for (std::size_t s = 0; s < raw.size(); ++s) {
      // composed transform is the identity on the unscrambled state
      const auto& a = applied[s];
      const auto& t = al.transforms[s];
      for (Eigen::Index j = 0; j < 3; ++j) {
        CHECK(a.perm[static_cast<std::size_t>(t.perm[static_cast<std::size_t>(j)])] == j);
        CHECK(a.sign[t.perm[static_cast<std::size_t>(j)]] * t.sign[j] == 1.0);
      }
    }
  }
  SUBCASE("likelihood invariance is exact") {
    for (std::size_t s = 0; s < raw.size(); ++s) {
      const auto& before = raw.states[s];
      const auto& after = al.draws.states[s];
      CHECK((factor_surface(before) - factor_surface(after)).cwiseAbs().maxCoeff() == 0.0);
      for (Eigen::Index i = 0; i < before.eta.rows(); ++i)
        for (Eigen::Index l = 0; l < g.size(); l += 7) CHECK(product_multiset(before, i, l) == product_multiset(after, i, l));
    }
  }
  SUBCASE("already aligned chain is untouched") {
    const AlignedDraws again = align_draws(al.draws, g);
    for (const auto& t : again.transforms) CHECK(t.is_identity());
  }
  CHECK_THROWS_AS(align_draws(PosteriorDraws{}, g), EmptyDataset);
}

TEST_CASE("simultaneous bands") {
  Rng rng(4);
  SUBCASE("identical draws give a zero-width band") {
    const Eigen::VectorXd f = Eigen::VectorXd::LinSpaced(7, -1.0, 2.0);
    const auto b = simultaneous_band(std::vector<Eigen::VectorXd>(60, f), 0.95);
    CHECK(b.lower == f);
    CHECK(b.upper == f);
  }
  SUBCASE("empirical coverage and minimality") {
    std::vector<Eigen::VectorXd> draws;
    for (int s = 0; s < 400; ++s) {
      Eigen::VectorXd d = rng.normal_vector(15);
      d[3] += 2.0 * rng.normal();
      draws.push_back(d);
    }
    const auto b = simultaneous_band(draws, 0.95);
    auto inside = [&](const CredibleBand& band) {
      int c = 0;
      for (const auto& d : draws)
        c += ((d.array() >= band.lower.array()) && (d.array() <= band.upper.array())).all() ? 1 : 0;
      return c / 400.0;
    };
    CHECK(inside(b) >= 0.95);
    // shrinking the multiplier below q loses coverage
    CredibleBand tighter = b;
    const Eigen::VectorXd half = (b.upper - b.lower) / 2.0;
    tighter.lower = b.mean - half * (1.0 - 1e-9);
    tighter.upper = b.mean + half * (1.0 - 1e-9);
    CHECK(inside(tighter) < 0.95);
    // level monotonicity
    const auto wide = simultaneous_band(draws, 0.99);
    CHECK((wide.lower.array() <= b.lower.array()).all());
    CHECK((wide.upper.array() >= b.upper.array()).all());
    CHECK((b.lower.array() <= b.upper.array()).all());
  }
  SUBCASE("iid normal functions: q is the max-|Z| quantile") {
    std::vector<Eigen::VectorXd> draws;
    for (int s = 0; s < 10000; ++s) draws.push_back(rng.normal_vector(20));
    const auto b = simultaneous_band(draws, 0.95);
    // solve (2 Phi(q) - 1)^20 = 0.95 by bisection
    double lo = 0.0, hi = 10.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (std::pow(2.0 * oracle::normal_cdf(mid) - 1.0, 20) < 0.95 ? lo : hi) = mid;
    }
    CHECK(lo == doctest::Approx(3.02).epsilon(0.01));
    CHECK(std::abs(b.multiplier - lo) < 0.1);
  }
  SUBCASE("degenerate points use the draw range") {
    std::vector<Eigen::VectorXd> draws;
    for (int s = 0; s < 100; ++s) {
      Eigen::VectorXd d = rng.normal_vector(4);
      d[2] = 5.0 + 1e-15 * s;
      draws.push_back(d);
    }
    const auto b = simultaneous_band(draws, 0.9);
    CHECK(b.lower[2] == 5.0);
    CHECK(b.upper[2] == 5.0 + 1e-15 * 99);
  }
  SUBCASE("pooled bands are at least as wide") {
    std::vector<std::vector<Eigen::VectorXd>> fams(3);
    for (int s = 0; s < 300; ++s)
      for (auto& f : fams) f.push_back(rng.normal_vector(10));
    const auto pooled = simultaneous_bands_pooled(fams, 0.95);
    REQUIRE(pooled.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
      const auto single = simultaneous_band(fams[k], 0.95);
      CHECK(pooled[k].multiplier >= single.multiplier);
      CHECK(pooled[k].multiplier == pooled[0].multiplier);
    }
  }
  CHECK_THROWS_AS(simultaneous_band({Eigen::VectorXd::Zero(3)}, 0.95), DomainError);
  CHECK_THROWS_AS(simultaneous_band(std::vector<Eigen::VectorXd>(5, Eigen::VectorXd::Zero(3)), 1.0), DomainError);
}

TEST_CASE("factor selection") {
  Rng rng(5);
  Grid g = Grid::uniform(0.0, 1.0, 12);
  auto chain = [&](double c0, double c1, double spread) {
    PosteriorDraws d;
    d.num_factors = 2;
    for (int s = 0; s < 100; ++s) {
      FFAState st;
      st.mu = Eigen::VectorXd::Zero(12);
      st.lambda.resize(2, 12);
      st.lambda.row(0) = (Eigen::VectorXd::Constant(12, c0) + spread * rng.normal_vector(12)).transpose();
      st.lambda.row(1) = (Eigen::VectorXd::Constant(12, c1) + spread * rng.normal_vector(12)).transpose();
      st.eta = Eigen::MatrixXd::Zero(3, 2);
      st.psi = Eigen::VectorXd::Ones(2);
      st.loading_kernels = {{}, {}};
      d.states.push_back(st);
      d.state_log_likelihood.push_back(0.0);
    }
    return d;
  };
  SUBCASE("all loadings at zero") {
    const auto sel = select_num_factors(align_draws(chain(0.0, 0.0, 0.3), g), 0.95);
    CHECK(sel.k_selected == 0);
  }
  SUBCASE("one loading at 2, one at 0") {
    AlignedDraws a;
    a.draws = chain(2.0, 0.0, 1e-3);
    for (BandPooling p : {BandPooling::per_factor, BandPooling::pooled}) {
      const auto sel = select_num_factors(a, 0.95, p);
      CHECK(sel.k_selected == 1);
      CHECK(sel.keep == std::vector<bool>{true, false});
    }
  }
  SUBCASE("global sign flips do not change the selection") {
    AlignedDraws a;
    a.draws = chain(0.3, 0.05, 0.2);
    const auto before = select_num_factors(a, 0.95);
    for (auto& s : a.draws.states) s.lambda.row(0) *= -1.0;
    const auto after = select_num_factors(a, 0.95);
    CHECK(before.keep == after.keep);
  }
  SUBCASE("expansion scale is absorbed") {
    AlignedDraws a;
    a.draws = chain(2.0, 0.0, 1e-3);
    for (auto& s : a.draws.states) s.psi[0] = 4.0;
    const auto sel = select_num_factors(a, 0.95);
    CHECK(sel.bands[0].mean[0] == doctest::Approx(4.0).epsilon(1e-3));
  }
}

TEST_CASE("effective sample size") {
  Rng rng(6);
  SUBCASE("iid draws") {
    const auto r = effective_sample_size(rng.normal_vector(10000));
    CHECK_FALSE(r.degenerate);
    CHECK(r.value >= 8000.0);
    CHECK(r.value <= 10000.0);
  }
  SUBCASE("AR(1) with rho 0.9") {
    const double rho = 0.9;
    Eigen::VectorXd x(10000);
    x[0] = rng.normal() / std::sqrt(1.0 - rho * rho);
    for (Eigen::Index i = 1; i < x.size(); ++i) x[i] = rho * x[i - 1] + rng.normal();
    const double oracle_ess = 10000.0 * (1.0 - rho) / (1.0 + rho);
    const auto r = effective_sample_size(x);
    MESSAGE("AR(1) ESS " << r.value << " vs " << oracle_ess);
    CHECK(r.value > oracle_ess / 1.5);
    CHECK(r.value < oracle_ess * 1.5);
  }
  SUBCASE("short series is clipped") {
    Eigen::VectorXd x(10);
    x << 0.3, -1.2, 2.2, 0.1, -0.4, 1.7, -2.1, 0.9, 0.0, -0.6;
    const auto r = effective_sample_size(x);
    CHECK(r.value >= 1.0);
    CHECK(r.value <= 10.0);
    // alternating series: negatively correlated, clipped at N
    Eigen::VectorXd alt(12);
    for (Eigen::Index i = 0; i < 12; ++i) alt[i] = i % 2 ? 1.0 : -1.0;
    CHECK(effective_sample_size(alt).value <= 12.0);
  }
  SUBCASE("constant series") {
    const auto r = effective_sample_size(Eigen::VectorXd::Constant(50, 3.25));
    CHECK(r.degenerate);
    CHECK(r.value == 50.0);
  }
  CHECK_THROWS_AS(effective_sample_size(Eigen::VectorXd::Zero(9)), DomainError);
}

TEST_CASE("waic") {
  SUBCASE("single point, constant") {
    const auto w = waic(Eigen::MatrixXd::Constant(20, 1, -1.2));
    CHECK(w.lppd == doctest::Approx(-1.2).epsilon(1e-14));
    CHECK(w.p_waic == 0.0);
    CHECK(w.waic == doctest::Approx(2.4).epsilon(1e-14));
  }
  SUBCASE("additivity across constant points") {
    Eigen::MatrixXd ll(5, 2);
    ll.col(0).setConstant(-0.5);
    ll.col(1).setConstant(-3.0);
    const auto w = waic(ll);
    CHECK(w.waic == doctest::Approx(waic(ll.col(0)).waic + waic(ll.col(1)).waic));
  }
  SUBCASE("hand oracle, stability, order invariance and Jensen") {
    Rng rng(7);
    Eigen::MatrixXd ll(50, 10);
    for (Eigen::Index i = 0; i < ll.size(); ++i) ll.data()[i] = -1.0 + 0.4 * rng.normal();
    double lppd = 0.0, pw = 0.0;
    for (Eigen::Index j = 0; j < 10; ++j) {
      double s = 0.0, m = 0.0, v = 0.0;
      for (Eigen::Index r = 0; r < 50; ++r) {
        s += std::exp(ll(r, j));
        m += ll(r, j);
      }
      m /= 50.0;
      for (Eigen::Index r = 0; r < 50; ++r) v += (ll(r, j) - m) * (ll(r, j) - m);
      lppd += std::log(s / 50.0);
      pw += v / 49.0;
    }
    const auto w = waic(ll);
    CHECK(w.lppd == doctest::Approx(lppd).epsilon(1e-12));
    CHECK(w.p_waic == doctest::Approx(pw).epsilon(1e-12));
    CHECK(w.waic == doctest::Approx(-2.0 * (lppd - pw)).epsilon(1e-12));
    CHECK(w.lppd >= ll.mean() * 10.0);
    Eigen::MatrixXd rev = ll.colwise().reverse();
    CHECK(waic(rev).waic == doctest::Approx(w.waic).epsilon(1e-14));
    // huge negative values do not underflow
    const auto shifted = waic((ll.array() - 2000.0).matrix());
    CHECK(shifted.lppd == doctest::Approx(lppd - 20000.0).epsilon(1e-12));
  }
  SUBCASE("paired comparison on 10 points") {
    Rng rng(8);
    Eigen::MatrixXd a(30, 10), b(30, 10);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      a.data()[i] = -1.0 + 0.3 * rng.normal();
      b.data()[i] = -1.3 + 0.5 * rng.normal();
    }
    const auto wa = waic(a), wb = waic(b);
    std::vector<double> d;
    double total = 0.0;
    for (Eigen::Index j = 0; j < 10; ++j) {
      d.push_back(wa.pointwise[j] - wb.pointwise[j]);
      total += d.back();
    }
    const auto c = compare_waic(wa, wb);
    CHECK(c.difference == doctest::Approx(wa.waic - wb.waic).epsilon(1e-12));
    CHECK(c.difference == doctest::Approx(total).epsilon(1e-12));
    CHECK(c.standard_error == doctest::Approx(std::sqrt(10.0) * std::sqrt(oracle::variance(d))).epsilon(1e-12));
  }
  CHECK_THROWS_AS(waic(Eigen::MatrixXd::Zero(1, 3)), DomainError);
}

TEST_CASE("mise") {
  Grid g = Grid::uniform(0.0, 1.0, 31);
  const Eigen::VectorXd f = g.points().array().sin();
  CHECK(mise(f, f, g) == 0.0);
  CHECK(mise((f.array() + 0.7).matrix(), f, g) == doctest::Approx(0.49).epsilon(1e-12));
  // refinement: trapezoid vs adaptive quadrature of (sin - cos)^2
  const double exact = oracle::integrate([](double t) { return std::pow(std::sin(t) - std::cos(t), 2); }, 0.0, 1.0);
  for (Eigen::Index m : {50, 500}) {
    Grid gm = Grid::uniform(0.0, 1.0, m);
    const Eigen::VectorXd s = gm.points().array().sin(), c = gm.points().array().cos();
    const double h = 1.0 / static_cast<double>(m - 1);
    // |f''| <= 4 for f = (sin - cos)^2 = 1 - sin 2t
    CHECK(std::abs(mise(s, c, gm) - exact) <= 4.0 * h * h / 12.0);
  }
  CHECK_THROWS_AS(mise(f, f.head(4), g), DimensionError);
}

TEST_CASE("posterior predictive statistics") {
  Rng rng(9);
  Grid g = Grid::uniform(0.0, 1.0, 5);
  SparseFunctionalDataset d(g,
                            {{"a", SubjectIndexMap({0, 1, 2, 3, 4}, 5), Eigen::VectorXd::LinSpaced(5, 0.0, 1.0)},
                             {"b", SubjectIndexMap({2}, 5), Eigen::VectorXd::Constant(1, -3.0)},
                             {"c", SubjectIndexMap({0, 2, 4}, 5), Eigen::Vector3d(1.0, 2.0, 0.5)}},
                            DataKind::continuous);
  SUBCASE("magnitude of a single point is |y|") {
    const auto mag = magnitude_statistic({Eigen::VectorXd::Constant(1, -3.0)});
    CHECK(mag[0] == 3.0);
  }
  SUBCASE("cross-sectional mean") {
    std::vector<Eigen::VectorXd> v;
    for (const auto& s : d.subjects()) v.push_back(s.values);
    const auto t = pointwise_mean_statistic(d, v);
    CHECK(t[0] == doctest::Approx(0.5));
    CHECK(t[2] == doctest::Approx((0.5 - 3.0 + 2.0) / 3.0));
    CHECK(t[1] == 0.25);
  }
  SUBCASE("pairwise-complete covariance") {
    std::vector<Eigen::VectorXd> v;
    for (const auto& s : d.subjects()) v.push_back(s.values);
    const auto c = pairwise_covariance(d, v);
    // grid points 0 and 4 are seen by a and c only
    const double m0 = 0.5, m4 = 0.75;
    CHECK(c(0, 4) == doctest::Approx((0.0 - m0) * (1.0 - m4) + (1.0 - m0) * (0.5 - m4)));
    CHECK(c(1, 1) == 0.0);
    CHECK(c.isApprox(c.transpose()));
  }
  SUBCASE("zero noise replicates the fitted mean exactly") {
    FFAState st;
    st.mu = Eigen::VectorXd::LinSpaced(5, 1.0, 2.0);
    st.lambda = Eigen::MatrixXd::Ones(1, 5);
    st.eta = Eigen::Vector3d(0.5, -1.0, 2.0);
    st.psi = Eigen::VectorXd::Ones(1);
    st.sigma_sq = 0.0;
    st.loading_kernels = {{}};
    PosteriorDraws draws;
    draws.states = {st, st};
    const auto chk = posterior_predictive(draws, d, PredictiveStatistic::pointwise_mean, rng);
    std::vector<Eigen::VectorXd> fitted;
    for (Eigen::Index i = 0; i < 3; ++i) fitted.push_back(fitted_values(st, d, i));
    const Eigen::VectorXd expected = pointwise_mean_statistic(d, fitted);
    CHECK(chk.replicated.row(0).transpose() == expected);
    CHECK(chk.replicated.row(1).transpose() == expected);
    const auto eig = posterior_predictive(draws, d, PredictiveStatistic::covariance_eigenvalue, rng, 1);
    CHECK(eig.replicated.cols() == 1);
    const auto mag = posterior_predictive(draws, d, PredictiveStatistic::magnitude, rng);
    CHECK(mag.observed[1] == 3.0);
  }
  SUBCASE("input errors") {
    PosteriorDraws draws;
    draws.states.resize(1);
    SparseFunctionalDataset one(g, {{"a", SubjectIndexMap({0}, 5), Eigen::VectorXd::Ones(1)}}, DataKind::continuous);
    CHECK_THROWS_AS(posterior_predictive(draws, one, PredictiveStatistic::covariance_eigenvalue, rng), DomainError);
    SparseFunctionalDataset bin(g, {{"a", SubjectIndexMap({0}, 5), Eigen::VectorXd::Ones(1)}}, DataKind::binary);
    CHECK_THROWS_AS(posterior_predictive(draws, bin, PredictiveStatistic::magnitude, rng), KindMismatch);
  }
}

TEST_CASE("posterior predictive on a well-specified fit") {
  SimulationConfig cfg;
  cfg.n = 60;
  cfg.m = 13;
  cfg.sparsity = 0.3;
  Rng rng(10);
  const auto sim = simulate_ffa(cfg, rng);
  ChainConfig c;
  c.n_iter = 1500;
  c.burn_in = 500;
  c.thin = 2;
  c.record_pointwise = false;
  const auto draws = run_ffa_chain(sim.data, {}, c, 2);
  Rng prng(11);
  const auto chk = posterior_predictive(draws, sim.data, PredictiveStatistic::pointwise_mean, prng);
  int inside = 0;
  for (Eigen::Index l = 0; l < 13; ++l) {
    std::vector<double> col(chk.replicated.col(l).data(), chk.replicated.col(l).data() + chk.replicated.rows());
    const double lo = oracle::quantile(col, 0.025), hi = oracle::quantile(col, 0.975);
    inside += (chk.observed[l] >= lo && chk.observed[l] <= hi) ? 1 : 0;
  }
  MESSAGE("observed mean inside the central 95% at " << inside << " of 13 points");
  CHECK(inside >= 11);
}

TEST_CASE("loading norm trace") {
  Grid g = Grid::uniform(0.0, 1.0, 11);
  FFAState st;
  st.lambda = Eigen::MatrixXd::Constant(1, 11, 3.0);
  st.psi = Eigen::VectorXd::Constant(1, 4.0);
  PosteriorDraws d;
  d.states = {st};
  const auto tr = loading_norm_trace(d, 0, g);
  CHECK(tr[0] == doctest::Approx(6.0).epsilon(1e-12));
  CHECK_THROWS_AS(loading_norm_trace(d, 1, g), DomainError);
}
