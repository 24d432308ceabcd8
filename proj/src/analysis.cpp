#include "nemo/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include <Eigen/Eigenvalues>

#include "nemo/errors.hpp"

namespace nemo {

FFAState absorb_expansion(const FFAState& state) {
  FFAState out = state;
  for (Eigen::Index k = 0; k < state.num_factors(); ++k) {
    const double s = std::sqrt(state.psi[k]);
    out.lambda.row(k) *= s;
    out.eta.col(k) /= s;
    if (out.theta) out.theta->row(k) /= s;
    out.psi[k] = 1.0;
  }
  return out;
}

PosteriorDraws absorb_expansion(const PosteriorDraws& draws) {
  PosteriorDraws out = draws;
  for (auto& s : out.states) s = absorb_expansion(s);
  return out;
}

FactorTransform FactorTransform::identity(Eigen::Index k) {
  FactorTransform t;
  t.perm.resize(static_cast<std::size_t>(k));
  std::iota(t.perm.begin(), t.perm.end(), Eigen::Index{0});
  t.sign = Eigen::VectorXd::Ones(k);
  return t;
}

bool FactorTransform::is_identity() const {
  for (std::size_t j = 0; j < perm.size(); ++j)
    if (perm[j] != static_cast<Eigen::Index>(j) || sign[static_cast<Eigen::Index>(j)] != 1.0) return false;
  return true;
}

FFAState apply_transform(const FFAState& state, const FactorTransform& t) {
  const Eigen::Index k = state.num_factors();
  if (static_cast<Eigen::Index>(t.perm.size()) != k || t.sign.size() != k)
    throw DimensionError("factor transform size does not match the number of factors");
  FFAState out = state;
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::Index src = t.perm[static_cast<std::size_t>(j)];
    const double s = t.sign[j];
    out.lambda.row(j) = s * state.lambda.row(src);
    out.eta.col(j) = s * state.eta.col(src);
    out.psi[j] = state.psi[src];
    out.loading_kernels[static_cast<std::size_t>(j)] = state.loading_kernels[static_cast<std::size_t>(src)];
    if (out.theta) out.theta->row(j) = s * state.theta->row(src);
  }
  return out;
}

FactorTransform match_to_reference(const Eigen::MatrixXd& lambda, const Eigen::MatrixXd& reference, const Grid& grid) {
  const Eigen::Index k = lambda.rows(), kr = reference.rows();
  if (lambda.cols() != grid.size() || reference.cols() != grid.size())
    throw DimensionError("match_to_reference: loadings must live on the grid");
  // ip(j, r) = <lambda_j, reference_r>_w
  const Eigen::MatrixXd ip = lambda * grid.weights().asDiagonal() * reference.transpose();
  struct Pair {
    double score;
    Eigen::Index j, r;
  };
  std::vector<Pair> pairs;
  pairs.reserve(static_cast<std::size_t>(k * kr));
  for (Eigen::Index j = 0; j < k; ++j)
    for (Eigen::Index r = 0; r < kr; ++r) pairs.push_back({std::abs(ip(j, r)), j, r});
  // stable on ties: lower (r, j) first
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.score > b.score; });

  std::vector<Eigen::Index> src_for_ref(static_cast<std::size_t>(kr), -1);
  std::vector<bool> used(static_cast<std::size_t>(k), false);
  for (const auto& p : pairs) {
    if (used[static_cast<std::size_t>(p.j)] || src_for_ref[static_cast<std::size_t>(p.r)] >= 0) continue;
    used[static_cast<std::size_t>(p.j)] = true;
    src_for_ref[static_cast<std::size_t>(p.r)] = p.j;
  }

  FactorTransform t;
  t.sign = Eigen::VectorXd::Ones(k);
  for (Eigen::Index r = 0; r < kr; ++r) {
    const Eigen::Index j = src_for_ref[static_cast<std::size_t>(r)];
    if (j < 0) continue;
    t.sign[static_cast<Eigen::Index>(t.perm.size())] = ip(j, r) < 0.0 ? -1.0 : 1.0;
    t.perm.push_back(j);
  }
  for (Eigen::Index j = 0; j < k; ++j)
    if (!used[static_cast<std::size_t>(j)]) t.perm.push_back(j);
  return t;
}

AlignedDraws align_draws(const PosteriorDraws& draws, const Grid& grid) {
  if (draws.size() == 0) throw EmptyDataset("align_draws: no saved draws");
  AlignedDraws out;
  out.draws = draws;
  out.transforms.reserve(draws.size());
  if (draws.state_log_likelihood.size() == draws.size()) {
    out.pivot = static_cast<std::size_t>(
        std::max_element(draws.state_log_likelihood.begin(), draws.state_log_likelihood.end()) -
        draws.state_log_likelihood.begin());
  }
  const Eigen::MatrixXd reference = draws.states[out.pivot].lambda;
  for (std::size_t s = 0; s < draws.size(); ++s) {
    FactorTransform t = s == out.pivot ? FactorTransform::identity(reference.rows())
                                       : match_to_reference(draws.states[s].lambda, reference, grid);
    if (!t.is_identity()) out.draws.states[s] = apply_transform(draws.states[s], t);
    out.transforms.push_back(std::move(t));
  }
  return out;
}

Eigen::MatrixXd factor_surface(const FFAState& state) {
  const Eigen::Index n = state.eta.rows(), m = state.lambda.cols(), k = state.num_factors();
  Eigen::MatrixXd out(n, m);
  std::vector<double> terms(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index l = 0; l < m; ++l) {
      for (Eigen::Index j = 0; j < k; ++j) terms[static_cast<std::size_t>(j)] = state.lambda(j, l) * state.eta(i, j);
      std::sort(terms.begin(), terms.end());
      double sum = 0.0;
      for (double v : terms) sum += v;
      out(i, l) = sum;
    }
  }
  return out;
}

bool CredibleBand::excludes_zero() const { return (lower.array() > 0.0).any() || (upper.array() < 0.0).any(); }

namespace {

constexpr double kDegenerateSd = 1e-12;

struct BandMoments {
  Eigen::VectorXd mean, sd, lo, hi;
  Eigen::VectorXd max_dev;  // per draw
};

BandMoments band_moments(const std::vector<Eigen::VectorXd>& draws) {
  if (draws.size() < 2) throw DomainError("a credible band needs at least two draws");
  const Eigen::Index m = draws.front().size();
  const double n = static_cast<double>(draws.size());
  BandMoments b;
  b.mean = Eigen::VectorXd::Zero(m);
  b.lo = Eigen::VectorXd::Constant(m, std::numeric_limits<double>::infinity());
  b.hi = -b.lo;
  for (const auto& d : draws) {
    if (d.size() != m) throw DimensionError("band draws must have equal length");
    b.mean += d;
    b.lo = b.lo.cwiseMin(d);
    b.hi = b.hi.cwiseMax(d);
  }
  b.mean /= n;
  Eigen::VectorXd ss = Eigen::VectorXd::Zero(m);
  for (const auto& d : draws) ss += (d - b.mean).array().square().matrix();
  b.sd = (ss / (n - 1.0)).array().sqrt();
  b.max_dev.resize(static_cast<Eigen::Index>(draws.size()));
  for (std::size_t s = 0; s < draws.size(); ++s) {
    double mx = 0.0;
    for (Eigen::Index l = 0; l < m; ++l)
      if (b.sd[l] >= kDegenerateSd) mx = std::max(mx, std::abs(draws[s][l] - b.mean[l]) / b.sd[l]);
    b.max_dev[static_cast<Eigen::Index>(s)] = mx;
  }
  return b;
}

double empirical_quantile_upper(Eigen::VectorXd v, double level) {
  std::sort(v.data(), v.data() + v.size());
  auto idx = static_cast<Eigen::Index>(std::ceil(level * static_cast<double>(v.size()))) - 1;
  idx = std::clamp<Eigen::Index>(idx, 0, v.size() - 1);
  return v[idx];
}

CredibleBand make_band(const BandMoments& b, double q, double level) {
  CredibleBand band;
  band.level = level;
  band.multiplier = q;
  band.mean = b.mean;
  band.lower = b.mean - q * b.sd;
  band.upper = b.mean + q * b.sd;
  for (Eigen::Index l = 0; l < b.mean.size(); ++l) {
    if (b.sd[l] < kDegenerateSd) {
      band.lower[l] = b.lo[l];
      band.upper[l] = b.hi[l];
    }
  }
  return band;
}

void check_level(double level) {
  if (!(level > 0.0 && level < 1.0)) throw DomainError("band level must lie in (0, 1)");
}

}  // namespace

CredibleBand simultaneous_band(const std::vector<Eigen::VectorXd>& draws, double level) {
  check_level(level);
  const BandMoments b = band_moments(draws);
  return make_band(b, empirical_quantile_upper(b.max_dev, level), level);
}

std::vector<CredibleBand> simultaneous_bands_pooled(const std::vector<std::vector<Eigen::VectorXd>>& families,
                                                    double level) {
  check_level(level);
  if (families.empty()) return {};
  std::vector<BandMoments> moments;
  for (const auto& f : families) moments.push_back(band_moments(f));
  Eigen::VectorXd joint = moments.front().max_dev;
  for (const auto& b : moments) {
    if (b.max_dev.size() != joint.size()) throw DimensionError("pooled bands need equal draw counts");
    joint = joint.cwiseMax(b.max_dev);
  }
  const double q = empirical_quantile_upper(joint, level);
  std::vector<CredibleBand> out;
  for (const auto& b : moments) out.push_back(make_band(b, q, level));
  return out;
}

std::vector<Eigen::VectorXd> mu_draws(const PosteriorDraws& draws) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(draws.size());
  for (const auto& s : draws.states) out.push_back(s.mu);
  return out;
}

std::vector<Eigen::VectorXd> loading_draws(const PosteriorDraws& draws, Eigen::Index k) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(draws.size());
  for (const auto& s : draws.states) out.push_back(std::sqrt(s.psi[k]) * s.lambda.row(k).transpose());
  return out;
}

std::vector<Eigen::VectorXd> fitted_draws(const PosteriorDraws& draws, Eigen::Index subject) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(draws.size());
  for (const auto& s : draws.states) out.push_back(fitted_values(s, subject));
  return out;
}

Eigen::VectorXd posterior_mean(const std::vector<Eigen::VectorXd>& draws) {
  if (draws.empty()) throw EmptyDataset("posterior_mean: no draws");
  Eigen::VectorXd m = Eigen::VectorXd::Zero(draws.front().size());
  for (const auto& d : draws) m += d;
  return m / static_cast<double>(draws.size());
}

FactorSelection select_num_factors(const AlignedDraws& aligned, double level, BandPooling pooling) {
  const PosteriorDraws& d = aligned.draws;
  if (d.size() == 0) throw EmptyDataset("select_num_factors: no saved draws");
  const Eigen::Index k = d.states.front().num_factors();
  FactorSelection sel;
  if (pooling == BandPooling::pooled) {
    std::vector<std::vector<Eigen::VectorXd>> families;
    for (Eigen::Index j = 0; j < k; ++j) families.push_back(loading_draws(d, j));
    sel.bands = simultaneous_bands_pooled(families, level);
  } else {
    for (Eigen::Index j = 0; j < k; ++j) sel.bands.push_back(simultaneous_band(loading_draws(d, j), level));
  }
  for (const auto& b : sel.bands) {
    sel.keep.push_back(b.excludes_zero());
    if (sel.keep.back()) ++sel.k_selected;
  }
  return sel;
}

EssResult effective_sample_size(const Eigen::VectorXd& series) {
  const Eigen::Index n = series.size();
  if (n < 10) throw DomainError("effective_sample_size needs at least 10 values");
  if (!series.allFinite()) throw DomainError("effective_sample_size: non-finite value in series");
  const double nd = static_cast<double>(n);
  const Eigen::VectorXd x = series.array() - series.mean();
  const double scale = series.cwiseAbs().maxCoeff();
  auto autocov = [&](Eigen::Index lag) { return x.head(n - lag).dot(x.tail(n - lag)) / nd; };
  const double g0 = autocov(0);
  if (!(g0 > 1e-28 * std::max(1.0, scale * scale))) return {nd, true};

  // initial positive sequence of paired autocorrelations
  double tau = -1.0;
  for (Eigen::Index t = 0; 2 * t + 1 < n; ++t) {
    const double pair = (autocov(2 * t) + autocov(2 * t + 1)) / g0;
    if (!(pair > 0.0)) break;
    tau += 2.0 * pair;
  }
  const double ess = nd / tau;
  return {std::clamp(ess, 1.0, nd), false};
}

Eigen::VectorXd loading_norm_trace(const PosteriorDraws& draws, Eigen::Index k, const Grid& grid) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(draws.size()));
  for (std::size_t s = 0; s < draws.size(); ++s) {
    const auto& st = draws.states[s];
    if (k < 0 || k >= st.num_factors()) throw DomainError("loading index out of range");
    const Eigen::VectorXd l = st.lambda.row(k).transpose();
    out[static_cast<Eigen::Index>(s)] = std::sqrt(st.psi[k] * inner_product(l, l, grid));
  }
  return out;
}

WaicResult waic(const Eigen::MatrixXd& ll) {
  const Eigen::Index s = ll.rows(), p = ll.cols();
  if (s < 2) throw DomainError("waic needs at least two draws for the variance term");
  WaicResult r;
  r.pointwise.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const Eigen::VectorXd c = ll.col(j);
    const double mx = c.maxCoeff();
    const double lme = mx + std::log((c.array() - mx).exp().sum() / static_cast<double>(s));
    const double mean = c.mean();
    const double var = (c.array() - mean).square().sum() / static_cast<double>(s - 1);
    r.lppd += lme;
    r.p_waic += var;
    r.pointwise[j] = -2.0 * (lme - var);
  }
  r.waic = -2.0 * (r.lppd - r.p_waic);
  return r;
}

WaicComparison compare_waic(const WaicResult& a, const WaicResult& b) {
  const Eigen::Index p = a.pointwise.size();
  if (b.pointwise.size() != p) throw DimensionError("compare_waic: models scored on different observations");
  if (p < 2) throw DomainError("compare_waic needs at least two observations");
  const Eigen::VectorXd d = a.pointwise - b.pointwise;
  const double mean = d.mean();
  const double sd = std::sqrt((d.array() - mean).square().sum() / static_cast<double>(p - 1));
  return {d.sum(), std::sqrt(static_cast<double>(p)) * sd};
}

double mise(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth, const Grid& grid) {
  if (estimate.size() != truth.size() || estimate.size() != grid.size())
    throw DimensionError("mise: estimate, truth and grid must have equal length");
  return grid.weights().dot((estimate - truth).array().square().matrix());
}

Eigen::VectorXd magnitude_statistic(const std::vector<Eigen::VectorXd>& values) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) out[static_cast<Eigen::Index>(i)] = values[i].norm();
  return out;
}

Eigen::VectorXd pointwise_mean_statistic(const SparseFunctionalDataset& layout,
                                         const std::vector<Eigen::VectorXd>& values) {
  const Eigen::Index m = layout.grid().size();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(m);
  for (Eigen::Index i = 0; i < layout.num_subjects(); ++i)
    layout.subject(i).map.scatter_add(values[static_cast<std::size_t>(i)], sum);
  const Eigen::VectorXd counts = layout.observation_counts();
  Eigen::VectorXd out(m);
  for (Eigen::Index l = 0; l < m; ++l)
    out[l] = counts[l] > 0.0 ? sum[l] / counts[l] : std::numeric_limits<double>::quiet_NaN();
  return out;
}

Eigen::MatrixXd pairwise_covariance(const SparseFunctionalDataset& layout, const std::vector<Eigen::VectorXd>& values) {
  const Eigen::Index m = layout.grid().size();
  Eigen::MatrixXd cnt = Eigen::MatrixXd::Zero(m, m), sa = cnt, sb = cnt, sab = cnt;
  for (Eigen::Index i = 0; i < layout.num_subjects(); ++i) {
    const auto& map = layout.subject(i).map;
    const auto& v = values[static_cast<std::size_t>(i)];
    for (Eigen::Index a = 0; a < map.size(); ++a) {
      for (Eigen::Index b = 0; b < map.size(); ++b) {
        const Eigen::Index la = map[a], lb = map[b];
        cnt(la, lb) += 1.0;
        sa(la, lb) += v[a];
        sb(la, lb) += v[b];
        sab(la, lb) += v[a] * v[b];
      }
    }
  }
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b)
      if (cnt(a, b) >= 2.0) cov(a, b) = (sab(a, b) - sa(a, b) * sb(a, b) / cnt(a, b)) / (cnt(a, b) - 1.0);
  return cov;
}

namespace {

Eigen::VectorXd compute_statistic(const SparseFunctionalDataset& layout, const std::vector<Eigen::VectorXd>& values,
                                  PredictiveStatistic statistic, Eigen::Index eigen_index) {
  switch (statistic) {
    case PredictiveStatistic::magnitude:
      return magnitude_statistic(values);
    case PredictiveStatistic::pointwise_mean:
      return pointwise_mean_statistic(layout, values);
    case PredictiveStatistic::covariance_eigenvalue: {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(pairwise_covariance(layout, values), Eigen::EigenvaluesOnly);
      // ascending order
      return Eigen::VectorXd::Constant(1, es.eigenvalues()[layout.grid().size() - eigen_index]);
    }
  }
  throw DomainError("unknown predictive statistic");
}

}  // namespace

PredictiveCheck posterior_predictive(const PosteriorDraws& draws, const SparseFunctionalDataset& data,
                                     PredictiveStatistic statistic, Rng& rng, Eigen::Index eigen_index) {
  if (data.kind() != DataKind::continuous) throw KindMismatch("posterior predictive checks need continuous data");
  if (draws.size() == 0) throw EmptyDataset("posterior_predictive: no saved draws");
  if (statistic == PredictiveStatistic::covariance_eigenvalue) {
    if (data.num_subjects() < 2) throw DomainError("covariance eigenvalue statistic needs at least two subjects");
    if (eigen_index < 1 || eigen_index > data.grid().size())
      throw DomainError("eigenvalue index must lie in 1.." + std::to_string(data.grid().size()));
  }
  std::vector<Eigen::VectorXd> observed;
  for (const auto& s : data.subjects()) observed.push_back(s.values);

  PredictiveCheck out;
  out.observed = compute_statistic(data, observed, statistic, eigen_index);
  out.replicated.resize(static_cast<Eigen::Index>(draws.size()), out.observed.size());
  std::vector<Eigen::VectorXd> rep(observed.size());
  for (std::size_t s = 0; s < draws.size(); ++s) {
    const auto& st = draws.states[s];
    const double sd = std::sqrt(st.sigma_sq);
    for (Eigen::Index i = 0; i < data.num_subjects(); ++i) {
      const Eigen::VectorXd f = fitted_values(st, data, i);
      rep[static_cast<std::size_t>(i)] = f + sd * rng.normal_vector(f.size());
    }
    out.replicated.row(static_cast<Eigen::Index>(s)) = compute_statistic(data, rep, statistic, eigen_index).transpose();
  }
  return out;
}

}  // namespace nemo
