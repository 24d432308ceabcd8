#include "nemo/simstudy.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <thread>

#include "nemo/analysis.hpp"
#include "nemo/errors.hpp"
#include "nemo/io.hpp"

namespace nemo {

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::ffa:
      return "ffa";
    case Scenario::gffa_binary:
      return "gffa-binary";
    case Scenario::regression:
      return "regression";
    case Scenario::nu_sensitivity:
      return "nu-sensitivity";
  }
  return "?";
}

Scenario parse_scenario(const std::string& s) {
  for (Scenario x : {Scenario::ffa, Scenario::gffa_binary, Scenario::regression, Scenario::nu_sensitivity})
    if (to_string(x) == s) return x;
  throw ConfigError("unknown scenario '" + s + "' (expected ffa, gffa-binary, regression or nu-sensitivity)");
}

void StudySpec::validate() const {
  if (replicates < 1) throw ConfigError("replicate count must be at least 1");
  if (scenario != Scenario::nu_sensitivity && sparsity_levels.empty())
    throw ConfigError("at least one sparsity level is required");
  for (double s : sparsity_levels)
    if (!(s >= 0.0 && s < 1.0)) throw ConfigError("sparsity levels must lie in [0, 1)");
  if (k_fit < 1) throw ConfigError("k_fit must be at least 1");
  if (!(band_level > 0.0 && band_level < 1.0)) throw ConfigError("band_level must lie in (0, 1)");
  if (scenario == Scenario::nu_sensitivity) {
    if (nu_values.empty()) throw ConfigError("nu-sensitivity needs at least one nu value");
    for (double v : nu_values)
      if (!(v > 0.0)) throw ConfigError("nu values must be positive");
  }
  generator.validate();
  prior.validate();
  chain.validate();
}

StudySpec StudySpec::defaults(Scenario scenario, bool full) {
  StudySpec s;
  s.scenario = scenario;
  s.generator.n = full ? 100 : 50;
  s.generator.m = 30;
  s.chain.n_iter = full ? 10000 : 2000;
  s.chain.burn_in = full ? 5000 : 500;
  s.chain.record_pointwise = false;
  s.replicates = full ? 100 : 20;
  switch (scenario) {
    case Scenario::ffa:
      break;
    case Scenario::gffa_binary: {
      const SimulationConfig b = binary_simulation_defaults();
      s.generator.mu_kernel = b.mu_kernel;
      s.generator.loading_kernel = b.loading_kernel;
      s.replicates = full ? 100 : 10;
      s.select_k = false;
      break;
    }
    case Scenario::regression:
      s.generator.k = 1;
      s.generator.q = 1;
      s.k_fit = 1;
      s.select_k = false;
      s.replicates = full ? 100 : 50;
      s.sparsity_levels = {0.5};
      break;
    case Scenario::nu_sensitivity:
      s.generator.domain_lo = 0.0;
      s.generator.domain_hi = std::numbers::pi;
      s.generator.sigma_sq = 0.25;
      s.sparsity_levels = {0.0};
      s.replicates = 1;
      s.chain.n_iter = 10000;
      s.chain.burn_in = 5000;
      s.select_k = false;
      break;
  }
  return s;
}

namespace {

double interpolated_quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::uint64_t scenario_tag(Scenario s) { return static_cast<std::uint64_t>(s) + 1; }

ChainConfig seeded_chain(const StudySpec& spec, int replicate, std::size_t sparsity_index, std::uint64_t stage) {
  ChainConfig c = spec.chain;
  c.seed = Rng::derived(spec.master_seed, {scenario_tag(spec.scenario), static_cast<std::uint64_t>(replicate),
                                           sparsity_index, stage})
               .next_u64();
  return c;
}

// Posterior means after absorbing the expansion and aligning to the pivot.
struct PosteriorSummary {
  Eigen::VectorXd mu;
  Eigen::MatrixXd lambda;  // K x m
  AlignedDraws aligned;
};

PosteriorSummary summarize_fit(const PosteriorDraws& draws, const Grid& grid) {
  PosteriorSummary s;
  s.aligned = align_draws(absorb_expansion(draws), grid);
  const auto& st = s.aligned.draws.states;
  s.mu = posterior_mean(mu_draws(s.aligned.draws));
  s.lambda = Eigen::MatrixXd::Zero(st.front().num_factors(), grid.size());
  for (const auto& x : st) s.lambda += x.lambda;
  s.lambda /= static_cast<double>(st.size());
  return s;
}

// MISE of each true loading against the matched estimate (zero if unmatched).
void score_loadings(const PosteriorSummary& fit, const FFAState& truth, const Grid& grid, int replicate,
                    double sparsity, std::vector<ReplicateRow>& rows) {
  const FactorTransform t = match_to_reference(fit.lambda, truth.lambda, grid);
  const Eigen::Index matched = std::min(fit.lambda.rows(), truth.lambda.rows());
  for (Eigen::Index r = 0; r < truth.lambda.rows(); ++r) {
    Eigen::VectorXd est = Eigen::VectorXd::Zero(grid.size());
    if (r < matched) est = t.sign[r] * fit.lambda.row(t.perm[static_cast<std::size_t>(r)]).transpose();
    rows.push_back({replicate, sparsity, "mise_lambda" + std::to_string(r + 1),
                    mise(est, truth.lambda.row(r).transpose(), grid)});
  }
}

double mean_curve_mise(const PosteriorDraws& draws, const Eigen::MatrixXd& truth_curves, const Grid& grid,
                       bool probit) {
  Eigen::MatrixXd est = Eigen::MatrixXd::Zero(truth_curves.rows(), truth_curves.cols());
  for (const auto& s : draws.states) {
    const Eigen::MatrixXd f = latent_curves(s);
    est += probit ? Eigen::MatrixXd(f.unaryExpr([](double v) { return normal_cdf(v); })) : f;
  }
  est /= static_cast<double>(draws.size());
  const Eigen::MatrixXd truth = probit ? Eigen::MatrixXd(truth_curves.unaryExpr([](double v) { return normal_cdf(v); }))
                                       : truth_curves;
  double total = 0.0;
  for (Eigen::Index i = 0; i < truth.rows(); ++i)
    total += mise(est.row(i).transpose(), truth.row(i).transpose(), grid);
  return total / static_cast<double>(truth.rows());
}

void maybe_write_trace(const StudySpec& spec, int replicate, std::size_t sparsity_index, const PosteriorDraws& d) {
  if (!spec.write_traces || spec.output_dir.empty()) return;
  const auto dir = spec.output_dir / "traces";
  ensure_directory(dir);
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < d.log_likelihood_trace.size(); ++i)
    rows.push_back({std::to_string(i), format_double(d.log_likelihood_trace[i])});
  write_csv(dir / ("trace_s" + std::to_string(sparsity_index) + "_r" + std::to_string(replicate) + ".csv"),
            {"iteration", "log_likelihood"}, rows);
}

std::vector<ReplicateRow> replicate_ffa(const StudySpec& spec, int r, std::size_t si, const SimulatedData& sim) {
  const double sp = spec.sparsity_levels[si];
  const Grid& grid = sim.data.grid();
  std::vector<ReplicateRow> rows;
  Eigen::Index k_fit = spec.k_fit;
  if (spec.select_k) {
    const auto over = run_ffa_chain(sim.data, spec.prior, seeded_chain(spec, r, si, 1), spec.prior.k_max);
    const auto aligned = align_draws(absorb_expansion(over), grid);
    const auto sel = select_num_factors(aligned, spec.band_level);
    rows.push_back({r, sp, "k_selected", static_cast<double>(sel.k_selected)});
    rows.push_back({r, sp, "k_correct", sel.k_selected == spec.generator.k ? 1.0 : 0.0});
    k_fit = std::max<Eigen::Index>(1, sel.k_selected);
  }
  const auto draws = run_ffa_chain(sim.data, spec.prior, seeded_chain(spec, r, si, 2), k_fit);
  maybe_write_trace(spec, r, si, draws);
  const auto fit = summarize_fit(draws, grid);
  rows.push_back({r, sp, "mise_mu", mise(fit.mu, sim.truth.mu, grid)});
  score_loadings(fit, sim.truth, grid, r, sp, rows);
  rows.push_back({r, sp, "mise_f", mean_curve_mise(draws, sim.curves, grid, false)});
  return rows;
}

std::vector<ReplicateRow> replicate_binary(const StudySpec& spec, int r, std::size_t si, const SimulatedData& sim) {
  const double sp = spec.sparsity_levels[si];
  const auto draws = run_gffa_chain(sim.data, spec.prior, seeded_chain(spec, r, si, 2), spec.k_fit);
  maybe_write_trace(spec, r, si, draws);
  return {{r, sp, "mise_phi_f", mean_curve_mise(draws, sim.curves, sim.data.grid(), true)}};
}

std::vector<ReplicateRow> replicate_regression(const StudySpec& spec, int r, std::size_t si,
                                               const SimulatedData& sim) {
  const double sp = spec.sparsity_levels[si];
  const Grid& grid = sim.data.grid();
  const auto draws =
      run_regression_chain(sim.data, *sim.truth.covariates, spec.prior, seeded_chain(spec, r, si, 2), spec.k_fit);
  maybe_write_trace(spec, r, si, draws);
  const auto fit = summarize_fit(draws, grid);
  // labels and signs of the fitted factors follow the matched true loadings
  const FactorTransform t = match_to_reference(fit.lambda, sim.truth.lambda, grid);
  std::vector<ReplicateRow> rows;
  const Eigen::MatrixXd& theta_true = *sim.truth.theta;
  const Eigen::Index matched = std::min(fit.lambda.rows(), theta_true.rows());
  const double tail = (1.0 - spec.band_level) / 2.0;
  for (Eigen::Index k = 0; k < matched; ++k) {
    const Eigen::Index src = t.perm[static_cast<std::size_t>(k)];
    for (Eigen::Index q = 0; q < theta_true.cols(); ++q) {
      std::vector<double> v;
      for (const auto& s : fit.aligned.draws.states) v.push_back(t.sign[k] * (*s.theta)(src, q));
      const double lo = interpolated_quantile(v, tail), hi = interpolated_quantile(v, 1.0 - tail);
      const double truth = theta_true(k, q);
      rows.push_back({r, sp, "theta_covered", (truth >= lo && truth <= hi) ? 1.0 : 0.0});
      rows.push_back({r, sp, "theta_ci_width", hi - lo});
    }
  }
  rows.push_back({r, sp, "mise_f", mean_curve_mise(draws, sim.curves, grid, false)});
  return rows;
}

std::vector<std::string> summary_header() {
  return {"sparsity", "quantity", "count", "mean", "median", "q25", "q75", "min", "max"};
}

}  // namespace

std::vector<SummaryRow> summarize_rows(const std::vector<ReplicateRow>& rows) {
  std::map<std::pair<double, std::string>, std::vector<double>> groups;
  for (const auto& r : rows) groups[{r.sparsity, r.quantity}].push_back(r.value);
  std::vector<SummaryRow> out;
  for (const auto& [key, v] : groups) {
    SummaryRow s;
    s.sparsity = key.first;
    s.quantity = key.second;
    s.count = static_cast<int>(v.size());
    double sum = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / static_cast<double>(v.size());
    s.median = interpolated_quantile(v, 0.5);
    s.q25 = interpolated_quantile(v, 0.25);
    s.q75 = interpolated_quantile(v, 0.75);
    s.min = *std::min_element(v.begin(), v.end());
    s.max = *std::max_element(v.begin(), v.end());
    out.push_back(std::move(s));
  }
  return out;
}

double StudyReport::median(double sparsity, const std::string& quantity) const {
  for (const auto& s : summary)
    if (s.sparsity == sparsity && s.quantity == quantity) return s.median;
  return std::numeric_limits<double>::quiet_NaN();
}

double StudyReport::mean(double sparsity, const std::string& quantity) const {
  for (const auto& s : summary)
    if (s.sparsity == sparsity && s.quantity == quantity) return s.mean;
  return std::numeric_limits<double>::quiet_NaN();
}

std::vector<ReplicateRow> run_replicate(const StudySpec& spec, int replicate, std::size_t sparsity_index) {
  if (sparsity_index >= spec.sparsity_levels.size()) throw ConfigError("sparsity index out of range");
  SimulationConfig cfg = spec.generator;
  cfg.sparsity = spec.sparsity_levels[sparsity_index];
  // Same stream at every sparsity level: truth and noise are shared, only the
  // thinning differs.
  Rng rng = Rng::derived(spec.master_seed, {scenario_tag(spec.scenario), static_cast<std::uint64_t>(replicate)});
  switch (spec.scenario) {
    case Scenario::ffa:
      return replicate_ffa(spec, replicate, sparsity_index, simulate_ffa(cfg, rng));
    case Scenario::gffa_binary:
      return replicate_binary(spec, replicate, sparsity_index, simulate_gffa_binary(cfg, rng));
    case Scenario::regression:
      return replicate_regression(spec, replicate, sparsity_index, simulate_latent_regression(cfg, rng));
    case Scenario::nu_sensitivity:
      break;
  }
  throw ConfigError("run_replicate does not handle the nu-sensitivity scenario");
}

namespace {

// Runs task(i) for i in [0, count) on up to `parallelism` threads.
template <class F>
void parallel_for(std::size_t count, int parallelism, F&& task) {
  const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, parallelism)));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) task(i);
  };
  if (workers <= 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

}  // namespace

StudyReport run_study(const StudySpec& spec, int parallelism) {
  spec.validate();
  if (spec.scenario == Scenario::nu_sensitivity) throw ConfigError("use run_nu_sensitivity for this scenario");
  const std::size_t levels = spec.sparsity_levels.size();
  const std::size_t tasks = levels * static_cast<std::size_t>(spec.replicates);
  std::vector<std::vector<ReplicateRow>> results(tasks);
  std::vector<std::optional<std::string>> errors(tasks);
  parallel_for(tasks, parallelism, [&](std::size_t i) {
    const std::size_t si = i / static_cast<std::size_t>(spec.replicates);
    const int r = static_cast<int>(i % static_cast<std::size_t>(spec.replicates));
    try {
      results[i] = run_replicate(spec, r, si);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  StudyReport report;
  for (std::size_t i = 0; i < tasks; ++i) {
    const std::size_t si = i / static_cast<std::size_t>(spec.replicates);
    const int r = static_cast<int>(i % static_cast<std::size_t>(spec.replicates));
    if (errors[i]) report.failures.push_back({r, spec.sparsity_levels[si], *errors[i]});
    report.rows.insert(report.rows.end(), results[i].begin(), results[i].end());
  }
  report.summary = summarize_rows(report.rows);

  if (!spec.output_dir.empty()) {
    ensure_directory(spec.output_dir);
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : report.rows)
      rows.push_back({std::to_string(r.replicate), format_double(r.sparsity), r.quantity, format_double(r.value)});
    write_csv(spec.output_dir / "replicates.csv", {"replicate", "sparsity", "quantity", "value"}, rows);
    rows.clear();
    for (const auto& s : report.summary)
      rows.push_back({format_double(s.sparsity), s.quantity, std::to_string(s.count), format_double(s.mean),
                      format_double(s.median), format_double(s.q25), format_double(s.q75), format_double(s.min),
                      format_double(s.max)});
    write_csv(spec.output_dir / "study_summary.csv", summary_header(), rows);
    if (!report.failures.empty()) {
      rows.clear();
      for (const auto& f : report.failures)
        rows.push_back({std::to_string(f.replicate), format_double(f.sparsity), f.message});
      write_csv(spec.output_dir / "failures.csv", {"replicate", "sparsity", "message"}, rows);
    }
  }
  return report;
}

std::uint64_t dataset_hash(const SparseFunctionalDataset& data) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  mix(data.grid().points().data(), sizeof(double) * static_cast<std::size_t>(data.grid().size()));
  for (const auto& s : data.subjects()) {
    mix(s.id.data(), s.id.size());
    for (Eigen::Index j = 0; j < s.map.size(); ++j) {
      const auto idx = static_cast<std::int64_t>(s.map[j]);
      mix(&idx, sizeof idx);
    }
    mix(s.values.data(), sizeof(double) * static_cast<std::size_t>(s.values.size()));
  }
  return h;
}

SimulatedData nu_sensitivity_dataset(const StudySpec& spec) {
  const SimulationConfig& cfg = spec.generator;
  cfg.validate();
  Rng rng = Rng::derived(spec.master_seed, {scenario_tag(Scenario::nu_sensitivity)});
  const Grid grid = Grid::uniform(cfg.domain_lo, cfg.domain_hi, cfg.m);
  FFAState truth;
  truth.mu_kernel = cfg.mu_kernel;
  truth.mu = sample_gp(grid, cfg.mu_kernel, rng);
  truth.lambda.resize(2, cfg.m);
  truth.lambda.row(0) = grid.points().array().sin().transpose();
  truth.lambda.row(1) = 0.5 * (2.0 * grid.points().array()).sin().transpose();
  truth.loading_kernels.assign(2, cfg.loading_kernel);
  truth.psi = Eigen::VectorXd::Ones(2);
  truth.eta.resize(cfg.n, 2);
  for (Eigen::Index k = 0; k < 2; ++k) truth.eta.col(k) = sample_eta_prior(cfg.n, cfg.nu_eta, 1.0, rng);
  truth.sigma_sq = cfg.sigma_sq;
  Eigen::MatrixXd curves = latent_curves(truth);
  Eigen::MatrixXd y = curves;
  const double sd = std::sqrt(cfg.sigma_sq);
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] += sd * rng.normal();
  const double sparsity = spec.sparsity_levels.empty() ? 0.0 : spec.sparsity_levels.front();
  auto data = thin_observations(grid, y, sparsity, DataKind::continuous, rng);
  return {std::move(data), std::move(truth), std::move(curves)};
}

const NuSensitivityRow* NuSensitivityReport::find(double nu, Eigen::Index factor) const {
  for (const auto& r : rows)
    if (r.nu_lambda == nu && r.factor == factor) return &r;
  return nullptr;
}

NuSensitivityReport run_nu_sensitivity(const StudySpec& spec, int parallelism) {
  spec.validate();
  const SimulatedData sim = nu_sensitivity_dataset(spec);
  const Grid& grid = sim.data.grid();
  const Eigen::Index k_max = spec.prior.k_max;
  ChainConfig chain = spec.chain;
  chain.seed = Rng::derived(spec.master_seed, {scenario_tag(Scenario::nu_sensitivity), 1}).next_u64();

  // shared initialization: the prior draw made by a chain at the first nu
  const FFAState init = ChainRunner(sim.data, spec.prior, chain, k_max, ChainKind::ffa).state();

  NuSensitivityReport report;
  report.data_hash = dataset_hash(sim.data);
  const std::size_t count = spec.nu_values.size();
  std::vector<std::vector<NuSensitivityRow>> rows(count);
  std::vector<std::vector<Eigen::VectorXd>> traces(count);
  std::vector<std::optional<std::string>> errors(count);

  parallel_for(count, parallelism, [&](std::size_t i) {
    try {
      PriorConfig prior = spec.prior;
      prior.nu_lambda = spec.nu_values[i];
      ChainRunner runner(sim.data, prior, chain, k_max, ChainKind::ffa);
      runner.set_state(init);
      runner.run();
      const PosteriorDraws draws = runner.take_draws();
      for (Eigen::Index k = 0; k < k_max; ++k) traces[i].push_back(loading_norm_trace(draws, k, grid));
      // which fitted slot carries each true loading, by the posterior mean
      Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(k_max, grid.size());
      for (const auto& s : absorb_expansion(draws).states) mean += s.lambda;
      mean /= static_cast<double>(draws.size());
      const FactorTransform t = match_to_reference(mean, sim.truth.lambda, grid);
      for (Eigen::Index r = 0; r < std::min<Eigen::Index>(2, k_max); ++r) {
        const Eigen::VectorXd& tr = traces[i][static_cast<std::size_t>(t.perm[static_cast<std::size_t>(r)])];
        NuSensitivityRow row;
        row.nu_lambda = spec.nu_values[i];
        row.factor = r + 1;
        const EssResult e = effective_sample_size(tr);
        row.ess = e.value;
        row.degenerate = e.degenerate;
        row.mean_norm = tr.mean();
        row.sd_norm = std::sqrt((tr.array() - tr.mean()).square().sum() / static_cast<double>(tr.size() - 1));
        const Eigen::VectorXd truth = sim.truth.lambda.row(r).transpose();
        row.true_norm = std::sqrt(inner_product(truth, truth, grid));
        rows[i].push_back(row);
      }
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  for (std::size_t i = 0; i < count; ++i) {
    if (errors[i]) report.failures.push_back({0, spec.nu_values[i], *errors[i]});
    report.rows.insert(report.rows.end(), rows[i].begin(), rows[i].end());
    report.traces.push_back(std::move(traces[i]));
  }

  if (!spec.output_dir.empty()) {
    ensure_directory(spec.output_dir);
    std::vector<std::vector<std::string>> out;
    for (const auto& r : report.rows)
      out.push_back({format_double(r.nu_lambda), std::to_string(r.factor), format_double(r.ess),
                     r.degenerate ? "1" : "0", format_double(r.mean_norm), format_double(r.sd_norm),
                     format_double(r.true_norm), std::to_string(report.data_hash)});
    write_csv(spec.output_dir / "ess_by_nu.csv",
              {"nu_lambda", "factor", "ess", "degenerate", "mean_norm", "sd_norm", "true_norm", "data_hash"}, out);
    if (spec.write_traces) {
      for (std::size_t i = 0; i < count; ++i) {
        if (report.traces[i].empty()) continue;
        std::vector<std::vector<std::string>> tr;
        std::vector<std::string> header{"draw"};
        for (std::size_t k = 0; k < report.traces[i].size(); ++k) header.push_back("norm_lambda" + std::to_string(k + 1));
        for (Eigen::Index d = 0; d < report.traces[i][0].size(); ++d) {
          std::vector<std::string> row{std::to_string(d)};
          for (const auto& t : report.traces[i]) row.push_back(format_double(t[d]));
          tr.push_back(std::move(row));
        }
        write_csv(spec.output_dir / ("trace_nu_" + format_double(spec.nu_values[i]) + ".csv"), header, tr);
      }
    }
    if (!report.failures.empty()) {
      std::vector<std::vector<std::string>> f;
      for (const auto& x : report.failures) f.push_back({format_double(x.sparsity), x.message});
      write_csv(spec.output_dir / "failures.csv", {"nu_lambda", "message"}, f);
    }
  }
  return report;
}

}  // namespace nemo
