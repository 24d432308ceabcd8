#include "nemo/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "nemo/errors.hpp"
#include "nemo/io.hpp"
#include "nemo/serialization.hpp"
#include "nemo/simstudy.hpp"

namespace nemo {

namespace {

void write_band(const std::filesystem::path& path, const Grid& grid, const CredibleBand& b) {
  std::vector<std::vector<std::string>> rows;
  for (Eigen::Index l = 0; l < grid.size(); ++l)
    rows.push_back({format_double(grid.points()[l]), format_double(b.lower[l]), format_double(b.mean[l]),
                    format_double(b.upper[l])});
  write_csv(path, {"t", "lower", "mean", "upper"}, rows);
}

std::string safe_file_part(const std::string& id) {
  std::string s = id;
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  return s;
}

}  // namespace

SummaryResult write_summaries(const PosteriorDraws& draws, const SparseFunctionalDataset& data,
                              const std::filesystem::path& out_dir, const SummaryOptions& options) {
  if (draws.size() < 2) throw DomainError("summaries need at least two saved draws");
  ensure_directory(out_dir);
  const Grid& grid = data.grid();
  const bool binary = draws.chain_kind == ChainKind::gffa_binary;
  const AlignedDraws aligned = align_draws(absorb_expansion(draws), grid);
  const PosteriorDraws& ad = aligned.draws;
  const Eigen::Index k = ad.states.front().num_factors();
  SummaryResult res;
  auto emit = [&](const std::string& name) { res.files.push_back(name); };

  write_band(out_dir / "mu_band.csv", grid, simultaneous_band(mu_draws(ad), options.band_level));
  emit("mu_band.csv");

  const FactorSelection sel = select_num_factors(aligned, options.band_level, options.pooling);
  res.k_selected = sel.k_selected;
  res.keep = sel.keep;
  for (Eigen::Index j = 0; j < k; ++j) {
    if (!sel.keep[static_cast<std::size_t>(j)]) continue;
    const std::string name = "loading_" + std::to_string(j + 1) + "_band.csv";
    write_band(out_dir / name, grid, sel.bands[static_cast<std::size_t>(j)]);
    emit(name);
  }

  // fitted trajectories, on the response scale for binary data
  const bool any_kept = sel.k_selected > 0;
  for (Eigen::Index i = 0; any_kept && i < data.num_subjects(); ++i) {
    std::vector<Eigen::VectorXd> f = fitted_draws(ad, i);
    if (binary)
      for (auto& v : f) v = normal_cdf(v);
    const CredibleBand b = simultaneous_band(f, options.band_level);
    const auto& s = data.subject(i);
    std::vector<std::string> observed(static_cast<std::size_t>(grid.size()));
    for (Eigen::Index j = 0; j < s.map.size(); ++j) observed[static_cast<std::size_t>(s.map[j])] = format_double(s.values[j]);
    std::vector<std::vector<std::string>> rows;
    for (Eigen::Index l = 0; l < grid.size(); ++l)
      rows.push_back({format_double(grid.points()[l]), format_double(b.lower[l]), format_double(b.mean[l]),
                      format_double(b.upper[l]), observed[static_cast<std::size_t>(l)]});
    const std::string name = "fitted_subject_" + safe_file_part(s.id) + ".csv";
    write_csv(out_dir / name, {"t", "lower", "mean", "upper", "observed"}, rows);
    emit(name);
  }

  // covariate effects Lambda^T theta_q over kept factors
  if (ad.states.front().theta && sel.k_selected > 0) {
    const Eigen::Index q = ad.states.front().theta->cols();
    std::vector<std::vector<std::string>> rows;
    for (std::size_t d = 0; d < ad.size(); ++d) {
      const auto& st = ad.states[d];
      for (Eigen::Index c = 0; c < q; ++c) {
        Eigen::VectorXd effect = Eigen::VectorXd::Zero(grid.size());
        for (Eigen::Index j = 0; j < k; ++j)
          if (sel.keep[static_cast<std::size_t>(j)]) effect += (*st.theta)(j, c) * st.lambda.row(j).transpose();
        for (Eigen::Index l = 0; l < grid.size(); ++l)
          rows.push_back({std::to_string(d), std::to_string(c + 1), format_double(grid.points()[l]),
                          format_double(effect[l])});
      }
    }
    write_csv(out_dir / "theta_effects.csv", {"draw", "covariate", "t", "value"}, rows);
    emit("theta_effects.csv");
  }

  // ESS of scalar summaries
  {
    std::vector<std::vector<std::string>> rows;
    auto add = [&](const std::string& name, const Eigen::VectorXd& series) {
      if (series.size() < 10) return;
      const EssResult e = effective_sample_size(series);
      rows.push_back({name, format_double(e.value), e.degenerate ? "1" : "0"});
    };
    const Eigen::Index n_draws = static_cast<Eigen::Index>(draws.size());
    Eigen::VectorXd ll(n_draws), s2(n_draws);
    for (Eigen::Index d = 0; d < n_draws; ++d) {
      ll[d] = d < static_cast<Eigen::Index>(draws.state_log_likelihood.size())
                  ? draws.state_log_likelihood[static_cast<std::size_t>(d)]
                  : 0.0;
      s2[d] = draws.states[static_cast<std::size_t>(d)].sigma_sq;
    }
    add("log_likelihood", ll);
    if (!binary) add("sigma_sq", s2);
    for (Eigen::Index j = 0; j < k; ++j) add("norm_lambda" + std::to_string(j + 1), loading_norm_trace(ad, j, grid));
    write_csv(out_dir / "ess.csv", {"parameter", "ess", "degenerate"}, rows);
    emit("ess.csv");
  }

  // WAIC from the recorded pointwise log-likelihood, recomputed if absent
  {
    Eigen::MatrixXd pw = draws.pointwise_log_likelihood;
    if (pw.rows() != static_cast<Eigen::Index>(draws.size())) {
      pw.resize(static_cast<Eigen::Index>(draws.size()), data.total_observations());
      for (std::size_t d = 0; d < draws.size(); ++d)
        pw.row(static_cast<Eigen::Index>(d)) = pointwise_log_likelihood(draws.states[d], data).transpose();
    }
    const WaicResult w = waic(pw);
    write_csv(out_dir / "waic.csv", {"waic", "lppd", "p_waic", "num_points"},
              {{format_double(w.waic), format_double(w.lppd), format_double(w.p_waic), std::to_string(pw.cols())}});
    emit("waic.csv");
  }

  // traces
  if (any_kept) {
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < draws.log_likelihood_trace.size(); ++i)
      rows.push_back({std::to_string(i), format_double(draws.log_likelihood_trace[i])});
    write_csv(out_dir / "trace_log_likelihood.csv", {"iteration", "value"}, rows);
    emit("trace_log_likelihood.csv");
    if (!binary) {
      rows.clear();
      for (std::size_t d = 0; d < draws.size(); ++d)
        rows.push_back({std::to_string(d), format_double(draws.states[d].sigma_sq)});
      write_csv(out_dir / "trace_sigma_sq.csv", {"draw", "value"}, rows);
      emit("trace_sigma_sq.csv");
    }
    std::vector<std::string> header{"draw"};
    std::vector<Eigen::VectorXd> norms;
    for (Eigen::Index j = 0; j < k; ++j) {
      header.push_back("norm_lambda" + std::to_string(j + 1));
      norms.push_back(loading_norm_trace(ad, j, grid));
    }
    rows.clear();
    for (std::size_t d = 0; d < draws.size(); ++d) {
      std::vector<std::string> r{std::to_string(d)};
      for (const auto& v : norms) r.push_back(format_double(v[static_cast<Eigen::Index>(d)]));
      rows.push_back(std::move(r));
    }
    write_csv(out_dir / "trace_lambda_norms.csv", header, rows);
    emit("trace_lambda_norms.csv");
  }
  return res;
}

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> iters, burn_in, thin, k_max;
  std::optional<double> nu_lambda;

  void add_to(CLI::App* app) {
    app->add_option("--seed", seed, "Random seed");
    app->add_option("--iters", iters, "MCMC iterations");
    app->add_option("--burn-in", burn_in, "Burn-in iterations");
    app->add_option("--thin", thin, "Thinning interval");
    app->add_option("--k-max", k_max, "Number of factors fitted");
    app->add_option("--nu-lambda", nu_lambda, "Loading orthogonality penalty");
  }
  void apply(RunConfig& c) const {
    if (seed) c.chain.seed = *seed;
    if (iters) c.chain.n_iter = *iters;
    if (burn_in) c.chain.burn_in = *burn_in;
    if (thin) c.chain.thin = *thin;
    if (k_max) c.prior.k_max = *k_max;
    if (nu_lambda) c.prior.nu_lambda = *nu_lambda;
  }
};

std::filesystem::path resolve_output(const std::string& given, const std::string& command) {
  if (!given.empty()) return given;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return std::filesystem::path(root) / command;
  throw CLI::RequiredError("--output (or set " + std::string(kOutputRootEnv) + ")");
}

RunConfig load_config(const std::string& path) {
  RunConfig c = path.empty() ? RunConfig{} : read_run_config(path);
  return c;
}

// Sidecar kind marker written by `simulate`, if any.
std::optional<DataKind> sidecar_kind(const std::filesystem::path& data_path) {
  auto meta = data_path;
  meta += ".meta.json";
  if (!std::filesystem::exists(meta)) return std::nullopt;
  const auto j = read_json(meta);
  return parse_data_kind(j.at("kind").get<std::string>());
}

SparseFunctionalDataset load_data(const std::filesystem::path& path, DataKind kind, double tolerance) {
  if (const auto k = sidecar_kind(path); k && *k != kind)
    throw KindMismatch("'" + path.string() + "' holds " + to_string(*k) + " data but this command expects " +
                       to_string(kind) + " data");
  auto data = read_dataset(path, kind, tolerance);
  if (kind == DataKind::continuous) {
    bool all_binary = true;
    for (const auto& s : data.subjects())
      all_binary = all_binary && ((s.values.array() == 0.0) || (s.values.array() == 1.0)).all();
    if (all_binary)
      throw KindMismatch("'" + path.string() + "' contains only 0/1 values; use fit-binary for binary data");
  }
  return data;
}

void write_sidecar(const std::filesystem::path& data_path, DataKind kind) {
  auto meta = data_path;
  meta += ".meta.json";
  write_json(meta, {{"kind", to_string(kind)}});
}

nlohmann::json data_info(const std::filesystem::path& path, const SparseFunctionalDataset& data) {
  return {{"data_file", path.filename().string()},
          {"data_hash", std::to_string(dataset_hash(data))},
          {"num_subjects", data.num_subjects()},
          {"grid_size", data.grid().size()}};
}

struct FitArgs {
  std::string data, config, output, covariates;
  std::optional<int> k;
  Overrides ov;
};

int run_fit(const FitArgs& a, ChainKind kind, const std::string& command, std::ostream& out) {
  RunConfig cfg = load_config(a.config);
  a.ov.apply(cfg);
  cfg.data_kind = kind == ChainKind::gffa_binary ? "binary" : "continuous";
  cfg.validate();
  const auto out_dir = resolve_output(a.output, command);
  const DataKind dk = kind == ChainKind::gffa_binary ? DataKind::binary : DataKind::continuous;
  const auto data = load_data(a.data, dk, cfg.merge_tolerance);
  std::optional<Eigen::MatrixXd> cov;
  if (kind == ChainKind::regression) cov = read_covariates(a.covariates, data);
  const Eigen::Index k = a.k ? *a.k : cfg.prior.k_max;
  ensure_directory(out_dir);

  ChainRunner runner(data, cfg.prior, cfg.chain, k, kind, cov);
  runner.run();
  const PosteriorDraws draws = runner.take_draws();
  write_draws(out_dir, draws);
  const nlohmann::json cj = to_json(cfg);
  write_json(out_dir / "config.json", cj);
  nlohmann::json extra = data_info(a.data, data);
  extra["num_factors"] = k;
  extra["chain_kind"] = to_string(kind);
  write_manifest(out_dir, command, cj, cfg.chain.seed, extra);
  out << command << ": " << draws.size() << " draws of " << k << " factors written to " << out_dir.string() << "\n";
  for (const auto& [name, s] : draws.acceptance)
    out << "  acceptance " << name << " " << format_double(std::round(s.rate() * 1000.0) / 1000.0) << "\n";
  return exit_ok;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bayesian functional factor analysis with nearly mutually orthogonal loading priors", "nemo_ffa"};
  app.require_subcommand(1);
  app.set_version_flag("--version", artifact_version());

  // init
  std::string init_out;
  auto* init = app.add_subcommand("init", "Write the default run configuration");
  init->add_option("-o,--output", init_out, "Output directory");

  // simulate
  std::string sim_config, sim_out, sim_scenario = "ffa";
  Overrides sim_ov;
  auto* simulate = app.add_subcommand("simulate", "Simulate a dataset and its generating truth");
  simulate->add_option("-c,--config", sim_config, "Run configuration (JSON)");
  simulate->add_option("-o,--output", sim_out, "Output directory");
  simulate->add_option("--scenario", sim_scenario, "ffa, gffa-binary or regression")
      ->check(CLI::IsMember({"ffa", "gffa-binary", "regression"}));
  simulate->add_option("--seed", sim_ov.seed, "Random seed");

  // fits
  FitArgs fit_a, fitb_a, fitr_a;
  auto add_fit = [&](const std::string& name, const std::string& desc, FitArgs& a, bool covariates) {
    auto* c = app.add_subcommand(name, desc);
    c->add_option("-d,--data", a.data, "Dataset CSV (subject_id,t,value)")->required();
    c->add_option("-c,--config", a.config, "Run configuration (JSON)");
    c->add_option("-o,--output", a.output, "Output directory");
    c->add_option("-k,--factors", a.k, "Number of factors (default: k_max)");
    if (covariates) c->add_option("-x,--covariates", a.covariates, "Covariate CSV (subject_id,x1,...)")->required();
    a.ov.add_to(c);
    return c;
  };
  auto* fit = add_fit("fit", "Fit the Gaussian functional factor model", fit_a, false);
  auto* fitb = add_fit("fit-binary", "Fit the probit functional factor model", fitb_a, false);
  auto* fitr = add_fit("fit-regression", "Fit the latent factor regression model", fitr_a, true);

  // summarize
  std::string sum_fit, sum_data, sum_out;
  std::optional<double> sum_level;
  bool sum_pooled = false;
  auto* summarize = app.add_subcommand("summarize", "Align draws, select factors and export tables");
  summarize->add_option("-f,--fit", sum_fit, "Directory written by a fit command")->required();
  summarize->add_option("-d,--data", sum_data, "Dataset the fit used")->required();
  summarize->add_option("-o,--output", sum_out, "Output directory (default: <fit>/summary)");
  summarize->add_option("--level", sum_level, "Band level");
  summarize->add_flag("--pooled", sum_pooled, "One band multiplier shared by all factors");

  // select-k
  FitArgs sel_a;
  auto* selectk = app.add_subcommand("select-k", "Over-fit, select the factor count, refit");
  selectk->add_option("-d,--data", sel_a.data, "Dataset CSV")->required();
  selectk->add_option("-c,--config", sel_a.config, "Run configuration (JSON)");
  selectk->add_option("-o,--output", sel_a.output, "Output directory");
  sel_a.ov.add_to(selectk);

  // study
  std::string st_scenario = "ffa", st_out, st_config;
  std::optional<int> st_reps, st_iters, st_burn;
  std::optional<std::uint64_t> st_seed;
  int st_parallel = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  bool st_full = false, st_traces = false;
  auto* study = app.add_subcommand("study", "Run a replicated simulation study");
  study->add_option("--scenario", st_scenario, "ffa, gffa-binary, regression or nu-sensitivity")
      ->check(CLI::IsMember({"ffa", "gffa-binary", "regression", "nu-sensitivity"}));
  study->add_option("-o,--output", st_out, "Output directory");
  study->add_option("-c,--config", st_config, "Run configuration supplying the prior");
  study->add_option("--replicates", st_reps, "Replicates per sparsity level");
  study->add_option("--iters", st_iters, "MCMC iterations");
  study->add_option("--burn-in", st_burn, "Burn-in iterations");
  study->add_option("--seed", st_seed, "Master seed");
  study->add_option("--parallel", st_parallel, "Worker threads")->check(CLI::PositiveNumber);
  study->add_flag("--full", st_full, "Full-scale profile");
  study->add_flag("--traces", st_traces, "Write per-replicate traces");

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::CallForVersion&) {
    out << artifact_version() << "\n";
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return exit_usage;
  }

  try {
    if (init->parsed()) {
      const auto dir = resolve_output(init_out, "init");
      ensure_directory(dir);
      const nlohmann::json cj = to_json(RunConfig{});
      write_json(dir / "config.json", cj);
      write_manifest(dir, "init", cj, RunConfig{}.chain.seed);
      out << "default configuration written to " << (dir / "config.json").string() << "\n";
    } else if (simulate->parsed()) {
      RunConfig cfg = load_config(sim_config);
      sim_ov.apply(cfg);
      cfg.validate();
      const auto dir = resolve_output(sim_out, "simulate");
      ensure_directory(dir);
      const Scenario sc = parse_scenario(sim_scenario);
      Rng rng(cfg.chain.seed);
      SimulatedData sim;
      if (sc == Scenario::gffa_binary) {
        sim = simulate_gffa_binary(cfg.simulation, rng);
      } else if (sc == Scenario::regression) {
        sim = simulate_latent_regression(cfg.simulation, rng);
      } else {
        sim = simulate_ffa(cfg.simulation, rng);
      }
      write_dataset(dir / "data.csv", sim.data);
      write_sidecar(dir / "data.csv", sim.data.kind());
      if (sim.truth.covariates) write_covariates(dir / "covariates.csv", sim.data, *sim.truth.covariates);
      nlohmann::json truth;
      truth["state"] = sim.truth;
      truth["curves"] = matrix_to_json(sim.curves);
      truth["grid"] = vector_to_json(sim.data.grid().points());
      write_json(dir / "truth.json", truth);
      const nlohmann::json cj = to_json(cfg);
      write_json(dir / "config.json", cj);
      write_manifest(dir, "simulate", cj, cfg.chain.seed,
                     {{"scenario", sim_scenario}, {"data_hash", std::to_string(dataset_hash(sim.data))}});
      out << "simulated " << sim.data.num_subjects() << " subjects (" << sim.data.total_observations()
          << " observations) to " << dir.string() << "\n";
    } else if (fit->parsed()) {
      return run_fit(fit_a, ChainKind::ffa, "fit", out);
    } else if (fitb->parsed()) {
      return run_fit(fitb_a, ChainKind::gffa_binary, "fit-binary", out);
    } else if (fitr->parsed()) {
      return run_fit(fitr_a, ChainKind::regression, "fit-regression", out);
    } else if (summarize->parsed()) {
      const std::filesystem::path fit_dir = sum_fit;
      const nlohmann::json manifest = read_json(fit_dir / "manifest.json");
      const RunConfig cfg = run_config_from_json(manifest.at("config"));
      const PosteriorDraws draws = read_draws(fit_dir);
      const DataKind dk = draws.chain_kind == ChainKind::gffa_binary ? DataKind::binary : DataKind::continuous;
      const auto data = load_data(sum_data, dk, cfg.merge_tolerance);
      if (!draws.states.empty() && draws.states.front().eta.rows() != data.num_subjects())
        throw DimensionError("dataset has " + std::to_string(data.num_subjects()) + " subjects but the fit has " +
                             std::to_string(draws.states.front().eta.rows()));
      SummaryOptions opt;
      opt.band_level = sum_level.value_or(cfg.band_level);
      opt.pooling = cfg.band_pooling == "pooled" || sum_pooled ? BandPooling::pooled : BandPooling::per_factor;
      const std::filesystem::path dir = sum_out.empty() ? fit_dir / "summary" : std::filesystem::path(sum_out);
      const SummaryResult res = write_summaries(draws, data, dir, opt);
      nlohmann::json keep = nlohmann::json::array();
      for (bool b : res.keep) keep.push_back(b);
      write_json(dir / "summary.json", {{"k_selected", res.k_selected},
                                        {"keep", keep},
                                        {"band_level", opt.band_level},
                                        {"pooled", opt.pooling == BandPooling::pooled},
                                        {"num_draws", draws.size()},
                                        {"files", res.files}});
      out << "K_selected = " << res.k_selected << "\n";
      out << "summaries written to " << dir.string() << "\n";
    } else if (selectk->parsed()) {
      RunConfig cfg = load_config(sel_a.config);
      sel_a.ov.apply(cfg);
      cfg.data_kind = "continuous";
      cfg.validate();
      const auto dir = resolve_output(sel_a.output, "select-k");
      ensure_directory(dir);
      const auto data = load_data(sel_a.data, DataKind::continuous, cfg.merge_tolerance);
      const auto over = run_ffa_chain(data, cfg.prior, cfg.chain, cfg.prior.k_max);
      write_draws(dir / "overfit", over);
      const auto aligned = align_draws(absorb_expansion(over), data.grid());
      const auto sel = select_num_factors(aligned, cfg.band_level,
                                          cfg.band_pooling == "pooled" ? BandPooling::pooled : BandPooling::per_factor);
      nlohmann::json keep = nlohmann::json::array();
      for (bool b : sel.keep) keep.push_back(b);
      nlohmann::json result{{"k_max", cfg.prior.k_max}, {"k_selected", sel.k_selected}, {"keep", keep}};
      if (sel.k_selected > 0) {
        ChainConfig refit_chain = cfg.chain;
        refit_chain.seed = Rng::derived(cfg.chain.seed, {1}).next_u64();
        const auto refit = run_ffa_chain(data, cfg.prior, refit_chain, sel.k_selected);
        write_draws(dir / "refit", refit);
        result["refit_seed"] = refit_chain.seed;
      }
      write_json(dir / "selection.json", result);
      const nlohmann::json cj = to_json(cfg);
      write_json(dir / "config.json", cj);
      write_manifest(dir, "select-k", cj, cfg.chain.seed, data_info(sel_a.data, data));
      out << "K_selected = " << sel.k_selected << " of " << cfg.prior.k_max << "\n";
    } else if (study->parsed()) {
      const Scenario sc = parse_scenario(st_scenario);
      StudySpec spec = StudySpec::defaults(sc, st_full);
      if (!st_config.empty()) {
        const RunConfig cfg = read_run_config(st_config);
        spec.prior = cfg.prior;
        spec.band_level = cfg.band_level;
      }
      if (st_reps) spec.replicates = *st_reps;
      if (st_iters) spec.chain.n_iter = *st_iters;
      if (st_burn) spec.chain.burn_in = *st_burn;
      if (st_seed) spec.master_seed = *st_seed;
      spec.write_traces = st_traces;
      spec.output_dir = resolve_output(st_out, "study");
      spec.validate();
      ensure_directory(spec.output_dir);
      nlohmann::json sj{{"scenario", st_scenario},
                        {"replicates", spec.replicates},
                        {"sparsity_levels", spec.sparsity_levels},
                        {"generator", spec.generator},
                        {"prior", spec.prior},
                        {"chain", spec.chain},
                        {"k_fit", spec.k_fit},
                        {"select_k", spec.select_k},
                        {"band_level", spec.band_level},
                        {"nu_values", spec.nu_values}};
      write_manifest(spec.output_dir, "study", sj, spec.master_seed);
      if (sc == Scenario::nu_sensitivity) {
        const auto rep = run_nu_sensitivity(spec, st_parallel);
        for (const auto& r : rep.rows)
          out << "nu=" << format_double(r.nu_lambda) << " factor " << r.factor << " ESS " << format_double(r.ess) << "\n";
        if (!rep.failures.empty()) {
          err << rep.failures.size() << " chain(s) failed; see failures.csv\n";
          return exit_numerical;
        }
      } else {
        const auto rep = run_study(spec, st_parallel);
        for (const auto& s : rep.summary)
          out << "sparsity " << format_double(s.sparsity) << " " << s.quantity << " median " << format_double(s.median)
              << "\n";
        if (!rep.failures.empty()) {
          err << rep.failures.size() << " replicate(s) failed; see failures.csv\n";
          return exit_numerical;
        }
      }
    }
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return exit_usage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return exit_numerical;
  } catch (const KindMismatch& e) {
    err << "kind mismatch: " << e.what() << "\n";
    return exit_data;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_data;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON input: " << e.what() << "\n";
    return exit_data;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_data;
  }
  return exit_ok;
}

int cli_dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return cli_dispatch(args, std::cout, std::cerr);
}

}  // namespace nemo
