#include "nemo/serialization.hpp"

#include <set>

#include "nemo/errors.hpp"

namespace nemo {

void require_known_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + ": expected a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!ok.count(it.key())) throw ConfigError(context + ": unknown key '" + it.key() + "'");
  }
}

namespace {

// Reads j[key] into out when present; missing keys keep their defaults.
template <class T>
void read_opt(const json& j, const char* key, T& out, const std::string& context) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(context + "." + key + ": " + e.what());
  }
}

double number_or_nan(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

}  // namespace

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const json& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows) throw ParseError("matrix: row count mismatch");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = data[static_cast<std::size_t>(r)];
    if (static_cast<Eigen::Index>(row.size()) != cols) throw ParseError("matrix: column count mismatch");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = number_or_nan(row[static_cast<std::size_t>(c)]);
  }
  return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = number_or_nan(j[i]);
  return v;
}

void to_json(json& j, const SEKernelParams& p) { j = json{{"tau_sq", p.tau_sq}, {"len_sq", p.len_sq}}; }
void from_json(const json& j, SEKernelParams& p) {
  require_known_keys(j, {"tau_sq", "len_sq"}, "kernel");
  read_opt(j, "tau_sq", p.tau_sq, "kernel");
  read_opt(j, "len_sq", p.len_sq, "kernel");
}

void to_json(json& j, const HyperpriorConfig& c) {
  j = json{{"alpha", c.alpha}, {"beta", c.beta}, {"gamma", c.gamma}};
}
void from_json(const json& j, HyperpriorConfig& c) {
  require_known_keys(j, {"alpha", "beta", "gamma"}, "hyperprior");
  read_opt(j, "alpha", c.alpha, "hyperprior");
  read_opt(j, "beta", c.beta, "hyperprior");
  read_opt(j, "gamma", c.gamma, "hyperprior");
}

void to_json(json& j, const JitterPolicy& c) {
  j = json{{"initial", c.initial}, {"max", c.max}, {"factor", c.factor}};
}
void from_json(const json& j, JitterPolicy& c) {
  require_known_keys(j, {"initial", "max", "factor"}, "jitter");
  read_opt(j, "initial", c.initial, "jitter");
  read_opt(j, "max", c.max, "jitter");
  read_opt(j, "factor", c.factor, "jitter");
}

void to_json(json& j, const PriorConfig& c) {
  j = json{{"nu_lambda", c.nu_lambda},     {"nu_eta", c.nu_eta},         {"mu_hyper", c.mu_hyper},
           {"loading_hyper", c.loading_hyper}, {"alpha_sigma", c.alpha_sigma}, {"beta_sigma", c.beta_sigma},
           {"alpha_eta", c.alpha_eta},     {"beta_eta", c.beta_eta},     {"k_max", c.k_max},
           {"jitter", c.jitter}};
}
void from_json(const json& j, PriorConfig& c) {
  const std::string ctx = "prior";
  require_known_keys(j,
                     {"nu_lambda", "nu_eta", "mu_hyper", "loading_hyper", "alpha_sigma", "beta_sigma", "alpha_eta",
                      "beta_eta", "k_max", "jitter"},
                     ctx);
  read_opt(j, "nu_lambda", c.nu_lambda, ctx);
  read_opt(j, "nu_eta", c.nu_eta, ctx);
  if (j.contains("mu_hyper")) from_json(j.at("mu_hyper"), c.mu_hyper);
  if (j.contains("loading_hyper")) from_json(j.at("loading_hyper"), c.loading_hyper);
  read_opt(j, "alpha_sigma", c.alpha_sigma, ctx);
  read_opt(j, "beta_sigma", c.beta_sigma, ctx);
  read_opt(j, "alpha_eta", c.alpha_eta, ctx);
  read_opt(j, "beta_eta", c.beta_eta, ctx);
  read_opt(j, "k_max", c.k_max, ctx);
  if (j.contains("jitter")) from_json(j.at("jitter"), c.jitter);
}

void to_json(json& j, const ChainConfig& c) {
  j = json{{"n_iter", c.n_iter},
           {"burn_in", c.burn_in},
           {"thin", c.thin},
           {"target_accept", c.target_accept},
           {"adapt_rate_decay", c.adapt_rate_decay},
           {"initial_step", c.initial_step},
           {"seed", c.seed},
           {"proposal", c.proposal == ProposalScale::log ? "log" : "raw"},
           {"record_pointwise", c.record_pointwise}};
}
void from_json(const json& j, ChainConfig& c) {
  const std::string ctx = "chain";
  require_known_keys(j,
                     {"n_iter", "burn_in", "thin", "target_accept", "adapt_rate_decay", "initial_step", "seed",
                      "proposal", "record_pointwise"},
                     ctx);
  read_opt(j, "n_iter", c.n_iter, ctx);
  read_opt(j, "burn_in", c.burn_in, ctx);
  read_opt(j, "thin", c.thin, ctx);
  read_opt(j, "target_accept", c.target_accept, ctx);
  read_opt(j, "adapt_rate_decay", c.adapt_rate_decay, ctx);
  read_opt(j, "initial_step", c.initial_step, ctx);
  read_opt(j, "seed", c.seed, ctx);
  read_opt(j, "record_pointwise", c.record_pointwise, ctx);
  if (j.contains("proposal")) {
    const auto s = j.at("proposal").get<std::string>();
    if (s == "log") c.proposal = ProposalScale::log;
    else if (s == "raw") c.proposal = ProposalScale::raw;
    else throw ConfigError("chain.proposal must be 'log' or 'raw'");
  }
}

void to_json(json& j, const SimulationConfig& c) {
  j = json{{"n", c.n},
           {"m", c.m},
           {"k", c.k},
           {"domain_lo", c.domain_lo},
           {"domain_hi", c.domain_hi},
           {"mu_kernel", c.mu_kernel},
           {"loading_kernel", c.loading_kernel},
           {"sigma_sq", c.sigma_sq},
           {"sparsity", c.sparsity},
           {"nu_lambda", c.nu_lambda},
           {"nu_eta", c.nu_eta},
           {"nemo_sweeps", c.nemo_sweeps},
           {"q", c.q}};
}
void from_json(const json& j, SimulationConfig& c) {
  const std::string ctx = "simulation";
  require_known_keys(j,
                     {"n", "m", "k", "domain_lo", "domain_hi", "mu_kernel", "loading_kernel", "sigma_sq", "sparsity",
                      "nu_lambda", "nu_eta", "nemo_sweeps", "q"},
                     ctx);
  read_opt(j, "n", c.n, ctx);
  read_opt(j, "m", c.m, ctx);
  read_opt(j, "k", c.k, ctx);
  read_opt(j, "domain_lo", c.domain_lo, ctx);
  read_opt(j, "domain_hi", c.domain_hi, ctx);
  if (j.contains("mu_kernel")) from_json(j.at("mu_kernel"), c.mu_kernel);
  if (j.contains("loading_kernel")) from_json(j.at("loading_kernel"), c.loading_kernel);
  read_opt(j, "sigma_sq", c.sigma_sq, ctx);
  read_opt(j, "sparsity", c.sparsity, ctx);
  read_opt(j, "nu_lambda", c.nu_lambda, ctx);
  read_opt(j, "nu_eta", c.nu_eta, ctx);
  read_opt(j, "nemo_sweeps", c.nemo_sweeps, ctx);
  read_opt(j, "q", c.q, ctx);
}

void to_json(json& j, const FFAState& s) {
  j = json{{"mu", vector_to_json(s.mu)},
           {"lambda", matrix_to_json(s.lambda)},
           {"eta", matrix_to_json(s.eta)},
           {"psi", vector_to_json(s.psi)},
           {"sigma_sq", s.sigma_sq},
           {"mu_kernel", s.mu_kernel},
           {"loading_kernels", s.loading_kernels}};
  if (s.theta) j["theta"] = matrix_to_json(*s.theta);
  if (s.covariates) j["covariates"] = matrix_to_json(*s.covariates);
}
void from_json(const json& j, FFAState& s) {
  s.mu = vector_from_json(j.at("mu"));
  s.lambda = matrix_from_json(j.at("lambda"));
  s.eta = matrix_from_json(j.at("eta"));
  s.psi = vector_from_json(j.at("psi"));
  s.sigma_sq = j.at("sigma_sq").get<double>();
  s.mu_kernel = j.at("mu_kernel").get<SEKernelParams>();
  s.loading_kernels = j.at("loading_kernels").get<std::vector<SEKernelParams>>();
  s.theta.reset();
  s.covariates.reset();
  if (j.contains("theta")) s.theta = matrix_from_json(j.at("theta"));
  if (j.contains("covariates")) s.covariates = matrix_from_json(j.at("covariates"));
}

void to_json(json& j, const AdaptiveStep& s) {
  j = json{{"log_sd", s.log_sd}, {"target", s.target}, {"decay", s.decay}, {"steps", s.steps}, {"frozen", s.frozen}};
}
void from_json(const json& j, AdaptiveStep& s) {
  s.log_sd = j.at("log_sd").is_null() ? -INFINITY : j.at("log_sd").get<double>();
  s.target = j.at("target").get<double>();
  s.decay = j.at("decay").get<double>();
  s.steps = j.at("steps").get<std::uint64_t>();
  s.frozen = j.at("frozen").get<bool>();
}

void to_json(json& j, const AcceptanceStats& s) { j = json{{"attempts", s.attempts}, {"accepts", s.accepts}}; }
void from_json(const json& j, AcceptanceStats& s) {
  s.attempts = j.at("attempts").get<std::uint64_t>();
  s.accepts = j.at("accepts").get<std::uint64_t>();
}

void to_json(json& j, const HyperAdapters& a) {
  j = json{{"len", a.len}, {"tau", a.tau}, {"len_stats", a.len_stats}, {"tau_stats", a.tau_stats}};
}
void from_json(const json& j, HyperAdapters& a) {
  a.len = j.at("len").get<AdaptiveStep>();
  a.tau = j.at("tau").get<AdaptiveStep>();
  a.len_stats = j.at("len_stats").get<AcceptanceStats>();
  a.tau_stats = j.at("tau_stats").get<AcceptanceStats>();
}

}  // namespace nemo
