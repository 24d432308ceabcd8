#include "nemo/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <system_error>

#include "nemo/errors.hpp"
#include "nemo/serialization.hpp"

#ifndef NEMO_FFA_VERSION
#define NEMO_FFA_VERSION "0.0.0"
#endif

namespace nemo {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw DataError("cannot create directory '" + dir.string() + "'" + (ec ? ": " + ec.message() : ""));
}

namespace {

std::ofstream open_output(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::optional<double> parse_number(const std::string& s) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (b != e && *b == '+') ++b;
  const auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e) return std::nullopt;
  return v;
}

std::string where(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line) + ": ";
}

}  // namespace

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  auto out = open_output(path);
  auto emit = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) out << ',';
      out << r[i];
    }
    out << '\n';
  };
  emit(header);
  for (const auto& r : rows) emit(r);
  if (!out) throw DataError("error while writing '" + path.string() + "'");
}

SparseFunctionalDataset parse_dataset(std::istream& in, DataKind kind, const std::string& source, double tolerance) {
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  struct Obs {
    double t;
    double value;
    std::size_t line;
  };
  std::vector<std::string> ids;
  std::map<std::string, std::size_t> index;
  std::vector<std::vector<Obs>> obs;

  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    if (!have_header) {
      if (f.size() != 3 || f[0] != "subject_id" || f[1] != "t" || f[2] != "value")
        throw ParseError(where(source, lineno) + "expected header 'subject_id,t,value'");
      have_header = true;
      continue;
    }
    if (f.size() != 3) throw ParseError(where(source, lineno) + "expected 3 fields, found " + std::to_string(f.size()));
    if (f[0].empty()) throw ParseError(where(source, lineno) + "empty subject_id");
    const auto t = parse_number(f[1]);
    if (!t || !std::isfinite(*t)) throw ParseError(where(source, lineno) + "time '" + f[1] + "' is not a finite number");
    const auto v = parse_number(f[2]);
    if (!v || !std::isfinite(*v)) throw ParseError(where(source, lineno) + "value '" + f[2] + "' is not a finite number");
    if (kind == DataKind::binary && *v != 0.0 && *v != 1.0)
      throw ParseError(where(source, lineno) + "binary value must be 0 or 1, found '" + f[2] + "'");
    auto [it, inserted] = index.emplace(f[0], ids.size());
    if (inserted) {
      ids.push_back(f[0]);
      obs.emplace_back();
    }
    obs[it->second].push_back({*t, *v, lineno});
  }
  if (!have_header) throw ParseError(source + ": empty file (missing header)");
  if (ids.empty()) throw EmptyDataset(source + ": no observations");

  std::vector<std::vector<double>> times(ids.size());
  for (std::size_t s = 0; s < ids.size(); ++s) {
    auto& o = obs[s];
    std::stable_sort(o.begin(), o.end(), [](const Obs& a, const Obs& b) { return a.t < b.t; });
    for (std::size_t j = 1; j < o.size(); ++j) {
      if (o[j].t == o[j - 1].t) {
        const std::size_t later = std::max(o[j].line, o[j - 1].line);
        throw ParseError(where(source, later) + "duplicate observation for subject '" + ids[s] + "' at t=" +
                         format_double(o[j].t));
      }
    }
    for (const auto& x : o) times[s].push_back(x.t);
  }
  MergedGrid merged = merge_grids(times, tolerance);
  std::vector<Subject> subjects;
  for (std::size_t s = 0; s < ids.size(); ++s) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(obs[s].size()));
    for (std::size_t j = 0; j < obs[s].size(); ++j) v[static_cast<Eigen::Index>(j)] = obs[s][j].value;
    subjects.push_back({ids[s], std::move(merged.maps[s]), std::move(v)});
  }
  return SparseFunctionalDataset(std::move(merged.grid), std::move(subjects), kind);
}

SparseFunctionalDataset read_dataset(const std::filesystem::path& path, DataKind kind, double tolerance) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset '" + path.string() + "'");
  return parse_dataset(in, kind, path.string(), tolerance);
}

void write_dataset(const std::filesystem::path& path, const SparseFunctionalDataset& data) {
  std::vector<std::vector<std::string>> rows;
  const auto& pts = data.grid().points();
  for (const auto& s : data.subjects())
    for (Eigen::Index j = 0; j < s.map.size(); ++j)
      rows.push_back({s.id, format_double(pts[s.map[j]]), format_double(s.values[j])});
  write_csv(path, {"subject_id", "t", "value"}, rows);
}

Eigen::MatrixXd read_covariates(const std::filesystem::path& path, const SparseFunctionalDataset& data) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open covariates '" + path.string() + "'");
  const std::string source = path.string();
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  std::map<std::string, Eigen::VectorXd> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    if (header.empty()) {
      if (f.size() < 2 || f[0] != "subject_id")
        throw ParseError(where(source, lineno) + "expected header 'subject_id,x1,...'");
      header = f;
      continue;
    }
    if (f.size() != header.size())
      throw ParseError(where(source, lineno) + "expected " + std::to_string(header.size()) + " fields");
    Eigen::VectorXd x(static_cast<Eigen::Index>(f.size() - 1));
    for (std::size_t c = 1; c < f.size(); ++c) {
      const auto v = parse_number(f[c]);
      if (!v || !std::isfinite(*v)) throw ParseError(where(source, lineno) + "covariate '" + f[c] + "' is not a number");
      x[static_cast<Eigen::Index>(c - 1)] = *v;
    }
    if (!rows.emplace(f[0], x).second)
      throw ParseError(where(source, lineno) + "duplicate covariate row for subject '" + f[0] + "'");
  }
  if (header.empty()) throw ParseError(source + ": empty file (missing header)");
  Eigen::MatrixXd out(data.num_subjects(), static_cast<Eigen::Index>(header.size() - 1));
  for (Eigen::Index i = 0; i < data.num_subjects(); ++i) {
    const auto it = rows.find(data.subject(i).id);
    if (it == rows.end()) throw ParseError(source + ": no covariates for subject '" + data.subject(i).id + "'");
    out.row(i) = it->second.transpose();
  }
  if (rows.size() != static_cast<std::size_t>(data.num_subjects()))
    throw ParseError(source + ": covariates listed for subjects absent from the dataset");
  return out;
}

void write_covariates(const std::filesystem::path& path, const SparseFunctionalDataset& data,
                      const Eigen::MatrixXd& covariates) {
  if (covariates.rows() != data.num_subjects()) throw DimensionError("write_covariates: one row per subject needed");
  std::vector<std::string> header{"subject_id"};
  for (Eigen::Index c = 0; c < covariates.cols(); ++c) header.push_back("x" + std::to_string(c + 1));
  std::vector<std::vector<std::string>> rows;
  for (Eigen::Index i = 0; i < covariates.rows(); ++i) {
    std::vector<std::string> r{data.subject(i).id};
    for (Eigen::Index c = 0; c < covariates.cols(); ++c) r.push_back(format_double(covariates(i, c)));
    rows.push_back(std::move(r));
  }
  write_csv(path, header, rows);
}

void RunConfig::validate() const {
  prior.validate();
  chain.validate();
  simulation.validate();
  parse_data_kind(data_kind);
  if (!(band_level > 0.0 && band_level < 1.0)) throw ConfigError("band_level must lie in (0, 1)");
  if (band_pooling != "per_factor" && band_pooling != "pooled")
    throw ConfigError("band_pooling must be 'per_factor' or 'pooled'");
  if (!(merge_tolerance >= 0.0)) throw ConfigError("merge_tolerance must be non-negative");
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["prior"] = c.prior;
  j["chain"] = c.chain;
  j["simulation"] = c.simulation;
  j["data_kind"] = c.data_kind;
  j["band_level"] = c.band_level;
  j["band_pooling"] = c.band_pooling;
  j["merge_tolerance"] = c.merge_tolerance;
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  require_known_keys(j, {"prior", "chain", "simulation", "data_kind", "band_level", "band_pooling", "merge_tolerance"},
                     "run config");
  RunConfig c;
  try {
    if (j.contains("prior")) c.prior = j.at("prior").get<PriorConfig>();
    if (j.contains("chain")) c.chain = j.at("chain").get<ChainConfig>();
    if (j.contains("simulation")) c.simulation = j.at("simulation").get<SimulationConfig>();
    if (j.contains("data_kind")) c.data_kind = j.at("data_kind").get<std::string>();
    if (j.contains("band_level")) c.band_level = j.at("band_level").get<double>();
    if (j.contains("band_pooling")) c.band_pooling = j.at("band_pooling").get<std::string>();
    if (j.contains("merge_tolerance")) c.merge_tolerance = j.at("merge_tolerance").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig read_run_config(const std::filesystem::path& path) { return run_config_from_json(read_json(path)); }

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  auto out = open_output(path);
  out << j.dump(2) << '\n';
  if (!out) throw DataError("error while writing '" + path.string() + "'");
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string config_hash(const nlohmann::json& config) {
  const std::string s = config.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string artifact_version() { return NEMO_FFA_VERSION; }

void write_manifest(const std::filesystem::path& dir, const std::string& command, const nlohmann::json& config,
                    std::uint64_t seed, const nlohmann::json& extra) {
  nlohmann::json m;
  m["artifact"] = "nemo-ffa";
  m["version"] = artifact_version();
  m["command"] = command;
  m["seed"] = seed;
  m["config_hash"] = config_hash(config);
  m["config"] = config;
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  write_json(dir / "manifest.json", m);
}

// ---------------------------------------------------------------------------
// columnar draw store

namespace {

constexpr const char* kDrawsFormat = "nemo-ffa-draws";

void write_doubles(std::ostream& out, const double* p, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t u;
      std::memcpy(&u, p + i, 8);
      u = __builtin_bswap64(u);
      out.write(reinterpret_cast<const char*>(&u), 8);
    }
  }
}

void read_doubles(std::istream& in, double* p, std::size_t n) {
  in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw ParseError("draws.bin is truncated");
  if constexpr (std::endian::native != std::endian::little) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t u;
      std::memcpy(&u, p + i, 8);
      u = __builtin_bswap64(u);
      std::memcpy(p + i, &u, 8);
    }
  }
}

// Per-draw column layout in row-major order.
struct Field {
  std::string name;
  std::size_t width;
};

std::vector<Field> draw_fields(Eigen::Index n, Eigen::Index m, Eigen::Index k, Eigen::Index q, Eigen::Index points) {
  std::vector<Field> f{{"mu", static_cast<std::size_t>(m)},
                       {"lambda", static_cast<std::size_t>(k * m)},
                       {"eta", static_cast<std::size_t>(n * k)},
                       {"psi", static_cast<std::size_t>(k)},
                       {"sigma_sq", 1},
                       {"mu_kernel", 2},
                       {"loading_kernels", static_cast<std::size_t>(2 * k)},
                       {"state_log_likelihood", 1}};
  if (q > 0) f.push_back({"theta", static_cast<std::size_t>(k * q)});
  if (points > 0) f.push_back({"pointwise_log_likelihood", static_cast<std::size_t>(points)});
  return f;
}

std::vector<double> flatten(const FFAState& s, double ll, const Eigen::VectorXd* pointwise) {
  std::vector<double> v(s.mu.data(), s.mu.data() + s.mu.size());
  for (Eigen::Index r = 0; r < s.lambda.rows(); ++r)
    for (Eigen::Index c = 0; c < s.lambda.cols(); ++c) v.push_back(s.lambda(r, c));
  for (Eigen::Index r = 0; r < s.eta.rows(); ++r)
    for (Eigen::Index c = 0; c < s.eta.cols(); ++c) v.push_back(s.eta(r, c));
  v.insert(v.end(), s.psi.data(), s.psi.data() + s.psi.size());
  v.push_back(s.sigma_sq);
  v.push_back(s.mu_kernel.tau_sq);
  v.push_back(s.mu_kernel.len_sq);
  for (const auto& p : s.loading_kernels) {
    v.push_back(p.tau_sq);
    v.push_back(p.len_sq);
  }
  v.push_back(ll);
  if (s.theta)
    for (Eigen::Index r = 0; r < s.theta->rows(); ++r)
      for (Eigen::Index c = 0; c < s.theta->cols(); ++c) v.push_back((*s.theta)(r, c));
  if (pointwise) v.insert(v.end(), pointwise->data(), pointwise->data() + pointwise->size());
  return v;
}

}  // namespace

void write_draws(const std::filesystem::path& dir, const PosteriorDraws& draws) {
  ensure_directory(dir);
  const std::size_t count = draws.size();
  Eigen::Index n = 0, m = 0, k = draws.num_factors, q = 0;
  if (count > 0) {
    const auto& s = draws.states.front();
    n = s.eta.rows();
    m = s.mu.size();
    k = s.num_factors();
    q = s.theta ? s.theta->cols() : 0;
  }
  const Eigen::Index points = draws.pointwise_log_likelihood.rows() == static_cast<Eigen::Index>(count) && count > 0
                                  ? draws.pointwise_log_likelihood.cols()
                                  : 0;
  const auto fields = draw_fields(n, m, k, q, points);

  // gather per field so each field is contiguous on disk
  std::vector<std::vector<double>> flat;
  flat.reserve(count);
  for (std::size_t d = 0; d < count; ++d) {
    Eigen::VectorXd pw;
    if (points > 0) pw = draws.pointwise_log_likelihood.row(static_cast<Eigen::Index>(d)).transpose();
    const double ll = d < draws.state_log_likelihood.size() ? draws.state_log_likelihood[d]
                                                            : std::numeric_limits<double>::quiet_NaN();
    flat.push_back(flatten(draws.states[d], ll, points > 0 ? &pw : nullptr));
  }

  std::ofstream bin = open_output(dir / "draws.bin", std::ios::out | std::ios::binary);
  nlohmann::json index;
  index["format"] = kDrawsFormat;
  index["version"] = 1;
  index["chain_kind"] = to_string(draws.chain_kind);
  index["num_draws"] = count;
  index["n"] = n;
  index["m"] = m;
  index["num_factors"] = k;
  index["q"] = q;
  index["byte_order"] = "little";
  nlohmann::json fj = nlohmann::json::array();
  std::size_t offset = 0, start = 0;
  for (const auto& f : fields) {
    for (std::size_t d = 0; d < count; ++d) write_doubles(bin, flat[d].data() + start, f.width);
    fj.push_back({{"name", f.name}, {"width", f.width}, {"offset_bytes", offset}});
    offset += f.width * count * sizeof(double);
    start += f.width;
  }
  write_doubles(bin, draws.log_likelihood_trace.data(), draws.log_likelihood_trace.size());
  fj.push_back({{"name", "log_likelihood_trace"}, {"width", draws.log_likelihood_trace.size()}, {"offset_bytes", offset},
                {"per_draw", false}});
  if (!bin) throw DataError("error while writing draws.bin");
  index["fields"] = fj;
  nlohmann::json acc = nlohmann::json::object();
  for (const auto& [name, s] : draws.acceptance) acc[name] = s;
  index["acceptance"] = acc;
  if (count > 0 && draws.states.front().covariates)
    index["covariates"] = matrix_to_json(*draws.states.front().covariates);
  write_json(dir / "draws.json", index);
}

PosteriorDraws read_draws(const std::filesystem::path& dir) {
  const nlohmann::json index = read_json(dir / "draws.json");
  if (index.value("format", "") != kDrawsFormat) throw ParseError("draws.json: not a draw index");
  if (index.value("version", 0) != 1) throw ParseError("draws.json: unsupported version");
  PosteriorDraws d;
  try {
    d.chain_kind = parse_chain_kind(index.at("chain_kind").get<std::string>());
    const auto count = index.at("num_draws").get<std::size_t>();
    const auto n = index.at("n").get<Eigen::Index>();
    const auto m = index.at("m").get<Eigen::Index>();
    const auto k = index.at("num_factors").get<Eigen::Index>();
    const auto q = index.at("q").get<Eigen::Index>();
    d.num_factors = k;
    Eigen::Index points = 0;
    std::size_t trace_len = 0;
    for (const auto& f : index.at("fields")) {
      if (f.at("name") == "pointwise_log_likelihood") points = f.at("width").get<Eigen::Index>();
      if (f.at("name") == "log_likelihood_trace") trace_len = f.at("width").get<std::size_t>();
    }
    const auto fields = draw_fields(n, m, k, q, points);
    std::size_t per_draw = 0;
    for (const auto& f : fields) per_draw += f.width;

    std::ifstream bin(dir / "draws.bin", std::ios::binary);
    if (!bin) throw DataError("cannot open draws.bin in '" + dir.string() + "'");
    std::vector<std::vector<double>> flat(count, std::vector<double>(per_draw));
    std::size_t start = 0;
    std::vector<double> block;
    for (const auto& f : fields) {
      block.resize(f.width * count);
      read_doubles(bin, block.data(), block.size());
      for (std::size_t s = 0; s < count; ++s)
        std::copy_n(block.data() + s * f.width, f.width, flat[s].data() + start);
      start += f.width;
    }
    d.log_likelihood_trace.resize(trace_len);
    read_doubles(bin, d.log_likelihood_trace.data(), trace_len);

    std::optional<Eigen::MatrixXd> covariates;
    if (index.contains("covariates")) covariates = matrix_from_json(index.at("covariates"));
    if (points > 0) d.pointwise_log_likelihood.resize(static_cast<Eigen::Index>(count), points);
    for (std::size_t s = 0; s < count; ++s) {
      const double* p = flat[s].data();
      FFAState st;
      st.mu = Eigen::Map<const Eigen::VectorXd>(p, m);
      p += m;
      st.lambda = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(p, k, m);
      p += k * m;
      st.eta = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(p, n, k);
      p += n * k;
      st.psi = Eigen::Map<const Eigen::VectorXd>(p, k);
      p += k;
      st.sigma_sq = *p++;
      st.mu_kernel.tau_sq = *p++;
      st.mu_kernel.len_sq = *p++;
      for (Eigen::Index j = 0; j < k; ++j) {
        SEKernelParams kp;
        kp.tau_sq = *p++;
        kp.len_sq = *p++;
        st.loading_kernels.push_back(kp);
      }
      d.state_log_likelihood.push_back(*p++);
      if (q > 0) {
        st.theta = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(p, k, q);
        p += k * q;
        st.covariates = covariates;
      }
      if (points > 0) d.pointwise_log_likelihood.row(static_cast<Eigen::Index>(s)) = Eigen::Map<const Eigen::RowVectorXd>(p, points);
      d.states.push_back(std::move(st));
    }
    for (auto it = index.at("acceptance").begin(); it != index.at("acceptance").end(); ++it)
      d.acceptance[it.key()] = it.value().get<AcceptanceStats>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("draws.json: ") + e.what());
  }
  return d;
}

}  // namespace nemo
