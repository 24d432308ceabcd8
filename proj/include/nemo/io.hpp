#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "nemo/model.hpp"
#include "nemo/sampler.hpp"

namespace nemo {

/// Shortest decimal that parses back to the same double.
std::string format_double(double v);

/// Overwrites `path`; throws DataError when the file cannot be written.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

/// Long format `subject_id,t,value`; subjects in order of first appearance,
/// each subject's rows sorted by t. Grids are merged with `tolerance`.
SparseFunctionalDataset parse_dataset(std::istream& in, DataKind kind, const std::string& source = "<input>",
                                      double tolerance = 1e-9);
SparseFunctionalDataset read_dataset(const std::filesystem::path& path, DataKind kind, double tolerance = 1e-9);
void write_dataset(const std::filesystem::path& path, const SparseFunctionalDataset& data);

/// `subject_id,x1..xq` with one row per subject id present in `data`.
Eigen::MatrixXd read_covariates(const std::filesystem::path& path, const SparseFunctionalDataset& data);
void write_covariates(const std::filesystem::path& path, const SparseFunctionalDataset& data,
                      const Eigen::MatrixXd& covariates);

/// Everything a fit needs, as one strict JSON document.
struct RunConfig {
  PriorConfig prior;
  ChainConfig chain;
  SimulationConfig simulation;
  std::string data_kind = "continuous";
  double band_level = 0.95;
  std::string band_pooling = "per_factor";
  double merge_tolerance = 1e-9;

  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig read_run_config(const std::filesystem::path& path);

/// Columnar little-endian float64 store: draws.bin plus a draws.json index.
void write_draws(const std::filesystem::path& dir, const PosteriorDraws& draws);
PosteriorDraws read_draws(const std::filesystem::path& dir);

/// Hex FNV-1a of the canonical JSON dump.
std::string config_hash(const nlohmann::json& config);

std::string artifact_version();

void write_manifest(const std::filesystem::path& dir, const std::string& command, const nlohmann::json& config,
                    std::uint64_t seed, const nlohmann::json& extra = nlohmann::json::object());

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

/// Creates the directory (and parents); throws DataError on failure.
void ensure_directory(const std::filesystem::path& dir);

}  // namespace nemo
