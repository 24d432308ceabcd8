#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nemo/model.hpp"
#include "nemo/sampler.hpp"

namespace nemo {

enum class Scenario { ffa, gffa_binary, regression, nu_sensitivity };

std::string to_string(Scenario s);
Scenario parse_scenario(const std::string& s);

struct StudySpec {
  Scenario scenario = Scenario::ffa;
  int replicates = 20;
  std::vector<double> sparsity_levels{0.25, 0.5, 0.75};
  SimulationConfig generator;
  PriorConfig prior;
  ChainConfig chain;
  /// Factors fitted when scoring without selection (binary, regression, or
  /// when select_k is off).
  Eigen::Index k_fit = 2;
  /// Over-fit at prior.k_max, select, refit at the selected count (ffa only).
  bool select_k = true;
  double band_level = 0.95;
  std::uint64_t master_seed = 20240917;
  std::filesystem::path output_dir;  // empty: nothing written
  bool write_traces = false;
  std::vector<double> nu_values{100.0, 1.0, 1e-2, 1e-4, 1e-6, 1e-8};

  void validate() const;
  /// Desk-scale defaults per scenario; `full` switches to the larger profile.
  static StudySpec defaults(Scenario scenario, bool full = false);
};

struct ReplicateRow {
  int replicate = 0;
  double sparsity = 0.0;
  std::string quantity;
  double value = 0.0;
};

struct ReplicateFailure {
  int replicate = 0;
  double sparsity = 0.0;
  std::string message;
};

struct SummaryRow {
  double sparsity = 0.0;
  std::string quantity;
  int count = 0;
  double mean = 0.0;
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct StudyReport {
  std::vector<ReplicateRow> rows;
  std::vector<SummaryRow> summary;
  std::vector<ReplicateFailure> failures;

  /// Median of `quantity` at the given sparsity (NaN when absent).
  double median(double sparsity, const std::string& quantity) const;
  double mean(double sparsity, const std::string& quantity) const;
};

/// Quantiles use linear interpolation between order statistics.
std::vector<SummaryRow> summarize_rows(const std::vector<ReplicateRow>& rows);

/// One replicate at one sparsity level; pure function of its arguments.
std::vector<ReplicateRow> run_replicate(const StudySpec& spec, int replicate, std::size_t sparsity_index);

/// Replicates in parallel over `parallelism` workers; writes replicates.csv and
/// study_summary.csv when spec.output_dir is set.
StudyReport run_study(const StudySpec& spec, int parallelism);

struct NuSensitivityRow {
  double nu_lambda = 0.0;
  Eigen::Index factor = 0;  // 1-based
  double ess = 0.0;
  bool degenerate = false;
  double mean_norm = 0.0;
  double sd_norm = 0.0;
  double true_norm = 0.0;
};

struct NuSensitivityReport {
  std::vector<NuSensitivityRow> rows;
  std::uint64_t data_hash = 0;
  std::vector<ReplicateFailure> failures;
  /// Post-burn-in traces of ||lambda_k|| (expansion absorbed) per nu, k = 1..K.
  std::vector<std::vector<Eigen::VectorXd>> traces;

  const NuSensitivityRow* find(double nu, Eigen::Index factor) const;
};

/// Dataset with loadings sin t and sin(2t)/2 on [0, pi].
SimulatedData nu_sensitivity_dataset(const StudySpec& spec);

/// Chains at every spec.nu_values entry with the same seed and initialization;
/// writes ess_by_nu.csv when spec.output_dir is set.
NuSensitivityReport run_nu_sensitivity(const StudySpec& spec, int parallelism = 1);

/// FNV-1a over grid points and observed values.
std::uint64_t dataset_hash(const SparseFunctionalDataset& data);

}  // namespace nemo
