#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nemo/analysis.hpp"
#include "nemo/model.hpp"
#include "nemo/sampler.hpp"

namespace nemo {

enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_data = 2, exit_numerical = 3 };

/// Default output root when --output is not given.
inline constexpr const char* kOutputRootEnv = "NEMO_FFA_OUTPUT_ROOT";

struct SummaryOptions {
  double band_level = 0.95;
  BandPooling pooling = BandPooling::per_factor;
};

struct SummaryResult {
  Eigen::Index k_selected = 0;
  std::vector<bool> keep;
  std::vector<std::string> files;  // written, relative to the output directory
};

/// Aligns the draws (expansion absorbed), selects factors and writes the band,
/// fitted-value, ESS, WAIC and trace tables. Deterministic. With no kept factor
/// only mu_band.csv, ess.csv and waic.csv are written.
SummaryResult write_summaries(const PosteriorDraws& draws, const SparseFunctionalDataset& data,
                              const std::filesystem::path& out_dir, const SummaryOptions& options);

/// args[0] is the program name.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_dispatch(int argc, char** argv);

}  // namespace nemo
