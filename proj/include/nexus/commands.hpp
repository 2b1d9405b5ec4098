#pragma once

// End-to-end pipeline steps behind the CLI. Each step echoes the effective
// configuration into its output directory as <step>_config.ini.
//
// Output files
//   generate  <csv>
//   prepare   aligned.csv, stats.json, qc_report.json
//   train     model.nxs, train_log.csv
//   evaluate  metrics.csv, predictions.csv, observations.csv
//   ablate    ablation.csv
//   analyze   diurnal.csv, monthly.csv, regime.csv, correlation.csv,
//             residuals.csv (with a checkpoint)
//   predict   forecast.csv

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nexus/config.hpp"

namespace nexus::cmd {

namespace fs = std::filesystem;

/// Receives progress lines; silent by default.
void set_log_sink(std::function<void(const std::string&)> sink);

struct GenerateSummary {
  std::size_t rows = 0;
  std::size_t sites = 0;
};
GenerateSummary generate(const RunConfig& config, const fs::path& csv_out);

QcReport prepare(const RunConfig& config, const fs::path& raw_csv, const fs::path& out_dir);

TrainReport train(const RunConfig& config, const fs::path& prepared_dir, const fs::path& out_dir);

/// Scores the test split. With `predictions` (CSV shaped like
/// predictions.csv) the file is scored instead of a checkpoint.
std::vector<std::pair<std::string, MetricsReport>> evaluate(const RunConfig& config, const fs::path& prepared_dir,
                                                            const std::optional<fs::path>& checkpoint,
                                                            const std::optional<fs::path>& predictions,
                                                            const fs::path& out_dir);

std::vector<AblationRow> ablate(const RunConfig& config, const fs::path& prepared_dir, const fs::path& out_dir);

void analyze(const RunConfig& config, const fs::path& prepared_dir, const std::optional<fs::path>& checkpoint,
             const fs::path& out_dir);

struct Forecast {
  Timestamp target_time = 0;
  std::vector<std::string> sites;
  std::vector<double> values;  // [sites x K], physical units
};
Forecast predict(const RunConfig& config, const fs::path& prepared_dir, const fs::path& checkpoint,
                 const fs::path& out_dir);

}  // namespace nexus::cmd
