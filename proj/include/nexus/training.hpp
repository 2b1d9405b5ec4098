#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "nexus/data.hpp"
#include "nexus/metrics.hpp"
#include "nexus/model.hpp"

namespace nexus {

struct TrainConfig {
  double eta0 = 1e-3;
  double decay = 0.95;
  std::size_t decay_interval = 5;  // epochs
  std::size_t batch_size = 64;
  std::size_t max_epochs = 50;
  std::size_t patience = 10;
  double weight_decay = 1e-4;  // lambda
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 42;

  void validate() const;
};

/// eta0 * decay^floor(t / interval), with t counted from 0.
double lr_at_epoch(double eta0, std::size_t t, double decay = 0.95, std::size_t interval = 5);

/// Mean squared error over every element (batch, sites, species).
DiffArray mse_loss(Tape& tape, const DiffArray& prediction, const DiffArray& target);

/// mse + lambda * sum of squares over decayed parameters.
DiffArray regularized_loss(Tape& tape, const DiffArray& mse, const NexusParams& params, double lambda);

struct AdamState {
  std::map<std::string, std::vector<double>> m, v;
  std::size_t step = 0;
};

/// One Adam update from the grads currently stored in `params`.
void adam_step(NexusParams& params, AdamState& state, double lr, const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> history;
  std::size_t stopped_epoch = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  double wall_seconds = 0.0;
  std::size_t parameter_count = 0;
  std::size_t steps = 0;
};

struct TrainOptions {
  /// Skips every update; used to construct a validation plateau.
  bool freeze_params = false;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  NexusParams params;  // best-validation parameters
  TrainReport report;
};

TrainResult train(const NexusConfig& model, const WindowSet& train_set, const WindowSet& val_set,
                  const TrainConfig& config, const TrainOptions& options = {});

/// Eval-mode predictions for every window, [n x L x K] (or [n x K] pooled),
/// in the normalized space of the windows.
std::vector<double> predict_windows(const NexusParams& params, const NexusConfig& model, const WindowSet& windows,
                                    std::size_t batch_size = 256);

/// Targets laid out like predict_windows (site-averaged for pooled output).
std::vector<double> window_targets(const NexusConfig& model, const WindowSet& windows);

/// Per-species metrics, pooling windows and sites. `stats` maps normalized
/// values back to physical units.
MetricsReport evaluate_windows(const NexusParams& params, const NexusConfig& model, const WindowSet& windows,
                               const NormalizationStats& stats);

void write_train_report_csv(const std::filesystem::path& path, const TrainReport& report);

// ---------------------------------------------------------------------------
// Ablations

inline const std::vector<std::string> kAblationVariants = {"full",
                                                           "no_patch_embedding",
                                                           "no_lowrank",
                                                           "no_pathways",
                                                           "no_weighted_pooling",
                                                           "single_nanoblock"};

/// Rewires `base` for a named variant; throws ConfigError for unknown names.
NexusConfig apply_variant(const NexusConfig& base, const std::string& variant);

struct AblationRow {
  std::string variant;
  std::size_t parameter_count = 0;
  std::vector<double> val_r2;   // per seed, species-averaged
  std::vector<double> test_r2;  // per seed, species-averaged
  double median_val_r2 = 0.0;
  double median_test_r2 = 0.0;
  double delta_pct = 0.0;  // median test R^2 change against full, percent
  double wall_seconds = 0.0;
};

struct AblationInputs {
  const WindowSet* train = nullptr;
  const WindowSet* val = nullptr;
  const WindowSet* test = nullptr;
  const NormalizationStats* stats = nullptr;
};

std::vector<AblationRow> run_ablation(const std::vector<std::string>& variants, const NexusConfig& base,
                                      const TrainConfig& config, const AblationInputs& data,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::function<void(const std::string&)>& log = {});

/// Columns: variant,parameters,median_val_r2,median_test_r2,delta_test_r2_pct,wall_seconds,seeds
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);

double median(std::vector<double> v);

}  // namespace nexus
