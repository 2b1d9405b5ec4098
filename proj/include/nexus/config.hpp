#pragma once

// Run configuration: INI sections mirroring the model, training, synthetic
// generator and data settings, one global seed, and a key schema shared by
// the file parser and command-line overrides.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "nexus/data.hpp"
#include "nexus/model.hpp"
#include "nexus/synth.hpp"
#include "nexus/training.hpp"

namespace nexus {

struct DataConfig {
  SplitBoundaries split;
  std::size_t horizon = 1;  // 3-hour steps ahead
  double idw_power = 2.0;
};

struct AblateConfig {
  std::size_t n_seeds = 3;
  std::vector<std::string> variants = kAblationVariants;
};

struct RunConfig {
  std::uint64_t seed = 42;  // drives synth and train streams
  NexusConfig model;
  TrainConfig train;
  SynthConfig synth;
  DataConfig data;
  AblateConfig ablate;

  /// Copies the global seed into the consumers and checks every section.
  void finalize();

  /// "section.key" -> value; throws ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  /// Effective configuration, every schema key, in schema order.
  std::string to_ini() const;
  void save(const std::filesystem::path& path) const;

  /// Applies every key in `text` on top of the current values.
  void apply_ini(const std::string& text);
  void apply_file(const std::filesystem::path& path);

  /// Defaults overlaid with `text`.
  static RunConfig from_ini(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
};

struct ConfigKey {
  std::string name;  // "section.key"
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<ConfigKey>& config_schema();

}  // namespace nexus
