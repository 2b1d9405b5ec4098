#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "nexus/tensor.hpp"

namespace nexus {

enum class OutputMode { kPerSite, kPooled };

/// Projection after patch embedding.
enum class ProjectionKind { kLowRank, kDense };

/// Pathways active inside each NanoBlock.
enum class PathwaySet { kAll, kCompactOnly };

enum class PoolingKind { kWeighted, kUniform };

const char* to_string(OutputMode m);
const char* to_string(ProjectionKind k);
const char* to_string(PathwaySet p);
const char* to_string(PoolingKind p);
// Throw ConfigError listing the accepted spellings.
OutputMode parse_output_mode(std::string_view v);
ProjectionKind parse_projection(std::string_view v);
PathwaySet parse_pathways(std::string_view v);
PoolingKind parse_pooling(std::string_view v);

struct NexusConfig {
  std::size_t sites = 4;          // L
  std::size_t lookback = 168;     // T
  std::size_t features = 9;       // D
  std::size_t patch_len = 4;      // p
  std::size_t stride = 2;         // s
  std::size_t rank = 32;          // r
  std::size_t d_hidden = 48;      // d'
  std::size_t n_blocks = 2;
  std::size_t head_hidden = 32;
  std::size_t species = 3;        // K
  OutputMode output_mode = OutputMode::kPerSite;
  std::size_t kernel_width_compact = 3;
  std::size_t kernel_width_depthwise = 3;
  double dropout_rate = 0.1;
  std::size_t fusion_hidden = 16;
  bool residual = true;
  ProjectionKind projection = ProjectionKind::kLowRank;
  PathwaySet pathways = PathwaySet::kAll;
  PoolingKind pooling = PoolingKind::kWeighted;

  /// Number of patches T'.
  std::size_t num_patches() const { return (lookback - patch_len) / stride + 1; }
  std::size_t patch_width() const { return patch_len * features; }
  std::size_t output_size() const { return output_mode == OutputMode::kPerSite ? sites * species : species; }

  /// Throws ConfigError when an invariant is violated.
  void validate() const;

  /// Sorted `key=value` pairs separated by single spaces; stable across runs.
  std::string canonical() const;
  /// Throws MismatchError on unknown keys or values (it reads checkpoint headers).
  static NexusConfig from_canonical(const std::string& text);
  std::uint64_t hash() const;

  bool operator==(const NexusConfig&) const = default;
};

/// Named parameter set. Paths are ordered, so iteration and checkpoints are
/// deterministic.
class NexusParams {
 public:
  void add(const std::string& path, DiffArray value);
  bool contains(const std::string& path) const { return params_.contains(path); }
  const DiffArray& at(const std::string& path) const;
  DiffArray& at(const std::string& path);

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const;
  void zero_grad();
  NexusParams clone() const;

  /// Weights (W*, K*) receive L2 decay; biases and norm parameters do not.
  static bool is_decayed(const std::string& path);

 private:
  std::map<std::string, DiffArray> params_;
};

struct ForwardTrace {
  /// Per block, shape [N x 3] holding (alpha, beta, gamma) per sample.
  /// Empty when the block has a single pathway.
  std::vector<std::vector<double>> fusion_weights;
  /// Shape [N x L].
  std::vector<double> pooling_weights;
  std::size_t batch = 0;
};

struct ForwardResult {
  DiffArray prediction;  // [N x L x K] (per-site) or [N x K]; rank drops N for a single sample
  ForwardTrace trace;
};

NexusParams init_params(const NexusConfig& config, std::uint64_t seed);

/// Scalar count derived from the configuration alone.
std::size_t count_parameters(const NexusConfig& config);

struct ParameterBreakdown {
  std::string stage;
  std::size_t count = 0;
};
std::vector<ParameterBreakdown> parameter_breakdown(const NexusConfig& config);

DiffArray patch_embed(Tape& tape, const DiffArray& x, const NexusConfig& config);
DiffArray low_rank_project(Tape& tape, const DiffArray& patches, const DiffArray& w1, const DiffArray& w2,
                           const DiffArray& bias);

struct NanoBlockOutput {
  DiffArray z;
  DiffArray fusion_weights;  // [N x 3], undefined for single-pathway blocks
};

/// `h` is [N x L x T' x d'].
NanoBlockOutput nanoblock_forward(Tape& tape, const DiffArray& h, const NexusParams& params,
                                  const std::string& prefix, const NexusConfig& config, bool training,
                                  std::mt19937_64& rng);

struct PoolOutput {
  DiffArray pooled;   // [N x d']
  DiffArray weights;  // [N x L]
};
PoolOutput weighted_spatial_pool(Tape& tape, const DiffArray& z, const NexusParams& params,
                                 const NexusConfig& config);

DiffArray prediction_head(Tape& tape, const DiffArray& pooled, const NexusParams& params, const NexusConfig& config);

/// `x` is [L x T x D] or a batch [N x L x T x D].
ForwardResult forward(Tape& tape, const DiffArray& x, const NexusParams& params, const NexusConfig& config,
                      bool training, std::mt19937_64& rng);

// Checkpoints
void save_checkpoint(const std::filesystem::path& path, const NexusConfig& config, const NexusParams& params);

struct Checkpoint {
  NexusConfig config;
  NexusParams params;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nexus
