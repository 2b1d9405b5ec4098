#include "nexus/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "nexus/error.hpp"
#include "nexus/rng.hpp"

namespace nexus {

const char* to_string(OutputMode m) { return m == OutputMode::kPerSite ? "per_site" : "pooled"; }
const char* to_string(ProjectionKind k) { return k == ProjectionKind::kLowRank ? "lowrank" : "dense"; }
const char* to_string(PathwaySet p) { return p == PathwaySet::kAll ? "all" : "compact_only"; }
const char* to_string(PoolingKind p) { return p == PoolingKind::kWeighted ? "weighted" : "uniform"; }

namespace {

template <typename E>
E parse_choice(std::string_view key, std::string_view v, std::initializer_list<E> options) {
  std::string allowed;
  for (E e : options) {
    if (v == to_string(e)) return e;
    allowed += std::string(allowed.empty() ? "" : ", ") + to_string(e);
  }
  throw ConfigError(std::string(key) + " must be one of {" + allowed + "}, got '" + std::string(v) + "'");
}

}  // namespace

OutputMode parse_output_mode(std::string_view v) {
  return parse_choice("output_mode", v, {OutputMode::kPerSite, OutputMode::kPooled});
}
ProjectionKind parse_projection(std::string_view v) {
  return parse_choice("projection", v, {ProjectionKind::kLowRank, ProjectionKind::kDense});
}
PathwaySet parse_pathways(std::string_view v) {
  return parse_choice("pathways", v, {PathwaySet::kAll, PathwaySet::kCompactOnly});
}
PoolingKind parse_pooling(std::string_view v) {
  return parse_choice("pooling", v, {PoolingKind::kWeighted, PoolingKind::kUniform});
}

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const auto n = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw ConfigError("model config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

enum class Init { kKaiming, kXavier };

DiffArray init_weight(Shape shape, std::size_t fan_in, std::size_t fan_out, Init kind, std::mt19937_64& rng) {
  const double stddev = kind == Init::kKaiming ? std::sqrt(2.0 / static_cast<double>(fan_in))
                                               : std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = dist(rng);
  return DiffArray::from(std::move(shape), std::move(v), true);
}

DiffArray zeros_param(Shape shape) { return DiffArray::zeros(std::move(shape), true); }

std::string block_prefix(std::size_t i) { return "block" + std::to_string(i + 1); }

DiffArray dense(Tape& tape, const DiffArray& x, const DiffArray& w, const DiffArray& b) {
  return add_bias(tape, pointwise_conv(tape, x, w), b);
}

}  // namespace

// ---------------------------------------------------------------------------
// NexusConfig

void NexusConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v < 1) throw ConfigError(std::string("model config: ") + name + " must be >= 1");
  };
  positive(sites, "sites");
  positive(lookback, "lookback");
  positive(features, "features");
  positive(patch_len, "patch_len");
  positive(stride, "stride");
  positive(rank, "rank");
  positive(d_hidden, "d_hidden");
  positive(n_blocks, "n_blocks");
  positive(head_hidden, "head_hidden");
  positive(species, "species");
  positive(fusion_hidden, "fusion_hidden");
  if (patch_len > lookback) {
    throw ConfigError("model config: patch_len " + std::to_string(patch_len) + " exceeds lookback " +
                      std::to_string(lookback));
  }
  if (rank > std::min(patch_width(), d_hidden)) {
    throw ConfigError("model config: rank " + std::to_string(rank) + " exceeds min(patch_len*features, d_hidden) = " +
                      std::to_string(std::min(patch_width(), d_hidden)));
  }
  if (kernel_width_compact % 2 == 0 || kernel_width_depthwise % 2 == 0) {
    throw ConfigError("model config: kernel widths must be odd");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("model config: dropout_rate must lie in [0, 1)");
  }
  if (d_hidden < 2) throw ConfigError("model config: d_hidden must be >= 2 for layer normalization");
}

std::string NexusConfig::canonical() const {
  std::map<std::string, std::string> kv{
      {"d_hidden", std::to_string(d_hidden)},
      {"dropout_rate", fmt_double(dropout_rate)},
      {"features", std::to_string(features)},
      {"fusion_hidden", std::to_string(fusion_hidden)},
      {"head_hidden", std::to_string(head_hidden)},
      {"kernel_width_compact", std::to_string(kernel_width_compact)},
      {"kernel_width_depthwise", std::to_string(kernel_width_depthwise)},
      {"lookback", std::to_string(lookback)},
      {"n_blocks", std::to_string(n_blocks)},
      {"output_mode", to_string(output_mode)},
      {"patch_len", std::to_string(patch_len)},
      {"pathways", to_string(pathways)},
      {"pooling", to_string(pooling)},
      {"projection", to_string(projection)},
      {"rank", std::to_string(rank)},
      {"residual", residual ? "true" : "false"},
      {"sites", std::to_string(sites)},
      {"species", std::to_string(species)},
      {"stride", std::to_string(stride)},
  };
  std::string out;
  for (const auto& [k, v] : kv) {
    if (!out.empty()) out += ' ';
    out += k + '=' + v;
  }
  return out;
}

NexusConfig NexusConfig::from_canonical(const std::string& text) {
  NexusConfig c;
  std::istringstream is(text);
  std::string tok;
  try {
    while (is >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw ConfigError("malformed token '" + tok + "'");
      const std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
      if (k == "sites") c.sites = parse_size(k, v);
      else if (k == "lookback") c.lookback = parse_size(k, v);
      else if (k == "features") c.features = parse_size(k, v);
      else if (k == "patch_len") c.patch_len = parse_size(k, v);
      else if (k == "stride") c.stride = parse_size(k, v);
      else if (k == "rank") c.rank = parse_size(k, v);
      else if (k == "d_hidden") c.d_hidden = parse_size(k, v);
      else if (k == "n_blocks") c.n_blocks = parse_size(k, v);
      else if (k == "head_hidden") c.head_hidden = parse_size(k, v);
      else if (k == "species") c.species = parse_size(k, v);
      else if (k == "fusion_hidden") c.fusion_hidden = parse_size(k, v);
      else if (k == "kernel_width_compact") c.kernel_width_compact = parse_size(k, v);
      else if (k == "kernel_width_depthwise") c.kernel_width_depthwise = parse_size(k, v);
      else if (k == "dropout_rate") c.dropout_rate = std::stod(v);
      else if (k == "residual" && (v == "true" || v == "false")) c.residual = v == "true";
      else if (k == "output_mode") c.output_mode = parse_output_mode(v);
      else if (k == "projection") c.projection = parse_projection(v);
      else if (k == "pathways") c.pathways = parse_pathways(v);
      else if (k == "pooling") c.pooling = parse_pooling(v);
      else throw ConfigError("unknown key or value '" + tok + "'");
    }
  } catch (const std::invalid_argument&) {
    throw MismatchError("model config: bad number in '" + tok + "'");
  } catch (const ConfigError& e) {
    throw MismatchError(std::string("model config: ") + e.what());
  }
  return c;
}

std::uint64_t NexusConfig::hash() const {
  const std::string c = canonical();
  return fnv1a64(c.data(), c.size());
}

// ---------------------------------------------------------------------------
// NexusParams

void NexusParams::add(const std::string& path, DiffArray value) {
  if (!params_.emplace(path, std::move(value)).second) {
    throw Error(ErrorCode::kInternal, "duplicate parameter path " + path);
  }
}

const DiffArray& NexusParams::at(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw MismatchError("missing parameter " + path);
  return it->second;
}

DiffArray& NexusParams::at(const std::string& path) {
  auto it = params_.find(path);
  if (it == params_.end()) throw MismatchError("missing parameter " + path);
  return it->second;
}

std::size_t NexusParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.size();
  return n;
}

void NexusParams::zero_grad() {
  for (auto& [_, p] : params_) p.zero_grad();
}

NexusParams NexusParams::clone() const {
  NexusParams c;
  for (const auto& [k, p] : params_) c.params_.emplace(k, p.clone());
  return c;
}

bool NexusParams::is_decayed(const std::string& path) {
  const auto dot = path.rfind('.');
  const char lead = path[dot == std::string::npos ? 0 : dot + 1];
  return lead == 'W' || lead == 'K';
}

// ---------------------------------------------------------------------------
// Initialization and counting

NexusParams init_params(const NexusConfig& config, std::uint64_t seed) {
  config.validate();
  auto rng = make_stream(seed, "model.init");
  const std::size_t d = config.d_hidden, r = config.rank, pd = config.patch_width();
  NexusParams p;

  if (config.projection == ProjectionKind::kLowRank) {
    p.add("proj.W1", init_weight({pd, r}, pd, r, Init::kKaiming, rng));
    p.add("proj.W2", init_weight({r, d}, r, d, Init::kKaiming, rng));
  } else {
    p.add("proj.W", init_weight({pd, d}, pd, d, Init::kKaiming, rng));
  }
  p.add("proj.b", zeros_param({d}));

  for (std::size_t i = 0; i < config.n_blocks; ++i) {
    const std::string b = block_prefix(i);
    const std::size_t kc = config.kernel_width_compact, kd = config.kernel_width_depthwise;
    p.add(b + ".compact.K_c", init_weight({d, kc}, kc, kc, Init::kKaiming, rng));
    p.add(b + ".compact.b_c", zeros_param({d}));
    if (config.pathways == PathwaySet::kAll) {
      p.add(b + ".micro.K_d", init_weight({d, kd}, kd, kd, Init::kKaiming, rng));
      p.add(b + ".micro.K_p1", init_weight({d, r}, d, r, Init::kKaiming, rng));
      p.add(b + ".micro.K_p2", init_weight({r, d}, r, d, Init::kKaiming, rng));
      p.add(b + ".micro.b_p", zeros_param({d}));
      p.add(b + ".gate.W_g1", init_weight({d, r}, d, r, Init::kXavier, rng));
      p.add(b + ".gate.W_g2", init_weight({r, d}, r, d, Init::kXavier, rng));
      p.add(b + ".gate.b_g", zeros_param({d}));
      const std::size_t fh = config.fusion_hidden;
      p.add(b + ".fusion.f_phi.W1", init_weight({d, fh}, d, fh, Init::kKaiming, rng));
      p.add(b + ".fusion.f_phi.b1", zeros_param({fh}));
      p.add(b + ".fusion.f_phi.W2", init_weight({fh, 3}, fh, 3, Init::kXavier, rng));
      p.add(b + ".fusion.f_phi.b2", zeros_param({3}));
    }
  }

  if (config.pooling == PoolingKind::kWeighted) {
    p.add("pool.g_theta.W", init_weight({d, 1}, d, 1, Init::kXavier, rng));
  }

  const std::size_t hh = config.head_hidden, out = config.output_size();
  p.add("head.ln.gamma", DiffArray::full({d}, 1.0, true));
  p.add("head.ln.beta", zeros_param({d}));
  p.add("head.W_hidden", init_weight({d, hh}, d, hh, Init::kKaiming, rng));
  p.add("head.b_hidden", zeros_param({hh}));
  p.add("head.W_out", init_weight({hh, out}, hh, out, Init::kKaiming, rng));
  p.add("head.b_out", zeros_param({out}));
  return p;
}

std::vector<ParameterBreakdown> parameter_breakdown(const NexusConfig& c) {
  const std::size_t d = c.d_hidden, r = c.rank, pd = c.patch_width();
  std::vector<ParameterBreakdown> rows;
  rows.push_back({"projection", c.projection == ProjectionKind::kLowRank ? pd * r + r * d + d : pd * d + d});
  for (std::size_t i = 0; i < c.n_blocks; ++i) {
    const std::string b = block_prefix(i);
    rows.push_back({b + ".compact", d * c.kernel_width_compact + d});
    if (c.pathways == PathwaySet::kAll) {
      rows.push_back({b + ".micro", d * c.kernel_width_depthwise + d * r + r * d + d});
      rows.push_back({b + ".gate", d * r + r * d + d});
      rows.push_back({b + ".fusion", d * c.fusion_hidden + c.fusion_hidden + c.fusion_hidden * 3 + 3});
    }
  }
  rows.push_back({"pool", c.pooling == PoolingKind::kWeighted ? d : 0});
  rows.push_back({"head", 2 * d + d * c.head_hidden + c.head_hidden + c.head_hidden * c.output_size() +
                              c.output_size()});
  return rows;
}

std::size_t count_parameters(const NexusConfig& config) {
  std::size_t n = 0;
  for (const auto& row : parameter_breakdown(config)) n += row.count;
  return n;
}

// ---------------------------------------------------------------------------
// Forward stages

DiffArray patch_embed(Tape& tape, const DiffArray& x, const NexusConfig& config) {
  const auto r = x.rank();
  if (r < 3 || x.dim(r - 3) != config.sites || x.dim(r - 2) != config.lookback || x.dim(r - 1) != config.features) {
    throw ShapeError("patch_embed: input " + shape_str(x.shape()) + " does not match [L x T x D] = [" +
                     std::to_string(config.sites) + "x" + std::to_string(config.lookback) + "x" +
                     std::to_string(config.features) + "]");
  }
  return unfold(tape, x, config.patch_len, config.stride);
}

DiffArray low_rank_project(Tape& tape, const DiffArray& patches, const DiffArray& w1, const DiffArray& w2,
                           const DiffArray& bias) {
  if (w1.rank() != 2 || w2.rank() != 2 || w1.dim(1) != w2.dim(0)) {
    throw ShapeError("low_rank_project: factor shapes " + shape_str(w1.shape()) + " and " + shape_str(w2.shape()) +
                     " do not chain");
  }
  const std::size_t rank = w1.dim(1);
  if (rank > std::min(w1.dim(0), w2.dim(1))) {
    throw ConfigError("low_rank_project: rank " + std::to_string(rank) + " exceeds min(" + std::to_string(w1.dim(0)) +
                      ", " + std::to_string(w2.dim(1)) + ")");
  }
  return add_bias(tape, pointwise_conv(tape, pointwise_conv(tape, patches, w1), w2), bias);
}

NanoBlockOutput nanoblock_forward(Tape& tape, const DiffArray& h, const NexusParams& params,
                                  const std::string& prefix, const NexusConfig& config, bool training,
                                  std::mt19937_64& rng) {
  if (h.rank() != 4 || h.dim(3) != config.d_hidden) {
    throw ShapeError("nanoblock " + prefix + ": expected [N x L x T' x d'], got " + shape_str(h.shape()));
  }
  const auto& P = [&](const char* name) -> const DiffArray& { return params.at(prefix + name); };

  // CompactKernel: depthwise temporal filter.
  DiffArray zc = add_bias(tape, conv1d(tape, h, P(".compact.K_c"), ConvMode::kDepthwise), P(".compact.b_c"));

  NanoBlockOutput out;
  DiffArray fused;
  if (config.pathways == PathwaySet::kAll) {
    // MicroConv: depthwise then rank-limited pointwise mixing.
    DiffArray zm = conv1d(tape, h, P(".micro.K_d"), ConvMode::kDepthwise);
    zm = pointwise_conv(tape, pointwise_conv(tape, zm, P(".micro.K_p1")), P(".micro.K_p2"));
    zm = add_bias(tape, zm, P(".micro.b_p"));

    // FusionGate: H * sigmoid(W_g H + b_g).
    DiffArray gate = pointwise_conv(tape, pointwise_conv(tape, h, P(".gate.W_g1")), P(".gate.W_g2"));
    gate = sigmoid(tape, add_bias(tape, gate, P(".gate.b_g")));
    DiffArray zg = mul(tape, h, gate);

    // Fusion weights from globally pooled H.
    DiffArray g = global_pool(tape, h, {1, 2});  // [N x d']
    g = relu(tape, dense(tape, g, P(".fusion.f_phi.W1"), P(".fusion.f_phi.b1")));
    DiffArray weights = softmax(tape, dense(tape, g, P(".fusion.f_phi.W2"), P(".fusion.f_phi.b2")), 1);

    fused = add(tape, broadcast_mul(tape, zc, select(tape, weights, 1, 0)),
                broadcast_mul(tape, zm, select(tape, weights, 1, 1)));
    fused = add(tape, fused, broadcast_mul(tape, zg, select(tape, weights, 1, 2)));
    out.fusion_weights = weights;
  } else {
    fused = zc;
  }

  if (config.residual) fused = add(tape, fused, h);
  out.z = dropout(tape, fused, config.dropout_rate, training, rng);
  return out;
}

PoolOutput weighted_spatial_pool(Tape& tape, const DiffArray& z, const NexusParams& params,
                                 const NexusConfig& config) {
  if (z.rank() != 4 || z.dim(1) != config.sites) {
    throw ShapeError("weighted_spatial_pool: expected [N x L x T' x d'], got " + shape_str(z.shape()));
  }
  const std::size_t n = z.dim(0), sites = z.dim(1);
  DiffArray per_site = global_pool(tape, z, {2});  // [N x L x d']
  DiffArray weights;
  if (config.pooling == PoolingKind::kWeighted) {
    DiffArray scores = pointwise_conv(tape, per_site, params.at("pool.g_theta.W"));  // [N x L x 1]
    weights = softmax(tape, reshape(tape, scores, {n, sites}), 1);
  } else {
    weights = DiffArray::full({n, sites}, 1.0 / static_cast<double>(sites));
  }
  DiffArray pooled = sum_axis(tape, broadcast_mul(tape, per_site, weights), 1);
  return {pooled, weights};
}

DiffArray prediction_head(Tape& tape, const DiffArray& pooled, const NexusParams& params, const NexusConfig& config) {
  const std::size_t axis = pooled.rank() - 1;
  DiffArray h = layer_norm(tape, pooled, axis);
  h = scale_shift(tape, h, params.at("head.ln.gamma"), params.at("head.ln.beta"));
  h = relu(tape, dense(tape, h, params.at("head.W_hidden"), params.at("head.b_hidden")));
  DiffArray y = dense(tape, h, params.at("head.W_out"), params.at("head.b_out"));
  if (config.output_mode == OutputMode::kPerSite) {
    Shape s(pooled.shape().begin(), pooled.shape().end() - 1);
    s.push_back(config.sites);
    s.push_back(config.species);
    y = reshape(tape, y, std::move(s));
  }
  return y;
}

ForwardResult forward(Tape& tape, const DiffArray& x, const NexusParams& params, const NexusConfig& config,
                      bool training, std::mt19937_64& rng) {
  const bool single = x.rank() == 3;
  if (!single && x.rank() != 4) {
    throw ShapeError("forward: input must be [L x T x D] or [N x L x T x D], got " + shape_str(x.shape()));
  }
  DiffArray batch = single ? reshape(tape, x, {1, x.dim(0), x.dim(1), x.dim(2)}) : x;
  const std::size_t n = batch.dim(0);

  auto stage = [](const char* name, auto&& fn) {
    try {
      return fn();
    } catch (const ShapeError& e) {
      throw ShapeError(std::string(name) + ": " + e.what());
    }
  };

  DiffArray p = stage("patch_embed", [&] { return patch_embed(tape, batch, config); });
  DiffArray h = stage("projection", [&] {
    if (config.projection == ProjectionKind::kLowRank) {
      return low_rank_project(tape, p, params.at("proj.W1"), params.at("proj.W2"), params.at("proj.b"));
    }
    return dense(tape, p, params.at("proj.W"), params.at("proj.b"));
  });

  ForwardResult result;
  result.trace.batch = n;
  for (std::size_t i = 0; i < config.n_blocks; ++i) {
    NanoBlockOutput blk = stage("nanoblock", [&] {
      return nanoblock_forward(tape, h, params, block_prefix(i), config, training, rng);
    });
    h = blk.z;
    if (blk.fusion_weights.defined()) {
      result.trace.fusion_weights.emplace_back(blk.fusion_weights.values().begin(), blk.fusion_weights.values().end());
    } else {
      result.trace.fusion_weights.emplace_back();
    }
  }
  PoolOutput pool = stage("spatial_pool", [&] { return weighted_spatial_pool(tape, h, params, config); });
  result.trace.pooling_weights.assign(pool.weights.values().begin(), pool.weights.values().end());
  DiffArray y = stage("prediction_head", [&] { return prediction_head(tape, pool.pooled, params, config); });
  if (single) {
    Shape s(y.shape().begin() + 1, y.shape().end());
    y = reshape(tape, y, std::move(s));
  }
  result.prediction = y;
  return result;
}

}  // namespace nexus
