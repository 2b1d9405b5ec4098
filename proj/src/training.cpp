#include "nexus/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "nexus/error.hpp"
#include "nexus/rng.hpp"

namespace nexus {

void TrainConfig::validate() const {
  if (!(eta0 > 0.0) || !std::isfinite(eta0)) throw ConfigError("train.eta0 must be positive");
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("train.decay must lie in (0, 1]");
  if (decay_interval == 0) throw ConfigError("train.decay_interval must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (max_epochs == 0) throw ConfigError("train.max_epochs must be positive");
  if (patience == 0 || patience > max_epochs) throw ConfigError("train.patience must lie in [1, max_epochs]");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
}

double lr_at_epoch(double eta0, std::size_t t, double decay, std::size_t interval) {
  if (interval == 0) throw ConfigError("lr decay interval must be positive");
  return eta0 * std::pow(decay, static_cast<double>(t / interval));
}

DiffArray mse_loss(Tape& tape, const DiffArray& prediction, const DiffArray& target) {
  return mse(tape, prediction, target);
}

DiffArray regularized_loss(Tape& tape, const DiffArray& data_loss, const NexusParams& params, double lambda) {
  if (lambda == 0.0) return data_loss;
  DiffArray total = data_loss;
  for (const auto& [path, p] : params) {
    if (!NexusParams::is_decayed(path)) continue;
    total = add(tape, total, scale(tape, sum_squares(tape, p), lambda));
  }
  return total;
}

void adam_step(NexusParams& params, AdamState& state, double lr, const TrainConfig& config) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (auto& [path, p] : params) {
    auto& m = state.m[path];
    auto& v = state.v[path];
    if (m.empty()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    }
    auto g = p.grad();
    auto w = p.mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.adam_eps);
    }
  }
}

namespace {

void check_compatible(const NexusConfig& model, const WindowSet& w, const char* which) {
  if (w.empty()) throw InputError(std::string(which) + " split has no windows");
  if (w.num_sites() != model.sites || w.num_features() != model.features || w.lookback() != model.lookback)
    throw ShapeError(std::string(which) + " windows are L=" + std::to_string(w.num_sites()) +
                     " T=" + std::to_string(w.lookback()) + " D=" + std::to_string(w.num_features()) +
                     " but the model expects L=" + std::to_string(model.sites) + " T=" +
                     std::to_string(model.lookback) + " D=" + std::to_string(model.features));
}

// Per-site targets [n x L x K] reduced to [n x K] for pooled output.
void pool_targets(const NexusConfig& model, std::size_t n, std::vector<double>& y) {
  if (model.output_mode == OutputMode::kPerSite) return;
  const std::size_t L = model.sites, K = model.species;
  std::vector<double> out(n * K, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t k = 0; k < K; ++k) out[b * K + k] += y[(b * L + i) * K + k] / double(L);
  y = std::move(out);
}

Shape target_shape(const NexusConfig& model, std::size_t n) {
  if (model.output_mode == OutputMode::kPerSite) return {n, model.sites, model.species};
  return {n, model.species};
}

double mean_squared(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

}  // namespace

std::vector<double> predict_windows(const NexusParams& params, const NexusConfig& model, const WindowSet& windows,
                                    std::size_t batch_size) {
  check_compatible(model, windows, "prediction");
  std::mt19937_64 unused(0);
  std::vector<double> out;
  out.reserve(windows.size() * model.output_size());
  std::vector<double> x, y;
  std::vector<std::size_t> idx;
  for (std::size_t b0 = 0; b0 < windows.size(); b0 += batch_size) {
    const std::size_t n = std::min(batch_size, windows.size() - b0);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), b0);
    windows.fill(idx, x, y);
    Tape tape(false);
    const auto xa = DiffArray::from({n, model.sites, model.lookback, model.features}, std::move(x));
    const auto res = forward(tape, xa, params, model, false, unused);
    out.insert(out.end(), res.prediction.values().begin(), res.prediction.values().end());
    x.clear();
  }
  return out;
}

std::vector<double> window_targets(const NexusConfig& model, const WindowSet& windows) {
  std::vector<double> x, y;
  std::vector<std::size_t> idx(windows.size());
  std::iota(idx.begin(), idx.end(), 0);
  // Inputs are filled too; the cost is acceptable at evaluation time.
  windows.fill(idx, x, y);
  pool_targets(model, windows.size(), y);
  return y;
}

MetricsReport evaluate_windows(const NexusParams& params, const NexusConfig& model, const WindowSet& windows,
                               const NormalizationStats& stats) {
  const auto pred = predict_windows(params, model, windows);
  const auto target = window_targets(model, windows);
  const std::size_t K = model.species;
  std::vector<std::vector<double>> y(K), yhat(K);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::size_t k = i % K;
    y[k].push_back(robust_denormalize(target[i], stats.features.at(k)));
    yhat[k].push_back(robust_denormalize(pred[i], stats.features.at(k)));
  }
  std::vector<std::string> names(stats.feature_names.begin(), stats.feature_names.begin() + K);
  return make_report(names, y, yhat);
}

TrainResult train(const NexusConfig& model, const WindowSet& train_set, const WindowSet& val_set,
                  const TrainConfig& config, const TrainOptions& options) {
  model.validate();
  config.validate();
  check_compatible(model, train_set, "train");
  check_compatible(model, val_set, "validation");

  const auto started = std::chrono::steady_clock::now();
  NexusParams params = init_params(model, config.seed);
  auto shuffle_rng = make_stream(config.seed, "train.shuffle");
  auto dropout_rng = make_stream(config.seed, "train.dropout");
  AdamState adam;

  const auto val_target = window_targets(model, val_set);

  TrainResult result;
  result.report.parameter_count = params.scalar_count();
  double best = INFINITY;
  NexusParams best_params = params.clone();
  std::size_t since_best = 0;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> x, y;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const double lr = lr_at_epoch(config.eta0, epoch - 1, config.decay, config.decay_interval);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t loss_n = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - b0);
      const std::span<const std::size_t> batch(order.data() + b0, n);
      train_set.fill(batch, x, y);
      pool_targets(model, n, y);

      Tape tape;
      const auto xa = DiffArray::from({n, model.sites, model.lookback, model.features}, std::move(x));
      const auto ya = DiffArray::from(target_shape(model, n), std::move(y));
      x.clear();
      y.clear();
      const auto res = forward(tape, xa, params, model, true, dropout_rng);
      const auto data_loss = mse_loss(tape, res.prediction, ya);
      const auto loss = regularized_loss(tape, data_loss, params, config.weight_decay);
      if (!std::isfinite(loss.item()))
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(result.report.steps + 1));
      loss_sum += data_loss.item() * double(n);
      loss_n += n;
      if (!options.freeze_params) {
        params.zero_grad();
        tape.backward(loss);
        adam_step(params, adam, lr, config);
      }
      ++result.report.steps;
    }

    const auto val_pred = predict_windows(params, model, val_set);
    const double val_loss = mean_squared(val_pred, val_target);
    if (!std::isfinite(val_loss)) throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));

    EpochRecord rec{epoch, lr, loss_sum / double(loss_n), val_loss};
    result.report.history.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);

    if (val_loss < best) {
      best = val_loss;
      best_params = params.clone();
      result.report.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }

  result.report.stopped_epoch = result.report.history.size();
  result.report.best_val_loss = best;
  result.params = std::move(best_params);
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

void write_train_report_csv(const std::filesystem::path& path, const TrainReport& report) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "epoch,lr,train_loss,val_loss\n";
  char buf[160];
  for (const auto& r : report.history) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g\n", r.epoch, r.lr, r.train_loss, r.val_loss);
    out << buf;
  }
}

// ---------------------------------------------------------------------------

NexusConfig apply_variant(const NexusConfig& base, const std::string& variant) {
  NexusConfig c = base;
  if (variant == "full") {
  } else if (variant == "no_patch_embedding") {
    c.patch_len = 1;
    c.stride = 1;
    c.rank = std::min(c.rank, c.features);
  } else if (variant == "no_lowrank") {
    c.projection = ProjectionKind::kDense;
  } else if (variant == "no_pathways") {
    c.pathways = PathwaySet::kCompactOnly;
  } else if (variant == "no_weighted_pooling") {
    c.pooling = PoolingKind::kUniform;
  } else if (variant == "single_nanoblock") {
    c.n_blocks = 1;
  } else {
    std::string allowed;
    for (const auto& v : kAblationVariants) allowed += (allowed.empty() ? "" : ", ") + v;
    throw ConfigError("unknown ablation variant '" + variant + "' (expected one of " + allowed + ")");
  }
  c.validate();
  return c;
}

double median(std::vector<double> v) {
  if (v.empty()) throw InputError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<AblationRow> run_ablation(const std::vector<std::string>& variants, const NexusConfig& base,
                                      const TrainConfig& config, const AblationInputs& data,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::function<void(const std::string&)>& log) {
  if (!data.train || !data.val || !data.test || !data.stats) throw InputError("ablation needs train/val/test and stats");
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  std::vector<AblationRow> rows;
  for (const auto& name : variants) {
    const NexusConfig cfg = apply_variant(base, name);
    AblationRow row;
    row.variant = name;
    row.parameter_count = count_parameters(cfg);
    const auto started = std::chrono::steady_clock::now();
    for (auto seed : seeds) {
      TrainConfig tc = config;
      tc.seed = seed;
      const auto res = train(cfg, *data.train, *data.val, tc);
      row.val_r2.push_back(evaluate_windows(res.params, cfg, *data.val, *data.stats).average.r2);
      row.test_r2.push_back(evaluate_windows(res.params, cfg, *data.test, *data.stats).average.r2);
      if (log) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "%s seed=%llu epochs=%zu val_r2=%.4f test_r2=%.4f", name.c_str(),
                      static_cast<unsigned long long>(seed), res.report.stopped_epoch, row.val_r2.back(),
                      row.test_r2.back());
        log(buf);
      }
    }
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    row.median_val_r2 = median(row.val_r2);
    row.median_test_r2 = median(row.test_r2);
    rows.push_back(std::move(row));
  }
  const auto full = std::find_if(rows.begin(), rows.end(), [](const AblationRow& r) { return r.variant == "full"; });
  for (auto& r : rows) {
    if (full == rows.end() || full->median_test_r2 == 0.0) {
      r.delta_pct = 0.0;
    } else {
      r.delta_pct = 100.0 * (r.median_test_r2 - full->median_test_r2) / std::abs(full->median_test_r2);
    }
  }
  return rows;
}

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "variant,parameters,median_val_r2,median_test_r2,delta_test_r2_pct,wall_seconds,seeds\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.6f,%.6f,%.3f,%.2f,%zu\n", r.variant.c_str(), r.parameter_count,
                  r.median_val_r2, r.median_test_r2, r.delta_pct, r.wall_seconds, r.test_r2.size());
    out << buf;
  }
}

}  // namespace nexus
