#include "nexus/commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <sstream>

#include "nexus/error.hpp"

namespace nexus::cmd {

namespace {

std::function<void(const std::string&)>& log_sink() {
  static std::function<void(const std::string&)> sink;
  return sink;
}

void log(const std::string& line) {
  if (log_sink()) log_sink()(line);
}

void echo_config(const RunConfig& config, const fs::path& dir, const char* step) {
  config.save(dir / (std::string(step) + "_config.ini"));
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw InputError("cannot create output directory " + dir.string());
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

struct Prepared {
  AlignedDataset physical;
  std::shared_ptr<const AlignedDataset> normalized;
  NormalizationStats stats;
  Splits splits;
};

Prepared load_prepared(const fs::path& dir) {
  const auto aligned = dir / "aligned.csv";
  const auto stats = dir / "stats.json";
  if (!fs::exists(aligned) || !fs::exists(stats))
    throw InputError("prepared directory " + dir.string() + " lacks aligned.csv or stats.json (run prepare first)");
  Prepared p;
  p.physical = read_aligned_csv(aligned);
  p.stats = NormalizationStats::load(stats);
  if (p.stats.feature_names != p.physical.feature_names)
    throw MismatchError("stats.json features do not match the columns of aligned.csv");
  p.splits = splits_from_stats(p.physical, p.stats);
  p.normalized = std::make_shared<const AlignedDataset>(normalize(p.physical, p.stats));
  return p;
}

void require_model_matches_data(const NexusConfig& model, const AlignedDataset& ds) {
  if (model.sites != ds.num_sites() || model.features != ds.num_features())
    throw ConfigError("model expects L=" + std::to_string(model.sites) + " sites and D=" +
                      std::to_string(model.features) + " features; the prepared data has L=" +
                      std::to_string(ds.num_sites()) + ", D=" + std::to_string(ds.num_features()));
  if (model.species > kNumSpecies) throw ConfigError("model.species exceeds the pollutant columns");
}

// Keys whose values differ between two canonical config strings.
std::string config_diff(const NexusConfig& a, const NexusConfig& b) {
  auto split = [](const std::string& s) {
    std::map<std::string, std::string> kv;
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) {
      const auto eq = tok.find('=');
      kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    return kv;
  };
  const auto ka = split(a.canonical()), kb = split(b.canonical());
  std::string out;
  for (const auto& [k, v] : ka) {
    const auto it = kb.find(k);
    if (it == kb.end() || it->second != v)
      out += (out.empty() ? "" : ", ") + k + " (" + v + " vs " + (it == kb.end() ? "?" : it->second) + ")";
  }
  return out;
}

Checkpoint load_matching_checkpoint(const RunConfig& config, const fs::path& path, const AlignedDataset& ds) {
  auto ckpt = load_checkpoint(path);
  if (!(ckpt.config == config.model))
    throw MismatchError("checkpoint " + path.string() + " was trained with a different model config: " +
                        config_diff(config.model, ckpt.config));
  if (ckpt.config.sites != ds.num_sites() || ckpt.config.features != ds.num_features())
    throw MismatchError("checkpoint expects L=" + std::to_string(ckpt.config.sites) + ", D=" +
                        std::to_string(ckpt.config.features) + " but the prepared data has L=" +
                        std::to_string(ds.num_sites()) + ", D=" + std::to_string(ds.num_features()));
  return ckpt;
}

WindowSet windows_for(const Prepared& p, const SplitRange& range, const RunConfig& config, const char* which) {
  auto w = build_windows(p.normalized, range, config.model.lookback, config.data.horizon);
  if (w.empty())
    throw InputError(std::string(which) + " split yields no windows of lookback " +
                     std::to_string(config.model.lookback) + " (" + std::to_string(range.size()) + " steps)");
  return w;
}

std::vector<std::string> species_names(const Prepared& p, std::size_t k) {
  return {p.physical.feature_names.begin(), p.physical.feature_names.begin() + static_cast<std::ptrdiff_t>(k)};
}

// Rows of predictions.csv / observations.csv: one per (window, site).
std::vector<std::string> row_sites(const NexusConfig& model, const AlignedDataset& ds) {
  if (model.output_mode == OutputMode::kPooled) return {"all"};
  std::vector<std::string> out;
  for (const auto& s : ds.sites) out.push_back(s.id);
  return out;
}

void write_species_table(const fs::path& path, const std::vector<std::string>& species, const WindowSet& w,
                         const std::vector<std::string>& sites, const std::vector<double>& values) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "timestamp,site_id";
  for (const auto& s : species) out << ',' << s;
  out << '\n';
  const std::size_t K = species.size();
  for (std::size_t i = 0; i < w.size(); ++i)
    for (std::size_t s = 0; s < sites.size(); ++s) {
      out << format_timestamp(w.target_time(i)) << ',' << sites[s];
      for (std::size_t k = 0; k < K; ++k) {
        char buf[40];
        std::snprintf(buf, sizeof buf, ",%.17g", values[(i * sites.size() + s) * K + k]);
        out << buf;
      }
      out << '\n';
    }
}

std::vector<double> denormalize_all(const std::vector<double>& z, std::size_t K, const NormalizationStats& stats) {
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = robust_denormalize(z[i], stats.features.at(i % K));
  return out;
}

// Reads a timestamp,site_id,<species...> table into the row order of `w`.
std::vector<double> read_species_table(const fs::path& path, const std::vector<std::string>& species,
                                       const WindowSet& w, const std::vector<std::string>& sites) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read predictions " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw InputError(path.string() + ": empty file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  auto col = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw InputError(path.string() + ": missing column '" + name + "'");
  };
  const std::size_t c_time = col("timestamp"), c_site = col("site_id");
  std::vector<std::size_t> c_species;
  for (const auto& s : species) c_species.push_back(col(s));

  std::map<std::pair<Timestamp, std::string>, std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != header.size())
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " cells");
    std::vector<double> v;
    for (auto c : c_species) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(cells[c], &used));
        if (used != cells[c].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw InputError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + cells[c] + "'");
      }
    }
    rows[{parse_timestamp(cells[c_time]), cells[c_site]}] = std::move(v);
  }
  std::vector<double> out;
  out.reserve(w.size() * sites.size() * species.size());
  for (std::size_t i = 0; i < w.size(); ++i)
    for (const auto& s : sites) {
      const auto it = rows.find({w.target_time(i), s});
      if (it == rows.end())
        throw InputError(path.string() + ": no prediction for " + format_timestamp(w.target_time(i)) + " site " + s);
      out.insert(out.end(), it->second.begin(), it->second.end());
    }
  return out;
}

MetricsReport score(const std::vector<std::string>& species, const std::vector<double>& y,
                    const std::vector<double>& yhat) {
  const std::size_t K = species.size();
  std::vector<std::vector<double>> ys(K), yh(K);
  for (std::size_t i = 0; i < y.size(); ++i) {
    ys[i % K].push_back(y[i]);
    yh[i % K].push_back(yhat[i]);
  }
  return make_report(species, ys, yh);
}

// Last observed input step, physical units, laid out like the targets.
std::vector<double> persistence(const NexusConfig& model, const WindowSet& w, const AlignedDataset& phys) {
  const std::size_t L = phys.num_sites(), K = model.species;
  std::vector<double> out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const std::size_t last = w.input_start(i) + w.lookback() - 1;
    if (model.output_mode == OutputMode::kPooled) {
      for (std::size_t k = 0; k < K; ++k) {
        double acc = 0;
        for (std::size_t l = 0; l < L; ++l) acc += phys.at(l, last, k);
        out.push_back(acc / double(L));
      }
    } else {
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t k = 0; k < K; ++k) out.push_back(phys.at(l, last, k));
    }
  }
  return out;
}

}  // namespace

void set_log_sink(std::function<void(const std::string&)> sink) { log_sink() = std::move(sink); }

GenerateSummary generate(const RunConfig& config, const fs::path& csv_out) {
  const auto dir = csv_out.has_parent_path() ? csv_out.parent_path() : fs::path(".");
  ensure_dir(dir);
  write_synthetic_csv(csv_out, config.synth);
  GenerateSummary s;
  s.sites = synth_pollutant_sites(config.synth).size() + synth_met_sites(config.synth).size();
  s.rows = s.sites * static_cast<std::size_t>(config.synth.n_days) * 24;
  echo_config(config, dir, "generate");
  log("wrote " + std::to_string(s.rows) + " rows for " + std::to_string(s.sites) + " sites to " + csv_out.string());
  return s;
}

QcReport prepare(const RunConfig& config, const fs::path& raw_csv, const fs::path& out_dir) {
  const auto records = read_raw_csv(raw_csv);
  QcOptions opts;
  opts.idw_power = config.data.idw_power;
  auto qc = quality_control(records, opts);
  const auto splits = temporal_split(qc.dataset, config.data.split);
  const auto stats = fit_normalization(qc.dataset, splits);

  ensure_dir(out_dir);
  write_aligned_csv(out_dir / "aligned.csv", qc.dataset);
  stats.save(out_dir / "stats.json");

  nlohmann::json report;
  report["candidate_timestamps"] = qc.report.candidate_timestamps;
  report["kept"] = qc.report.kept;
  report["dropped"] = qc.report.dropped;
  report["pollutant_sites"] = qc.report.pollutant_sites;
  report["met_sites"] = qc.report.met_sites;
  std::vector<std::string> dropped;
  for (auto t : qc.report.dropped_timestamps) dropped.push_back(format_timestamp(t));
  report["dropped_timestamps"] = dropped;
  report["train_steps"] = splits.train.size();
  report["val_steps"] = splits.val.size();
  report["test_steps"] = splits.test.size();
  std::ofstream(out_dir / "qc_report.json") << report.dump(2) << '\n';

  echo_config(config, out_dir, "prepare");
  log("kept " + std::to_string(qc.report.kept) + " of " + std::to_string(qc.report.candidate_timestamps) +
      " timestamps (dropped " + std::to_string(qc.report.dropped) + "); train/val/test steps " +
      std::to_string(splits.train.size()) + "/" + std::to_string(splits.val.size()) + "/" +
      std::to_string(splits.test.size()));
  return qc.report;
}

TrainReport train(const RunConfig& config, const fs::path& prepared_dir, const fs::path& out_dir) {
  const auto p = load_prepared(prepared_dir);
  require_model_matches_data(config.model, p.physical);
  const auto tr = windows_for(p, p.splits.train, config, "train");
  const auto va = windows_for(p, p.splits.val, config, "validation");
  ensure_dir(out_dir);
  echo_config(config, out_dir, "train");

  TrainOptions opts;
  opts.on_epoch = [](const EpochRecord& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %zu lr %.6g train %.6f val %.6f", r.epoch, r.lr, r.train_loss,
                  r.val_loss);
    log(buf);
  };
  log("training " + std::to_string(count_parameters(config.model)) + " parameters on " +
      std::to_string(tr.size()) + " windows");
  const auto res = nexus::train(config.model, tr, va, config.train, opts);
  save_checkpoint(out_dir / "model.nxs", config.model, res.params);
  write_train_report_csv(out_dir / "train_log.csv", res.report);
  log("best val loss " + fmt(res.report.best_val_loss) + " at epoch " + std::to_string(res.report.best_epoch) +
      "; stopped after " + std::to_string(res.report.stopped_epoch));
  return res.report;
}

std::vector<std::pair<std::string, MetricsReport>> evaluate(const RunConfig& config, const fs::path& prepared_dir,
                                                            const std::optional<fs::path>& checkpoint,
                                                            const std::optional<fs::path>& predictions,
                                                            const fs::path& out_dir) {
  if (!checkpoint && !predictions) throw InputError("evaluate needs a checkpoint or a predictions file");
  const auto p = load_prepared(prepared_dir);
  require_model_matches_data(config.model, p.physical);
  const auto te = windows_for(p, p.splits.test, config, "test");
  const auto species = species_names(p, config.model.species);
  const auto sites = row_sites(config.model, p.physical);
  const auto observed = denormalize_all(window_targets(config.model, te), species.size(), p.stats);

  ensure_dir(out_dir);
  echo_config(config, out_dir, "evaluate");
  write_species_table(out_dir / "observations.csv", species, te, sites, observed);

  std::vector<std::pair<std::string, MetricsReport>> rows;
  if (predictions) {
    const auto yhat = read_species_table(*predictions, species, te, sites);
    rows.emplace_back("predictions", score(species, observed, yhat));
  } else {
    const auto ckpt = load_matching_checkpoint(config, *checkpoint, p.physical);
    const auto yhat = denormalize_all(predict_windows(ckpt.params, ckpt.config, te), species.size(), p.stats);
    write_species_table(out_dir / "predictions.csv", species, te, sites, yhat);
    rows.emplace_back("nexus", score(species, observed, yhat));
  }
  rows.emplace_back("persistence", score(species, observed, persistence(config.model, te, p.physical)));
  write_metrics_csv(out_dir / "metrics.csv", rows);
  for (const auto& [name, r] : rows)
    log(name + ": mean R2 " + fmt(r.average.r2) + ", RMSE " + fmt(r.average.rmse) + " over " +
        std::to_string(r.n_samples) + " samples per species");
  return rows;
}

std::vector<AblationRow> ablate(const RunConfig& config, const fs::path& prepared_dir, const fs::path& out_dir) {
  const auto p = load_prepared(prepared_dir);
  require_model_matches_data(config.model, p.physical);
  const auto tr = windows_for(p, p.splits.train, config, "train");
  const auto va = windows_for(p, p.splits.val, config, "validation");
  const auto te = windows_for(p, p.splits.test, config, "test");
  ensure_dir(out_dir);
  echo_config(config, out_dir, "ablate");
  std::vector<std::uint64_t> seeds(config.ablate.n_seeds);
  std::iota(seeds.begin(), seeds.end(), config.seed);
  const auto rows = run_ablation(config.ablate.variants, config.model, config.train, {&tr, &va, &te, &p.stats},
                                 seeds, [](const std::string& s) { log(s); });
  write_ablation_csv(out_dir / "ablation.csv", rows);
  return rows;
}

void analyze(const RunConfig& config, const fs::path& prepared_dir, const std::optional<fs::path>& checkpoint,
             const fs::path& out_dir) {
  const auto p = load_prepared(prepared_dir);
  const auto& ds = p.physical;
  const std::size_t L = ds.num_sites(), N = ds.num_steps(), D = ds.num_features();
  const auto feature = [&](const std::string& name) {
    for (std::size_t f = 0; f < D; ++f)
      if (ds.feature_names[f] == name) return f;
    throw InputError("aligned data has no '" + name + "' column");
  };
  // Pooled over sites: element l*N + t.
  const auto pooled = [&](std::size_t f) {
    std::vector<double> v;
    v.reserve(L * N);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t t = 0; t < N; ++t) v.push_back(ds.at(l, t, f));
    return v;
  };
  std::vector<Timestamp> stamps;
  for (std::size_t l = 0; l < L; ++l) stamps.insert(stamps.end(), ds.timestamps.begin(), ds.timestamps.end());

  const std::vector<std::string> species(ds.feature_names.begin(), ds.feature_names.begin() + kNumSpecies);
  std::vector<std::array<std::optional<double>, 8>> diurnal;
  std::vector<std::array<std::optional<double>, 12>> monthly;
  std::vector<RegimeTable> regimes;
  const auto temp = pooled(feature("skt"));
  const auto wind = pooled(feature("wind_speed"));
  for (std::size_t k = 0; k < kNumSpecies; ++k) {
    const auto series = pooled(k);
    diurnal.push_back(diurnal_profile(series, stamps));
    monthly.push_back(monthly_means(series, stamps));
    regimes.push_back(regime_stratify(series, temp, wind));
  }
  std::vector<std::vector<double>> corr(D, std::vector<double>(D));
  std::vector<std::vector<double>> columns;
  for (std::size_t f = 0; f < D; ++f) columns.push_back(pooled(f));
  for (std::size_t a = 0; a < D; ++a)
    for (std::size_t b = 0; b < D; ++b) {
      try {
        corr[a][b] = pearson_correlation(columns[a], columns[b]);
      } catch (const InputError&) {
        corr[a][b] = NAN;  // constant column
      }
    }

  ensure_dir(out_dir);
  echo_config(config, out_dir, "analyze");
  write_diurnal_csv(out_dir / "diurnal.csv", species, diurnal);
  write_monthly_csv(out_dir / "monthly.csv", species, monthly);
  write_regime_csv(out_dir / "regime.csv", species, regimes);
  write_correlation_csv(out_dir / "correlation.csv", ds.feature_names, corr);

  if (checkpoint) {
    require_model_matches_data(config.model, ds);
    const auto ckpt = load_matching_checkpoint(config, *checkpoint, ds);
    const auto te = windows_for(p, p.splits.test, config, "test");
    const std::size_t K = ckpt.config.species;
    const auto yhat = denormalize_all(predict_windows(ckpt.params, ckpt.config, te), K, p.stats);
    const auto y = denormalize_all(window_targets(ckpt.config, te), K, p.stats);
    for (std::size_t k = 0; k < K; ++k) {
      std::vector<double> yk, hk;
      for (std::size_t i = k; i < y.size(); i += K) {
        yk.push_back(y[i]);
        hk.push_back(yhat[i]);
      }
      write_residuals_csv(out_dir / "residuals.csv", species[k], residual_diagnostics(yk, hk), k > 0);
    }
  }
  for (std::size_t k = 0; k < kNumSpecies; ++k)
    log(species[k] + ": peak 3-hour bin " + std::to_string(3 * argmax_present(diurnal[k])) + " UTC, peak month " +
        std::to_string(argmax_present(monthly[k]) + 1));
}

Forecast predict(const RunConfig& config, const fs::path& prepared_dir, const fs::path& checkpoint,
                 const fs::path& out_dir) {
  const auto p = load_prepared(prepared_dir);
  const auto ckpt = load_matching_checkpoint(config, checkpoint, p.physical);
  const auto& mc = ckpt.config;
  const auto& ds = *p.normalized;
  const std::size_t N = ds.num_steps(), T = mc.lookback;
  if (N < T) throw InputError("prepared data has " + std::to_string(N) + " steps, fewer than the lookback");
  const std::size_t first = N - T;
  for (std::size_t t = first + 1; t < N; ++t)
    if (ds.timestamps[t] - ds.timestamps[t - 1] != kStep)
      throw InputError("the last " + std::to_string(T) + " steps are not contiguous (gap before " +
                       format_timestamp(ds.timestamps[t]) + ")");

  std::vector<double> x;
  x.reserve(mc.sites * T * mc.features);
  for (std::size_t l = 0; l < mc.sites; ++l)
    for (std::size_t t = first; t < N; ++t)
      for (std::size_t f = 0; f < mc.features; ++f) x.push_back(ds.at(l, t, f));
  Tape tape(false);
  std::mt19937_64 unused(0);
  const auto res = forward(tape, DiffArray::from({1, mc.sites, T, mc.features}, std::move(x)), ckpt.params, mc,
                           false, unused);

  Forecast fc;
  fc.target_time = ds.timestamps.back() + static_cast<Timestamp>(config.data.horizon) * kStep;
  fc.sites = row_sites(mc, p.physical);
  fc.values = denormalize_all({res.prediction.values().begin(), res.prediction.values().end()}, mc.species, p.stats);

  ensure_dir(out_dir);
  echo_config(config, out_dir, "predict");
  std::ofstream out(out_dir / "forecast.csv");
  if (!out) throw InputError("cannot write forecast.csv");
  out << "timestamp,site_id";
  for (const auto& s : species_names(p, mc.species)) out << ',' << s;
  out << '\n';
  for (std::size_t s = 0; s < fc.sites.size(); ++s) {
    out << format_timestamp(fc.target_time) << ',' << fc.sites[s];
    for (std::size_t k = 0; k < mc.species; ++k) {
      char buf[40];
      std::snprintf(buf, sizeof buf, ",%.17g", fc.values[s * mc.species + k]);
      out << buf;
    }
    out << '\n';
  }
  log("forecast for " + format_timestamp(fc.target_time) + " written to " + (out_dir / "forecast.csv").string());
  return fc;
}

}  // namespace nexus::cmd
