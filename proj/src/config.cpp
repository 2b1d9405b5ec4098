#include "nexus/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "nexus/error.hpp"

namespace nexus {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end || !std::isfinite(v))
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  return v;
}

template <typename T>
T parse_unsigned(const std::string& key, const std::string& text) {
  T v = 0;
  const auto* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
  return v;
}

int parse_int(const std::string& key, const std::string& text) {
  int v = 0;
  const auto* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": expected an integer, got '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

Timestamp parse_time(const std::string& key, const std::string& text) {
  try {
    return parse_timestamp(text);
  } catch (const Error& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

template <typename Fn>
auto rethrow_as(const std::string& key, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

// Builders for the common field kinds.
template <typename M>
ConfigKey size_key(std::string name, std::string help, M member) {
  return {name, std::move(help), [member](const RunConfig& c) { return std::to_string(member(c)); },
          [member, name](RunConfig& c, const std::string& v) { member(c) = parse_unsigned<std::size_t>(name, v); }};
}

template <typename M>
ConfigKey double_key(std::string name, std::string help, M member) {
  return {name, std::move(help), [member](const RunConfig& c) { return fmt_double(member(c)); },
          [member, name](RunConfig& c, const std::string& v) { member(c) = parse_double(name, v); }};
}

template <typename M>
ConfigKey int_key(std::string name, std::string help, M member) {
  return {name, std::move(help), [member](const RunConfig& c) { return std::to_string(member(c)); },
          [member, name](RunConfig& c, const std::string& v) { member(c) = parse_int(name, v); }};
}

template <typename M>
ConfigKey time_key(std::string name, std::string help, M member) {
  return {name, std::move(help),
          [member](const RunConfig& c) { return format_timestamp(member(c)); },
          [member, name](RunConfig& c, const std::string& v) { member(c) = parse_time(name, v); }};
}

std::vector<ConfigKey> build_schema() {
  std::vector<ConfigKey> s;
  // [run]
  s.push_back({"run.seed", "global seed; synthetic data and training derive named streams from it",
               [](const RunConfig& c) { return std::to_string(c.seed); },
               [](RunConfig& c, const std::string& v) { c.seed = parse_unsigned<std::uint64_t>("run.seed", v); }});

  // [model]
  s.push_back(size_key("model.sites", "monitoring sites L", [](auto& c) -> auto& { return c.model.sites; }));
  s.push_back(size_key("model.lookback", "input window T in 3-hour steps",
                       [](auto& c) -> auto& { return c.model.lookback; }));
  s.push_back(size_key("model.features", "features per site D", [](auto& c) -> auto& { return c.model.features; }));
  s.push_back(size_key("model.patch_len", "patch length p", [](auto& c) -> auto& { return c.model.patch_len; }));
  s.push_back(size_key("model.stride", "patch stride s", [](auto& c) -> auto& { return c.model.stride; }));
  s.push_back(size_key("model.rank", "low-rank bottleneck r", [](auto& c) -> auto& { return c.model.rank; }));
  s.push_back(size_key("model.d_hidden", "hidden width d'", [](auto& c) -> auto& { return c.model.d_hidden; }));
  s.push_back(size_key("model.n_blocks", "stacked NanoBlocks", [](auto& c) -> auto& { return c.model.n_blocks; }));
  s.push_back(size_key("model.head_hidden", "prediction head hidden width",
                       [](auto& c) -> auto& { return c.model.head_hidden; }));
  s.push_back(size_key("model.species", "forecast species K", [](auto& c) -> auto& { return c.model.species; }));
  s.push_back({"model.output_mode", "per_site or pooled",
               [](const RunConfig& c) { return std::string(to_string(c.model.output_mode)); },
               [](RunConfig& c, const std::string& v) {
                 c.model.output_mode = rethrow_as("model.output_mode", [&] { return parse_output_mode(v); });
               }});
  s.push_back(size_key("model.kernel_width_compact", "compact temporal kernel width",
                       [](auto& c) -> auto& { return c.model.kernel_width_compact; }));
  s.push_back(size_key("model.kernel_width_depthwise", "micro-path depthwise kernel width",
                       [](auto& c) -> auto& { return c.model.kernel_width_depthwise; }));
  s.push_back(double_key("model.dropout_rate", "dropout inside NanoBlocks",
                         [](auto& c) -> auto& { return c.model.dropout_rate; }));
  s.push_back(size_key("model.fusion_hidden", "fusion scorer hidden width",
                       [](auto& c) -> auto& { return c.model.fusion_hidden; }));
  s.push_back({"model.residual", "residual connection around each block (true/false)",
               [](const RunConfig& c) { return std::string(c.model.residual ? "true" : "false"); },
               [](RunConfig& c, const std::string& v) { c.model.residual = parse_bool("model.residual", v); }});
  s.push_back({"model.projection", "lowrank or dense",
               [](const RunConfig& c) { return std::string(to_string(c.model.projection)); },
               [](RunConfig& c, const std::string& v) {
                 c.model.projection = rethrow_as("model.projection", [&] { return parse_projection(v); });
               }});
  s.push_back({"model.pathways", "all or compact_only",
               [](const RunConfig& c) { return std::string(to_string(c.model.pathways)); },
               [](RunConfig& c, const std::string& v) {
                 c.model.pathways = rethrow_as("model.pathways", [&] { return parse_pathways(v); });
               }});
  s.push_back({"model.pooling", "weighted or uniform",
               [](const RunConfig& c) { return std::string(to_string(c.model.pooling)); },
               [](RunConfig& c, const std::string& v) {
                 c.model.pooling = rethrow_as("model.pooling", [&] { return parse_pooling(v); });
               }});

  // [train]
  s.push_back(double_key("train.eta0", "initial learning rate", [](auto& c) -> auto& { return c.train.eta0; }));
  s.push_back(double_key("train.decay", "learning rate factor per interval",
                         [](auto& c) -> auto& { return c.train.decay; }));
  s.push_back(size_key("train.decay_interval", "epochs between decays",
                       [](auto& c) -> auto& { return c.train.decay_interval; }));
  s.push_back(size_key("train.batch_size", "minibatch size", [](auto& c) -> auto& { return c.train.batch_size; }));
  s.push_back(size_key("train.max_epochs", "epoch limit", [](auto& c) -> auto& { return c.train.max_epochs; }));
  s.push_back(size_key("train.patience", "early stopping patience in epochs",
                       [](auto& c) -> auto& { return c.train.patience; }));
  s.push_back(double_key("train.weight_decay", "L2 coefficient on weights",
                         [](auto& c) -> auto& { return c.train.weight_decay; }));
  s.push_back(double_key("train.beta1", "Adam first-moment decay", [](auto& c) -> auto& { return c.train.beta1; }));
  s.push_back(double_key("train.beta2", "Adam second-moment decay", [](auto& c) -> auto& { return c.train.beta2; }));
  s.push_back(double_key("train.adam_eps", "Adam denominator epsilon",
                         [](auto& c) -> auto& { return c.train.adam_eps; }));

  // [synth]
  s.push_back(int_key("synth.n_days", "days to simulate (>= 30)", [](auto& c) -> auto& { return c.synth.n_days; }));
  s.push_back(time_key("synth.start", "first simulated hour (UTC)", [](auto& c) -> auto& { return c.synth.start; }));
  s.push_back(double_key("synth.lat_min", "region south edge", [](auto& c) -> auto& { return c.synth.lat_min; }));
  s.push_back(double_key("synth.lat_max", "region north edge", [](auto& c) -> auto& { return c.synth.lat_max; }));
  s.push_back(double_key("synth.lon_min", "region west edge", [](auto& c) -> auto& { return c.synth.lon_min; }));
  s.push_back(double_key("synth.lon_max", "region east edge", [](auto& c) -> auto& { return c.synth.lon_max; }));
  s.push_back(int_key("synth.met_grid", "met sites per side", [](auto& c) -> auto& { return c.synth.met_grid; }));
  s.push_back(double_key("synth.diurnal_amplitude", "relative diurnal amplitude",
                         [](auto& c) -> auto& { return c.synth.diurnal_amplitude; }));
  s.push_back(double_key("synth.diurnal_peak_hour", "diurnal peak hour (UTC)",
                         [](auto& c) -> auto& { return c.synth.diurnal_peak_hour; }));
  s.push_back(double_key("synth.seasonal_amplitude", "relative seasonal amplitude",
                         [](auto& c) -> auto& { return c.synth.seasonal_amplitude; }));
  s.push_back(double_key("synth.seasonal_peak_doy", "seasonal peak day of year",
                         [](auto& c) -> auto& { return c.synth.seasonal_peak_doy; }));
  s.push_back(double_key("synth.temp_coupling", "pollutant response to temperature anomaly",
                         [](auto& c) -> auto& { return c.synth.temp_coupling; }));
  s.push_back(double_key("synth.wind_coupling", "pollutant response to wind anomaly",
                         [](auto& c) -> auto& { return c.synth.wind_coupling; }));
  s.push_back(double_key("synth.gradient", "extra baseline at the northwest corner",
                         [](auto& c) -> auto& { return c.synth.gradient; }));
  s.push_back(double_key("synth.noise_scale", "observation noise relative to the site baseline",
                         [](auto& c) -> auto& { return c.synth.noise_scale; }));
  s.push_back(double_key("synth.episode_rate_per_day", "winter episode arrival rate",
                         [](auto& c) -> auto& { return c.synth.episode_rate_per_day; }));
  s.push_back(double_key("synth.episode_mean_jump", "mean episode jump",
                         [](auto& c) -> auto& { return c.synth.episode_mean_jump; }));
  s.push_back(double_key("synth.episode_decay", "hourly episode decay",
                         [](auto& c) -> auto& { return c.synth.episode_decay; }));
  s.push_back(double_key("synth.episode_weight", "episode contribution",
                         [](auto& c) -> auto& { return c.synth.episode_weight; }));
  s.push_back(double_key("synth.temp_persistence", "hourly AR(1) coefficient of the temperature anomaly",
                         [](auto& c) -> auto& { return c.synth.temp_persistence; }));
  s.push_back(double_key("synth.wind_persistence", "hourly AR(1) coefficient of the wind anomaly",
                         [](auto& c) -> auto& { return c.synth.wind_persistence; }));

  // [data]
  s.push_back({"data.split_mode", "dates or fractions",
               [](const RunConfig& c) {
                 return std::string(c.data.split.mode == SplitBoundaries::Mode::kDates ? "dates" : "fractions");
               },
               [](RunConfig& c, const std::string& v) {
                 if (v == "dates") {
                   c.data.split.mode = SplitBoundaries::Mode::kDates;
                 } else if (v == "fractions") {
                   c.data.split.mode = SplitBoundaries::Mode::kFractions;
                 } else {
                   throw ConfigError("data.split_mode: expected dates or fractions, got '" + v + "'");
                 }
               }});
  s.push_back(time_key("data.train_end", "first validation timestamp (dates mode)",
                       [](auto& c) -> auto& { return c.data.split.train_end; }));
  s.push_back(time_key("data.val_end", "first test timestamp (dates mode)",
                       [](auto& c) -> auto& { return c.data.split.val_end; }));
  s.push_back(double_key("data.train_frac", "training share (fractions mode)",
                         [](auto& c) -> auto& { return c.data.split.train_frac; }));
  s.push_back(double_key("data.val_frac", "validation share (fractions mode)",
                         [](auto& c) -> auto& { return c.data.split.val_frac; }));
  s.push_back(size_key("data.horizon", "forecast horizon in 3-hour steps",
                       [](auto& c) -> auto& { return c.data.horizon; }));
  s.push_back(double_key("data.idw_power", "inverse distance weighting exponent",
                         [](auto& c) -> auto& { return c.data.idw_power; }));

  // [ablate]
  s.push_back(size_key("ablate.n_seeds", "training seeds per variant (run.seed, run.seed+1, ...)",
                       [](auto& c) -> auto& { return c.ablate.n_seeds; }));
  s.push_back({"ablate.variants", "comma-separated variant names",
               [](const RunConfig& c) {
                 std::string out;
                 for (const auto& v : c.ablate.variants) out += (out.empty() ? "" : ",") + v;
                 return out;
               },
               [](RunConfig& c, const std::string& v) {
                 auto list = split_list(v);
                 if (list.empty()) throw ConfigError("ablate.variants: empty list");
                 for (const auto& name : list)
                   if (std::find(kAblationVariants.begin(), kAblationVariants.end(), name) == kAblationVariants.end())
                     throw ConfigError("ablate.variants: unknown variant '" + name + "'");
                 c.ablate.variants = std::move(list);
               }});
  return s;
}

const ConfigKey& find_key(const std::string& key) {
  for (const auto& k : config_schema())
    if (k.name == key) return k;
  throw ConfigError("unknown configuration key '" + key + "'");
}

}  // namespace

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = build_schema();
  return schema;
}

void RunConfig::set(const std::string& key, const std::string& value) { find_key(key).set(*this, value); }

std::string RunConfig::get(const std::string& key) const { return find_key(key).get(*this); }

void RunConfig::finalize() {
  synth.seed = seed;
  train.seed = seed;
  model.validate();
  train.validate();
  synth.validate();
  if (data.horizon == 0) throw ConfigError("data.horizon must be positive");
  if (!(data.idw_power > 0.0)) throw ConfigError("data.idw_power must be positive");
  const auto& sb = data.split;
  if (sb.mode == SplitBoundaries::Mode::kDates && !(sb.train_end < sb.val_end))
    throw ConfigError("data.train_end must precede data.val_end");
  if (sb.mode == SplitBoundaries::Mode::kFractions &&
      !(sb.train_frac > 0.0 && sb.val_frac > 0.0 && sb.train_frac + sb.val_frac < 1.0))
    throw ConfigError("data.train_frac and data.val_frac must be positive with a sum below 1");
  if (ablate.n_seeds == 0) throw ConfigError("ablate.n_seeds must be positive");
}

std::string RunConfig::to_ini() const {
  std::string out, section;
  for (const auto& k : config_schema()) {
    const auto dot = k.name.find('.');
    const auto sec = k.name.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += k.name.substr(dot + 1) + " = " + k.get(*this) + "\n";
  }
  return out;
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << to_ini();
}

void RunConfig::apply_ini(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  // Stage on a copy so a bad key leaves *this untouched.
  RunConfig next = *this;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config key '" + section + "' must sit inside a [section]");
    for (const auto& [key, value] : body) next.set(section + "." + key, value.get_value<std::string>());
  }
  *this = std::move(next);
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_ini(ss.str());
}

RunConfig RunConfig::from_ini(const std::string& text) {
  RunConfig c;
  c.apply_ini(text);
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  RunConfig c;
  c.apply_file(path);
  return c;
}

}  // namespace nexus
