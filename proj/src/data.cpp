#include "nexus/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "nexus/error.hpp"

namespace nexus {

namespace {

// Days from 1970-01-01 for a proleptic Gregorian date (Howard Hinnant's algorithm).
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

int days_in_month(int y, int m) {
  static constexpr int kDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  return m == 2 && is_leap(y) ? 29 : kDays[m - 1];
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double parse_double(std::string_view s, const std::string& where) {
  s = trim(s);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw InputError("cannot parse number '" + std::string(s) + "' " + where);
  }
  return v;
}

std::optional<double> parse_optional(std::string_view s, const std::string& where) {
  s = trim(s);
  if (s.empty() || s == "NA" || s == "NaN" || s == "nan") return std::nullopt;
  const double v = parse_double(s, where);
  if (!std::isfinite(v)) return std::nullopt;
  return v;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_optional(const std::optional<double>& v) { return v ? fmt17(*v) : std::string(); }

bool has_pollutant(const RawRecord& r) { return r.co || r.no || r.so2; }
bool has_met(const RawRecord& r) { return r.tp || r.ssr || r.u10 || r.v10 || r.skt; }

Timestamp ceil_to_step(Timestamp t) {
  const Timestamp r = ((t % kStep) + kStep) % kStep;
  return r == 0 ? t : t + (kStep - r);
}

}  // namespace

// ---------------------------------------------------------------------------

Timestamp from_civil(int year, int month, int day, int hour) {
  if (month < 1 || month > 12 || day < 1 || day > days_in_month(year, month) || hour < 0 || hour > 23) {
    throw InputError("invalid calendar date");
  }
  return days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day)) * 86400 +
         static_cast<Timestamp>(hour) * kHour;
}

CivilTime to_civil(Timestamp t) {
  std::int64_t days = t >= 0 ? t / 86400 : (t - 86399) / 86400;
  std::int64_t secs = t - days * 86400;
  CivilTime c;
  c.hour = static_cast<int>(secs / 3600);
  c.minute = static_cast<int>((secs % 3600) / 60);
  c.second = static_cast<int>(secs % 60);
  // Inverse of days_from_civil.
  days += 719468;
  const std::int64_t era = (days >= 0 ? days : days - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(days - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  c.day = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  c.month = static_cast<int>(mp < 10 ? mp + 3 : mp - 9);
  c.year = static_cast<int>(static_cast<std::int64_t>(yoe) + era * 400 + (c.month <= 2));
  c.day_of_year = static_cast<int>(days_from_civil(c.year, c.month, c.day) - days_from_civil(c.year, 1, 1)) + 1;
  return c;
}

Timestamp parse_timestamp(std::string_view text) {
  text = trim(text);
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  const std::string str(text);
  char sep = 0;
  const int n = std::sscanf(str.c_str(), "%4d-%2d-%2d%c%2d:%2d:%2d", &y, &mo, &d, &sep, &h, &mi, &s);
  if (n < 3 || (n > 3 && n < 6) || (n >= 4 && sep != 'T' && sep != ' ')) {
    throw InputError("cannot parse timestamp '" + str + "'");
  }
  if (mi < 0 || mi > 59 || s < 0 || s > 59) throw InputError("cannot parse timestamp '" + str + "'");
  try {
    return from_civil(y, mo, d, h) + mi * 60 + s;
  } catch (const InputError&) {
    throw InputError("invalid timestamp '" + str + "'");
  }
}

std::string format_timestamp(Timestamp t) {
  const CivilTime c = to_civil(t);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02dZ", c.year, c.month, c.day, c.hour, c.minute,
                c.second);
  return buf;
}

// ---------------------------------------------------------------------------

std::vector<RawRecord> read_raw_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InputError("raw CSV is empty");
  const auto header = split_csv(trim(line));
  std::map<std::string, std::size_t, std::less<>> column;
  for (std::size_t i = 0; i < header.size(); ++i) column[std::string(trim(header[i]))] = i;
  std::array<std::size_t, kRawColumns.size()> idx{};
  for (std::size_t c = 0; c < kRawColumns.size(); ++c) {
    const auto it = column.find(kRawColumns[c]);
    if (it == column.end()) throw InputError("raw CSV is missing column '" + std::string(kRawColumns[c]) + "'");
    idx[c] = it->second;
  }

  std::vector<RawRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != header.size()) {
      throw InputError("raw CSV line " + std::to_string(line_no) + " has " + std::to_string(f.size()) +
                       " fields, expected " + std::to_string(header.size()));
    }
    const std::string where = "on line " + std::to_string(line_no);
    RawRecord r;
    r.timestamp = parse_timestamp(f[idx[0]]);
    r.site_id = std::string(trim(f[idx[1]]));
    if (r.site_id.empty()) throw InputError("empty site_id " + where);
    r.lat = parse_double(f[idx[2]], where);
    r.lon = parse_double(f[idx[3]], where);
    if (r.lat < -90.0 || r.lat > 90.0 || r.lon < -180.0 || r.lon > 180.0) {
      throw InputError("coordinates out of range " + where);
    }
    std::optional<double>* slots[] = {&r.co, &r.no, &r.so2, &r.tp, &r.ssr, &r.u10, &r.v10, &r.skt};
    for (std::size_t k = 0; k < 8; ++k) *slots[k] = parse_optional(f[idx[4 + k]], where);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<RawRecord> read_raw_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open raw CSV: " + path.string());
  return read_raw_csv(in);
}

void write_raw_csv_header(std::ostream& out) {
  for (std::size_t i = 0; i < kRawColumns.size(); ++i) out << (i ? "," : "") << kRawColumns[i];
  out << '\n';
}

void write_raw_csv_row(std::ostream& out, const RawRecord& r) {
  out << format_timestamp(r.timestamp) << ',' << r.site_id << ',' << fmt17(r.lat) << ',' << fmt17(r.lon);
  for (const auto* v : {&r.co, &r.no, &r.so2, &r.tp, &r.ssr, &r.u10, &r.v10, &r.skt}) out << ',' << fmt_optional(*v);
  out << '\n';
}

// ---------------------------------------------------------------------------

double compute_wind_speed(double u, double v) { return std::hypot(u, v); }

double haversine_m(GeoPoint a, GeoPoint b) {
  constexpr double kEarthRadius = 6371008.8;
  constexpr double kRad = std::numbers::pi / 180.0;
  const double dlat = (b.lat - a.lat) * kRad;
  const double dlon = (b.lon - a.lon) * kRad;
  const double s = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(a.lat * kRad) * std::cos(b.lat * kRad) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kEarthRadius * std::asin(std::min(1.0, std::sqrt(s)));
}

double idw_interpolate(std::span<const double> values, std::span<const double> distances_m, double power) {
  if (values.size() != distances_m.size()) throw InputError("idw: values and distances differ in length");
  if (values.empty()) throw InputError("idw: no sources");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (distances_m[i] < 1.0) return values[i];
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double w = std::pow(distances_m[i], -power);
    num += w * values[i];
    den += w;
  }
  return num / den;
}

std::optional<double> idw_align(GeoPoint target, std::span<const GeoPoint> sources,
                                std::span<const std::optional<double>> values, double power) {
  if (sources.size() != values.size()) throw InputError("idw: sources and values differ in length");
  std::vector<double> v, d;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (!values[i]) continue;
    v.push_back(*values[i]);
    d.push_back(haversine_m(target, sources[i]));
  }
  if (v.empty()) return std::nullopt;
  return idw_interpolate(v, d, power);
}

std::vector<TimedValue> aggregate_3hourly(std::span<const TimedValue> hourly, Aggregation how) {
  std::map<Timestamp, std::pair<double, int>> buckets;
  for (const auto& tv : hourly) {
    auto& b = buckets[ceil_to_step(tv.t)];
    if (tv.value) {
      b.first += *tv.value;
      ++b.second;
    }
  }
  std::vector<TimedValue> out;
  out.reserve(buckets.size());
  for (const auto& [t, b] : buckets) {
    TimedValue tv{t, std::nullopt};
    if (b.second > 0) tv.value = how == Aggregation::kSum ? b.first : b.first / b.second;
    out.push_back(tv);
  }
  return out;
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw InputError("quantile of an empty sample");
  if (q < 0.0 || q > 1.0) throw InputError("quantile level outside [0, 1]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

RobustStats compute_robust_stats(std::vector<double> values) {
  if (values.empty()) throw InputError("robust statistics of an empty sample");
  std::sort(values.begin(), values.end());
  RobustStats s;
  s.median = quantile_sorted(values, 0.5);
  s.iqr = quantile_sorted(values, 0.75) - quantile_sorted(values, 0.25);
  s.constant = s.iqr < kConstantIqr;
  s.scale = s.constant ? 1.0 : s.iqr;
  return s;
}

double robust_normalize(double x, const RobustStats& s) { return (x - s.median) / s.scale; }
double robust_denormalize(double z, const RobustStats& s) { return z * s.scale + s.median; }

// ---------------------------------------------------------------------------

std::vector<double> AlignedDataset::series(std::size_t site, std::size_t feature) const {
  std::vector<double> out(num_steps());
  for (std::size_t t = 0; t < num_steps(); ++t) out[t] = at(site, t, feature);
  return out;
}

QcResult quality_control(const std::vector<RawRecord>& records, const QcOptions& options) {
  if (records.empty()) throw InputError("no records to align");

  // Site registry; a site is a pollutant target if it ever reports a pollutant,
  // a met source if it ever reports meteorology.
  std::map<std::string, Site> sites;
  std::set<std::string> pollutant_ids, met_ids;
  for (const auto& r : records) {
    auto [it, inserted] = sites.try_emplace(r.site_id, Site{r.site_id, r.lat, r.lon});
    if (!inserted && (it->second.lat != r.lat || it->second.lon != r.lon)) {
      throw InputError("site " + r.site_id + " reported with differing coordinates");
    }
    if (has_pollutant(r)) pollutant_ids.insert(r.site_id);
    if (has_met(r)) met_ids.insert(r.site_id);
  }
  if (pollutant_ids.empty()) throw InputError("no site reports pollutant values");
  if (met_ids.empty()) throw InputError("no site reports meteorological values");

  // Pollutants at their stamps: (site, t) -> 3 values. Duplicates are rejected.
  std::map<std::pair<std::string, Timestamp>, std::array<std::optional<double>, 3>> pollutants;
  // Met hourly series per site and variable (tp, ssr, u10, v10, wind_speed, skt).
  constexpr std::size_t kMet = 6;
  std::map<std::string, std::array<std::vector<TimedValue>, kMet>> met_hourly;
  for (const auto& r : records) {
    if (has_pollutant(r)) {
      auto [it, inserted] = pollutants.try_emplace({r.site_id, r.timestamp}, std::array{r.co, r.no, r.so2});
      if (!inserted) throw InputError("duplicate pollutant row for " + r.site_id + " at " + format_timestamp(r.timestamp));
    }
    if (has_met(r)) {
      std::optional<double> ws;
      if (r.u10 && r.v10) ws = compute_wind_speed(*r.u10, *r.v10);
      auto& m = met_hourly[r.site_id];
      const std::array<std::optional<double>, kMet> vals = {r.tp, r.ssr, r.u10, r.v10, ws, r.skt};
      for (std::size_t k = 0; k < kMet; ++k) m[k].push_back({r.timestamp, vals[k]});
    }
  }

  // 3-hourly met per source site.
  std::vector<std::string> met_list(met_ids.begin(), met_ids.end());
  std::vector<GeoPoint> met_points;
  for (const auto& id : met_list) met_points.push_back({sites[id].lat, sites[id].lon});
  std::vector<std::array<std::map<Timestamp, std::optional<double>>, kMet>> met3(met_list.size());
  for (std::size_t j = 0; j < met_list.size(); ++j) {
    auto& series = met_hourly[met_list[j]];
    for (std::size_t k = 0; k < kMet; ++k) {
      std::sort(series[k].begin(), series[k].end(), [](const auto& a, const auto& b) { return a.t < b.t; });
      const auto agg = aggregate_3hourly(series[k], k == 0 ? Aggregation::kSum : Aggregation::kMean);
      for (const auto& tv : agg) met3[j][k][tv.t] = tv.value;
    }
  }

  // Candidate stamps: every 3-hour stamp with any pollutant row.
  std::set<Timestamp> candidates;
  for (const auto& [key, v] : pollutants) candidates.insert(key.second);

  QcResult result;
  auto& ds = result.dataset;
  for (const auto& id : pollutant_ids) ds.sites.push_back(sites[id]);
  const std::size_t L = ds.sites.size();
  const std::size_t D = kFeatureNames.size();

  // Rows per stamp: L x D, kept only if fully observed.
  std::vector<std::vector<double>> kept_rows;
  std::vector<std::optional<double>> src(met_list.size());
  for (Timestamp t : candidates) {
    std::vector<double> row(L * D);
    bool complete = t % kStep == 0;
    for (std::size_t l = 0; l < L && complete; ++l) {
      const auto pit = pollutants.find({ds.sites[l].id, t});
      if (pit == pollutants.end()) {
        complete = false;
        break;
      }
      for (std::size_t k = 0; k < 3; ++k) {
        if (!pit->second[k]) complete = false;
        else row[l * D + k] = *pit->second[k];
      }
      const GeoPoint target{ds.sites[l].lat, ds.sites[l].lon};
      for (std::size_t k = 0; k < kMet && complete; ++k) {
        for (std::size_t j = 0; j < met_list.size(); ++j) {
          const auto it = met3[j][k].find(t);
          src[j] = it == met3[j][k].end() ? std::nullopt : it->second;
        }
        const auto v = idw_align(target, met_points, src, options.idw_power);
        if (!v) complete = false;
        else row[l * D + 3 + k] = *v;
      }
    }
    ++result.report.candidate_timestamps;
    if (complete) {
      ds.timestamps.push_back(t);
      kept_rows.push_back(std::move(row));
    } else {
      result.report.dropped_timestamps.push_back(t);
    }
  }
  result.report.kept = ds.timestamps.size();
  result.report.dropped = result.report.dropped_timestamps.size();
  result.report.pollutant_sites = L;
  result.report.met_sites = met_list.size();
  if (ds.timestamps.empty()) throw InputError("quality control dropped every timestamp");

  const std::size_t N = ds.timestamps.size();
  ds.values.resize(L * N * D);
  for (std::size_t t = 0; t < N; ++t) {
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t f = 0; f < D; ++f) ds.values[ds.index(l, t, f)] = kept_rows[t][l * D + f];
    }
  }
  return result;
}

void write_aligned_csv(const std::filesystem::path& path, const AlignedDataset& ds) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << "timestamp,site_id,lat,lon";
  for (const auto& f : ds.feature_names) out << ',' << f;
  out << '\n';
  for (std::size_t t = 0; t < ds.num_steps(); ++t) {
    for (std::size_t l = 0; l < ds.num_sites(); ++l) {
      out << format_timestamp(ds.timestamps[t]) << ',' << ds.sites[l].id << ',' << fmt17(ds.sites[l].lat) << ','
          << fmt17(ds.sites[l].lon);
      for (std::size_t f = 0; f < ds.num_features(); ++f) out << ',' << fmt17(ds.at(l, t, f));
      out << '\n';
    }
  }
  if (!out) throw InputError("failed writing " + path.string());
}

AlignedDataset read_aligned_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open aligned CSV: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw InputError("aligned CSV is empty: " + path.string());
  const auto header = split_csv(trim(line));
  if (header.size() < 5 || header[0] != "timestamp" || header[1] != "site_id" || header[2] != "lat" ||
      header[3] != "lon") {
    throw InputError("aligned CSV header must start with timestamp,site_id,lat,lon");
  }
  AlignedDataset ds;
  ds.feature_names.clear();
  for (std::size_t i = 4; i < header.size(); ++i) ds.feature_names.emplace_back(trim(header[i]));
  const std::size_t D = ds.feature_names.size();

  std::map<std::string, std::size_t> site_index;
  std::vector<std::vector<double>> rows;  // per stamp, per site in first-seen order
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    const std::string where = "on line " + std::to_string(line_no) + " of " + path.string();
    if (f.size() != header.size()) throw InputError("wrong field count " + where);
    const Timestamp t = parse_timestamp(f[0]);
    const std::string id(trim(f[1]));
    if (ds.timestamps.empty() || ds.timestamps.back() != t) {
      if (!ds.timestamps.empty() && t <= ds.timestamps.back()) throw InputError("timestamps not increasing " + where);
      ds.timestamps.push_back(t);
      rows.emplace_back();
    }
    auto [it, inserted] = site_index.try_emplace(id, ds.sites.size());
    if (inserted) {
      if (ds.timestamps.size() > 1) throw InputError("site " + id + " appears late " + where);
      ds.sites.push_back({id, parse_double(f[2], where), parse_double(f[3], where)});
    }
    if (rows.back().size() != it->second * D) throw InputError("site order differs between stamps " + where);
    for (std::size_t k = 0; k < D; ++k) rows.back().push_back(parse_double(f[4 + k], where));
  }
  if (ds.timestamps.empty()) throw InputError("aligned CSV has no rows: " + path.string());
  const std::size_t L = ds.sites.size(), N = ds.timestamps.size();
  ds.values.resize(L * N * D);
  for (std::size_t t = 0; t < N; ++t) {
    if (rows[t].size() != L * D) throw InputError("stamp " + format_timestamp(ds.timestamps[t]) + " lacks sites");
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t k = 0; k < D; ++k) ds.values[ds.index(l, t, k)] = rows[t][l * D + k];
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------

Splits temporal_split(const AlignedDataset& ds, const SplitBoundaries& b) {
  const std::size_t n = ds.num_steps();
  Splits s;
  if (b.mode == SplitBoundaries::Mode::kDates) {
    if (b.train_end >= b.val_end) throw ConfigError("split boundaries overlap: train end must precede val end");
    const auto first_ge = [&](Timestamp t) {
      return static_cast<std::size_t>(std::lower_bound(ds.timestamps.begin(), ds.timestamps.end(), t) -
                                      ds.timestamps.begin());
    };
    const std::size_t a = first_ge(b.train_end), c = first_ge(b.val_end);
    s = {{0, a}, {a, c}, {c, n}};
  } else {
    if (!(b.train_frac > 0.0) || !(b.val_frac > 0.0) || b.train_frac + b.val_frac >= 1.0) {
      throw ConfigError("split fractions must be positive and sum below 1");
    }
    const auto a = static_cast<std::size_t>(std::floor(b.train_frac * static_cast<double>(n)));
    const auto c = a + static_cast<std::size_t>(std::floor(b.val_frac * static_cast<double>(n)));
    s = {{0, a}, {a, c}, {c, n}};
  }
  if (s.train.size() == 0) throw ConfigError("training split is empty");
  return s;
}

NormalizationStats fit_normalization(const AlignedDataset& ds, const Splits& splits) {
  if (splits.train.size() == 0) throw ConfigError("cannot fit normalization on an empty training split");
  NormalizationStats st;
  st.feature_names = ds.feature_names;
  std::vector<double> pool;
  for (std::size_t f = 0; f < ds.num_features(); ++f) {
    pool.clear();
    for (std::size_t l = 0; l < ds.num_sites(); ++l) {
      for (std::size_t t = splits.train.begin; t < splits.train.end; ++t) pool.push_back(ds.at(l, t, f));
    }
    if (f < kNumSpecies) st.pollutant_maxima[f] = *std::max_element(pool.begin(), pool.end());
    st.features.push_back(compute_robust_stats(pool));
  }
  const auto stamp = [&](std::size_t i) {
    return i < ds.num_steps() ? ds.timestamps[i] : ds.timestamps.back() + kStep;
  };
  st.val_start = stamp(splits.val.begin);
  st.test_start = stamp(splits.test.begin);
  return st;
}

AlignedDataset normalize(const AlignedDataset& ds, const NormalizationStats& stats) {
  if (stats.features.size() != ds.num_features()) {
    throw MismatchError("normalization stats cover " + std::to_string(stats.features.size()) + " features, data has " +
                        std::to_string(ds.num_features()));
  }
  AlignedDataset out = ds;
  for (std::size_t l = 0; l < ds.num_sites(); ++l) {
    for (std::size_t t = 0; t < ds.num_steps(); ++t) {
      for (std::size_t f = 0; f < ds.num_features(); ++f) {
        out.values[out.index(l, t, f)] = robust_normalize(ds.at(l, t, f), stats.features[f]);
      }
    }
  }
  return out;
}

Splits splits_from_stats(const AlignedDataset& ds, const NormalizationStats& stats) {
  SplitBoundaries b;
  b.mode = SplitBoundaries::Mode::kDates;
  b.train_end = stats.val_start;
  b.val_end = stats.test_start;
  return temporal_split(ds, b);
}

std::string NormalizationStats::to_json() const {
  std::ostringstream os;
  os << "{\n  \"features\": [\n";
  for (std::size_t f = 0; f < features.size(); ++f) {
    const auto& s = features[f];
    os << "    {\"constant\": " << (s.constant ? "true" : "false") << ", \"iqr\": " << fmt17(s.iqr)
       << ", \"median\": " << fmt17(s.median) << ", \"name\": \"" << feature_names[f]
       << "\", \"scale\": " << fmt17(s.scale) << "}" << (f + 1 < features.size() ? "," : "") << "\n";
  }
  os << "  ],\n  \"pollutant_maxima\": [";
  for (std::size_t k = 0; k < kNumSpecies; ++k) os << (k ? ", " : "") << fmt17(pollutant_maxima[k]);
  os << "],\n  \"test_start\": \"" << format_timestamp(test_start) << "\",\n  \"val_start\": \""
     << format_timestamp(val_start) << "\"\n}\n";
  return os.str();
}

NormalizationStats NormalizationStats::from_json(const std::string& text) {
  NormalizationStats st;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& f : j.at("features")) {
      st.feature_names.push_back(f.at("name").get<std::string>());
      RobustStats s;
      s.constant = f.at("constant").get<bool>();
      s.iqr = f.at("iqr").get<double>();
      s.median = f.at("median").get<double>();
      s.scale = f.at("scale").get<double>();
      st.features.push_back(s);
    }
    const auto& m = j.at("pollutant_maxima");
    if (m.size() != kNumSpecies) throw InputError("stats: pollutant_maxima must have 3 entries");
    for (std::size_t k = 0; k < kNumSpecies; ++k) st.pollutant_maxima[k] = m[k].get<double>();
    st.val_start = parse_timestamp(j.at("val_start").get<std::string>());
    st.test_start = parse_timestamp(j.at("test_start").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed stats JSON: ") + e.what());
  }
  return st;
}

void NormalizationStats::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << to_json();
}

NormalizationStats NormalizationStats::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open stats file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

// ---------------------------------------------------------------------------

WindowSet::WindowSet(std::shared_ptr<const AlignedDataset> data, SplitRange range, std::size_t lookback,
                     std::size_t horizon)
    : data_(std::move(data)), lookback_(lookback), horizon_(horizon) {
  if (!data_) throw InputError("window set needs a dataset");
  if (lookback == 0 || horizon == 0) throw ConfigError("lookback and horizon must be positive");
  if (range.end > data_->num_steps() || range.begin > range.end) throw InputError("split range out of bounds");
  if (data_->num_features() < kNumSpecies) throw InputError("dataset lacks pollutant features");
  const std::size_t span = lookback + horizon;
  if (range.size() < span) return;
  // run_end[i]: one past the last index of the contiguous 3-hour run containing i.
  const auto& ts = data_->timestamps;
  std::vector<std::size_t> run_end(range.end);
  run_end[range.end - 1] = range.end;
  for (std::size_t i = range.end - 1; i-- > range.begin;) {
    run_end[i] = ts[i + 1] - ts[i] == kStep ? run_end[i + 1] : i + 1;
  }
  for (std::size_t s = range.begin; s + span <= range.end; ++s) {
    if (run_end[s] >= s + span) starts_.push_back(s);
  }
}

WindowSample WindowSet::sample(std::size_t i) const {
  WindowSample w;
  const std::size_t which[] = {i};
  fill(which, w.x, w.y);
  w.t_target = target_time(i);
  return w;
}

void WindowSet::fill(std::span<const std::size_t> which, std::vector<double>& x, std::vector<double>& y) const {
  const std::size_t L = num_sites(), T = lookback_, D = num_features(), K = kNumSpecies;
  x.resize(which.size() * L * T * D);
  y.resize(which.size() * L * K);
  const auto& v = data_->values;
  for (std::size_t n = 0; n < which.size(); ++n) {
    const std::size_t s = starts_.at(which[n]);
    const std::size_t tgt = s + T + horizon_ - 1;
    for (std::size_t l = 0; l < L; ++l) {
      const double* src = v.data() + data_->index(l, s, 0);
      std::copy(src, src + T * D, x.begin() + static_cast<std::ptrdiff_t>(((n * L) + l) * T * D));
      for (std::size_t k = 0; k < K; ++k) y[(n * L + l) * K + k] = data_->at(l, tgt, k);
    }
  }
}

WindowSet build_windows(std::shared_ptr<const AlignedDataset> data, SplitRange range, std::size_t lookback,
                        std::size_t horizon) {
  return WindowSet(std::move(data), range, lookback, horizon);
}

}  // namespace nexus
