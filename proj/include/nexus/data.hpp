#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nexus {

// ---------------------------------------------------------------------------
// Time

/// Seconds since the Unix epoch, UTC.
using Timestamp = std::int64_t;

inline constexpr Timestamp kHour = 3600;
inline constexpr Timestamp kStep = 3 * kHour;

/// Accepts `YYYY-MM-DDTHH:MM[:SS][Z]` (also with a space separator).
Timestamp parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp t);

struct CivilTime {
  int year = 1970;
  int month = 1;  // 1..12
  int day = 1;
  int hour = 0;
  int minute = 0;
  int second = 0;
  int day_of_year = 1;  // 1..366
};
CivilTime to_civil(Timestamp t);
Timestamp from_civil(int year, int month, int day, int hour = 0);

// ---------------------------------------------------------------------------
// Raw ingestion

struct RawRecord {
  Timestamp timestamp = 0;
  std::string site_id;
  double lat = 0.0;
  double lon = 0.0;
  std::optional<double> co, no, so2;       // kg/kg
  std::optional<double> tp;                // m
  std::optional<double> ssr;               // J/m^2
  std::optional<double> u10, v10;          // m/s
  std::optional<double> skt;               // K
};

inline constexpr std::array<std::string_view, 12> kRawColumns = {
    "timestamp", "site_id", "lat", "lon", "co", "no", "so2", "tp", "ssr", "u10", "v10", "skt"};

std::vector<RawRecord> read_raw_csv(std::istream& in);
std::vector<RawRecord> read_raw_csv(const std::filesystem::path& path);
void write_raw_csv_header(std::ostream& out);
void write_raw_csv_row(std::ostream& out, const RawRecord& r);

// ---------------------------------------------------------------------------
// Transforms

double compute_wind_speed(double u, double v);

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;
};

/// Great-circle distance in metres.
double haversine_m(GeoPoint a, GeoPoint b);

/// Inverse-distance weighted value with weights d^-power. A source closer
/// than 1 m is returned exactly.
double idw_interpolate(std::span<const double> values, std::span<const double> distances_m, double power = 2.0);

/// IDW over the sources that have a value; nullopt when none do.
std::optional<double> idw_align(GeoPoint target, std::span<const GeoPoint> sources,
                                std::span<const std::optional<double>> values, double power = 2.0);

enum class Aggregation { kMean, kSum };

struct TimedValue {
  Timestamp t = 0;
  std::optional<double> value;
};

/// Buckets an hourly series into 3-hour windows (t-3h, t] labelled by their
/// end stamp t (a multiple of 3 h). Windows with no observed hour are nullopt.
std::vector<TimedValue> aggregate_3hourly(std::span<const TimedValue> hourly, Aggregation how);

/// Type-7 (linear interpolation between order statistics) quantile of sorted data.
double quantile_sorted(std::span<const double> sorted, double q);

struct RobustStats {
  double median = 0.0;
  double iqr = 0.0;
  double scale = 1.0;  // iqr, or 1 when the feature is flagged constant
  bool constant = false;
};

inline constexpr double kConstantIqr = 1e-12;

RobustStats compute_robust_stats(std::vector<double> values);
double robust_normalize(double x, const RobustStats& s);
double robust_denormalize(double z, const RobustStats& s);

// ---------------------------------------------------------------------------
// Aligned dataset

inline constexpr std::size_t kNumSpecies = 3;
inline const std::vector<std::string> kFeatureNames = {"co",  "no",  "so2",        "tp",  "ssr",
                                                       "u10", "v10", "wind_speed", "skt"};

struct Site {
  std::string id;
  double lat = 0.0;
  double lon = 0.0;
};

/// Dense L x N_t x D table; values stored site-major, then time, then feature.
struct AlignedDataset {
  std::vector<Site> sites;
  std::vector<Timestamp> timestamps;
  std::vector<std::string> feature_names = kFeatureNames;
  std::vector<double> values;

  std::size_t num_sites() const { return sites.size(); }
  std::size_t num_steps() const { return timestamps.size(); }
  std::size_t num_features() const { return feature_names.size(); }
  std::size_t index(std::size_t site, std::size_t step, std::size_t feature) const {
    return (site * num_steps() + step) * num_features() + feature;
  }
  double at(std::size_t site, std::size_t step, std::size_t feature) const {
    return values[index(site, step, feature)];
  }
  /// One feature of one site across time.
  std::vector<double> series(std::size_t site, std::size_t feature) const;
};

struct QcReport {
  std::size_t candidate_timestamps = 0;
  std::size_t kept = 0;
  std::size_t dropped = 0;
  std::vector<Timestamp> dropped_timestamps;
  std::size_t pollutant_sites = 0;
  std::size_t met_sites = 0;
};

struct QcOptions {
  double idw_power = 2.0;
};

struct QcResult {
  AlignedDataset dataset;
  QcReport report;
};

/// Splits sites into pollutant targets and meteorological sources, computes
/// wind speed, aggregates meteorology to 3-hourly, aligns it onto the targets
/// by IDW and drops every timestamp with any missing value at any site.
QcResult quality_control(const std::vector<RawRecord>& records, const QcOptions& options = {});

void write_aligned_csv(const std::filesystem::path& path, const AlignedDataset& ds);
AlignedDataset read_aligned_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Splits, normalization, windows

struct SplitBoundaries {
  enum class Mode { kDates, kFractions };
  Mode mode = Mode::kDates;
  Timestamp train_end = from_civil(2021, 1, 1);  // first validation stamp
  Timestamp val_end = from_civil(2021, 7, 1);    // first test stamp
  double train_frac = 0.70;
  double val_frac = 0.15;
};

/// Half-open index range into a dataset's timestamps.
struct SplitRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

struct Splits {
  SplitRange train, val, test;
};

Splits temporal_split(const AlignedDataset& ds, const SplitBoundaries& b);

struct NormalizationStats {
  std::vector<std::string> feature_names;
  std::vector<RobustStats> features;
  std::array<double, kNumSpecies> pollutant_maxima{};  // training span
  Timestamp val_start = 0;
  Timestamp test_start = 0;

  /// Canonical JSON: sorted keys, 17 significant digits.
  std::string to_json() const;
  static NormalizationStats from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static NormalizationStats load(const std::filesystem::path& path);
};

/// Statistics from the training range only.
NormalizationStats fit_normalization(const AlignedDataset& ds, const Splits& splits);
AlignedDataset normalize(const AlignedDataset& ds, const NormalizationStats& stats);
/// Splits recovered from the boundary stamps stored in the stats.
Splits splits_from_stats(const AlignedDataset& ds, const NormalizationStats& stats);

struct WindowSample {
  std::vector<double> x;  // L x T x D
  std::vector<double> y;  // L x K
  Timestamp t_target = 0;
};

/// Stride-1 supervised windows inside one split of a normalized dataset.
/// Windows spanning a gap in the 3-hour grid are skipped.
class WindowSet {
 public:
  WindowSet() = default;
  WindowSet(std::shared_ptr<const AlignedDataset> data, SplitRange range, std::size_t lookback, std::size_t horizon);

  std::size_t size() const { return starts_.size(); }
  bool empty() const { return starts_.empty(); }
  std::size_t lookback() const { return lookback_; }
  std::size_t horizon() const { return horizon_; }
  std::size_t num_sites() const { return data_->num_sites(); }
  std::size_t num_features() const { return data_->num_features(); }

  std::size_t input_start(std::size_t i) const { return starts_.at(i); }
  std::size_t target_index(std::size_t i) const { return starts_.at(i) + lookback_ + horizon_ - 1; }
  Timestamp target_time(std::size_t i) const { return data_->timestamps[target_index(i)]; }

  WindowSample sample(std::size_t i) const;

  /// Writes inputs [n x L x T x D] and targets [n x L x K] for the given windows.
  void fill(std::span<const std::size_t> which, std::vector<double>& x, std::vector<double>& y) const;

  const AlignedDataset& data() const { return *data_; }

 private:
  std::shared_ptr<const AlignedDataset> data_;
  std::vector<std::size_t> starts_;
  std::size_t lookback_ = 0;
  std::size_t horizon_ = 1;
};

WindowSet build_windows(std::shared_ptr<const AlignedDataset> data, SplitRange range, std::size_t lookback = 168,
                        std::size_t horizon = 1);

}  // namespace nexus
