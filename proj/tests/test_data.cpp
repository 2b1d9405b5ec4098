#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "nexus/data.hpp"
#include "nexus/error.hpp"

using namespace nexus;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("nexus_test_data_" + name);
}

// Point roughly `km` kilometres north of `p`.
GeoPoint north_of(GeoPoint p, double km) { return {p.lat + km / 111.195, p.lon}; }

// Synthetic aligned dataset with n contiguous 3-hourly steps.
AlignedDataset make_dataset(std::size_t sites, std::size_t steps, std::uint64_t seed, Timestamp start = 0) {
  AlignedDataset ds;
  for (std::size_t l = 0; l < sites; ++l) ds.sites.push_back({"S" + std::to_string(l), 28.0 + 0.1 * l, 77.0});
  for (std::size_t t = 0; t < steps; ++t) ds.timestamps.push_back(start + static_cast<Timestamp>(t) * kStep);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  ds.values.resize(sites * steps * ds.num_features());
  for (auto& v : ds.values) v = n01(rng);
  return ds;
}

RawRecord met_row(Timestamp t, const std::string& id, GeoPoint p, double v) {
  RawRecord r;
  r.timestamp = t;
  r.site_id = id;
  r.lat = p.lat;
  r.lon = p.lon;
  r.tp = v * 1e-3;
  r.ssr = 1e5 * v;
  r.u10 = v;
  r.v10 = 1.0;
  r.skt = 290.0 + v;
  return r;
}

RawRecord pollutant_row(Timestamp t, const std::string& id, GeoPoint p, double v) {
  RawRecord r;
  r.timestamp = t;
  r.site_id = id;
  r.lat = p.lat;
  r.lon = p.lon;
  r.co = v;
  r.no = 2 * v;
  r.so2 = 3 * v;
  return r;
}

}  // namespace

TEST_CASE("timestamps parse and format in UTC") {
  CHECK(parse_timestamp("1970-01-01T00:00:00Z") == 0);
  CHECK(parse_timestamp("2021-01-01T00:00:00Z") == 1609459200);
  CHECK(parse_timestamp("2021-01-01 03:00") == 1609459200 + 3 * 3600);
  CHECK(parse_timestamp("2020-02-29") == from_civil(2020, 2, 29));
  CHECK(format_timestamp(1609459200) == "2021-01-01T00:00:00Z");
  CHECK_THROWS_AS(parse_timestamp("2021-13-01T00:00:00Z"), InputError);
  CHECK_THROWS_AS(parse_timestamp("yesterday"), InputError);
  const auto c = to_civil(from_civil(2020, 12, 31, 21));
  CHECK(c.year == 2020);
  CHECK(c.month == 12);
  CHECK(c.day_of_year == 366);
  CHECK(c.hour == 21);
  for (Timestamp t = -86400 * 400; t < 86400 * 2000; t += 86400 * 37 + 3600 * 5) {
    CHECK(parse_timestamp(format_timestamp(t)) == t);
  }
}

TEST_CASE("wind speed") {
  CHECK(compute_wind_speed(3, 4) == 5.0);
  CHECK(compute_wind_speed(0, 0) == 0.0);
  CHECK(compute_wind_speed(-1, 1) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("inverse distance weighting oracles") {
  const double v2[] = {10, 20}, d2[] = {500, 500};
  CHECK(idw_interpolate(v2, d2) == doctest::Approx(15.0));
  const double v3[] = {1, 4, 4}, d3[] = {1000, 2000, 2000};
  CHECK(idw_interpolate(v3, d3) == doctest::Approx(2.0).epsilon(1e-12));
  const double vc[] = {7, 100}, dc[] = {0.5, 10};
  CHECK(idw_interpolate(vc, dc) == 7.0);

  const GeoPoint target{28.5, 77.2};
  const GeoPoint sources[] = {target, north_of(target, 3)};
  const std::optional<double> vals[] = {3.25, 9.0};
  CHECK(*idw_align(target, sources, vals) == 3.25);
  const std::optional<double> none[] = {std::nullopt, std::nullopt};
  CHECK_FALSE(idw_align(target, sources, none).has_value());
  const std::optional<double> partial[] = {std::nullopt, 9.0};
  CHECK(*idw_align(target, sources, partial) == 9.0);
}

TEST_CASE("IDW stays inside the source range") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-5, 5), dist(10, 50000);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> v(1 + trial % 7), d(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = u(rng);
      d[i] = dist(rng);
    }
    const double r = idw_interpolate(v, d, 1.0 + trial % 3);
    CHECK(r >= *std::min_element(v.begin(), v.end()) - 1e-12);
    CHECK(r <= *std::max_element(v.begin(), v.end()) + 1e-12);
  }
}

TEST_CASE("haversine distance") {
  CHECK(haversine_m({0, 0}, {0, 0}) == 0.0);
  // One degree of latitude on the mean sphere.
  CHECK(haversine_m({0, 0}, {1, 0}) == doctest::Approx(6371008.8 * M_PI / 180.0).epsilon(1e-12));
  CHECK(haversine_m({28.6, 77.2}, {28.7, 77.1}) == doctest::Approx(haversine_m({28.7, 77.1}, {28.6, 77.2})));
}

TEST_CASE("three-hourly aggregation") {
  const Timestamp t0 = from_civil(2021, 3, 1, 0);
  // Hours 1,2,3 fall in the window labelled 03:00.
  std::vector<TimedValue> tp = {{t0 + kHour, 0.001}, {t0 + 2 * kHour, 0.002}, {t0 + 3 * kHour, 0.000}};
  auto agg = aggregate_3hourly(tp, Aggregation::kSum);
  REQUIRE(agg.size() == 1);
  CHECK(agg[0].t == t0 + kStep);
  CHECK(*agg[0].value == doctest::Approx(0.003).epsilon(1e-15));

  std::vector<TimedValue> u = {{t0 + kHour, 1.0}, {t0 + 2 * kHour, 2.0}, {t0 + 3 * kHour, 3.0}};
  CHECK(*aggregate_3hourly(u, Aggregation::kMean)[0].value == 2.0);

  std::vector<TimedValue> c;
  for (int h = 1; h <= 24; ++h) c.push_back({t0 + h * kHour, 4.5});
  for (const auto& tv : aggregate_3hourly(c, Aggregation::kMean)) CHECK(*tv.value == 4.5);

  std::vector<TimedValue> gap = {{t0 + kHour, std::nullopt}, {t0 + 2 * kHour, std::nullopt}};
  CHECK_FALSE(aggregate_3hourly(gap, Aggregation::kMean)[0].value.has_value());
}

TEST_CASE("precipitation totals are conserved by aggregation") {
  std::mt19937_64 rng(3);
  std::exponential_distribution<double> e(500.0);
  const Timestamp t0 = from_civil(2021, 6, 1, 1);
  std::vector<TimedValue> hourly;
  double total = 0.0;
  for (int h = 0; h < 24 * 30; ++h) {
    const double v = e(rng);
    total += v;
    hourly.push_back({t0 + h * kHour, v});
  }
  double agg_total = 0.0;
  for (const auto& tv : aggregate_3hourly(hourly, Aggregation::kSum)) agg_total += *tv.value;
  CHECK(std::abs(agg_total - total) < 1e-12);
}

TEST_CASE("robust normalization") {
  const auto s = compute_robust_stats({1, 2, 3, 4, 5});
  CHECK(s.median == 3.0);
  CHECK(s.iqr == 2.0);
  CHECK(robust_normalize(5.0, s) == 1.0);
  CHECK(robust_normalize(3.0, s) == 0.0);
  const auto k = compute_robust_stats({7, 7, 7, 7});
  CHECK(k.constant);
  CHECK(k.scale == 1.0);
  CHECK(robust_normalize(7.0, k) == 0.0);

  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(3, 10);
  std::vector<double> xs(500);
  for (auto& x : xs) x = n(rng);
  const auto st = compute_robust_stats(xs);
  for (double x : xs) CHECK(std::abs(robust_denormalize(robust_normalize(x, st), st) - x) < 1e-12);
}

TEST_CASE("type-7 quantiles") {
  const double v[] = {1, 2, 3, 4};
  CHECK(quantile_sorted(v, 0.25) == 1.75);
  CHECK(quantile_sorted(v, 0.5) == 2.5);
  CHECK(quantile_sorted(v, 1.0) == 4.0);
  CHECK(quantile_sorted(v, 0.0) == 1.0);
}

TEST_CASE("raw CSV parsing") {
  std::istringstream ok(
      "timestamp,site_id,lat,lon,co,no,so2,tp,ssr,u10,v10,skt\n"
      "2021-01-01T00:00:00Z,P1,28.5,77.1,1e-7,2e-8,3e-8,,,,,\n"
      "2021-01-01T00:00:00Z,M1,28.6,77.2,,,,0.001,100,1.5,-2,290\n");
  const auto rows = read_raw_csv(ok);
  REQUIRE(rows.size() == 2);
  CHECK(*rows[0].co == 1e-7);
  CHECK_FALSE(rows[0].tp.has_value());
  CHECK(*rows[1].v10 == -2.0);

  std::istringstream missing("timestamp,site_id,lat,lon,co,no,so2,tp,ssr,u10,skt\n");
  try {
    read_raw_csv(missing);
    FAIL("expected missing-column error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("v10") != std::string::npos);
  }
  std::istringstream bad_lat(
      "timestamp,site_id,lat,lon,co,no,so2,tp,ssr,u10,v10,skt\n2021-01-01T00:00:00Z,P1,95,77,1,1,1,,,,,\n");
  CHECK_THROWS_AS(read_raw_csv(bad_lat), InputError);
}

TEST_CASE("quality control aligns, aggregates and drops incomplete stamps") {
  const GeoPoint p1{28.5, 77.0}, p2{28.7, 77.3};
  const GeoPoint m1 = north_of(p1, 2), m2 = north_of(p2, -2);
  const Timestamp t0 = from_civil(2021, 2, 1, 0);
  std::vector<RawRecord> rows;
  const int steps = 12;
  for (int h = 0; h <= steps * 3; ++h) {
    const Timestamp t = t0 + h * kHour;
    rows.push_back(met_row(t, "M1", m1, 1.0 + h));
    rows.push_back(met_row(t, "M2", m2, 2.0 + h));
    if (h % 3 == 0) {
      rows.push_back(pollutant_row(t, "P1", p1, 0.1 * h + 1));
      rows.push_back(pollutant_row(t, "P2", p2, 0.2 * h + 1));
    }
  }

  SUBCASE("complete input loses nothing") {
    const auto res = quality_control(rows);
    CHECK(res.report.dropped == 0);
    CHECK(res.report.kept == steps + 1);
    CHECK(res.report.pollutant_sites == 2);
    CHECK(res.report.met_sites == 2);
    const auto& ds = res.dataset;
    CHECK(ds.num_features() == 9);
    CHECK(ds.sites[0].id == "P1");
    for (std::size_t t = 1; t < ds.num_steps(); ++t) CHECK(ds.timestamps[t] - ds.timestamps[t - 1] == kStep);
    // tp at 03:00 for P1 is a sum over hours 1..3 of each source, then IDW.
    const double tp1 = (2 + 3 + 4) * 1e-3, tp2 = (3 + 4 + 5) * 1e-3;
    const double d1 = haversine_m(p1, m1), d2 = haversine_m(p1, m2);
    const double w1 = 1 / (d1 * d1), w2 = 1 / (d2 * d2);
    CHECK(ds.at(0, 1, 3) == doctest::Approx((w1 * tp1 + w2 * tp2) / (w1 + w2)).epsilon(1e-12));
    // wind speed is aggregated from hourly speeds, not from mean components
    const double ws1 = (std::hypot(2, 1) + std::hypot(3, 1) + std::hypot(4, 1)) / 3;
    const double ws2 = (std::hypot(3, 1) + std::hypot(4, 1) + std::hypot(5, 1)) / 3;
    CHECK(ds.at(0, 1, 7) == doctest::Approx((w1 * ws1 + w2 * ws2) / (w1 + w2)).epsilon(1e-12));
    CHECK(ds.at(1, 2, 0) == doctest::Approx(0.2 * 6 + 1));
  }

  SUBCASE("injected gaps are dropped and counted") {
    std::set<Timestamp> injected;
    for (auto& r : rows) {
      if (r.site_id == "P2" && (r.timestamp == t0 + 6 * kHour || r.timestamp == t0 + 15 * kHour)) {
        r.no.reset();
        injected.insert(r.timestamp);
      }
    }
    const auto res = quality_control(rows);
    CHECK(res.report.dropped == injected.size());
    for (Timestamp t : injected) {
      CHECK(std::find(res.dataset.timestamps.begin(), res.dataset.timestamps.end(), t) ==
            res.dataset.timestamps.end());
    }
  }

  SUBCASE("all met sources missing in a window drops the stamp") {
    for (auto& r : rows) {
      const Timestamp t = r.timestamp - t0;
      if (r.site_id[0] == 'M' && t > 6 * kHour && t <= 9 * kHour) r.skt.reset();
    }
    const auto res = quality_control(rows);
    CHECK(res.report.dropped == 1);
    CHECK(res.report.dropped_timestamps[0] == t0 + 9 * kHour);
  }
}

TEST_CASE("aligned CSV round trip") {
  auto ds = make_dataset(3, 20, 4, from_civil(2021, 1, 1));
  const auto path = temp_path("aligned.csv");
  write_aligned_csv(path, ds);
  const auto back = read_aligned_csv(path);
  CHECK(back.timestamps == ds.timestamps);
  CHECK(back.values == ds.values);
  CHECK(back.feature_names == ds.feature_names);
  REQUIRE(back.sites.size() == 3);
  CHECK(back.sites[2].lat == ds.sites[2].lat);
  std::filesystem::remove(path);
}

TEST_CASE("temporal split by dates and fractions") {
  const auto ds = make_dataset(1, 4 * 365 * 8, 1, from_civil(2018, 1, 1));
  SplitBoundaries b;
  const auto s = temporal_split(ds, b);
  CHECK(s.train.size() + s.val.size() + s.test.size() == ds.num_steps());
  CHECK(ds.timestamps[s.val.begin] == from_civil(2021, 1, 1));
  CHECK(ds.timestamps[s.val.begin - 1] < from_civil(2021, 1, 1));
  CHECK(ds.timestamps[s.test.begin] == from_civil(2021, 7, 1));

  const auto small = make_dataset(1, 1000, 1);
  SplitBoundaries f;
  f.mode = SplitBoundaries::Mode::kFractions;
  const auto fs = temporal_split(small, f);
  CHECK(fs.train.size() == 700);
  CHECK(fs.val.size() == 150);
  CHECK(fs.test.size() == 150);

  SplitBoundaries bad;
  bad.val_end = bad.train_end;
  CHECK_THROWS_AS(temporal_split(ds, bad), ConfigError);
  f.train_frac = 0.9;
  f.val_frac = 0.2;
  CHECK_THROWS_AS(temporal_split(small, f), ConfigError);
}

TEST_CASE("normalization statistics see only the training span") {
  auto ds = make_dataset(2, 400, 8);
  SplitBoundaries f;
  f.mode = SplitBoundaries::Mode::kFractions;
  const auto s = temporal_split(ds, f);
  const auto before = fit_normalization(ds, s);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(100, 50);
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t t = s.val.begin; t < ds.num_steps(); ++t)
      for (std::size_t k = 0; k < 9; ++k) ds.values[ds.index(l, t, k)] = n(rng);
  const auto after = fit_normalization(ds, s);
  CHECK(before.to_json() == after.to_json());
}

TEST_CASE("stats sidecar round trips byte for byte") {
  const auto ds = make_dataset(2, 300, 9, from_civil(2020, 1, 1));
  SplitBoundaries f;
  f.mode = SplitBoundaries::Mode::kFractions;
  const auto st = fit_normalization(ds, temporal_split(ds, f));
  const auto text = st.to_json();
  const auto back = NormalizationStats::from_json(text);
  CHECK(back.to_json() == text);
  CHECK(back.features[4].median == st.features[4].median);
  const auto re = splits_from_stats(ds, back);
  const auto orig = temporal_split(ds, f);
  CHECK(re.val.begin == orig.val.begin);
  CHECK(re.test.begin == orig.test.begin);
  CHECK_THROWS_AS(NormalizationStats::from_json("{\"features\": 3}"), InputError);
}

TEST_CASE("window construction") {
  auto data = std::make_shared<AlignedDataset>(make_dataset(2, 170, 3));
  const auto w = build_windows(data, {0, 170}, 168, 1);
  CHECK(w.size() == 2);
  CHECK(w.input_start(0) + 167 == 167);
  CHECK(w.target_index(0) == 168);
  const auto s = w.sample(0);
  CHECK(s.x.size() == 2 * 168 * 9);
  CHECK(s.y.size() == 2 * 3);
  CHECK(s.x[167 * 9 + 4] == data->at(0, 167, 4));  // last input step of site 0
  CHECK(s.y[3 + 1] == data->at(1, 168, 1));         // site 1, second species
  CHECK(s.t_target == data->timestamps[168]);
  CHECK(build_windows(data, {0, 100}, 168, 1).empty());
}

TEST_CASE("window count formula holds for random split lengths") {
  std::mt19937_64 rng(17);
  auto data = std::make_shared<AlignedDataset>(make_dataset(1, 600, 2));
  std::uniform_int_distribution<std::size_t> cut(0, 600);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t a = cut(rng), b = cut(rng);
    if (a > b) std::swap(a, b);
    const std::size_t T = 1 + trial % 40, h = 1 + trial % 3;
    const auto w = build_windows(data, {a, b}, T, h);
    const std::size_t n = b - a;
    CHECK(w.size() == (n >= T + h ? n - T - h + 1 : 0));
    for (std::size_t i = 0; i < w.size(); ++i) {
      CHECK(w.input_start(i) >= a);
      CHECK(w.target_index(i) < b);
    }
  }
}

TEST_CASE("windows never straddle a gap or a split") {
  auto ds = make_dataset(1, 50, 5);
  for (std::size_t t = 20; t < 50; ++t) ds.timestamps[t] += kStep;  // one missing stamp after index 19
  auto data = std::make_shared<AlignedDataset>(ds);
  const auto w = build_windows(data, {0, 50}, 5, 1);
  // Runs of 20 and 30 give 15 + 25 windows.
  CHECK(w.size() == 40);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const auto s = w.input_start(i);
    CHECK(ds.timestamps[w.target_index(i)] - ds.timestamps[s] == 5 * kStep);
  }
  SplitBoundaries f;
  f.mode = SplitBoundaries::Mode::kFractions;
  auto full = std::make_shared<AlignedDataset>(make_dataset(1, 400, 5));
  const auto sp = temporal_split(*full, f);
  for (const auto& r : {sp.train, sp.val, sp.test}) {
    const auto ws = build_windows(full, r, 24, 1);
    for (std::size_t i = 0; i < ws.size(); ++i) {
      CHECK(ws.input_start(i) >= r.begin);
      CHECK(ws.target_index(i) < r.end);
    }
  }
}

TEST_CASE("batched fill matches single samples") {
  auto data = std::make_shared<AlignedDataset>(make_dataset(3, 60, 6));
  const auto w = build_windows(data, {0, 60}, 10, 1);
  const std::size_t idx[] = {4, 0, 17};
  std::vector<double> x, y;
  w.fill(idx, x, y);
  for (std::size_t n = 0; n < 3; ++n) {
    const auto s = w.sample(idx[n]);
    CHECK(std::equal(s.x.begin(), s.x.end(), x.begin() + n * s.x.size()));
    CHECK(std::equal(s.y.begin(), s.y.end(), y.begin() + n * s.y.size()));
  }
}
