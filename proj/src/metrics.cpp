#include "nexus/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <boost/math/distributions/normal.hpp>

#include "nexus/error.hpp"

namespace nexus {

namespace {

void check_pair(std::span<const double> y, std::span<const double> yhat, const char* what) {
  if (y.size() != yhat.size()) {
    throw InputError(std::string(what) + ": length mismatch " + std::to_string(y.size()) + " vs " +
                     std::to_string(yhat.size()));
  }
  if (y.empty()) throw InputError(std::string(what) + ": empty input");
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

std::ofstream open_out(const std::filesystem::path& path, bool append = false) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

}  // namespace

double r2_score(std::span<const double> y, std::span<const double> yhat) {
  check_pair(y, yhat, "r2");
  const double m = mean_of(y);
  double sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sse += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    sst += (y[i] - m) * (y[i] - m);
  }
  if (sst == 0.0) throw InputError("r2: observations have zero variance");
  return 1.0 - sse / sst;
}

double nse(std::span<const double> y, std::span<const double> yhat) { return r2_score(y, yhat); }

double rmse(std::span<const double> y, std::span<const double> yhat) {
  check_pair(y, yhat, "rmse");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  return std::sqrt(s / static_cast<double>(y.size()));
}

double mae(std::span<const double> y, std::span<const double> yhat) {
  check_pair(y, yhat, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - yhat[i]);
  return s / static_cast<double>(y.size());
}

double smape(std::span<const double> y, std::span<const double> yhat) {
  check_pair(y, yhat, "smape");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double den = (std::abs(y[i]) + std::abs(yhat[i])) / 2.0;
    if (den > 0.0) s += std::abs(y[i] - yhat[i]) / den;
  }
  return 100.0 * s / static_cast<double>(y.size());
}

double ioa(std::span<const double> y, std::span<const double> yhat) {
  check_pair(y, yhat, "ioa");
  const double m = mean_of(y);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    num += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    const double a = std::abs(yhat[i] - m) + std::abs(y[i] - m);
    den += a * a;
  }
  if (den == 0.0) return 1.0;
  // num <= den analytically; clamp the rounding residue.
  return std::clamp(1.0 - num / den, 0.0, 1.0);
}

double pearson_correlation(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, "pearson");
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw InputError("pearson: a series has zero variance");
  return sxy / std::sqrt(sxx * syy);
}

double composite_pollution(double co, double no, double so2, const std::array<double, kNumSpecies>& maxima) {
  for (double m : maxima) {
    if (!(m > 0.0)) throw InputError("composite index needs strictly positive training maxima");
  }
  return co / maxima[0] + no / maxima[1] + so2 / maxima[2];
}

SpeciesMetrics compute_metrics(std::span<const double> y, std::span<const double> yhat) {
  SpeciesMetrics m;
  m.r2 = r2_score(y, yhat);
  m.nse = nse(y, yhat);
  m.rmse = rmse(y, yhat);
  m.mae = mae(y, yhat);
  m.smape_pct = smape(y, yhat);
  m.ioa = ioa(y, yhat);
  return m;
}

MetricsReport make_report(const std::vector<std::string>& species, const std::vector<std::vector<double>>& y,
                          const std::vector<std::vector<double>>& yhat) {
  if (species.size() != y.size() || y.size() != yhat.size() || species.empty()) {
    throw InputError("metrics report: species, observed and predicted counts differ");
  }
  MetricsReport r;
  r.species = species;
  r.n_samples = y.front().size();
  for (std::size_t k = 0; k < species.size(); ++k) {
    r.per_species.push_back(compute_metrics(y[k], yhat[k]));
    const auto& m = r.per_species.back();
    r.average.r2 += m.r2;
    r.average.rmse += m.rmse;
    r.average.mae += m.mae;
    r.average.smape_pct += m.smape_pct;
    r.average.ioa += m.ioa;
    r.average.nse += m.nse;
  }
  const double n = static_cast<double>(species.size());
  r.average.r2 /= n;
  r.average.rmse /= n;
  r.average.mae /= n;
  r.average.smape_pct /= n;
  r.average.ioa /= n;
  r.average.nse /= n;
  return r;
}

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  auto out = open_out(path);
  out << "model,species,n,r2,rmse,mae,smape_pct,ioa,nse\n";
  auto line = [&](const std::string& model, const std::string& sp, std::size_t n, const SpeciesMetrics& m) {
    out << model << ',' << sp << ',' << n << ',' << fmt(m.r2) << ',' << fmt(m.rmse) << ',' << fmt(m.mae) << ','
        << fmt(m.smape_pct) << ',' << fmt(m.ioa) << ',' << fmt(m.nse) << '\n';
  };
  for (const auto& [model, r] : rows) {
    for (std::size_t k = 0; k < r.species.size(); ++k) line(model, r.species[k], r.n_samples, r.per_species[k]);
    line(model, "average", r.n_samples, r.average);
  }
}

// ---------------------------------------------------------------------------

std::array<std::optional<double>, 8> diurnal_profile(std::span<const double> series, std::span<const Timestamp> t) {
  if (series.size() != t.size() || series.empty()) throw InputError("diurnal_profile: series and timestamps differ or are empty");
  std::array<double, 8> sum{};
  std::array<std::size_t, 8> n{};
  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::size_t bin = static_cast<std::size_t>(to_civil(t[i]).hour / 3);
    sum[bin] += series[i];
    ++n[bin];
  }
  std::array<std::optional<double>, 8> out{};
  for (std::size_t b = 0; b < 8; ++b) {
    if (n[b]) out[b] = sum[b] / static_cast<double>(n[b]);
  }
  return out;
}

std::array<std::optional<double>, 12> monthly_means(std::span<const double> series, std::span<const Timestamp> t) {
  if (series.size() != t.size() || series.empty()) throw InputError("monthly_means: series and timestamps differ or are empty");
  std::array<double, 12> sum{};
  std::array<std::size_t, 12> n{};
  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::size_t m = static_cast<std::size_t>(to_civil(t[i]).month - 1);
    sum[m] += series[i];
    ++n[m];
  }
  std::array<std::optional<double>, 12> out{};
  for (std::size_t m = 0; m < 12; ++m) {
    if (n[m]) out[m] = sum[m] / static_cast<double>(n[m]);
  }
  return out;
}

RegimeTable regime_stratify(std::span<const double> pollutant, std::span<const double> temperature,
                            std::span<const double> wind) {
  check_pair(pollutant, temperature, "regime_stratify");
  check_pair(pollutant, wind, "regime_stratify");
  RegimeTable tab;
  auto quartiles = [](std::span<const double> v) {
    std::vector<double> s(v.begin(), v.end());
    std::sort(s.begin(), s.end());
    return std::array<double, 3>{quantile_sorted(s, 0.25), quantile_sorted(s, 0.5), quantile_sorted(s, 0.75)};
  };
  tab.temperature_quartiles = quartiles(temperature);
  tab.wind_quartiles = quartiles(wind);
  auto bin = [](double v, const std::array<double, 3>& q) {
    std::size_t b = 0;
    while (b < 3 && v > q[b]) ++b;
    return b;
  };
  std::array<std::array<double, 4>, 4> sum{};
  for (std::size_t i = 0; i < pollutant.size(); ++i) {
    const auto a = bin(temperature[i], tab.temperature_quartiles), b = bin(wind[i], tab.wind_quartiles);
    sum[a][b] += pollutant[i];
    ++tab.count[a][b];
  }
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = 0; b < 4; ++b)
      if (tab.count[a][b]) tab.mean[a][b] = sum[a][b] / static_cast<double>(tab.count[a][b]);
  return tab;
}

ResidualDiagnostics residual_diagnostics(std::span<const double> y, std::span<const double> yhat) {
  check_pair(y, yhat, "residual_diagnostics");
  ResidualDiagnostics d;
  const std::size_t n = y.size();
  d.observed.assign(y.begin(), y.end());
  d.fitted.assign(yhat.begin(), yhat.end());
  d.residual.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.residual[i] = y[i] - yhat[i];
  const double m = mean_of(d.residual);
  double var = 0.0;
  for (double r : d.residual) var += (r - m) * (r - m);
  const double sd = n > 1 ? std::sqrt(var / static_cast<double>(n - 1)) : 0.0;
  d.standardized.resize(n);
  d.sqrt_abs_standardized.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.standardized[i] = sd > 0.0 ? (d.residual[i] - m) / sd : 0.0;
    d.sqrt_abs_standardized[i] = std::sqrt(std::abs(d.standardized[i]));
  }
  d.sample_quantile = d.standardized;
  std::sort(d.sample_quantile.begin(), d.sample_quantile.end());
  const boost::math::normal_distribution<double> std_normal;
  d.theoretical_quantile.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.theoretical_quantile[i] = boost::math::quantile(std_normal, (static_cast<double>(i) + 0.5) / static_cast<double>(n));
  }
  return d;
}

double qq_slope(const ResidualDiagnostics& d) {
  const auto& x = d.theoretical_quantile;
  const auto& y = d.sample_quantile;
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

// ---------------------------------------------------------------------------

void write_diurnal_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                       const std::vector<std::array<std::optional<double>, 8>>& profiles) {
  auto out = open_out(path);
  out << "series,bin_start_utc,bin_end_utc,mean\n";
  for (std::size_t s = 0; s < names.size(); ++s)
    for (std::size_t b = 0; b < 8; ++b)
      out << names[s] << ',' << b * 3 << ',' << b * 3 + 3 << ',' << fmt(profiles[s][b]) << '\n';
}

void write_monthly_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                       const std::vector<std::array<std::optional<double>, 12>>& months) {
  auto out = open_out(path);
  out << "series,month,mean,present\n";
  for (std::size_t s = 0; s < names.size(); ++s)
    for (std::size_t m = 0; m < 12; ++m)
      out << names[s] << ',' << m + 1 << ',' << fmt(months[s][m]) << ',' << (months[s][m] ? 1 : 0) << '\n';
}

void write_regime_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                      const std::vector<RegimeTable>& tables) {
  auto out = open_out(path);
  out << "series,temp_quartile,wind_quartile,temp_upper,wind_upper,count,mean\n";
  for (std::size_t s = 0; s < names.size(); ++s) {
    const auto& t = tables[s];
    for (std::size_t a = 0; a < 4; ++a)
      for (std::size_t b = 0; b < 4; ++b)
        out << names[s] << ',' << a + 1 << ',' << b + 1 << ','
            << (a < 3 ? fmt(t.temperature_quartiles[a]) : std::string("inf")) << ','
            << (b < 3 ? fmt(t.wind_quartiles[b]) : std::string("inf")) << ',' << t.count[a][b] << ','
            << fmt(t.mean[a][b]) << '\n';
  }
}

void write_correlation_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                           const std::vector<std::vector<double>>& matrix) {
  auto out = open_out(path);
  out << "variable";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < names.size(); ++i) {
    out << names[i];
    for (std::size_t j = 0; j < names.size(); ++j) out << ',' << fmt(matrix[i][j]);
    out << '\n';
  }
}

void write_residuals_csv(const std::filesystem::path& path, const std::string& species, const ResidualDiagnostics& d,
                         bool append) {
  auto out = open_out(path, append);
  if (!append) out << "species,observed,fitted,residual,standardized,sqrt_abs_standardized,theoretical_q,sample_q\n";
  for (std::size_t i = 0; i < d.residual.size(); ++i) {
    out << species << ',' << fmt(d.observed[i]) << ',' << fmt(d.fitted[i]) << ',' << fmt(d.residual[i]) << ','
        << fmt(d.standardized[i]) << ',' << fmt(d.sqrt_abs_standardized[i]) << ',' << fmt(d.theoretical_quantile[i])
        << ',' << fmt(d.sample_quantile[i]) << '\n';
  }
}

}  // namespace nexus
