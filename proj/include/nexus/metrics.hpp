#pragma once

// Forecast skill scores and the spatiotemporal analysis tables.

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nexus/data.hpp"

namespace nexus {

// ---------------------------------------------------------------------------
// Metrics. All take (observed, predicted) of equal nonzero length.

/// 1 - SSE/SST. Throws InputError when the observations have zero variance.
double r2_score(std::span<const double> y, std::span<const double> yhat);
/// Nash-Sutcliffe efficiency; the same formula as r2_score.
double nse(std::span<const double> y, std::span<const double> yhat);
double rmse(std::span<const double> y, std::span<const double> yhat);
double mae(std::span<const double> y, std::span<const double> yhat);
/// Percent in [0, 200]; pairs with |y| + |yhat| = 0 contribute 0.
double smape(std::span<const double> y, std::span<const double> yhat);
/// Willmott's index of agreement in [0, 1]; 1 when every term vanishes.
double ioa(std::span<const double> y, std::span<const double> yhat);
double pearson_correlation(std::span<const double> x, std::span<const double> y);

/// Sum of species values over their training maxima.
double composite_pollution(double co, double no, double so2, const std::array<double, kNumSpecies>& maxima);

struct SpeciesMetrics {
  double r2 = 0.0;
  double rmse = 0.0;
  double mae = 0.0;
  double smape_pct = 0.0;
  double ioa = 0.0;
  double nse = 0.0;
};

SpeciesMetrics compute_metrics(std::span<const double> y, std::span<const double> yhat);

struct MetricsReport {
  std::vector<std::string> species;
  std::vector<SpeciesMetrics> per_species;
  SpeciesMetrics average;
  std::size_t n_samples = 0;  // per species
};

/// `y` and `yhat` hold one vector per species.
MetricsReport make_report(const std::vector<std::string>& species, const std::vector<std::vector<double>>& y,
                          const std::vector<std::vector<double>>& yhat);

/// Columns: model,species,n,r2,rmse,mae,smape_pct,ioa,nse. One row per
/// species plus an "average" row for each report.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<std::pair<std::string, MetricsReport>>& rows);

// ---------------------------------------------------------------------------
// Analyses

/// Means over UTC bins [00-03), ..., [21-24); empty bins are nullopt.
std::array<std::optional<double>, 8> diurnal_profile(std::span<const double> series, std::span<const Timestamp> t);
/// Calendar-month means (index 0 = January); months without data are nullopt.
std::array<std::optional<double>, 12> monthly_means(std::span<const double> series, std::span<const Timestamp> t);

/// Index of the largest present value.
template <std::size_t N>
std::size_t argmax_present(const std::array<std::optional<double>, N>& a) {
  std::size_t best = N;
  for (std::size_t i = 0; i < N; ++i) {
    if (a[i] && (best == N || *a[i] > *a[best])) best = i;
  }
  return best;
}

struct RegimeTable {
  std::array<double, 3> temperature_quartiles{};  // type-7 q25, q50, q75
  std::array<double, 3> wind_quartiles{};
  /// [temperature bin][wind bin]; bin 0 holds values <= q25.
  std::array<std::array<std::optional<double>, 4>, 4> mean{};
  std::array<std::array<std::size_t, 4>, 4> count{};
};

RegimeTable regime_stratify(std::span<const double> pollutant, std::span<const double> temperature,
                            std::span<const double> wind);

struct ResidualDiagnostics {
  std::vector<double> observed, fitted, residual;
  std::vector<double> standardized;          // (r - mean) / sd, or 0 when sd = 0
  std::vector<double> theoretical_quantile;  // normal quantile paired with sorted standardized residuals
  std::vector<double> sample_quantile;
  std::vector<double> sqrt_abs_standardized;  // scale-location, row-aligned with fitted
};

ResidualDiagnostics residual_diagnostics(std::span<const double> y, std::span<const double> yhat);
/// Least-squares slope of sample against theoretical quantiles.
double qq_slope(const ResidualDiagnostics& d);

// CSV writers for plotting.
void write_diurnal_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                       const std::vector<std::array<std::optional<double>, 8>>& profiles);
void write_monthly_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                       const std::vector<std::array<std::optional<double>, 12>>& months);
void write_regime_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                      const std::vector<RegimeTable>& tables);
void write_correlation_csv(const std::filesystem::path& path, const std::vector<std::string>& names,
                           const std::vector<std::vector<double>>& matrix);
void write_residuals_csv(const std::filesystem::path& path, const std::string& species, const ResidualDiagnostics& d,
                         bool append);

}  // namespace nexus
