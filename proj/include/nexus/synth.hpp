#pragma once

// Synthetic Delhi-like air-quality data with known structure: a morning
// diurnal peak, a winter seasonal peak, cold/calm amplification, winter
// episodes and a northwest-elevated spatial gradient.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "nexus/data.hpp"

namespace nexus {

struct SynthConfig {
  int n_days = 730;
  Timestamp start = from_civil(2020, 1, 1);
  std::uint64_t seed = 42;

  // Region; pollutant sites sit at the box corners, met sites at the centres
  // of a met_grid x met_grid tiling.
  double lat_min = 28.20, lat_max = 28.95;
  double lon_min = 76.85, lon_max = 77.60;
  int met_grid = 4;

  // Relative pollutant structure (fractions of the site baseline).
  double diurnal_amplitude = 0.25;
  double diurnal_peak_hour = 3.0;  // UTC
  double seasonal_amplitude = 0.35;
  double seasonal_peak_doy = 350.0;
  double temp_coupling = 0.10;  // per unit temperature anomaly
  double wind_coupling = 0.20;  // log-multiplier per unit wind anomaly
  double gradient = 0.40;       // extra baseline at the northwest corner
  double noise_scale = 0.10;  // puts the signal R^2 bound near 0.95

  // Winter episodes: Poisson arrivals during Nov-Jan, exponential jumps,
  // geometric hourly decay.
  double episode_rate_per_day = 0.15;
  double episode_mean_jump = 1.0;
  double episode_decay = 0.97;
  double episode_weight = 0.5;

  // Hourly AR(1) anomalies, unit stationary variance.
  double temp_persistence = 0.995;
  double wind_persistence = 0.98;

  void validate() const;
};

/// Per-species multiplier on the structured terms, and magnitude in kg/kg.
inline constexpr std::array<double, kNumSpecies> kSpeciesStructure = {1.0, 1.3, 0.8};
inline constexpr std::array<double, kNumSpecies> kSpeciesBase = {4.0e-7, 2.0e-8, 1.5e-8};

/// Months (1-12) in which episodes can start.
inline bool is_winter_month(int month) { return month == 11 || month == 12 || month == 1; }

std::vector<Site> synth_pollutant_sites(const SynthConfig& config);
std::vector<Site> synth_met_sites(const SynthConfig& config);

/// Pollutant sites at every 3-hourly stamp, in physical units.
struct PollutantSimulation {
  std::vector<Timestamp> stamps;
  std::size_t sites = 0;
  std::vector<double> signal;    // [site][stamp][species], noise-free
  std::vector<double> observed;  // signal plus observation noise
  std::size_t index(std::size_t site, std::size_t step, std::size_t k) const {
    return (site * stamps.size() + step) * kNumSpecies + k;
  }
};

PollutantSimulation simulate_pollutants(const SynthConfig& config);

/// All hourly records for every pollutant and met site, in site-major order
/// within each hour. Pollutant cells are filled only at 3-hourly stamps.
std::vector<RawRecord> generate(const SynthConfig& config);
void write_synthetic_csv(std::ostream& out, const SynthConfig& config);
void write_synthetic_csv(const std::filesystem::path& path, const SynthConfig& config);

/// R^2 of the predictor that knows the noise-free signal, averaged over
/// species, from exact moments of the generative process.
double ground_truth_r2_bound(const SynthConfig& config);

/// The same quantity measured on a simulation.
double simulated_r2_bound(const PollutantSimulation& sim);

}  // namespace nexus
