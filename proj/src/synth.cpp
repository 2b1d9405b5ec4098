#include "nexus/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <string>

#include "nexus/error.hpp"
#include "nexus/rng.hpp"

namespace nexus {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kYear = 365.25;

// Hourly regional drivers shared by every site.
struct Drivers {
  std::size_t hours = 0;
  std::vector<double> temp;     // AR(1) anomaly, unit variance
  std::vector<double> wind;     // AR(1) anomaly, unit variance
  std::vector<double> heading;  // AR(1), drives wind direction
  std::vector<double> episode;  // episode load E
};

Drivers simulate_drivers(const SynthConfig& c) {
  Drivers d;
  d.hours = static_cast<std::size_t>(c.n_days) * 24;
  d.temp.resize(d.hours);
  d.wind.resize(d.hours);
  d.heading.resize(d.hours);
  d.episode.resize(d.hours);

  auto ar1 = [&](std::vector<double>& out, double phi, const char* stream) {
    auto rng = make_stream(c.seed, stream);
    std::normal_distribution<double> n01(0.0, 1.0);
    const double innov = std::sqrt(1.0 - phi * phi);
    double v = n01(rng);  // stationary start
    for (std::size_t h = 0; h < out.size(); ++h) {
      if (h > 0) v = phi * v + innov * n01(rng);
      out[h] = v;
    }
  };
  ar1(d.temp, c.temp_persistence, "synth.temperature");
  ar1(d.wind, c.wind_persistence, "synth.wind");
  ar1(d.heading, 0.99, "synth.heading");

  auto rng = make_stream(c.seed, "synth.episodes");
  std::exponential_distribution<double> jump(1.0 / c.episode_mean_jump);
  const double lambda = c.episode_rate_per_day / 24.0;
  double e = 0.0;
  for (std::size_t h = 0; h < d.hours; ++h) {
    e *= c.episode_decay;
    if (lambda > 0.0 && is_winter_month(to_civil(c.start + static_cast<Timestamp>(h) * kHour).month)) {
      std::poisson_distribution<int> arrivals(lambda);
      for (int a = arrivals(rng); a > 0; --a) e += jump(rng);
    }
    d.episode[h] = e;
  }
  return d;
}

double site_gradient(const SynthConfig& c, const Site& s) {
  const double north = (s.lat - c.lat_min) / (c.lat_max - c.lat_min);
  const double west = (c.lon_max - s.lon) / (c.lon_max - c.lon_min);
  return 1.0 + c.gradient * 0.5 * (north + west);
}

double diurnal(const SynthConfig& c, const CivilTime& t) {
  return std::cos(kTwoPi * (t.hour - c.diurnal_peak_hour) / 24.0);
}

double seasonal(const SynthConfig& c, const CivilTime& t) {
  return std::cos(kTwoPi * (t.day_of_year - c.seasonal_peak_doy) / kYear);
}

}  // namespace

void SynthConfig::validate() const {
  if (n_days < 30) throw ConfigError("synthetic n_days must be at least 30, got " + std::to_string(n_days));
  if (noise_scale < 0.0) throw ConfigError("noise_scale must be nonnegative");
  if (!(lat_min < lat_max) || !(lon_min < lon_max)) throw ConfigError("synthetic region box is empty");
  if (met_grid < 1) throw ConfigError("met_grid must be at least 1");
  if (episode_rate_per_day < 0.0 || episode_mean_jump <= 0.0) throw ConfigError("episode parameters out of range");
  if (episode_decay < 0.0 || episode_decay >= 1.0) throw ConfigError("episode_decay must lie in [0, 1)");
  for (double phi : {temp_persistence, wind_persistence}) {
    if (phi < 0.0 || phi >= 1.0) throw ConfigError("AR persistence must lie in [0, 1)");
  }
  if (diurnal_amplitude < 0.0 || seasonal_amplitude < 0.0) throw ConfigError("amplitudes must be nonnegative");
}

std::vector<Site> synth_pollutant_sites(const SynthConfig& c) {
  // NW, NE, SW, SE corners.
  return {{"P1", c.lat_max, c.lon_min}, {"P2", c.lat_max, c.lon_max},
          {"P3", c.lat_min, c.lon_min}, {"P4", c.lat_min, c.lon_max}};
}

std::vector<Site> synth_met_sites(const SynthConfig& c) {
  std::vector<Site> out;
  const int g = c.met_grid;
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) {
      const double lat = c.lat_max - (i + 0.5) * (c.lat_max - c.lat_min) / g;
      const double lon = c.lon_min + (j + 0.5) * (c.lon_max - c.lon_min) / g;
      char id[16];
      std::snprintf(id, sizeof id, "M%02d", i * g + j + 1);
      out.push_back({id, lat, lon});
    }
  }
  return out;
}

PollutantSimulation simulate_pollutants(const SynthConfig& c) {
  c.validate();
  const Drivers d = simulate_drivers(c);
  const auto sites = synth_pollutant_sites(c);
  PollutantSimulation sim;
  sim.sites = sites.size();
  for (std::size_t h = 0; h < d.hours; h += 3) sim.stamps.push_back(c.start + static_cast<Timestamp>(h) * kHour);
  const std::size_t n = sim.stamps.size();
  sim.signal.resize(sim.sites * n * kNumSpecies);
  sim.observed.resize(sim.signal.size());

  auto rng = make_stream(c.seed, "synth.noise");
  std::normal_distribution<double> n01(0.0, 1.0);
  const double wind_norm = 0.5 * c.wind_coupling * c.wind_coupling;
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t h = t * 3;
    const CivilTime ct = to_civil(sim.stamps[t]);
    const double dcos = diurnal(c, ct), scos = seasonal(c, ct);
    const double calm = std::exp(-c.wind_coupling * d.wind[h] - wind_norm);
    for (std::size_t i = 0; i < sim.sites; ++i) {
      const double g = site_gradient(c, sites[i]);
      for (std::size_t k = 0; k < kNumSpecies; ++k) {
        const double f = kSpeciesStructure[k];
        const double level = 1.0 + f * (c.diurnal_amplitude * dcos + c.seasonal_amplitude * scos) -
                             c.temp_coupling * d.temp[h] + c.episode_weight * f * d.episode[h];
        const double y = g * level * calm;
        const std::size_t idx = sim.index(i, t, k);
        // Noise can push a value slightly below zero; it is kept as is so the
        // observation model stays additive.
        sim.signal[idx] = kSpeciesBase[k] * y;
        sim.observed[idx] = kSpeciesBase[k] * (y + g * c.noise_scale * n01(rng));
      }
    }
  }
  return sim;
}

std::vector<RawRecord> generate(const SynthConfig& c) {
  c.validate();
  const Drivers d = simulate_drivers(c);
  const PollutantSimulation sim = simulate_pollutants(c);
  const auto psites = synth_pollutant_sites(c);
  const auto msites = synth_met_sites(c);

  auto local = make_stream(c.seed, "synth.met.local");
  auto rain = make_stream(c.seed, "synth.rain");
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::exponential_distribution<double> rain_amount(1.0 / 0.0012);

  std::vector<RawRecord> out;
  out.reserve(d.hours * (psites.size() + msites.size()));
  for (std::size_t h = 0; h < d.hours; ++h) {
    const Timestamp ts = c.start + static_cast<Timestamp>(h) * kHour;
    const CivilTime ct = to_civil(ts);
    for (std::size_t i = 0; i < psites.size(); ++i) {
      RawRecord r;
      r.timestamp = ts;
      r.site_id = psites[i].id;
      r.lat = psites[i].lat;
      r.lon = psites[i].lon;
      if (h % 3 == 0) {
        const std::size_t t = h / 3;
        r.co = sim.observed[sim.index(i, t, 0)];
        r.no = sim.observed[sim.index(i, t, 1)];
        r.so2 = sim.observed[sim.index(i, t, 2)];
      }
      out.push_back(std::move(r));
    }

    const double summer = std::cos(kTwoPi * (ct.day_of_year - 196) / kYear);
    const double daily = std::cos(kTwoPi * (ct.hour - 9) / 24.0);
    const double monsoon = std::pow(std::max(0.0, std::cos(kTwoPi * (ct.day_of_year - 210) / kYear)), 4.0);
    const double sun = std::max(0.0, std::cos(kTwoPi * (ct.hour - 6.5) / 24.0));
    const double insolation = 0.85 + 0.15 * std::cos(kTwoPi * (ct.day_of_year - 172) / kYear);
    const double speed0 = 2.2 * std::exp(0.35 * d.wind[h]);
    const double from_dir = (300.0 + 40.0 * d.heading[h]) * std::numbers::pi / 180.0;
    for (std::size_t j = 0; j < msites.size(); ++j) {
      const auto& s = msites[j];
      RawRecord r;
      r.timestamp = ts;
      r.site_id = s.id;
      r.lat = s.lat;
      r.lon = s.lon;
      const double north = (s.lat - c.lat_min) / (c.lat_max - c.lat_min);
      const bool raining = u01(rain) < 0.01 + 0.12 * monsoon;
      r.tp = raining ? rain_amount(rain) : 0.0;
      r.ssr = 3.0e6 * std::pow(sun, 1.5) * insolation * (raining ? 0.5 : 1.0);
      const double speed = speed0 * (1.0 + 0.04 * (static_cast<double>(j % 4) - 1.5)) * std::exp(0.05 * n01(local));
      r.u10 = -speed * std::sin(from_dir);
      r.v10 = -speed * std::cos(from_dir);
      r.skt = 293.0 + 9.0 * summer + 5.0 * daily + 2.5 * d.temp[h] - 1.0 * north + 0.3 * n01(local);
      out.push_back(std::move(r));
    }
  }
  return out;
}

void write_synthetic_csv(std::ostream& out, const SynthConfig& config) {
  write_raw_csv_header(out);
  for (const auto& r : generate(config)) write_raw_csv_row(out, r);
}

void write_synthetic_csv(const std::filesystem::path& path, const SynthConfig& config) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  write_synthetic_csv(out, config);
  if (!out) throw InputError("failed writing " + path.string());
}

double ground_truth_r2_bound(const SynthConfig& c) {
  c.validate();
  const auto sites = synth_pollutant_sites(c);
  const std::size_t hours = static_cast<std::size_t>(c.n_days) * 24;

  // Exact first and second moments of the episode load by recursion:
  // E_h = decay * E_{h-1} + J_h with J_h compound Poisson(lambda, Exp(mu)).
  const double lambda = c.episode_rate_per_day / 24.0, mu = c.episode_mean_jump, rho = c.episode_decay;
  std::vector<double> m1(hours), m2(hours);
  double a = 0.0, b = 0.0;
  for (std::size_t h = 0; h < hours; ++h) {
    const double lam = is_winter_month(to_civil(c.start + static_cast<Timestamp>(h) * kHour).month) ? lambda : 0.0;
    const double jm = lam * mu, jm2 = 2.0 * lam * mu * mu + jm * jm;
    b = rho * rho * b + 2.0 * rho * a * jm + jm2;
    a = rho * a + jm;
    m1[h] = a;
    m2[h] = b;
  }

  // Calm multiplier has mean 1 and second moment exp(wind_coupling^2);
  // temperature anomaly has unit variance; all drivers are independent.
  const double calm2 = std::exp(c.wind_coupling * c.wind_coupling);
  double mean_g2 = 0.0;
  for (const auto& s : sites) mean_g2 += std::pow(site_gradient(c, s), 2);
  mean_g2 /= static_cast<double>(sites.size());

  double total = 0.0;
  for (std::size_t k = 0; k < kNumSpecies; ++k) {
    const double f = kSpeciesStructure[k], m = c.episode_weight * f;
    double s1 = 0.0, s2 = 0.0;
    std::size_t count = 0;
    for (std::size_t h = 0; h < hours; h += 3) {
      const CivilTime ct = to_civil(c.start + static_cast<Timestamp>(h) * kHour);
      const double base = 1.0 + f * (c.diurnal_amplitude * diurnal(c, ct) + c.seasonal_amplitude * seasonal(c, ct));
      const double level1 = base + m * m1[h];
      const double level2 = base * base + 2.0 * base * m * m1[h] + m * m * m2[h] + c.temp_coupling * c.temp_coupling;
      for (const auto& s : sites) {
        const double g = site_gradient(c, s);
        s1 += g * level1;
        s2 += g * g * level2 * calm2;
        ++count;
      }
    }
    const double mean = s1 / static_cast<double>(count);
    const double signal_var = s2 / static_cast<double>(count) - mean * mean;
    const double noise_var = c.noise_scale * c.noise_scale * mean_g2;
    total += signal_var / (signal_var + noise_var);
  }
  return total / static_cast<double>(kNumSpecies);
}

double simulated_r2_bound(const PollutantSimulation& sim) {
  const std::size_t n = sim.stamps.size();
  double total = 0.0;
  for (std::size_t k = 0; k < kNumSpecies; ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < sim.sites; ++i) {
      for (std::size_t t = 0; t < n; ++t) mean += sim.observed[sim.index(i, t, k)];
    }
    mean /= static_cast<double>(n * sim.sites);
    double sse = 0.0, sst = 0.0;
    for (std::size_t i = 0; i < sim.sites; ++i) {
      for (std::size_t t = 0; t < n; ++t) {
        const double y = sim.observed[sim.index(i, t, k)], s = sim.signal[sim.index(i, t, k)];
        sse += (y - s) * (y - s);
        sst += (y - mean) * (y - mean);
      }
    }
    total += 1.0 - sse / sst;
  }
  return total / static_cast<double>(kNumSpecies);
}

}  // namespace nexus
