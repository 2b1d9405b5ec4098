#pragma once

// A small normalized synthetic dataset with fractional splits.

#include <memory>

#include "nexus/data.hpp"
#include "nexus/synth.hpp"

namespace nexus::testing {

struct Prepared {
  std::shared_ptr<const AlignedDataset> data;
  NormalizationStats stats;
  Splits splits;
};

inline Prepared prepare_synthetic(int days, std::uint64_t seed = 42) {
  SynthConfig sc;
  sc.n_days = days;
  sc.seed = seed;
  auto qc = quality_control(generate(sc), QcOptions{});
  SplitBoundaries b;
  b.mode = SplitBoundaries::Mode::kFractions;
  Prepared p;
  p.splits = temporal_split(qc.dataset, b);
  p.stats = fit_normalization(qc.dataset, p.splits);
  p.data = std::make_shared<const AlignedDataset>(normalize(qc.dataset, p.stats));
  return p;
}

}  // namespace nexus::testing
