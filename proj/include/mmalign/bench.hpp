#pragma once

// Timing of the ADL decode path (GRU + band projection, plan reconstruction,
// imputation) across sequence lengths at a fixed width.

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "mmalign/numerics.hpp"

namespace mmalign {

struct BenchConfig {
  std::vector<Index> lengths{32, 64, 128};
  Index dim = 32;
  Index window = 8;
  Index batch = 32;
  int reps = 20;
  int warmup_reps = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct BenchPoint {
  Index length = 0;
  double median_seconds = 0.0;  // per batch
  double min_seconds = 0.0;
  double max_seconds = 0.0;
};

struct BenchReport {
  BenchConfig config;
  std::vector<BenchPoint> points;
  std::vector<double> ratios;  // median t(lengths[i+1]) / t(lengths[i])
  nlohmann::json machine;
};

BenchReport bench_adl_decode(const BenchConfig& config);

/// CPU model, core count, compiler and build flags.
nlohmann::json machine_descriptor();

nlohmann::json to_json(const BenchReport& report);

}  // namespace mmalign
