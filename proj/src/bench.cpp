#include "mmalign/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <string>
#include <thread>

#include <Eigen/Core>

#include "mmalign/adl.hpp"
#include "mmalign/errors.hpp"

namespace mmalign {

void BenchConfig::validate() const {
  if (reps < 1) throw ConfigError("bench needs at least one repetition");
  if (warmup_reps < 0) throw ConfigError("warm-up repetitions must be >= 0");
  if (lengths.empty()) throw ConfigError("bench needs at least one length");
  if (dim < 1 || batch < 1 || window < 0) throw ConfigError("bench dims must be positive");
  for (Index l : lengths) {
    if (l <= window) throw ConfigError("bench length " + std::to_string(l) + " must exceed the window");
  }
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

BenchReport bench_adl_decode(const BenchConfig& config) {
  config.validate();
  BenchReport report;
  report.config = config;
  report.machine = machine_descriptor();
  Rng rng(config.seed);
  FitterParams fitter(config.dim, config.dim, config.window, rng);
  Matrix cls = Matrix::Zero(1, config.dim);

  for (Index l : config.lengths) {
    std::vector<SharedRepr> batch;
    for (Index b = 0; b < config.batch; ++b) {
      Matrix z(l + 1, config.dim);
      for (Index i = 0; i < z.size(); ++i) z.data()[i] = standard_normal(rng);
      batch.push_back(SharedRepr{z});
    }
    double sink = 0.0;  // keeps the optimizer from dropping the work
    auto decode = [&] {
      for (const auto& z : batch) {
        AlignmentPlan plan = reconstruct_plan(fit_predict(z, fitter));
        sink += impute(plan, z, cls).values(l, 0);
      }
    };
    for (int r = 0; r < config.warmup_reps; ++r) decode();
    std::vector<double> times;
    for (int r = 0; r < config.reps; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      decode();
      times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    if (!std::isfinite(sink)) throw NumericalError("bench decode produced a non-finite value");
    report.points.push_back({l, median(times), *std::min_element(times.begin(), times.end()),
                             *std::max_element(times.begin(), times.end())});
  }
  for (std::size_t i = 1; i < report.points.size(); ++i) {
    report.ratios.push_back(report.points[i].median_seconds / report.points[i - 1].median_seconds);
  }
  return report;
}

nlohmann::json machine_descriptor() {
  nlohmann::json m;
  std::string cpu = "unknown";
  std::ifstream info("/proc/cpuinfo");
  for (std::string line; std::getline(info, line);) {
    if (line.rfind("model name", 0) == 0) {
      cpu = line.substr(line.find(':') + 2);
      break;
    }
  }
  m["cpu"] = cpu;
  m["hardware_threads"] = std::thread::hardware_concurrency();
  m["compiler"] = std::string(__VERSION__);
#ifdef NDEBUG
  m["optimized"] = true;
#else
  m["optimized"] = false;
#endif
  m["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  return m;
}

nlohmann::json to_json(const BenchReport& r) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : r.points) {
    points.push_back({{"l", p.length},
                      {"median_seconds", p.median_seconds},
                      {"min_seconds", p.min_seconds},
                      {"max_seconds", p.max_seconds}});
  }
  return {{"path", "adl_decode"},
          {"d", r.config.dim},
          {"window", r.config.window},
          {"batch", r.config.batch},
          {"repetitions", r.config.reps},
          {"points", points},
          {"ratios", r.ratios},
          {"machine", r.machine}};
}

}  // namespace mmalign
