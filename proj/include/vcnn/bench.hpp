#pragma once

#include <array>
#include <string>
#include <vector>

#include "vcnn/training.hpp"

namespace vcnn {

/// One benchmark cell: a preset network, a variant, a batch size and a mode.
struct BenchScenario {
  std::string scale = "scale1-analog";
  Variant variant = Variant::imp6;
  int batch = 100;
  bool train = true;  // false = forward only
  int reps = 5;
  int warmup = 1;
  Dtype precision = Dtype::f32;
  uint64_t seed = 7;
  double timeout_sec = 120.0;

  void validate() const {
    if (reps < 3) throw ConfigError("bench: repetitions must be >= 3");
    if (warmup < 1) throw ConfigError("bench: warmup must be >= 1");
    if (batch < 1) throw ConfigError("bench: batch must be >= 1");
    if (timeout_sec <= 0) throw ConfigError("bench: timeout must be positive");
  }
};

/// Timing results for one cell. Cells that timed out or ran out of memory are
/// kept in the report list but marked not-available. Component durations are
/// the attributed times of the median repetition; fractions are computed over
/// their sum.
struct BenchReport {
  std::string scale;
  std::string variant;
  std::string mode;  // "train" | "test"
  int batch = 0;
  bool available = false;
  std::string na_reason;  // set when not available
  double images_per_sec = 0.0;
  double median_rep_sec = 0.0;
  int64_t images_per_rep = 0;
  std::array<double, 8> comp_seconds{};   // conv_f..other_b
  std::array<double, 8> comp_fraction{};
  int reps_done = 0;
  int reps = 0;
  int warmup = 0;
  std::string timestamp;
  std::string environment;
};

/// Named network presets used by the harness. "scale1-analog" is the small
/// LeNet-like classifier; "scale2-mini" and "scale3-mini" are reduced
/// analogs of the large 1000-way and 10000-way models, keeping balanced
/// conv/full layer counts and stride-1 convolutions at roughly a tenth of
/// the parameter count.
NetworkSpec bench_preset(const std::string& scale);

/// Maps the CLI's --scale {1,2,3} to preset names.
std::string scale_preset_name(int scale);

BenchReport run_scenario(const BenchScenario& sc);

/// One report per variant, imp1..imp6 in order.
std::vector<BenchReport> run_ladder(const BenchScenario& base);

/// One report per batch size; sizes must be strictly increasing. Out-of-memory
/// cells are marked not-available and the sweep continues.
std::vector<BenchReport> run_sweep(const BenchScenario& base, const std::vector<int>& batches);

/// Instrumented training run for the per-component breakdown.
BenchReport run_breakdown(const BenchScenario& base);

std::string reports_to_csv(const std::vector<BenchReport>& reports);
std::string reports_to_json(const std::vector<BenchReport>& reports);

constexpr const char* kBenchSchema = "vcnn-bench/1";

}  // namespace vcnn
