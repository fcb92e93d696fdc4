#include "vcnn/bench.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <sstream>

#include <json.hpp>

namespace vcnn {

namespace {

std::string iso_timestamp() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

double now_sec() { return detail::now_sec(); }

template <typename T>
struct BenchData {
  Tensor<T> batch;
  Targets<T> targets;
};

template <typename T>
BenchData<T> synth_bench_data(const NetworkSpec& spec, int batch, uint64_t seed) {
  BenchData<T> d;
  d.batch = Tensor<T>(Shape::hwcn(spec.input.h(), spec.input.w(), spec.input.c(), batch));
  Rng rng(seed);
  for (T& v : d.batch.data) v = static_cast<T>(rng.uniform());
  const Shape out = spec.output_shape();
  if (spec.loss == LossKind::softmax_ce) {
    const int units = static_cast<int>(out.numel());
    d.targets.classes.resize(batch);
    for (int b = 0; b < batch; ++b) d.targets.classes[b] = rng.uniform_int(units);
  } else {
    d.targets.values = Tensor<T>(Shape::hwcn(out.h(), out.w(), out.c(), batch));
    for (T& v : d.targets.values.data) v = static_cast<T>(rng.uniform());
  }
  return d;
}

template <typename T>
BenchReport run_scenario_t(const BenchScenario& sc) {
  sc.validate();
  apply_thread_config();

  BenchReport rep;
  rep.scale = sc.scale;
  rep.variant = variant_name(sc.variant);
  rep.mode = sc.train ? "train" : "test";
  rep.batch = sc.batch;
  rep.reps = sc.reps;
  rep.warmup = sc.warmup;
  rep.timestamp = iso_timestamp();

  const double t_start = now_sec();
  NetworkSpec spec = bench_preset(sc.scale);
  spec.seed = sc.seed;
  Network<T> net = build_network<T>(spec);
  Executor<T> exec(sc.variant);
  BenchData<T> data = synth_bench_data<T>(spec, sc.batch, sc.seed + 1);
  const Targets<T>* targets = sc.train ? &data.targets : nullptr;

  // Warmup, untimed per component; also seeds the cached index maps.
  double pass_sec = 0;
  for (int i = 0; i < sc.warmup; ++i) {
    const double t0 = now_sec();
    exec.run_batch(net, data.batch, targets);
    pass_sec = now_sec() - t0;
    if (now_sec() - t_start > sc.timeout_sec) {
      rep.na_reason = "timeout during warmup";
      return rep;
    }
  }

  // Short passes loop a few times per repetition so the clock has something
  // to measure; the image count scales along.
  const int inner = pass_sec > 0 ? std::max(1, static_cast<int>(std::ceil(0.05 / pass_sec))) : 1;
  rep.images_per_rep = static_cast<int64_t>(inner) * sc.batch;

  std::vector<double> times;
  std::vector<std::array<double, 8>> comps;
  BreakdownTimer timer;
  exec.set_timer(&timer);
  for (int r = 0; r < sc.reps; ++r) {
    timer.reset();
    const double t0 = now_sec();
    for (int i = 0; i < inner; ++i) exec.run_batch(net, data.batch, targets);
    times.push_back(now_sec() - t0);
    comps.push_back(timer.seconds);
    if (now_sec() - t_start > sc.timeout_sec) break;
  }
  exec.set_timer(nullptr);

  rep.reps_done = static_cast<int>(times.size());
  if (rep.reps_done < 1) {
    rep.na_reason = "timeout before first measured repetition";
    return rep;
  }

  std::vector<size_t> order(times.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return times[a] < times[b]; });
  const size_t mid = (order.size() - 1) / 2;
  rep.median_rep_sec = times[order[mid]];
  rep.comp_seconds = comps[order[mid]];

  if (rep.images_per_rep <= 0) throw TrainingError("bench: zero images processed");
  if (!(rep.median_rep_sec > 0)) {
    rep.na_reason = "unmeasurable repetition time";
    return rep;
  }
  rep.images_per_sec = static_cast<double>(rep.images_per_rep) / rep.median_rep_sec;

  double comp_total = 0;
  for (double s : rep.comp_seconds) comp_total += s;
  if (comp_total > 0)
    for (int i = 0; i < 8; ++i) rep.comp_fraction[i] = rep.comp_seconds[i] / comp_total;

  std::ostringstream env;
  env << "threads=" << configured_threads() << " precision=" << dtype_name(sc.precision)
      << " inner_loops=" << inner;
  rep.environment = env.str();
  rep.available = true;
  return rep;
}

BenchReport na_report(const BenchScenario& sc, const std::string& reason) {
  BenchReport rep;
  rep.scale = sc.scale;
  rep.variant = variant_name(sc.variant);
  rep.mode = sc.train ? "train" : "test";
  rep.batch = sc.batch;
  rep.reps = sc.reps;
  rep.warmup = sc.warmup;
  rep.timestamp = iso_timestamp();
  rep.na_reason = reason;
  return rep;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

NetworkSpec bench_preset(const std::string& scale) {
  NetworkSpec spec;
  spec.loss = LossKind::softmax_ce;
  if (scale == "scale1-analog") {
    spec.input = Shape{28, 28, 1};
    spec.layers = {ConvSpec{20, 5, 5, 1, Activation::relu},
                   PoolSpec{2, 2, 2, PoolMode::max, false, Activation::identity},
                   ConvSpec{50, 5, 5, 1, Activation::relu},
                   PoolSpec{2, 2, 2, PoolMode::max, false, Activation::identity},
                   FullSpec{500, Activation::relu},
                   FullSpec{100, Activation::relu},
                   FullSpec{10, Activation::identity}};
    return spec;
  }
  if (scale == "scale2-mini" || scale == "scale3-mini") {
    spec.input = Shape{32, 32, 3};
    spec.layers = {ConvSpec{32, 5, 5, 1, Activation::relu},
                   PoolSpec{2, 2, 2, PoolMode::max, false, Activation::identity},
                   ConvSpec{64, 5, 5, 1, Activation::relu},
                   PoolSpec{2, 2, 2, PoolMode::max, false, Activation::identity},
                   FullSpec{2000, Activation::relu},
                   FullSpec{scale == "scale2-mini" ? 1000 : 3500, Activation::identity}};
    return spec;
  }
  throw ConfigError("unknown bench scale '" + scale +
                    "' (expected scale1-analog, scale2-mini or scale3-mini)");
}

std::string scale_preset_name(int scale) {
  switch (scale) {
    case 1: return "scale1-analog";
    case 2: return "scale2-mini";
    case 3: return "scale3-mini";
  }
  throw ConfigError("unknown scale " + std::to_string(scale) + " (expected 1, 2 or 3)");
}

BenchReport run_scenario(const BenchScenario& sc) {
  try {
    if (sc.precision == Dtype::f32) return run_scenario_t<float>(sc);
    return run_scenario_t<double>(sc);
  } catch (const std::bad_alloc&) {
    return na_report(sc, "out of memory");
  } catch (const std::length_error&) {
    return na_report(sc, "out of memory");
  }
}

std::vector<BenchReport> run_ladder(const BenchScenario& base) {
  std::vector<BenchReport> out;
  for (Variant v : all_variants()) {
    BenchScenario sc = base;
    sc.variant = v;
    out.push_back(run_scenario(sc));
  }
  return out;
}

std::vector<BenchReport> run_sweep(const BenchScenario& base, const std::vector<int>& batches) {
  if (batches.empty()) throw ConfigError("bench sweep: empty batch list");
  for (size_t i = 1; i < batches.size(); ++i)
    if (batches[i] <= batches[i - 1])
      throw ConfigError("bench sweep: batch sizes must be strictly increasing");
  std::vector<BenchReport> out;
  for (int b : batches) {
    BenchScenario sc = base;
    sc.batch = b;
    out.push_back(run_scenario(sc));
  }
  return out;
}

BenchReport run_breakdown(const BenchScenario& base) {
  BenchScenario sc = base;
  sc.train = true;  // breakdown times forward and backward together
  return run_scenario(sc);
}

std::string reports_to_csv(const std::vector<BenchReport>& reports) {
  std::ostringstream os;
  os << "# " << kBenchSchema << "\n";
  os << "scale,variant,mode,batch,images_per_sec,conv_f,conv_b,pool_f,pool_b,full_f,full_b,"
        "other_f,other_b,reps,warmup\n";
  for (const BenchReport& r : reports) {
    os << r.scale << "," << r.variant << "," << r.mode << "," << r.batch << ",";
    if (!r.available) {
      os << "n/a";
      for (int i = 0; i < 8; ++i) os << ",n/a";
    } else {
      os << fmt(r.images_per_sec);
      for (int i = 0; i < 8; ++i) os << "," << fmt(r.comp_seconds[i]);
    }
    os << "," << r.reps_done << "," << r.warmup << "\n";
  }
  return os.str();
}

std::string reports_to_json(const std::vector<BenchReport>& reports) {
  nlohmann::json doc;
  doc["schema"] = kBenchSchema;
  doc["reports"] = nlohmann::json::array();
  const auto names = component_names();
  for (const BenchReport& r : reports) {
    nlohmann::json j;
    j["scale"] = r.scale;
    j["variant"] = r.variant;
    j["mode"] = r.mode;
    j["batch"] = r.batch;
    j["available"] = r.available;
    if (r.available) {
      j["images_per_sec"] = r.images_per_sec;
      j["median_rep_sec"] = r.median_rep_sec;
      j["images_per_rep"] = r.images_per_rep;
      for (int i = 0; i < 8; ++i) {
        j["seconds"][names[i]] = r.comp_seconds[i];
        j["fraction"][names[i]] = r.comp_fraction[i];
      }
    } else {
      j["images_per_sec"] = nullptr;
      j["na_reason"] = r.na_reason;
    }
    j["reps"] = r.reps_done;
    j["warmup"] = r.warmup;
    j["timestamp"] = r.timestamp;
    j["environment"] = r.environment;
    doc["reports"].push_back(std::move(j));
  }
  return doc.dump(2) + "\n";
}

}  // namespace vcnn
