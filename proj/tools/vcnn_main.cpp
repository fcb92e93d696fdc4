#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vcnn/bench.hpp"
#include "vcnn/config.hpp"
#include "vcnn/denoise.hpp"
#include "vcnn/io.hpp"
#include "vcnn/selftest.hpp"
#include "vcnn/training.hpp"

namespace {

using namespace vcnn;

void emit_output(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_file_atomic(out_path, text.data(), text.size());
    std::cout << "wrote " << out_path << "\n";
  }
}

struct CommonOpts {
  std::string config_path;
  std::string variant = "imp6";
  int batch = 0;  // 0 = keep config/default
  int scale = 1;
  std::string out_path;
  std::string format = "csv";
  int64_t seed = -1;  // -1 = keep config/default
  std::string precision;
  int reps = 5;
  int warmup = 1;
  double timeout = 120.0;
  std::string mode = "train";
};

BenchScenario scenario_from(const CommonOpts& o) {
  BenchScenario sc;
  sc.scale = scale_preset_name(o.scale);
  sc.variant = parse_variant(o.variant);
  if (o.batch > 0) sc.batch = o.batch;
  sc.train = o.mode != "test";
  sc.reps = o.reps;
  sc.warmup = o.warmup;
  sc.timeout_sec = o.timeout;
  if (!o.precision.empty()) sc.precision = parse_precision(o.precision);
  if (o.seed >= 0) sc.seed = static_cast<uint64_t>(o.seed);
  return sc;
}

std::string render_reports(const std::vector<BenchReport>& reports, const std::string& format) {
  if (format == "json") return reports_to_json(reports);
  if (format == "csv") return reports_to_csv(reports);
  throw ConfigError("unknown format '" + format + "' (expected csv or json)");
}

template <typename T>
Dataset<T> load_train_data(const AppConfig& cfg) {
  if (!cfg.train_images.empty()) {
    Dataset<T> d = load_idx<T>(cfg.train_images, cfg.train_labels);
    d.split = "train";
    return d;
  }
  if (cfg.synthetic_train > 0)
    return synth_digits<T>(cfg.synthetic_train, cfg.data_seed, "train");
  throw ConfigError("config: no training data (set train_images or synthetic_train)");
}

template <typename T>
std::optional<Dataset<T>> load_test_data(const AppConfig& cfg) {
  if (!cfg.test_images.empty()) {
    Dataset<T> d = load_idx<T>(cfg.test_images, cfg.test_labels);
    d.split = "test";
    return d;
  }
  if (cfg.synthetic_test > 0)
    return synth_digits<T>(cfg.synthetic_test, cfg.data_seed + 1, "test");
  return std::nullopt;
}

template <typename T>
int run_train(const AppConfig& cfg, const CommonOpts& opts) {
  apply_thread_config();
  AppConfig c = cfg;
  if (opts.batch > 0) c.train.batch = opts.batch;
  if (opts.seed >= 0) {
    c.net.seed = static_cast<uint64_t>(opts.seed);
    c.train.seed = static_cast<uint64_t>(opts.seed);
  }
  if (c.net.layers.empty()) throw ConfigError("config: no layers defined");

  Dataset<T> train = load_train_data<T>(c);
  train.validate();
  if (train.count() == 0) throw ConfigError("config: training set is empty");
  std::cout << "training on " << train.count() << " images (" << train.split << "), "
            << c.train.epochs << " epochs, batch " << c.train.batch << ", variant "
            << opts.variant << ", " << dtype_name(c.train.precision) << "\n";

  Network<T> net = build_network<T>(c.net);
  Trainer<T> trainer(c.train, parse_variant(opts.variant));
  trainer.executor().set_pool_backward_mode(c.pool_backward);
  TrainStats<T> stats = trainer.fit(net, train.images,
                                    Targets<T>::from_classes(train.labels));
  for (size_t e = 0; e < stats.epoch_loss.size(); ++e)
    std::cout << "epoch " << e + 1 << ": loss " << stats.epoch_loss[e] << "\n";

  if (auto test = load_test_data<T>(c)) {
    const double acc = trainer.evaluate_accuracy(net, test->images, test->labels);
    std::cout << "test accuracy: " << acc * 100.0 << "% on " << test->count() << " images\n";
  }

  const std::string out = opts.out_path.empty() ? "model.vcnn" : opts.out_path;
  save_model(out, model_from_network(net));
  std::cout << "saved " << out << "\n";
  return 0;
}

template <typename T>
int run_predict(const std::string& model_path, const std::string& images_path,
                const std::string& labels_path, const std::string& out_path) {
  apply_thread_config();
  ModelFile m = load_model(model_path);
  Network<T> net = network_from_model<T>(m);
  Dataset<T> data = load_idx<T>(images_path);
  if (data.count() == 0) throw ConfigError("no images to predict");
  Executor<T> exec(Variant::imp6);
  std::vector<int> pred;
  const int eval_batch = 256;
  for (int start = 0; start < data.count(); start += eval_batch) {
    const int take = std::min(eval_batch, data.count() - start);
    std::vector<int> ids(take);
    for (int i = 0; i < take; ++i) ids[i] = start + i;
    std::vector<int> p = predict_classes(exec.forward(net, gather_batch(data.images, ids)));
    pred.insert(pred.end(), p.begin(), p.end());
  }
  std::ostringstream os;
  for (int p : pred) os << p << "\n";
  emit_output(os.str(), out_path);
  if (!labels_path.empty()) {
    std::vector<int> labels = load_idx_labels(labels_path);
    if (labels.size() != pred.size()) throw ConfigError("label count does not match images");
    int correct = 0;
    for (size_t i = 0; i < pred.size(); ++i)
      if (pred[i] == labels[i]) ++correct;
    std::cout << "accuracy: " << 100.0 * correct / pred.size() << "% (" << correct << "/"
              << pred.size() << ")\n";
  }
  return 0;
}

template <typename T>
int run_denoise_train(const AppConfig& cfg, const std::string& out_path) {
  apply_thread_config();
  DenoiseResult<T> res = train_denoiser<T>(cfg);
  std::cout << "held-out PSNR: noisy " << res.psnr_noisy << " dB, denoised "
            << res.psnr_denoised << " dB (gain "
            << res.psnr_denoised - res.psnr_noisy << " dB)\n";
  const std::string out = out_path.empty() ? "denoiser.vcnn" : out_path;
  save_model(out, model_from_network(res.net));
  std::cout << "saved " << out << "\n";
  return 0;
}

template <typename T>
int run_denoise_apply(const std::string& model_path, const std::string& in_path,
                      const std::string& out_path) {
  apply_thread_config();
  Network<T> net = network_from_model<T>(load_model(model_path));
  Tensor<T> image = load_pgm<T>(in_path);
  Tensor<T> out = denoise_apply(net, image);
  for (T& v : out.data) v = v < T(0) ? T(0) : (v > T(1) ? T(1) : v);
  save_pgm(out_path, out);
  std::cout << "wrote " << out_path << " (" << out.h() << "x" << out.w() << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vcnn: vectorized CNN micro-framework"};
  app.require_subcommand(1);
  CommonOpts opts;

  auto add_common = [&](CLI::App* cmd, bool bench) {
    cmd->add_option("--variant", opts.variant, "implementation variant imp1..imp6");
    cmd->add_option("--batch", opts.batch, "batch size");
    cmd->add_option("--seed", opts.seed, "seed override");
    cmd->add_option("--precision", opts.precision, "f32 or f64");
    cmd->add_option("--out", opts.out_path, "output path");
    if (bench) {
      cmd->add_option("--scale", opts.scale, "network scale 1, 2 or 3");
      cmd->add_option("--format", opts.format, "report format: csv or json");
      cmd->add_option("--mode", opts.mode, "train or test");
      cmd->add_option("--reps", opts.reps, "timed repetitions (>=3)");
      cmd->add_option("--warmup", opts.warmup, "warmup passes (>=1)");
      cmd->add_option("--timeout", opts.timeout, "per-cell timeout in seconds");
    }
  };

  CLI::App* train = app.add_subcommand("train", "train a classifier from a config file");
  train->add_option("--config", opts.config_path, "JSON config")->required();
  add_common(train, false);

  CLI::App* predict = app.add_subcommand("predict", "run a saved model over an IDX image file");
  std::string model_path, images_path, labels_path;
  predict->add_option("--model", model_path, "model file")->required();
  predict->add_option("--images", images_path, "IDX image file")->required();
  predict->add_option("--labels", labels_path, "IDX label file (reports accuracy)");
  predict->add_option("--out", opts.out_path, "write predictions here instead of stdout");

  CLI::App* bench = app.add_subcommand("bench", "speed experiments");
  bench->require_subcommand(1);
  CLI::App* ladder = bench->add_subcommand("ladder", "all six variants at one batch size");
  add_common(ladder, true);
  CLI::App* sweep = bench->add_subcommand("sweep", "one variant across batch sizes");
  std::vector<int> sweep_batches{1, 50, 100, 200};
  sweep->add_option("--batches", sweep_batches, "strictly increasing batch sizes")
      ->delimiter(',');
  add_common(sweep, true);
  CLI::App* breakdown = bench->add_subcommand("breakdown", "per-component time attribution");
  add_common(breakdown, true);

  CLI::App* denoise = app.add_subcommand("denoise", "conv-only image denoiser");
  denoise->require_subcommand(1);
  CLI::App* den_train = denoise->add_subcommand("train", "train on synthesized pairs");
  den_train->add_option("--config", opts.config_path, "JSON config (optional)");
  add_common(den_train, false);
  CLI::App* den_apply = denoise->add_subcommand("apply", "denoise a PGM image");
  std::string den_model, den_in, den_out;
  den_apply->add_option("--model", den_model, "model file")->required();
  den_apply->add_option("--in", den_in, "input PGM")->required();
  den_apply->add_option("--out", den_out, "output PGM")->required();

  CLI::App* selftest = app.add_subcommand("selftest", "run the built-in oracle suite");
  (void)selftest;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand(train)) {
      const AppConfig cfg = load_config(opts.config_path);
      const Dtype prec =
          opts.precision.empty() ? cfg.train.precision : parse_precision(opts.precision);
      return prec == Dtype::f32 ? run_train<float>(cfg, opts) : run_train<double>(cfg, opts);
    }
    if (app.got_subcommand(predict)) {
      const Dtype prec = load_model(model_path).dtype;
      return prec == Dtype::f32
                 ? run_predict<float>(model_path, images_path, labels_path, opts.out_path)
                 : run_predict<double>(model_path, images_path, labels_path, opts.out_path);
    }
    if (app.got_subcommand(bench)) {
      const BenchScenario sc = scenario_from(opts);
      std::vector<BenchReport> reports;
      if (bench->got_subcommand(ladder)) {
        reports = run_ladder(sc);
      } else if (bench->got_subcommand(sweep)) {
        reports = run_sweep(sc, sweep_batches);
      } else {
        reports = {run_breakdown(sc)};
      }
      emit_output(render_reports(reports, opts.format), opts.out_path);
      return 0;
    }
    if (app.got_subcommand(denoise)) {
      if (denoise->got_subcommand(den_train)) {
        AppConfig cfg;
        if (!opts.config_path.empty()) cfg = load_config(opts.config_path);
        if (opts.batch > 0) cfg.train.batch = opts.batch;
        if (opts.seed >= 0) cfg.train.seed = static_cast<uint64_t>(opts.seed);
        if (cfg.net.layers.empty()) {
          const NetworkSpec dn = default_denoise_net();
          cfg.net.layers = dn.layers;
          cfg.net.loss = dn.loss;
          cfg.net.seed = dn.seed;
          // denoise defaults unless the config set them
          if (cfg.train.epochs == 1) cfg.train.epochs = 60;
          if (cfg.train.batch == 1) cfg.train.batch = 8;
          cfg.train.lr = cfg.train.lr == 0.01 ? 0.05 : cfg.train.lr;
          cfg.train.momentum = cfg.train.momentum == 0.0 ? 0.9 : cfg.train.momentum;
        }
        const Dtype prec =
            opts.precision.empty() ? cfg.train.precision : parse_precision(opts.precision);
        return prec == Dtype::f32 ? run_denoise_train<float>(cfg, opts.out_path)
                                  : run_denoise_train<double>(cfg, opts.out_path);
      }
      const Dtype prec = load_model(den_model).dtype;
      return prec == Dtype::f32 ? run_denoise_apply<float>(den_model, den_in, den_out)
                                : run_denoise_apply<double>(den_model, den_in, den_out);
    }
    if (app.got_subcommand(selftest)) return vcnn::run_selftest(std::cout);
    std::cerr << "no subcommand selected\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
