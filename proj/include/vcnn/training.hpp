#pragma once

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "vcnn/variants.hpp"

namespace vcnn {

template <typename T>
struct TrainStats {
  std::vector<T> epoch_loss;  // batch-mean loss averaged over the epoch
};

namespace detail {
template <typename T>
inline bool all_finite(const std::vector<T>& v) {
  for (T x : v)
    if (!std::isfinite(static_cast<double>(x))) return false;
  return true;
}
}  // namespace detail

/// Identifies the first layer whose activations went non-finite; used to turn
/// a NaN loss into an actionable error.
template <typename T>
std::string locate_nonfinite(const Network<T>& net, Executor<T>& exec, const Tensor<T>& batch) {
  Tensor<T> a = batch;
  for (size_t i = 0; i < net.layers.size(); ++i) {
    Executor<T> probe(exec.variant());
    Network<T> sub;
    sub.spec = net.spec;
    sub.layers.assign(net.layers.begin(), net.layers.begin() + i + 1);
    a = probe.forward(sub, batch);
    if (!detail::all_finite(a.data)) {
      const char* kind = std::holds_alternative<ConvLayer<T>>(net.layers[i]) ? "conv"
                         : std::holds_alternative<PoolLayer<T>>(net.layers[i]) ? "pool"
                                                                               : "full";
      return "layer " + std::to_string(i) + " (" + kind + ")";
    }
  }
  return "loss head";
}

/// Mini-batch SGD over a fixed dataset. Sample order is reshuffled every
/// epoch with a seeded permutation; gradient accumulation order is fixed, so
/// a (seed, config) pair reproduces training exactly.
template <typename T>
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg, Variant variant = Variant::imp6)
      : cfg_(cfg), exec_(variant) {
    cfg_.validate();
  }

  Executor<T>& executor() { return exec_; }

  TrainStats<T> fit(Network<T>& net, const Tensor<T>& images, const Targets<T>& targets) {
    const int count = images.n();
    if (count < 1) throw TrainingError("fit: empty dataset");
    TrainStats<T> stats;
    Rng shuffle_rng(cfg_.seed);
    std::vector<int> order(count);
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      shuffle_rng.shuffle(order.begin(), order.end());
      T loss_sum{};
      int batches = 0;
      for (int start = 0; start < count; start += cfg_.batch) {
        const int take = std::min(cfg_.batch, count - start);
        std::vector<int> ids(order.begin() + start, order.begin() + start + take);
        Tensor<T> batch = gather_batch(images, ids);
        Targets<T> bt = gather_targets(targets, ids);
        RunResult<T> res = exec_.run_batch(net, batch, &bt);
        if (!std::isfinite(static_cast<double>(res.loss)))
          throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batches) + "; first non-finite output at " +
                              locate_nonfinite(net, exec_, batch));
        sgd_step(net, res.grads, cfg_, vel_);
        loss_sum += res.loss;
        ++batches;
      }
      stats.epoch_loss.push_back(loss_sum / static_cast<T>(batches));
    }
    return stats;
  }

  /// Forward-only pass over the whole set in evaluation batches; returns the
  /// fraction of samples whose argmax matches the label.
  double evaluate_accuracy(const Network<T>& net, const Tensor<T>& images,
                           const std::vector<int>& labels) {
    const int count = images.n();
    if (count == 0) return 0.0;
    int correct = 0;
    for (int start = 0; start < count; start += cfg_.batch) {
      const int take = std::min(cfg_.batch, count - start);
      std::vector<int> ids(take);
      std::iota(ids.begin(), ids.end(), start);
      Tensor<T> batch = gather_batch(images, ids);
      std::vector<int> pred = predict_classes(exec_.forward(net, batch));
      for (int i = 0; i < take; ++i)
        if (pred[i] == labels[start + i]) ++correct;
    }
    return static_cast<double>(correct) / count;
  }

 private:
  static Targets<T> gather_targets(const Targets<T>& all, const std::vector<int>& ids) {
    Targets<T> t;
    if (!all.classes.empty()) {
      t.classes.reserve(ids.size());
      for (int id : ids) t.classes.push_back(all.classes[id]);
    } else {
      t.values = gather_batch(all.values, ids);
    }
    return t;
  }

  TrainConfig cfg_;
  Executor<T> exec_;
  Velocity<T> vel_;
};

}  // namespace vcnn
