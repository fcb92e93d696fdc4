#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "vcnn/layers.hpp"

namespace vcnn {

struct ConvSpec {
  int maps = 1;
  int kh = 3, kw = 3;
  int stride = 1;
  Activation act = Activation::relu;
};

struct PoolSpec {
  int ph = 2, pw = 2;
  int stride = 2;
  PoolMode mode = PoolMode::max;
  bool bias = false;
  Activation act = Activation::identity;
};

struct FullSpec {
  int units = 1;
  Activation act = Activation::relu;
};

using LayerSpec = std::variant<ConvSpec, PoolSpec, FullSpec>;

/// Declarative architecture: ordered layer specs over a single-sample input
/// shape. The chain is validated at build time, before any parameter is
/// allocated.
struct NetworkSpec {
  Shape input{1, 1, 1};  // h, w, c of one sample
  std::vector<LayerSpec> layers;
  LossKind loss = LossKind::softmax_ce;
  uint64_t seed = 0;

  /// Per-layer single-sample output shapes; throws ShapeError/GeometryError
  /// on a broken chain.
  std::vector<Shape> chain() const {
    std::vector<Shape> shapes;
    Shape cur = Shape::hwcn(input.h(), input.w(), input.c(), 1);
    for (size_t i = 0; i < layers.size(); ++i) {
      try {
        if (const auto* cs = std::get_if<ConvSpec>(&layers[i])) {
          ConvGeometry g(cur, cs->kh, cs->kw, cs->stride);
          cur = g.output_shape(cs->maps);
        } else if (const auto* ps = std::get_if<PoolSpec>(&layers[i])) {
          PoolGeometry g(cur, ps->ph, ps->pw, ps->stride, ps->mode);
          cur = g.output_shape();
        } else {
          const auto& fs = std::get<FullSpec>(layers[i]);
          if (fs.units < 1) throw ShapeError("full layer needs units >= 1");
          cur = Shape::hwcn(1, 1, fs.units, 1);
        }
      } catch (const std::runtime_error& e) {
        throw ShapeError("layer " + std::to_string(i) + ": " + e.what());
      }
      shapes.push_back(cur);
    }
    return shapes;
  }

  Shape output_shape() const {
    auto shapes = chain();
    return shapes.empty() ? input : shapes.back();
  }
};

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.0;  // classical momentum, [0,1)
  int batch = 1;
  int epochs = 1;
  Dtype precision = Dtype::f64;
  uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0)) throw ConfigError("learning rate must be positive");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0,1)");
    if (batch < 1) throw ConfigError("batch size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
  }
};

template <typename T>
struct Network {
  using Layer = std::variant<ConvLayer<T>, PoolLayer<T>, FullLayer<T>>;

  NetworkSpec spec;
  std::vector<Layer> layers;
};

/// Instantiates a network from its spec with seeded initialization. Builds
/// are deterministic: the same spec (including seed) always produces the
/// same parameters.
template <typename T>
Network<T> build_network(const NetworkSpec& spec) {
  std::vector<Shape> shapes = spec.chain();  // validates the chain
  Network<T> net;
  net.spec = spec;
  Rng rng(spec.seed);
  Shape cur = Shape::hwcn(spec.input.h(), spec.input.w(), spec.input.c(), 1);
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    if (const auto* cs = std::get_if<ConvSpec>(&spec.layers[i])) {
      net.layers.push_back(
          make_conv_layer<T>(cur.c(), cs->maps, cs->kh, cs->kw, cs->stride, cs->act, rng));
    } else if (const auto* ps = std::get_if<PoolSpec>(&spec.layers[i])) {
      PoolLayer<T> pl;
      pl.ph = ps->ph;
      pl.pw = ps->pw;
      pl.stride = ps->stride;
      pl.mode = ps->mode;
      pl.act = ps->act;
      if (ps->bias) pl.bias.assign(cur.c(), T{});
      net.layers.push_back(std::move(pl));
    } else {
      const auto& fs = std::get<FullSpec>(spec.layers[i]);
      const int in_units = cur.h() * cur.w() * cur.c();
      net.layers.push_back(make_full_layer<T>(in_units, fs.units, fs.act, rng));
    }
    cur = shapes[i];
  }
  return net;
}

/// Stacks same-shaped samples along the batch axis. Per-sample blocks are
/// contiguous, so the batched im2col is the horizontal concatenation of the
/// per-sample patch matrices.
template <typename T>
Tensor<T> assemble_batch(const std::vector<Tensor<T>>& samples) {
  if (samples.empty()) throw ShapeError("assemble_batch: no samples");
  const Shape base = samples[0].shape;
  if (base.n() != 1) throw ShapeError("assemble_batch: samples must be single (batch extent 1)");
  int total = 0;
  for (const auto& s : samples) {
    if (s.shape != base)
      throw ShapeError("assemble_batch: sample shape " + s.shape.str() + " differs from " +
                       base.str());
    total += 1;
  }
  Tensor<T> out(Shape::hwcn(base.h(), base.w(), base.c(), total));
  const int64_t per = base.numel();
  for (int b = 0; b < total; ++b)
    std::copy_n(samples[b].data.data(), per, out.data.data() + b * per);
  return out;
}

/// Extracts sample b as a batch-1 tensor.
template <typename T>
Tensor<T> slice_sample(const Tensor<T>& batch, int b) {
  if (b < 0 || b >= batch.n()) throw BoundsError("slice_sample: index out of range");
  const int64_t per = batch.size() / batch.n();
  Tensor<T> out(Shape::hwcn(batch.h(), batch.w(), batch.c(), 1));
  std::copy_n(batch.data.data() + b * per, per, out.data.data());
  return out;
}

/// Gathers samples by index into a fresh batch, preserving index order.
template <typename T>
Tensor<T> gather_batch(const Tensor<T>& all, const std::vector<int>& ids) {
  if (ids.empty()) throw ShapeError("gather_batch: empty index list");
  const int64_t per = all.size() / all.n();
  Tensor<T> out(Shape::hwcn(all.h(), all.w(), all.c(), static_cast<int>(ids.size())));
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= all.n()) throw BoundsError("gather_batch: index out of range");
    std::copy_n(all.data.data() + static_cast<int64_t>(ids[i]) * per, per,
                out.data.data() + static_cast<int64_t>(i) * per);
  }
  return out;
}

/// Argmax over the per-sample output block; ties go to the lowest index.
template <typename T>
std::vector<int> predict_classes(const Tensor<T>& out) {
  const int64_t batch = out.n();
  const int64_t units = out.size() / batch;
  std::vector<int> cls(batch);
  for (int64_t b = 0; b < batch; ++b) {
    const T* p = out.data.data() + b * units;
    int best = 0;
    for (int64_t u = 1; u < units; ++u)
      if (p[u] > p[best]) best = static_cast<int>(u);
    cls[b] = best;
  }
  return cls;
}

// ---------------------------------------------------------------------------
// Gradients and the SGD update.

template <typename T>
struct LayerGrads {
  Matrix<T> weights;    // empty for pooling layers
  std::vector<T> bias;  // empty when the layer has no bias
};

template <typename T>
struct NetGrads {
  std::vector<LayerGrads<T>> layers;

  static NetGrads zeros_like(const Network<T>& net) {
    NetGrads g;
    g.layers.resize(net.layers.size());
    for (size_t i = 0; i < net.layers.size(); ++i) {
      if (const auto* cl = std::get_if<ConvLayer<T>>(&net.layers[i])) {
        g.layers[i].weights = Matrix<T>(cl->weights.rows, cl->weights.cols);
        g.layers[i].bias.assign(cl->bias.size(), T{});
      } else if (const auto* pl = std::get_if<PoolLayer<T>>(&net.layers[i])) {
        g.layers[i].bias.assign(pl->bias.size(), T{});
      } else {
        const auto& fl = std::get<FullLayer<T>>(net.layers[i]);
        g.layers[i].weights = Matrix<T>(fl.weights.rows, fl.weights.cols);
        g.layers[i].bias.assign(fl.bias.size(), T{});
      }
    }
    return g;
  }

  void add(const NetGrads& o) {
    for (size_t i = 0; i < layers.size(); ++i) {
      auto& a = layers[i];
      const auto& b = o.layers[i];
      for (size_t k = 0; k < a.weights.data.size(); ++k) a.weights.data[k] += b.weights.data[k];
      for (size_t k = 0; k < a.bias.size(); ++k) a.bias[k] += b.bias[k];
    }
  }
};

/// Momentum buffers mirroring the parameter layout.
template <typename T>
struct Velocity {
  NetGrads<T> v;
  bool initialized = false;
};

/// w <- w - lr * (momentum * v + g); plain SGD when momentum is 0.
template <typename T>
void sgd_step(Network<T>& net, const NetGrads<T>& grads, const TrainConfig& cfg,
              Velocity<T>& vel) {
  cfg.validate();
  if (!vel.initialized) {
    vel.v = NetGrads<T>::zeros_like(net);
    vel.initialized = true;
  }
  const T lr = static_cast<T>(cfg.lr);
  const T mom = static_cast<T>(cfg.momentum);
  for (size_t i = 0; i < net.layers.size(); ++i) {
    auto& vg = vel.v.layers[i];
    const auto& g = grads.layers[i];
    auto update = [&](std::vector<T>& w, std::vector<T>& v, const std::vector<T>& gr) {
      for (size_t k = 0; k < w.size(); ++k) {
        v[k] = mom * v[k] + gr[k];
        w[k] -= lr * v[k];
      }
    };
    if (auto* cl = std::get_if<ConvLayer<T>>(&net.layers[i])) {
      update(cl->weights.data, vg.weights.data, g.weights.data);
      update(cl->bias, vg.bias, g.bias);
    } else if (auto* pl = std::get_if<PoolLayer<T>>(&net.layers[i])) {
      if (!pl->bias.empty()) update(pl->bias, vg.bias, g.bias);
    } else {
      auto& fl = std::get<FullLayer<T>>(net.layers[i]);
      update(fl.weights.data, vg.weights.data, g.weights.data);
      update(fl.bias, vg.bias, g.bias);
    }
  }
}

}  // namespace vcnn
