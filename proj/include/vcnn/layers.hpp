#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vcnn/vectorize.hpp"

namespace vcnn {

enum class Activation { identity, relu, sigmoid, tanh };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

template <typename T>
inline T activate(Activation a, T x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::relu: return x > T(0) ? x : T(0);
    case Activation::sigmoid: return T(1) / (T(1) + std::exp(-x));
    case Activation::tanh: return std::tanh(x);
  }
  return x;
}

/// Derivative computed from the activation's own output. relu'(0) is 0 by
/// convention. All four supported nonlinearities admit this form, which lets
/// the backward pass cache only post-activation values.
template <typename T>
inline T activation_grad_from_output(Activation a, T y) {
  switch (a) {
    case Activation::identity: return T(1);
    case Activation::relu: return y > T(0) ? T(1) : T(0);
    case Activation::sigmoid: return y * (T(1) - y);
    case Activation::tanh: return T(1) - y * y;
  }
  return T(1);
}

template <typename T>
void apply_activation(Activation a, std::vector<T>& data) {
  if (a == Activation::identity) return;
  for (T& v : data) v = activate(a, v);
}

/// grad *= sigma'(out), elementwise.
template <typename T>
void apply_activation_grad(Activation a, const std::vector<T>& out, std::vector<T>& grad) {
  if (a == Activation::identity) return;
  for (size_t i = 0; i < grad.size(); ++i) grad[i] *= activation_grad_from_output(a, out[i]);
}

// ---------------------------------------------------------------------------
// Convolution layer: out = sigma(W * phi_c(f) + b), W row i = flattened kernel i.

template <typename T>
struct ConvLayer {
  Matrix<T> weights;    // K x (kh*kw*C)
  std::vector<T> bias;  // K
  int in_channels = 1;
  int kh = 1, kw = 1, stride = 1;
  Activation act = Activation::identity;

  int out_maps() const { return static_cast<int>(weights.rows); }

  void validate() const {
    if (weights.cols != static_cast<int64_t>(kh) * kw * in_channels)
      throw ShapeError("conv layer: weight row length " + std::to_string(weights.cols) +
                       " != kernel size " + std::to_string(int64_t(kh) * kw * in_channels));
    if (static_cast<int64_t>(bias.size()) != weights.rows)
      throw ShapeError("conv layer: bias length does not match kernel count");
  }

  ConvGeometry geometry_for(const Shape& input) const {
    if (input.c() != in_channels)
      throw ShapeError("conv layer expects " + std::to_string(in_channels) + " channels, got " +
                       std::to_string(input.c()) + " in " + input.str());
    return ConvGeometry(input, kh, kw, stride);
  }
};

template <typename T>
struct ConvCache {
  PatchMatrix<T> patch;
  Tensor<T> out;  // post-activation, used for sigma'
};

/// GEMM half of the conv forward: Z = W*phi + b broadcast per row.
template <typename T>
Matrix<T> conv_affine(const ConvLayer<T>& layer, const PatchMatrix<T>& patch) {
  Matrix<T> z = matmul(layer.weights, patch.mat);
  const int64_t p = z.cols;
  for (int64_t k = 0; k < z.rows; ++k) {
    T* row = z.data.data() + k * p;
    const T b = layer.bias[k];
    for (int64_t j = 0; j < p; ++j) row[j] += b;
  }
  return z;
}

/// K x (out_h*out_w*B) matrix -> (out_h, out_w, K, B) tensor. Row k holds map
/// k for every sample, batch outermost along the row.
template <typename T>
Tensor<T> matrix_to_featmap(const Matrix<T>& z, const ConvGeometry& g) {
  const int maps = static_cast<int>(z.rows);
  const int64_t ohw = static_cast<int64_t>(g.out_h) * g.out_w;
  Tensor<T> out(g.output_shape(maps));
  for (int k = 0; k < maps; ++k)
    for (int b = 0; b < g.batch; ++b)
      std::copy_n(z.data.data() + k * z.cols + b * ohw, ohw,
                  out.data.data() + (static_cast<int64_t>(b) * maps + k) * ohw);
  return out;
}

/// Inverse rearrangement of matrix_to_featmap, used to bring gradients back
/// to the matrix form the GEMMs expect.
template <typename T>
Matrix<T> featmap_to_matrix(const Tensor<T>& t) {
  const int maps = t.c();
  const int64_t ohw = static_cast<int64_t>(t.h()) * t.w();
  Matrix<T> z(maps, ohw * t.n());
  for (int k = 0; k < maps; ++k)
    for (int b = 0; b < t.n(); ++b)
      std::copy_n(t.data.data() + (static_cast<int64_t>(b) * maps + k) * ohw, ohw,
                  z.data.data() + k * z.cols + b * ohw);
  return z;
}

template <typename T>
std::pair<Tensor<T>, ConvCache<T>> conv_forward(const ConvLayer<T>& layer, const Tensor<T>& f) {
  layer.validate();
  ConvGeometry g = layer.geometry_for(f.shape);
  PatchMatrix<T> patch = im2col(f, layer.kh, layer.kw, layer.stride);
  Matrix<T> z = conv_affine(layer, patch);
  Tensor<T> out = matrix_to_featmap(z, g);
  apply_activation(layer.act, out.data);
  ConvCache<T> cache{std::move(patch), out};
  return {std::move(out), std::move(cache)};
}

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Matrix<T> weights;
  std::vector<T> bias;
};

/// Pre-activation half of the conv backward: gpre is the output gradient
/// already pulled through sigma'. grad_w = G*phi^T, grad_b = row sums of G,
/// grad_input = col2im(W^T*G).
template <typename T>
ConvGrads<T> conv_backward_core(const ConvLayer<T>& layer, const Tensor<T>& gpre,
                                const PatchMatrix<T>& patch, const IndexMap& col2im_map) {
  const ConvGeometry& g = patch.geom;
  if (gpre.shape != g.output_shape(layer.out_maps()))
    throw ShapeError("conv_backward: gradient " + gpre.shape.str() +
                     " does not match forward output " + g.output_shape(layer.out_maps()).str());
  Matrix<T> gm = featmap_to_matrix(gpre);

  ConvGrads<T> grads;
  grads.weights = matmul_transB(gm, patch.mat);
  grads.bias.assign(layer.out_maps(), T{});
  for (int64_t k = 0; k < gm.rows; ++k) {
    T acc{};
    const T* row = gm.data.data() + k * gm.cols;
    for (int64_t j = 0; j < gm.cols; ++j) acc += row[j];
    grads.bias[k] = acc;
  }
  grads.input = col2im(matmul(transpose(layer.weights), gm), g, col2im_map);
  return grads;
}

template <typename T>
ConvGrads<T> conv_backward(const ConvLayer<T>& layer, const Tensor<T>& grad_out,
                           const ConvCache<T>& cache, const IndexMap& col2im_map) {
  Tensor<T> gpre = grad_out;
  apply_activation_grad(layer.act, cache.out.data, gpre.data);
  return conv_backward_core(layer, gpre, cache.patch, col2im_map);
}

template <typename T>
ConvGrads<T> conv_backward(const ConvLayer<T>& layer, const Tensor<T>& grad_out,
                           const ConvCache<T>& cache) {
  return conv_backward(layer, grad_out, cache, build_col2im_map(cache.patch.geom));
}

// ---------------------------------------------------------------------------
// Fully connected layer: one dense matrix-matrix product per batch.

template <typename T>
struct FullLayer {
  Matrix<T> weights;    // out x in
  std::vector<T> bias;  // out
  Activation act = Activation::identity;

  int in_units() const { return static_cast<int>(weights.cols); }
  int out_units() const { return static_cast<int>(weights.rows); }

  void validate() const {
    if (static_cast<int64_t>(bias.size()) != weights.rows)
      throw ShapeError("full layer: bias length does not match output count");
  }
};

template <typename T>
struct FullCache {
  Matrix<T> in;   // B x in, one row per sample
  Shape in_shape;
  Tensor<T> out;  // post-activation
};

/// The per-sample feature block is contiguous in the tensor layout, so the
/// batch flattens to a B x in matrix without data movement.
template <typename T>
Matrix<T> flatten_to_rows(const Tensor<T>& t) {
  const int64_t per = static_cast<int64_t>(t.h()) * t.w() * t.c();
  return Matrix<T>(t.n(), per, t.data);
}

template <typename T>
std::pair<Tensor<T>, FullCache<T>> full_forward(const FullLayer<T>& layer, const Tensor<T>& x) {
  layer.validate();
  const int64_t per = static_cast<int64_t>(x.h()) * x.w() * x.c();
  if (per != layer.weights.cols)
    throw ShapeError("full layer expects " + std::to_string(layer.weights.cols) +
                     " inputs, got " + std::to_string(per) + " from " + x.shape.str());
  Matrix<T> in = flatten_to_rows(x);
  Matrix<T> z = matmul_transB(in, layer.weights);  // B x out
  for (int64_t b = 0; b < z.rows; ++b) {
    T* row = z.data.data() + b * z.cols;
    for (int64_t o = 0; o < z.cols; ++o) row[o] += layer.bias[o];
  }
  Tensor<T> out(Shape::hwcn(1, 1, layer.out_units(), x.n()), std::move(z.data));
  apply_activation(layer.act, out.data);
  FullCache<T> cache{std::move(in), x.shape, out};
  return {std::move(out), std::move(cache)};
}

template <typename T>
struct FullGrads {
  Tensor<T> input;
  Matrix<T> weights;
  std::vector<T> bias;
};

template <typename T>
FullGrads<T> full_backward_core(const FullLayer<T>& layer, const Matrix<T>& gpre,
                                const Matrix<T>& in, const Shape& in_shape) {
  FullGrads<T> grads;
  grads.weights = matmul(transpose(gpre), in);  // out x in
  grads.bias.assign(layer.out_units(), T{});
  for (int64_t b = 0; b < gpre.rows; ++b)
    for (int64_t o = 0; o < gpre.cols; ++o) grads.bias[o] += gpre.data[b * gpre.cols + o];
  Matrix<T> gin = matmul(gpre, layer.weights);  // B x in
  grads.input = Tensor<T>(in_shape, std::move(gin.data));
  return grads;
}

template <typename T>
FullGrads<T> full_backward(const FullLayer<T>& layer, const Tensor<T>& grad_out,
                           const FullCache<T>& cache) {
  if (grad_out.shape != cache.out.shape)
    throw ShapeError("full_backward: gradient " + grad_out.shape.str() +
                     " does not match forward output " + cache.out.shape.str());
  Matrix<T> g(cache.in.rows, layer.out_units(), grad_out.data);
  apply_activation_grad(layer.act, cache.out.data, g.data);
  return full_backward_core(layer, g, cache.in, cache.in_shape);
}

// ---------------------------------------------------------------------------
// Pooling layer: out = sigma(phi_p(f) + b). Bias and nonlinearity default off.

template <typename T>
struct PoolLayer {
  int ph = 2, pw = 2, stride = 2;
  PoolMode mode = PoolMode::max;
  std::vector<T> bias;  // per channel; empty = no bias
  Activation act = Activation::identity;

  PoolGeometry geometry_for(const Shape& input) const {
    if (!bias.empty() && static_cast<int>(bias.size()) != input.c())
      throw ShapeError("pool layer: bias length " + std::to_string(bias.size()) +
                       " != channel count " + std::to_string(input.c()));
    return PoolGeometry(input, ph, pw, stride, mode);
  }
};

template <typename T>
struct PoolCache {
  PoolGeometry geom;
  ArgIndex arg;
  Tensor<T> out;  // post-activation
};

template <typename T>
std::pair<Tensor<T>, PoolCache<T>> pool_layer_forward(const PoolLayer<T>& layer,
                                                      const Tensor<T>& f, const IndexMap& map) {
  PoolGeometry g = layer.geometry_for(f.shape);
  auto [out, arg] = pool_forward(f, g, map);
  if (!layer.bias.empty()) {
    const int64_t plane = static_cast<int64_t>(g.out_h) * g.out_w;
    for (int b = 0; b < g.batch; ++b)
      for (int c = 0; c < g.channels; ++c) {
        T* p = out.data.data() + (static_cast<int64_t>(b) * g.channels + c) * plane;
        for (int64_t i = 0; i < plane; ++i) p[i] += layer.bias[c];
      }
  }
  apply_activation(layer.act, out.data);
  PoolCache<T> cache{g, std::move(arg), out};
  return {std::move(out), std::move(cache)};
}

template <typename T>
std::pair<Tensor<T>, PoolCache<T>> pool_layer_forward(const PoolLayer<T>& layer,
                                                      const Tensor<T>& f) {
  return pool_layer_forward(layer, f, build_pool_map(layer.geometry_for(f.shape)));
}

template <typename T>
struct PoolGrads {
  Tensor<T> input;
  std::vector<T> bias;  // empty when the layer has no bias
};

template <typename T>
PoolGrads<T> pool_backward_core(const PoolLayer<T>& layer, const Tensor<T>& gpre,
                                const PoolGeometry& geo, const ArgIndex& arg,
                                const IndexMap& map,
                                PoolBackwardMode mode = PoolBackwardMode::exact) {
  PoolGrads<T> grads;
  if (!layer.bias.empty()) {
    grads.bias.assign(layer.bias.size(), T{});
    const int64_t plane = static_cast<int64_t>(geo.out_h) * geo.out_w;
    for (int b = 0; b < geo.batch; ++b)
      for (int c = 0; c < geo.channels; ++c) {
        const T* p = gpre.data.data() + (static_cast<int64_t>(b) * geo.channels + c) * plane;
        T acc{};
        for (int64_t i = 0; i < plane; ++i) acc += p[i];
        grads.bias[c] += acc;
      }
  }
  grads.input = pool_backward(gpre, geo, arg, map, mode);
  return grads;
}

template <typename T>
PoolGrads<T> pool_layer_backward(const PoolLayer<T>& layer, const Tensor<T>& grad_out,
                                 const PoolCache<T>& cache, const IndexMap& map,
                                 PoolBackwardMode mode = PoolBackwardMode::exact) {
  Tensor<T> g = grad_out;
  apply_activation_grad(layer.act, cache.out.data, g.data);
  return pool_backward_core(layer, g, cache.geom, cache.arg, map, mode);
}

template <typename T>
PoolGrads<T> pool_layer_backward(const PoolLayer<T>& layer, const Tensor<T>& grad_out,
                                 const PoolCache<T>& cache,
                                 PoolBackwardMode mode = PoolBackwardMode::exact) {
  return pool_layer_backward(layer, grad_out, cache, build_pool_map(cache.geom), mode);
}

// ---------------------------------------------------------------------------
// Loss heads.

enum class LossKind { softmax_ce, mse };

inline const char* loss_name(LossKind k) {
  return k == LossKind::softmax_ce ? "softmax_ce" : "mse";
}

/// Training targets: class indices for the cross-entropy head, a value tensor
/// for the regression head.
template <typename T>
struct Targets {
  std::vector<int> classes;
  Tensor<T> values;

  static Targets from_classes(std::vector<int> cls) {
    Targets t;
    t.classes = std::move(cls);
    return t;
  }
  static Targets from_values(Tensor<T> v) {
    Targets t;
    t.values = std::move(v);
    return t;
  }
};

/// Softmax is folded into the cross-entropy head; the log-sum-exp runs with
/// max subtraction.
template <typename T>
T loss_forward(LossKind kind, const Tensor<T>& pred, const Targets<T>& target) {
  const int64_t batch = pred.n();
  const int64_t units = pred.size() / batch;
  if (kind == LossKind::softmax_ce) {
    if (static_cast<int64_t>(target.classes.size()) != batch)
      throw ShapeError("loss: " + std::to_string(target.classes.size()) + " class targets for " +
                       std::to_string(batch) + " samples");
    T total{};
    for (int64_t b = 0; b < batch; ++b) {
      const int cls = target.classes[b];
      if (cls < 0 || cls >= units)
        throw BoundsError("loss: class index " + std::to_string(cls) + " out of range [0," +
                          std::to_string(units) + ")");
      const T* logits = pred.data.data() + b * units;
      T m = logits[0];
      for (int64_t u = 1; u < units; ++u) m = std::max(m, logits[u]);
      T lse{};
      for (int64_t u = 0; u < units; ++u) lse += std::exp(logits[u] - m);
      total += m + std::log(lse) - logits[cls];
    }
    return total / static_cast<T>(batch);
  }
  if (pred.shape != target.values.shape)
    throw ShapeError("loss: prediction " + pred.shape.str() + " vs target " +
                     target.values.shape.str());
  T total{};
  for (int64_t i = 0; i < pred.size(); ++i) {
    const T d = pred.data[i] - target.values.data[i];
    total += d * d;
  }
  return total / static_cast<T>(pred.size());
}

template <typename T>
Tensor<T> loss_backward(LossKind kind, const Tensor<T>& pred, const Targets<T>& target) {
  Tensor<T> grad(pred.shape);
  const int64_t batch = pred.n();
  const int64_t units = pred.size() / batch;
  if (kind == LossKind::softmax_ce) {
    if (static_cast<int64_t>(target.classes.size()) != batch)
      throw ShapeError("loss: target count does not match batch");
    const T inv_b = T(1) / static_cast<T>(batch);
    for (int64_t b = 0; b < batch; ++b) {
      const int cls = target.classes[b];
      if (cls < 0 || cls >= units)
        throw BoundsError("loss: class index " + std::to_string(cls) + " out of range [0," +
                          std::to_string(units) + ")");
      const T* logits = pred.data.data() + b * units;
      T* g = grad.data.data() + b * units;
      T m = logits[0];
      for (int64_t u = 1; u < units; ++u) m = std::max(m, logits[u]);
      T lse{};
      for (int64_t u = 0; u < units; ++u) lse += std::exp(logits[u] - m);
      for (int64_t u = 0; u < units; ++u) g[u] = std::exp(logits[u] - m) / lse * inv_b;
      g[cls] -= inv_b;
    }
    return grad;
  }
  if (pred.shape != target.values.shape)
    throw ShapeError("loss: prediction " + pred.shape.str() + " vs target " +
                     target.values.shape.str());
  const T scale = T(2) / static_cast<T>(pred.size());
  for (int64_t i = 0; i < pred.size(); ++i)
    grad.data[i] = scale * (pred.data[i] - target.values.data[i]);
  return grad;
}

// ---------------------------------------------------------------------------
// Initialization: uniform on [-a, a] with a = sqrt(6/(fan_in+fan_out)).

template <typename T>
ConvLayer<T> make_conv_layer(int in_channels, int maps, int kh, int kw, int stride,
                             Activation act, Rng& rng) {
  ConvLayer<T> layer;
  layer.in_channels = in_channels;
  layer.kh = kh;
  layer.kw = kw;
  layer.stride = stride;
  layer.act = act;
  const int64_t patch = static_cast<int64_t>(kh) * kw * in_channels;
  const double fan_in = static_cast<double>(patch);
  const double fan_out = static_cast<double>(kh) * kw * maps;
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  layer.weights = Matrix<T>(maps, patch);
  for (T& v : layer.weights.data) v = static_cast<T>(rng.uniform(-a, a));
  layer.bias.assign(maps, T{});
  return layer;
}

template <typename T>
FullLayer<T> make_full_layer(int in_units, int out_units, Activation act, Rng& rng) {
  FullLayer<T> layer;
  layer.act = act;
  const double a = std::sqrt(6.0 / (in_units + out_units));
  layer.weights = Matrix<T>(out_units, in_units);
  for (T& v : layer.weights.data) v = static_cast<T>(rng.uniform(-a, a));
  layer.bias.assign(out_units, T{});
  return layer;
}

}  // namespace vcnn
