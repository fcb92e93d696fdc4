#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vcnn/network.hpp"

namespace vcnn {

// ---------------------------------------------------------------------------
// The six implementations. They share one contract and differ only in which
// elements run vectorized: fully connected products, convolution unrolling,
// index-map pooling, holistic feature-map patchification, and batch handling.

enum class Variant { imp1, imp2, imp3, imp4, imp5, imp6 };

struct VariantFlags {
  bool fc_vec = false;
  bool conv_vec = false;
  bool pool_vec = false;
  bool featmap_vec = false;
  bool batch_vec = false;
};

constexpr VariantFlags variant_flags(Variant v) {
  switch (v) {
    case Variant::imp1: return {true, false, false, false, false};
    case Variant::imp2: return {true, false, false, false, true};
    case Variant::imp3: return {true, true, false, false, false};
    case Variant::imp4: return {true, true, true, false, false};
    case Variant::imp5: return {true, true, true, true, false};
    case Variant::imp6: return {true, true, true, true, true};
  }
  return {};
}

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::imp1: return "imp1";
    case Variant::imp2: return "imp2";
    case Variant::imp3: return "imp3";
    case Variant::imp4: return "imp4";
    case Variant::imp5: return "imp5";
    case Variant::imp6: return "imp6";
  }
  return "?";
}

inline Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::imp1, Variant::imp2, Variant::imp3, Variant::imp4, Variant::imp5,
                    Variant::imp6})
    if (name == variant_name(v)) return v;
  throw ConfigError("unknown variant '" + name + "' (expected imp1..imp6)");
}

constexpr std::array<Variant, 6> all_variants() {
  return {Variant::imp1, Variant::imp2, Variant::imp3, Variant::imp4, Variant::imp5,
          Variant::imp6};
}

// ---------------------------------------------------------------------------
// Scalar-loop kernels: per-window arithmetic, no patch matrix, no index maps.

/// Pre-activation convolution with nested loops. Inner accumulation runs over
/// (channel, ky, kx) ascending -- the same element order the unrolled GEMM
/// uses, so both paths agree to rounding.
template <typename T>
Tensor<T> conv_loop_affine(const ConvLayer<T>& layer, const Tensor<T>& f) {
  layer.validate();
  const ConvGeometry g = layer.geometry_for(f.shape);
  const int maps = layer.out_maps();
  Tensor<T> out(g.output_shape(maps));
  const int64_t plane = static_cast<int64_t>(g.in_h) * g.in_w;
  for (int b = 0; b < g.batch; ++b)
    for (int k = 0; k < maps; ++k) {
      const T* wrow = layer.weights.data.data() + static_cast<int64_t>(k) * layer.weights.cols;
      for (int oy = 0; oy < g.out_h; ++oy)
        for (int ox = 0; ox < g.out_w; ++ox) {
          T acc = layer.bias[k];
          int64_t wi = 0;
          for (int c = 0; c < g.channels; ++c) {
            const T* cplane = f.data.data() + (static_cast<int64_t>(b) * g.channels + c) * plane;
            for (int ky = 0; ky < g.kh; ++ky) {
              const T* srow =
                  cplane + static_cast<int64_t>(oy * g.stride + ky) * g.in_w + ox * g.stride;
              for (int kx = 0; kx < g.kw; ++kx) acc += wrow[wi++] * srow[kx];
            }
          }
          out.at(oy, ox, k, b) = acc;
        }
    }
  return out;
}

/// Loop version of the conv backward. gpre is the output gradient already
/// pulled through sigma'; f is the forward input.
template <typename T>
ConvGrads<T> conv_backward_loop(const ConvLayer<T>& layer, const Tensor<T>& gpre,
                                const Tensor<T>& f) {
  const ConvGeometry g = layer.geometry_for(f.shape);
  const int maps = layer.out_maps();
  if (gpre.shape != g.output_shape(maps))
    throw ShapeError("conv_backward_loop: gradient " + gpre.shape.str() +
                     " does not match forward output");
  ConvGrads<T> grads;
  grads.weights = Matrix<T>(layer.weights.rows, layer.weights.cols);
  grads.bias.assign(maps, T{});
  grads.input = Tensor<T>(f.shape);
  const int64_t plane = static_cast<int64_t>(g.in_h) * g.in_w;
  for (int b = 0; b < g.batch; ++b)
    for (int k = 0; k < maps; ++k) {
      const T* wrow = layer.weights.data.data() + static_cast<int64_t>(k) * layer.weights.cols;
      T* dwrow = grads.weights.data.data() + static_cast<int64_t>(k) * layer.weights.cols;
      for (int oy = 0; oy < g.out_h; ++oy)
        for (int ox = 0; ox < g.out_w; ++ox) {
          const T gv = gpre.at(oy, ox, k, b);
          grads.bias[k] += gv;
          int64_t wi = 0;
          for (int c = 0; c < g.channels; ++c) {
            const int64_t coff = (static_cast<int64_t>(b) * g.channels + c) * plane;
            const T* cplane = f.data.data() + coff;
            T* dplane = grads.input.data.data() + coff;
            for (int ky = 0; ky < g.kh; ++ky) {
              const int64_t roff = static_cast<int64_t>(oy * g.stride + ky) * g.in_w + ox * g.stride;
              for (int kx = 0; kx < g.kw; ++kx) {
                dwrow[wi] += gv * cplane[roff + kx];
                dplane[roff + kx] += gv * wrow[wi];
                ++wi;
              }
            }
          }
        }
    }
  return grads;
}

/// Non-vectorized pooling: every feature map is pulled out and processed on
/// its own, one plane at a time.
template <typename T>
std::pair<Tensor<T>, ArgIndex> pool_forward_loop(const Tensor<T>& f, const PoolGeometry& g) {
  if (f.shape != Shape::hwcn(g.in_h, g.in_w, g.channels, g.batch))
    throw GeometryError("pool_forward_loop: input " + f.shape.str() + " does not match geometry");
  Tensor<T> out(g.output_shape());
  ArgIndex arg;
  if (g.mode == PoolMode::max) arg.assign(static_cast<size_t>(g.output_size()), -1);
  const int64_t plane = static_cast<int64_t>(g.in_h) * g.in_w;
  const int64_t oplane = static_cast<int64_t>(g.out_h) * g.out_w;
  for (int b = 0; b < g.batch; ++b)
    for (int c = 0; c < g.channels; ++c) {
      const int64_t ibase = (static_cast<int64_t>(b) * g.channels + c) * plane;
      const int64_t obase = (static_cast<int64_t>(b) * g.channels + c) * oplane;
      std::vector<T> in_plane(f.data.begin() + ibase, f.data.begin() + ibase + plane);
      std::vector<T> out_plane(static_cast<size_t>(oplane));
      std::vector<int64_t> arg_plane;
      if (g.mode == PoolMode::max) arg_plane.assign(static_cast<size_t>(oplane), -1);
      for (int oy = 0; oy < g.out_h; ++oy)
        for (int ox = 0; ox < g.out_w; ++ox) {
          if (g.mode == PoolMode::max) {
            T best{};
            int64_t best_i = -1;
            for (int py = 0; py < g.ph; ++py)
              for (int px = 0; px < g.pw; ++px) {
                const int64_t i =
                    static_cast<int64_t>(oy * g.stride + py) * g.in_w + ox * g.stride + px;
                if (best_i < 0 || in_plane[i] > best) {
                  best = in_plane[i];
                  best_i = i;
                }
              }
            out_plane[oy * g.out_w + ox] = best;
            arg_plane[oy * g.out_w + ox] = best_i;
          } else {
            T acc{};
            for (int py = 0; py < g.ph; ++py)
              for (int px = 0; px < g.pw; ++px)
                acc += in_plane[static_cast<int64_t>(oy * g.stride + py) * g.in_w +
                                ox * g.stride + px];
            out_plane[oy * g.out_w + ox] = acc / static_cast<T>(g.window_size());
          }
        }
      std::copy(out_plane.begin(), out_plane.end(), out.data.begin() + obase);
      if (g.mode == PoolMode::max)
        for (int64_t i = 0; i < oplane; ++i) arg[obase + i] = ibase + arg_plane[i];
    }
  return {std::move(out), std::move(arg)};
}

template <typename T>
Tensor<T> pool_backward_loop(const Tensor<T>& gpre, const PoolGeometry& g, const ArgIndex& arg,
                             PoolBackwardMode mode = PoolBackwardMode::exact) {
  if (gpre.shape != g.output_shape())
    throw GeometryError("pool_backward_loop: gradient does not match pooled extents");
  Tensor<T> grad_in(Shape::hwcn(g.in_h, g.in_w, g.channels, g.batch));
  const int64_t plane = static_cast<int64_t>(g.in_h) * g.in_w;
  const int64_t oplane = static_cast<int64_t>(g.out_h) * g.out_w;
  const T scale = mode == PoolBackwardMode::paper_nn ? T(1)
                                                     : T(1) / static_cast<T>(g.window_size());
  for (int b = 0; b < g.batch; ++b)
    for (int c = 0; c < g.channels; ++c) {
      const int64_t ibase = (static_cast<int64_t>(b) * g.channels + c) * plane;
      const int64_t obase = (static_cast<int64_t>(b) * g.channels + c) * oplane;
      for (int oy = 0; oy < g.out_h; ++oy)
        for (int ox = 0; ox < g.out_w; ++ox) {
          const T gv = gpre.data[obase + oy * g.out_w + ox];
          if (g.mode == PoolMode::max && mode == PoolBackwardMode::exact) {
            const int64_t a = arg[obase + oy * g.out_w + ox];
            if (a >= 0) grad_in.data[a] += gv;
          } else {
            for (int py = 0; py < g.ph; ++py)
              for (int px = 0; px < g.pw; ++px)
                grad_in.data[ibase + static_cast<int64_t>(oy * g.stride + py) * g.in_w +
                             ox * g.stride + px] += gv * scale;
          }
        }
    }
  return grad_in;
}

/// Multichannel patchification built the slow way: phi_c is applied to each
/// channel on its own and the per-channel blocks are stacked afterwards.
/// Produces exactly the same matrix as the holistic im2col.
template <typename T>
PatchMatrix<T> featmap_patchify_per_channel(const Tensor<T>& f, int kh, int kw, int stride) {
  ConvGeometry g(f.shape, kh, kw, stride);
  Matrix<T> combined(g.patch_len(), g.cols());
  const int64_t plane = static_cast<int64_t>(g.in_h) * g.in_w;
  const int64_t block = static_cast<int64_t>(kh) * kw * g.cols();
  for (int c = 0; c < g.channels; ++c) {
    Tensor<T> channel(Shape::hwcn(g.in_h, g.in_w, 1, g.batch));
    for (int b = 0; b < g.batch; ++b)
      std::copy_n(f.data.data() + (static_cast<int64_t>(b) * g.channels + c) * plane, plane,
                  channel.data.data() + static_cast<int64_t>(b) * plane);
    PatchMatrix<T> pc = im2col(channel, kh, kw, stride);
    std::copy(pc.mat.data.begin(), pc.mat.data.end(),
              combined.data.begin() + static_cast<int64_t>(c) * block);
  }
  return PatchMatrix<T>{std::move(combined), g};
}

// ---------------------------------------------------------------------------
// Per-component timing, matching the performance-breakdown decomposition:
// conv / pool / fully connected / other, split into forward and backward.
// Activations and loss evaluation land in "other".

enum class Component {
  conv_f = 0,
  conv_b,
  pool_f,
  pool_b,
  full_f,
  full_b,
  other_f,
  other_b
};

constexpr std::array<const char*, 8> component_names() {
  return {"conv_f", "conv_b", "pool_f", "pool_b", "full_f", "full_b", "other_f", "other_b"};
}

struct BreakdownTimer {
  std::array<double, 8> seconds{};

  void add(Component c, double s) { seconds[static_cast<int>(c)] += s; }
  double total() const {
    double t = 0;
    for (double s : seconds) t += s;
    return t;
  }
  void reset() { seconds.fill(0.0); }
};

namespace detail {
inline double now_sec() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

class Stopwatch {
 public:
  Stopwatch(BreakdownTimer* t, Component c) : timer_(t), comp_(c) {
    if (timer_) t0_ = now_sec();
  }
  ~Stopwatch() {
    if (timer_) timer_->add(comp_, now_sec() - t0_);
  }
  Stopwatch(const Stopwatch&) = delete;
  Stopwatch& operator=(const Stopwatch&) = delete;

 private:
  BreakdownTimer* timer_;
  Component comp_;
  double t0_ = 0;
};
}  // namespace detail

// ---------------------------------------------------------------------------
// Executor: binds each layer kind to the kernel its variant prescribes and
// orchestrates whole batches. Layer parameters are never mutated; all scratch
// (cached index maps, forward traces) lives here.

template <typename T>
struct LayerTrace {
  PatchMatrix<T> patch;     // conv, unrolled path
  bool has_patch = false;
  Tensor<T> input;          // conv, loop path
  bool has_input = false;
  ConvGeometry conv_geom;   // conv, either path
  PoolGeometry pool_geom;   // pool
  ArgIndex arg;             // pool (max)
  Matrix<T> in_mat;         // full
  Shape in_shape;           // full
  Tensor<T> out;            // post-activation output of the layer
};

template <typename T>
struct ForwardTrace {
  std::vector<LayerTrace<T>> layers;
  Tensor<T> output;
};

template <typename T>
struct RunResult {
  Tensor<T> output;
  T loss{};
  NetGrads<T> grads;
  bool has_grads = false;
};

template <typename T>
class Executor {
 public:
  explicit Executor(Variant v = Variant::imp6) : variant_(v), flags_(variant_flags(v)) {}

  Variant variant() const { return variant_; }
  const VariantFlags& flags() const { return flags_; }

  void set_timer(BreakdownTimer* t) { timer_ = t; }
  void set_pool_backward_mode(PoolBackwardMode m) { pool_mode_ = m; }
  PoolBackwardMode pool_backward_mode() const { return pool_mode_; }

  /// Whole-batch forward in test mode (no trace kept).
  Tensor<T> forward(const Network<T>& net, const Tensor<T>& batch) {
    return run_batch(net, batch, nullptr).output;
  }

  /// Runs a whole batch through the variant's kernels. With targets, the
  /// backward pass runs too and the result carries the batch-mean loss and
  /// the summed-and-averaged gradients.
  RunResult<T> run_batch(const Network<T>& net, const Tensor<T>& batch,
                         const Targets<T>* targets) {
    const int b = batch.n();
    if (flags_.batch_vec && flags_.conv_vec) return run_assembled(net, batch, targets);
    if (flags_.batch_vec && b > 1) return run_parallel_samples(net, batch, targets);
    return run_serial_samples(net, batch, targets);
  }

 private:
  using Sw = detail::Stopwatch;

  // -- assembled path (one patch matrix per layer for the whole batch) ------

  RunResult<T> run_assembled(const Network<T>& net, const Tensor<T>& batch,
                             const Targets<T>* targets) {
    ForwardTrace<T> trace = forward_pass(net, batch, targets != nullptr);
    RunResult<T> res;
    res.output = trace.output;
    if (!targets) return res;
    res.loss = timed_loss(net.spec.loss, trace.output, *targets);
    res.grads = backward_pass(net, trace, *targets);
    res.has_grads = true;
    return res;
  }

  // -- per-sample paths ------------------------------------------------------

  struct SampleTargets {
    Targets<T> t;
  };

  static Targets<T> slice_targets(const Targets<T>& all, int b) {
    Targets<T> t;
    if (!all.classes.empty())
      t.classes.push_back(all.classes[b]);
    else
      t.values = slice_sample(all.values, b);
    return t;
  }

  RunResult<T> run_serial_samples(const Network<T>& net, const Tensor<T>& batch,
                                  const Targets<T>* targets) {
    const int b = batch.n();
    std::vector<Tensor<T>> outs(b);
    RunResult<T> res;
    if (targets) {
      res.grads = NetGrads<T>::zeros_like(net);
      res.has_grads = true;
    }
    T loss_sum{};
    for (int s = 0; s < b; ++s) {
      Tensor<T> sample = slice_sample(batch, s);
      ForwardTrace<T> trace = forward_pass(net, sample, targets != nullptr);
      if (targets) {
        Targets<T> st = slice_targets(*targets, s);
        loss_sum += timed_loss(net.spec.loss, trace.output, st);
        NetGrads<T> g = backward_pass(net, trace, st);
        res.grads.add(g);
      }
      outs[s] = std::move(trace.output);
    }
    res.output = b == 1 ? std::move(outs[0]) : assemble_batch(outs);
    if (targets) {
      const T inv = T(1) / static_cast<T>(b);
      res.loss = loss_sum * inv;
      scale_grads(res.grads, inv);
    }
    return res;
  }

  /// The naive batch parallelization: a parallel for-loop over samples.
  /// Samples are split into contiguous chunks; each chunk accumulates its
  /// gradients in sample order and chunks are reduced in ascending order, so
  /// results do not depend on scheduling.
  RunResult<T> run_parallel_samples(const Network<T>& net, const Tensor<T>& batch,
                                    const Targets<T>* targets) {
    const int b = batch.n();
    const int chunks = std::min(configured_threads(), b);
    std::vector<Tensor<T>> outs(b);
    std::vector<NetGrads<T>> partial(targets ? chunks : 0);
    std::vector<T> loss_sum(chunks, T{});

    // The per-component timer is not thread safe; inside the parallel region
    // attribution is suppressed and the bench layer books the whole step.
    BreakdownTimer* saved = timer_;
    timer_ = nullptr;

#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < chunks; ++ci) {
      const int lo = static_cast<int>(static_cast<int64_t>(b) * ci / chunks);
      const int hi = static_cast<int>(static_cast<int64_t>(b) * (ci + 1) / chunks);
      if (targets) partial[ci] = NetGrads<T>::zeros_like(net);
      for (int s = lo; s < hi; ++s) {
        Tensor<T> sample = slice_sample(batch, s);
        ForwardTrace<T> trace = forward_pass(net, sample, targets != nullptr);
        outs[s] = trace.output;
        if (targets) {
          Targets<T> st = slice_targets(*targets, s);
          loss_sum[ci] += loss_forward(net.spec.loss, outs[s], st);
          NetGrads<T> g = backward_pass(net, trace, st);
          partial[ci].add(g);
        }
      }
    }

    timer_ = saved;

    RunResult<T> res;
    res.output = b == 1 ? std::move(outs[0]) : assemble_batch(outs);
    if (targets) {
      res.grads = std::move(partial[0]);
      for (int ci = 1; ci < chunks; ++ci) res.grads.add(partial[ci]);
      T total{};
      for (int ci = 0; ci < chunks; ++ci) total += loss_sum[ci];
      const T inv = T(1) / static_cast<T>(b);
      res.loss = total * inv;
      scale_grads(res.grads, inv);
      res.has_grads = true;
    }
    return res;
  }

  static void scale_grads(NetGrads<T>& g, T s) {
    for (auto& l : g.layers) {
      for (T& v : l.weights.data) v *= s;
      for (T& v : l.bias) v *= s;
    }
  }

  // -- single forward/backward pass over one tensor --------------------------

  ForwardTrace<T> forward_pass(const Network<T>& net, const Tensor<T>& x, bool keep) {
    ForwardTrace<T> trace;
    if (keep) trace.layers.resize(net.layers.size());
    Tensor<T> a = x;
    for (size_t i = 0; i < net.layers.size(); ++i) {
      LayerTrace<T> local;
      LayerTrace<T>& tr = keep ? trace.layers[i] : local;
      if (const auto* cl = std::get_if<ConvLayer<T>>(&net.layers[i])) {
        a = conv_layer_forward(*cl, a, tr, keep);
      } else if (const auto* pl = std::get_if<PoolLayer<T>>(&net.layers[i])) {
        a = pool_layer_forward_impl(*pl, a, tr);
      } else {
        a = full_layer_forward_impl(std::get<FullLayer<T>>(net.layers[i]), a, tr, keep);
      }
      if (keep) tr.out = a;
    }
    trace.output = std::move(a);
    return trace;
  }

  Tensor<T> conv_layer_forward(const ConvLayer<T>& cl, const Tensor<T>& a, LayerTrace<T>& tr,
                               bool keep) {
    Tensor<T> out;
    tr.conv_geom = cl.geometry_for(a.shape);
    if (flags_.conv_vec) {
      Sw sw(timer_, Component::conv_f);
      PatchMatrix<T> patch = flags_.featmap_vec
                                 ? im2col(a, cl.kh, cl.kw, cl.stride)
                                 : featmap_patchify_per_channel(a, cl.kh, cl.kw, cl.stride);
      Matrix<T> z = conv_affine(cl, patch);
      out = matrix_to_featmap(z, patch.geom);
      if (keep) {
        tr.patch = std::move(patch);
        tr.has_patch = true;
      }
    } else {
      Sw sw(timer_, Component::conv_f);
      out = conv_loop_affine(cl, a);
      if (keep) {
        tr.input = a;
        tr.has_input = true;
      }
    }
    {
      Sw sw(timer_, Component::other_f);
      apply_activation(cl.act, out.data);
    }
    return out;
  }

  Tensor<T> pool_layer_forward_impl(const PoolLayer<T>& pl, const Tensor<T>& a,
                                    LayerTrace<T>& tr) {
    const PoolGeometry g = pl.geometry_for(a.shape);
    tr.pool_geom = g;
    Tensor<T> out;
    ArgIndex arg;
    if (flags_.pool_vec) {
      const IndexMap& map = pool_map_for(g);
      Sw sw(timer_, Component::pool_f);
      auto res = pool_forward(a, g, map);
      out = std::move(res.first);
      arg = std::move(res.second);
    } else {
      Sw sw(timer_, Component::pool_f);
      auto res = pool_forward_loop(a, g);
      out = std::move(res.first);
      arg = std::move(res.second);
    }
    if (!pl.bias.empty()) {
      Sw sw(timer_, Component::pool_f);
      const int64_t plane = static_cast<int64_t>(g.out_h) * g.out_w;
      for (int b = 0; b < g.batch; ++b)
        for (int c = 0; c < g.channels; ++c) {
          T* p = out.data.data() + (static_cast<int64_t>(b) * g.channels + c) * plane;
          for (int64_t k = 0; k < plane; ++k) p[k] += pl.bias[c];
        }
    }
    {
      Sw sw(timer_, Component::other_f);
      apply_activation(pl.act, out.data);
    }
    tr.arg = std::move(arg);
    return out;
  }

  Tensor<T> full_layer_forward_impl(const FullLayer<T>& fl, const Tensor<T>& a, LayerTrace<T>& tr,
                                    bool keep) {
    fl.validate();
    const int64_t per = static_cast<int64_t>(a.h()) * a.w() * a.c();
    if (per != fl.weights.cols)
      throw ShapeError("full layer expects " + std::to_string(fl.weights.cols) +
                       " inputs, got " + std::to_string(per) + " from " + a.shape.str());
    Tensor<T> out;
    {
      Sw sw(timer_, Component::full_f);
      Matrix<T> in = flatten_to_rows(a);
      Matrix<T> z = matmul_transB(in, fl.weights);
      for (int64_t b = 0; b < z.rows; ++b) {
        T* row = z.data.data() + b * z.cols;
        for (int64_t o = 0; o < z.cols; ++o) row[o] += fl.bias[o];
      }
      out = Tensor<T>(Shape::hwcn(1, 1, fl.out_units(), a.n()), std::move(z.data));
      if (keep) {
        tr.in_mat = std::move(in);
        tr.in_shape = a.shape;
      }
    }
    {
      Sw sw(timer_, Component::other_f);
      apply_activation(fl.act, out.data);
    }
    return out;
  }

  T timed_loss(LossKind kind, const Tensor<T>& pred, const Targets<T>& t) {
    Sw sw(timer_, Component::other_f);
    return loss_forward(kind, pred, t);
  }

  NetGrads<T> backward_pass(const Network<T>& net, const ForwardTrace<T>& trace,
                            const Targets<T>& targets) {
    NetGrads<T> grads;
    grads.layers.resize(net.layers.size());
    Tensor<T> grad;
    {
      Sw sw(timer_, Component::other_b);
      grad = loss_backward(net.spec.loss, trace.output, targets);
    }
    for (size_t ri = net.layers.size(); ri-- > 0;) {
      const LayerTrace<T>& tr = trace.layers[ri];
      if (const auto* cl = std::get_if<ConvLayer<T>>(&net.layers[ri])) {
        {
          Sw sw(timer_, Component::other_b);
          apply_activation_grad(cl->act, tr.out.data, grad.data);
        }
        Sw sw(timer_, Component::conv_b);
        ConvGrads<T> g = tr.has_patch
                             ? conv_backward_core(*cl, grad, tr.patch, col2im_map_for(tr.conv_geom))
                             : conv_backward_loop(*cl, grad, tr.input);
        grads.layers[ri].weights = std::move(g.weights);
        grads.layers[ri].bias = std::move(g.bias);
        grad = std::move(g.input);
      } else if (const auto* pl = std::get_if<PoolLayer<T>>(&net.layers[ri])) {
        {
          Sw sw(timer_, Component::other_b);
          apply_activation_grad(pl->act, tr.out.data, grad.data);
        }
        Sw sw(timer_, Component::pool_b);
        if (flags_.pool_vec) {
          PoolGrads<T> g =
              pool_backward_core(*pl, grad, tr.pool_geom, tr.arg, pool_map_for(tr.pool_geom),
                                 pool_mode_);
          grads.layers[ri].bias = std::move(g.bias);
          grad = std::move(g.input);
        } else {
          if (!pl->bias.empty()) {
            grads.layers[ri].bias.assign(pl->bias.size(), T{});
            const PoolGeometry& g2 = tr.pool_geom;
            const int64_t plane = static_cast<int64_t>(g2.out_h) * g2.out_w;
            for (int b = 0; b < g2.batch; ++b)
              for (int c = 0; c < g2.channels; ++c) {
                const T* p = grad.data.data() + (static_cast<int64_t>(b) * g2.channels + c) * plane;
                T acc{};
                for (int64_t k = 0; k < plane; ++k) acc += p[k];
                grads.layers[ri].bias[c] += acc;
              }
          }
          grad = pool_backward_loop(grad, tr.pool_geom, tr.arg, pool_mode_);
        }
      } else {
        const auto& fl = std::get<FullLayer<T>>(net.layers[ri]);
        Matrix<T> g(tr.in_mat.rows, fl.out_units(), grad.data);
        {
          Sw sw(timer_, Component::other_b);
          apply_activation_grad(fl.act, tr.out.data, g.data);
        }
        Sw sw(timer_, Component::full_b);
        FullGrads<T> fg = full_backward_core(fl, g, tr.in_mat, tr.in_shape);
        grads.layers[ri].weights = std::move(fg.weights);
        grads.layers[ri].bias = std::move(fg.bias);
        grad = std::move(fg.input);
      }
    }
    return grads;
  }

  // -- cached index maps ------------------------------------------------------

  const IndexMap& col2im_map_for(const ConvGeometry& g) {
    for (auto& e : conv_maps_)
      if (e.first == g) return e.second;
    conv_maps_.emplace_back(g, build_col2im_map(g));
    return conv_maps_.back().second;
  }

  const IndexMap& pool_map_for(const PoolGeometry& g) {
    for (auto& e : pool_maps_)
      if (e.first == g) return e.second;
    pool_maps_.emplace_back(g, build_pool_map(g));
    return pool_maps_.back().second;
  }

  Variant variant_;
  VariantFlags flags_;
  PoolBackwardMode pool_mode_ = PoolBackwardMode::exact;
  BreakdownTimer* timer_ = nullptr;
  std::vector<std::pair<ConvGeometry, IndexMap>> conv_maps_;
  std::vector<std::pair<PoolGeometry, IndexMap>> pool_maps_;
};

}  // namespace vcnn
