#pragma once

// Test-side oracles. These are written directly against the layer equations
// (plain nested loops over tensors) and stay independent of the library's
// unrolled/GEMM implementation paths they check.

#include <cmath>
#include <vector>

#include "vcnn/network.hpp"
#include "vcnn/variants.hpp"

namespace vcnn::test {

inline Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(s);
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

inline double rel_err(double a, double b) {
  const double scale = std::max(std::fabs(a), std::fabs(b));
  if (scale < 1e-14) return 0.0;  // both effectively zero
  return std::fabs(a - b) / scale;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

inline double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i]));
  return m;
}

/// Direct valid convolution: out(y,x,k,b) = sigma(b_k + sum_{c,ky,kx}
/// w_k(c,ky,kx) * f(y*s+ky, x*s+kx, c, b)). Weight rows use the library's
/// flattening order (channel blocks, row-major patches) so parameters are
/// shared, but the computation never builds a patch matrix.
inline Tensor<double> brute_conv(const ConvLayer<double>& layer, const Tensor<double>& f) {
  const int oh = (f.h() - layer.kh) / layer.stride + 1;
  const int ow = (f.w() - layer.kw) / layer.stride + 1;
  const int maps = layer.out_maps();
  Tensor<double> out(Shape::hwcn(oh, ow, maps, f.n()));
  for (int b = 0; b < f.n(); ++b)
    for (int k = 0; k < maps; ++k)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          double acc = layer.bias[k];
          for (int c = 0; c < f.c(); ++c)
            for (int ky = 0; ky < layer.kh; ++ky)
              for (int kx = 0; kx < layer.kw; ++kx) {
                const double w =
                    layer.weights(k, (static_cast<int64_t>(c) * layer.kh + ky) * layer.kw + kx);
                acc += w * f.at(y * layer.stride + ky, x * layer.stride + kx, c, b);
              }
          out.at(y, x, k, b) = activate(layer.act, acc);
        }
  return out;
}

/// Direct per-window pooling.
inline Tensor<double> brute_pool(const Tensor<double>& f, int ph, int pw, int stride,
                                 PoolMode mode) {
  const int oh = (f.h() - ph) / stride + 1;
  const int ow = (f.w() - pw) / stride + 1;
  Tensor<double> out(Shape::hwcn(oh, ow, f.c(), f.n()));
  for (int b = 0; b < f.n(); ++b)
    for (int c = 0; c < f.c(); ++c)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          if (mode == PoolMode::max) {
            double best = f.at(y * stride, x * stride, c, b);
            for (int py = 0; py < ph; ++py)
              for (int px = 0; px < pw; ++px)
                best = std::max(best, f.at(y * stride + py, x * stride + px, c, b));
            out.at(y, x, c, b) = best;
          } else {
            double acc = 0;
            for (int py = 0; py < ph; ++py)
              for (int px = 0; px < pw; ++px) acc += f.at(y * stride + py, x * stride + px, c, b);
            out.at(y, x, c, b) = acc / (ph * pw);
          }
        }
  return out;
}

// ---------------------------------------------------------------------------
// Finite differences. Central differences on the loss as a function of any
// parameter or input element.

struct FdReport {
  double max_rel = 0;
  int checked = 0;
};

/// Loss of a network as a pure function of its current parameters and input.
inline double net_loss(const Network<double>& net, const Tensor<double>& x,
                       const Targets<double>& t) {
  Executor<double> exec(Variant::imp6);
  return loss_forward(net.spec.loss, exec.forward(net, x), t);
}

/// Central-difference check of d(loss)/d(theta) for every parameter in the
/// network plus the input, against the gradients the executor reports.
inline FdReport fd_check(Network<double>& net, const Tensor<double>& x, const Targets<double>& t,
                         double h = 1e-5) {
  Executor<double> exec(Variant::imp6);
  RunResult<double> res = exec.run_batch(net, x, &t);
  FdReport rep;
  auto probe = [&](double* p, double analytic) {
    const double keep = *p;
    *p = keep + h;
    const double lp = net_loss(net, x, t);
    *p = keep - h;
    const double lm = net_loss(net, x, t);
    *p = keep;
    const double numeric = (lp - lm) / (2 * h);
    const double denom = std::max({std::fabs(numeric), std::fabs(analytic), 1e-6});
    rep.max_rel = std::max(rep.max_rel, std::fabs(numeric - analytic) / denom);
    ++rep.checked;
  };
  for (size_t li = 0; li < net.layers.size(); ++li) {
    auto& g = res.grads.layers[li];
    if (auto* cl = std::get_if<ConvLayer<double>>(&net.layers[li])) {
      for (size_t k = 0; k < cl->weights.data.size(); ++k)
        probe(&cl->weights.data[k], g.weights.data[k]);
      for (size_t k = 0; k < cl->bias.size(); ++k) probe(&cl->bias[k], g.bias[k]);
    } else if (auto* pl = std::get_if<PoolLayer<double>>(&net.layers[li])) {
      for (size_t k = 0; k < pl->bias.size(); ++k) probe(&pl->bias[k], g.bias[k]);
    } else {
      auto& fl = std::get<FullLayer<double>>(net.layers[li]);
      for (size_t k = 0; k < fl.weights.data.size(); ++k)
        probe(&fl.weights.data[k], g.weights.data[k]);
      for (size_t k = 0; k < fl.bias.size(); ++k) probe(&fl.bias[k], g.bias[k]);
    }
  }
  return rep;
}

/// Central differences are only valid away from kinks: relu pre-activations
/// near 0 and near-tied max-pool windows both invalidate the numeric side.
/// Walks the net layer by layer and reports whether every decision point
/// clears `gap`.
inline bool fd_safe(const Network<double>& net, const Tensor<double>& x, double gap = 1e-3) {
  Tensor<double> a = x;
  for (const auto& layer : net.layers) {
    if (const auto* cl = std::get_if<ConvLayer<double>>(&layer)) {
      ConvLayer<double> pre = *cl;
      pre.act = Activation::identity;
      Tensor<double> z = conv_forward(pre, a).first;
      if (cl->act == Activation::relu)
        for (double v : z.data)
          if (std::fabs(v) < gap) return false;
      apply_activation(cl->act, z.data);
      a = std::move(z);
    } else if (const auto* pl = std::get_if<PoolLayer<double>>(&layer)) {
      const PoolGeometry g = pl->geometry_for(a.shape);
      if (g.mode == PoolMode::max) {
        // top-two gap per window
        for (int b = 0; b < g.batch; ++b)
          for (int c = 0; c < g.channels; ++c)
            for (int oy = 0; oy < g.out_h; ++oy)
              for (int ox = 0; ox < g.out_w; ++ox) {
                double top = -1e300, second = -1e300;
                for (int py = 0; py < g.ph; ++py)
                  for (int px = 0; px < g.pw; ++px) {
                    const double v = a.at(oy * g.stride + py, ox * g.stride + px, c, b);
                    if (v > top) {
                      second = top;
                      top = v;
                    } else if (v > second) {
                      second = v;
                    }
                  }
                if (g.window_size() > 1 && top - second < gap) return false;
              }
      }
      PoolLayer<double> pre = *pl;
      pre.act = Activation::identity;
      Tensor<double> z = pool_layer_forward(pre, a).first;
      if (pl->act == Activation::relu)
        for (double v : z.data)
          if (std::fabs(v) < gap) return false;
      apply_activation(pl->act, z.data);
      a = std::move(z);
    } else {
      const auto& fl = std::get<FullLayer<double>>(layer);
      FullLayer<double> pre = fl;
      pre.act = Activation::identity;
      Tensor<double> z = full_forward(pre, a).first;
      if (fl.act == Activation::relu)
        for (double v : z.data)
          if (std::fabs(v) < gap) return false;
      apply_activation(fl.act, z.data);
      a = std::move(z);
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Random small networks for cross-variant and batch-equivalence tests.

struct RandomNet {
  NetworkSpec spec;
  int batch = 1;
};

/// Random conv/pool/full stacks over small inputs. Activations are drawn from
/// the full set; geometry is kept valid by construction.
inline RandomNet random_net_spec(Rng& rng, bool smooth_only = false) {
  RandomNet rn;
  const int h = 6 + rng.uniform_int(5);
  const int w = 6 + rng.uniform_int(5);
  const int c = 1 + rng.uniform_int(3);
  rn.spec.input = Shape{h, w, c};
  rn.spec.seed = rng.next_u64() & 0xffff;
  rn.batch = 1 + rng.uniform_int(4);

  auto pick_act = [&]() {
    if (smooth_only) {
      const Activation acts[] = {Activation::identity, Activation::sigmoid, Activation::tanh};
      return acts[rng.uniform_int(3)];
    }
    const Activation acts[] = {Activation::identity, Activation::relu, Activation::sigmoid,
                               Activation::tanh};
    return acts[rng.uniform_int(4)];
  };

  int cur_h = h, cur_w = w;
  const int conv_blocks = 1 + rng.uniform_int(2);
  for (int i = 0; i < conv_blocks && cur_h >= 3 && cur_w >= 3; ++i) {
    ConvSpec cs;
    cs.maps = 1 + rng.uniform_int(4);
    cs.kh = 2 + rng.uniform_int(2);
    cs.kw = 2 + rng.uniform_int(2);
    cs.stride = 1 + rng.uniform_int(2);
    if (cs.kh > cur_h) cs.kh = cur_h;
    if (cs.kw > cur_w) cs.kw = cur_w;
    cs.act = pick_act();
    rn.spec.layers.push_back(cs);
    cur_h = (cur_h - cs.kh) / cs.stride + 1;
    cur_w = (cur_w - cs.kw) / cs.stride + 1;
    if (cur_h >= 2 && cur_w >= 2 && rng.uniform_int(2)) {
      PoolSpec ps;
      ps.ph = ps.pw = 2;
      ps.stride = 1 + rng.uniform_int(2);  // stride 1 = overlapping
      ps.mode = rng.uniform_int(2) ? PoolMode::max : PoolMode::avg;
      ps.bias = rng.uniform_int(3) == 0;
      ps.act = rng.uniform_int(3) == 0 ? pick_act() : Activation::identity;
      rn.spec.layers.push_back(ps);
      cur_h = (cur_h - ps.ph) / ps.stride + 1;
      cur_w = (cur_w - ps.pw) / ps.stride + 1;
    }
  }
  rn.spec.layers.push_back(FullSpec{2 + rng.uniform_int(5), pick_act()});
  if (rng.uniform_int(2)) rn.spec.layers.push_back(FullSpec{2 + rng.uniform_int(4), pick_act()});

  if (rng.uniform_int(4) == 0) {
    rn.spec.loss = LossKind::mse;
    // regression head: identity output works best
    std::get<FullSpec>(rn.spec.layers.back()).act = Activation::identity;
  } else {
    rn.spec.loss = LossKind::softmax_ce;
  }
  return rn;
}

inline Targets<double> random_targets(const NetworkSpec& spec, int batch, Rng& rng) {
  if (spec.loss == LossKind::softmax_ce) {
    const int units = static_cast<int>(spec.output_shape().numel());
    std::vector<int> cls(batch);
    for (int& v : cls) v = rng.uniform_int(units);
    return Targets<double>::from_classes(cls);
  }
  const Shape out = spec.output_shape();
  Tensor<double> v(Shape::hwcn(out.h(), out.w(), out.c(), batch));
  for (double& x : v.data) x = rng.uniform(-1, 1);
  return Targets<double>::from_values(v);
}

}  // namespace vcnn::test
