#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "vcnn/tensor.hpp"

namespace vcnn {

/// Geometry of a valid-region convolution unroll. No padding: the kernel must
/// fit inside the image and only fully covered positions produce output.
struct ConvGeometry {
  int in_h = 1, in_w = 1, channels = 1, batch = 1;
  int kh = 1, kw = 1, stride = 1;
  int out_h = 1, out_w = 1;

  ConvGeometry() = default;
  ConvGeometry(const Shape& input, int kh_, int kw_, int stride_)
      : in_h(input.h()), in_w(input.w()), channels(input.c()), batch(input.n()),
        kh(kh_), kw(kw_), stride(stride_) {
    if (kh < 1 || kw < 1) throw GeometryError("kernel extents must be >= 1");
    if (stride < 1) throw GeometryError("stride must be >= 1");
    if (kh > in_h || kw > in_w)
      throw GeometryError("kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                          " exceeds input " + std::to_string(in_h) + "x" + std::to_string(in_w));
    out_h = (in_h - kh) / stride + 1;
    out_w = (in_w - kw) / stride + 1;
  }

  int64_t patch_len() const { return static_cast<int64_t>(kh) * kw * channels; }
  int64_t cols() const { return static_cast<int64_t>(out_h) * out_w * batch; }
  int64_t input_size() const { return static_cast<int64_t>(in_h) * in_w * channels * batch; }

  Shape input_shape() const { return Shape::hwcn(in_h, in_w, channels, batch); }
  Shape output_shape(int out_maps) const { return Shape::hwcn(out_h, out_w, out_maps, batch); }

  bool operator==(const ConvGeometry& o) const {
    return in_h == o.in_h && in_w == o.in_w && channels == o.channels && batch == o.batch &&
           kh == o.kh && kw == o.kw && stride == o.stride;
  }
};

/// The unrolled form of a feature map: one flattened receptive field per
/// column. Rows are channel-major blocks of kh*kw values, row-major inside
/// each patch; columns are row-major output positions with the batch axis
/// outermost.
template <typename T>
struct PatchMatrix {
  Matrix<T> mat;
  ConvGeometry geom;
};

template <typename T>
PatchMatrix<T> im2col(const Tensor<T>& f, int kh, int kw, int stride) {
  ConvGeometry g(f.shape, kh, kw, stride);
  Matrix<T> m(g.patch_len(), g.cols());
  const int64_t plane = static_cast<int64_t>(g.in_h) * g.in_w;
  const int64_t ohw = static_cast<int64_t>(g.out_h) * g.out_w;
  const T* src = f.data.data();
  T* dst = m.data.data();
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        const int64_t row = (static_cast<int64_t>(c) * g.kh + ky) * g.kw + kx;
        T* drow = dst + row * g.cols();
        for (int b = 0; b < g.batch; ++b) {
          const T* cplane = src + (static_cast<int64_t>(b) * g.channels + c) * plane;
          for (int oy = 0; oy < g.out_h; ++oy) {
            const T* srow = cplane + static_cast<int64_t>(oy * stride + ky) * g.in_w + kx;
            T* d = drow + b * ohw + static_cast<int64_t>(oy) * g.out_w;
            for (int ox = 0; ox < g.out_w; ++ox) d[ox] = srow[ox * stride];
          }
        }
      }
    }
  }
  return PatchMatrix<T>{std::move(m), g};
}

/// Index map sending each patch-matrix cell back to the input element it was
/// copied from. Sources enumerate the patch matrix exactly once in row-major
/// order; targets repeat wherever receptive fields overlap.
inline IndexMap build_col2im_map(const ConvGeometry& g) {
  const int64_t pairs = g.patch_len() * g.cols();
  std::vector<int64_t> src(pairs), tgt(pairs);
  const int64_t plane = static_cast<int64_t>(g.in_h) * g.in_w;
  const int64_t ohw = static_cast<int64_t>(g.out_h) * g.out_w;
  int64_t k = 0;
  for (int c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kh; ++ky)
      for (int kx = 0; kx < g.kw; ++kx) {
        const int64_t row = (static_cast<int64_t>(c) * g.kh + ky) * g.kw + kx;
        for (int b = 0; b < g.batch; ++b) {
          const int64_t cbase = (static_cast<int64_t>(b) * g.channels + c) * plane;
          for (int oy = 0; oy < g.out_h; ++oy)
            for (int ox = 0; ox < g.out_w; ++ox) {
              src[k] = row * g.cols() + b * ohw + static_cast<int64_t>(oy) * g.out_w + ox;
              tgt[k] = cbase + static_cast<int64_t>(oy * g.stride + ky) * g.in_w +
                       (static_cast<int64_t>(ox) * g.stride + kx);
              ++k;
            }
        }
      }
  return IndexMap(std::move(src), std::move(tgt), pairs, g.input_size());
}

/// Exact adjoint of im2col: every input position accumulates the gradient
/// entries of all patch cells it fed. Runs through accumulate_by_index with
/// the sum reducer.
template <typename T>
Tensor<T> col2im(const Matrix<T>& grad, const ConvGeometry& g, const IndexMap& map) {
  if (grad.rows != g.patch_len() || grad.cols != g.cols())
    throw GeometryError("col2im: gradient " + grad.dims_str() + " does not match geometry " +
                        std::to_string(g.patch_len()) + "x" + std::to_string(g.cols()));
  if (map.source_len != g.patch_len() * g.cols() || map.target_len != g.input_size())
    throw GeometryError("col2im: index map does not match geometry");
  std::vector<T> acc = accumulate_by_index(grad.data, map, Reducer::sum);
  return Tensor<T>(g.input_shape(), std::move(acc));
}

template <typename T>
Tensor<T> col2im(const PatchMatrix<T>& grad) {
  return col2im(grad.mat, grad.geom, build_col2im_map(grad.geom));
}

enum class PoolMode { max, avg };

inline const char* pool_mode_name(PoolMode m) { return m == PoolMode::max ? "max" : "avg"; }

/// Window geometry for pooling, applied independently per channel and sample.
/// Overlapping windows (stride < window) are allowed; every window must lie
/// fully inside the input.
struct PoolGeometry {
  int in_h = 1, in_w = 1, channels = 1, batch = 1;
  int ph = 1, pw = 1, stride = 1;
  PoolMode mode = PoolMode::max;
  int out_h = 1, out_w = 1;

  PoolGeometry() = default;
  PoolGeometry(const Shape& input, int ph_, int pw_, int stride_, PoolMode mode_)
      : in_h(input.h()), in_w(input.w()), channels(input.c()), batch(input.n()),
        ph(ph_), pw(pw_), stride(stride_), mode(mode_) {
    if (ph < 1 || pw < 1) throw GeometryError("pooling window extents must be >= 1");
    if (stride < 1) throw GeometryError("pooling stride must be >= 1");
    if (ph > in_h || pw > in_w)
      throw GeometryError("pooling window " + std::to_string(ph) + "x" + std::to_string(pw) +
                          " exceeds input " + std::to_string(in_h) + "x" + std::to_string(in_w));
    out_h = (in_h - ph) / stride + 1;
    out_w = (in_w - pw) / stride + 1;
  }

  int64_t window_size() const { return static_cast<int64_t>(ph) * pw; }
  int64_t input_size() const { return static_cast<int64_t>(in_h) * in_w * channels * batch; }
  int64_t output_size() const { return static_cast<int64_t>(out_h) * out_w * channels * batch; }
  Shape output_shape() const { return Shape::hwcn(out_h, out_w, channels, batch); }

  bool operator==(const PoolGeometry& o) const {
    return in_h == o.in_h && in_w == o.in_w && channels == o.channels && batch == o.batch &&
           ph == o.ph && pw == o.pw && stride == o.stride && mode == o.mode;
  }
};

/// One (source,target) pair per (input element, covering window). For
/// non-overlapping pooling every source appears once; overlapping windows
/// duplicate their shared elements, one entry per window.
inline IndexMap build_pool_map(const PoolGeometry& g) {
  const int64_t pairs =
      static_cast<int64_t>(g.out_h) * g.out_w * g.window_size() * g.channels * g.batch;
  std::vector<int64_t> src(pairs), tgt(pairs);
  const int64_t plane = static_cast<int64_t>(g.in_h) * g.in_w;
  const int64_t oplane = static_cast<int64_t>(g.out_h) * g.out_w;
  int64_t k = 0;
  for (int b = 0; b < g.batch; ++b)
    for (int c = 0; c < g.channels; ++c) {
      const int64_t ibase = (static_cast<int64_t>(b) * g.channels + c) * plane;
      const int64_t obase = (static_cast<int64_t>(b) * g.channels + c) * oplane;
      for (int oy = 0; oy < g.out_h; ++oy)
        for (int ox = 0; ox < g.out_w; ++ox) {
          const int64_t t = obase + static_cast<int64_t>(oy) * g.out_w + ox;
          for (int py = 0; py < g.ph; ++py)
            for (int px = 0; px < g.pw; ++px) {
              src[k] = ibase + static_cast<int64_t>(oy * g.stride + py) * g.in_w +
                       (static_cast<int64_t>(ox) * g.stride + px);
              tgt[k] = t;
              ++k;
            }
        }
    }
  return IndexMap(std::move(src), std::move(tgt), g.input_size(), g.output_size());
}

/// For max pooling, records the input linear index chosen per window
/// (lowest index wins ties); empty for average pooling.
using ArgIndex = std::vector<int64_t>;

template <typename T>
std::pair<Tensor<T>, ArgIndex> pool_forward(const Tensor<T>& f, const PoolGeometry& g,
                                            const IndexMap& map) {
  if (f.shape != Shape::hwcn(g.in_h, g.in_w, g.channels, g.batch))
    throw GeometryError("pool_forward: input " + f.shape.str() + " does not match geometry");
  ArgIndex arg;
  std::vector<T> out;
  if (g.mode == PoolMode::max) {
    out = accumulate_max_arg(f.data, map, arg);
  } else {
    out = accumulate_by_index(f.data, map, Reducer::mean);
  }
  return {Tensor<T>(g.output_shape(), std::move(out)), std::move(arg)};
}

template <typename T>
std::pair<Tensor<T>, ArgIndex> pool_forward(const Tensor<T>& f, const PoolGeometry& g) {
  return pool_forward(f, g, build_pool_map(g));
}

enum class PoolBackwardMode { exact, paper_nn };

/// Exact mode: average pooling scatters grad/window_size uniformly, max
/// pooling routes each window's gradient to its recorded argmax. paper_nn
/// mode upsamples the gradient nearest-neighbor style, every covered input
/// cell receiving the window's gradient unscaled; it is an approximation and
/// is excluded from gradient checks.
template <typename T>
Tensor<T> pool_backward(const Tensor<T>& grad_out, const PoolGeometry& g, const ArgIndex& arg,
                        const IndexMap& map, PoolBackwardMode mode = PoolBackwardMode::exact) {
  if (grad_out.shape != g.output_shape())
    throw GeometryError("pool_backward: gradient " + grad_out.shape.str() +
                        " does not match pooled extents " + g.output_shape().str());
  Tensor<T> grad_in(Shape::hwcn(g.in_h, g.in_w, g.channels, g.batch));
  if (mode == PoolBackwardMode::paper_nn) {
    const int64_t s = map.pairs();
    for (int64_t k = 0; k < s; ++k)
      grad_in.data[map.source[k]] += grad_out.data[map.target[k]];
    return grad_in;
  }
  if (g.mode == PoolMode::max) {
    if (static_cast<int64_t>(arg.size()) != g.output_size())
      throw GeometryError("pool_backward: arg index does not match pooled extents");
    for (int64_t t = 0; t < g.output_size(); ++t)
      if (arg[t] >= 0) grad_in.data[arg[t]] += grad_out.data[t];
  } else {
    const T scale = T(1) / static_cast<T>(g.window_size());
    const int64_t s = map.pairs();
    for (int64_t k = 0; k < s; ++k)
      grad_in.data[map.source[k]] += grad_out.data[map.target[k]] * scale;
  }
  return grad_in;
}

template <typename T>
Tensor<T> pool_backward(const Tensor<T>& grad_out, const PoolGeometry& g, const ArgIndex& arg,
                        PoolBackwardMode mode = PoolBackwardMode::exact) {
  return pool_backward(grad_out, g, arg, build_pool_map(g), mode);
}

}  // namespace vcnn
