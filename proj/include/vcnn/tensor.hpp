#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vcnn/common.hpp"

namespace vcnn {

/// Up to four extents in semantic order (height, width, channels, batch).
/// The linear layout is fixed: x runs fastest, then y, then channel, with the
/// batch axis outermost. Axes beyond ndim read as extent 1.
struct Shape {
  int ndim = 1;
  std::array<int, 4> d{1, 1, 1, 1};

  Shape() = default;
  Shape(std::initializer_list<int> dims) {
    if (dims.size() < 1 || dims.size() > 4)
      throw ShapeError("shape must have 1 to 4 axes, got " + std::to_string(dims.size()));
    ndim = static_cast<int>(dims.size());
    int i = 0;
    for (int e : dims) {
      if (e < 1) throw ShapeError("shape extent must be >= 1, got " + std::to_string(e));
      d[i++] = e;
    }
    for (; i < 4; ++i) d[i] = 1;
  }

  static Shape hwcn(int h, int w, int c, int n) { return Shape{h, w, c, n}; }

  int h() const { return d[0]; }
  int w() const { return d[1]; }
  int c() const { return d[2]; }
  int n() const { return d[3]; }

  int64_t numel() const {
    return static_cast<int64_t>(d[0]) * d[1] * d[2] * d[3];
  }

  bool operator==(const Shape& o) const { return d == o.d; }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::ostringstream os;
    for (int i = 0; i < ndim; ++i) os << (i ? "x" : "") << d[i];
    return os.str();
  }
};

/// Dense real tensor. Holds feature maps, kernels and biases alike.
template <typename T>
struct Tensor {
  static constexpr Dtype dtype = dtype_of<T>();

  Shape shape;
  std::vector<T> data;

  Tensor() : shape{1}, data(1, T{}) {}
  explicit Tensor(Shape s) : shape(s), data(static_cast<size_t>(s.numel()), T{}) {}
  Tensor(Shape s, std::vector<T> d) : shape(s), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != shape.numel())
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape.str());
  }

  int h() const { return shape.h(); }
  int w() const { return shape.w(); }
  int c() const { return shape.c(); }
  int n() const { return shape.n(); }
  int64_t size() const { return shape.numel(); }

  int64_t index(int y, int x, int ch = 0, int b = 0) const {
    return ((static_cast<int64_t>(b) * shape.c() + ch) * shape.h() + y) * shape.w() + x;
  }
  T& at(int y, int x, int ch = 0, int b = 0) { return data[index(y, x, ch, b)]; }
  const T& at(int y, int x, int ch = 0, int b = 0) const { return data[index(y, x, ch, b)]; }
};

/// Same data under a new shape; element order is untouched (this is not a
/// transpose).
template <typename T>
Tensor<T> reshape(const Tensor<T>& t, Shape s) {
  if (s.numel() != t.shape.numel())
    throw ShapeError("cannot reshape " + t.shape.str() + " (" + std::to_string(t.shape.numel()) +
                     " elements) to " + s.str());
  return Tensor<T>(s, t.data);
}

template <typename T, typename Fn>
Tensor<T> map_elementwise(const Tensor<T>& t, Fn fn) {
  Tensor<T> out(t.shape);
  const int64_t size = t.size();
  for (int64_t i = 0; i < size; ++i) out.data[i] = fn(t.data[i]);
  return out;
}

/// Dense row-major matrix.
template <typename T>
struct Matrix {
  int64_t rows = 0, cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(int64_t r, int64_t c)
      : rows(r), cols(c), data(static_cast<size_t>(r * c), T{}) {
    if (r < 0 || c < 0) throw ShapeError("matrix extents must be non-negative");
  }
  Matrix(int64_t r, int64_t c, std::vector<T> d) : rows(r), cols(c), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != rows * cols)
      throw ShapeError("matrix data length does not match " + dims_str());
  }

  T& operator()(int64_t i, int64_t j) { return data[i * cols + j]; }
  const T& operator()(int64_t i, int64_t j) const { return data[i * cols + j]; }

  std::string dims_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
  }
};

/// C = A*B. Every output element is summed in ascending-k order, so results
/// are identical for any thread count.
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols != b.rows)
    throw ShapeError("matmul shape mismatch: " + a.dims_str() + " * " + b.dims_str());
  Matrix<T> c(a.rows, b.cols);
  const int64_t m = a.rows, kk = a.cols, n = b.cols;
  const T* pa = a.data.data();
  const T* pb = b.data.data();
  T* pc = c.data.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    T* crow = pc + i * n;
    for (int64_t k = 0; k < kk; ++k) {
      const T aik = pa[i * kk + k];
      const T* brow = pb + k * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

/// C = A*B^T. Rows of both operands are read contiguously; summation order is
/// ascending k as in matmul.
template <typename T>
Matrix<T> matmul_transB(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols != b.cols)
    throw ShapeError("matmul_transB shape mismatch: " + a.dims_str() + " * " + b.dims_str() + "^T");
  Matrix<T> c(a.rows, b.rows);
  const int64_t m = a.rows, kk = a.cols, n = b.rows;
  const T* pa = a.data.data();
  const T* pb = b.data.data();
  T* pc = c.data.data();
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = pa + i * kk;
    for (int64_t j = 0; j < n; ++j) {
      const T* brow = pb + j * kk;
      T acc{};
      for (int64_t k = 0; k < kk; ++k) acc += arow[k] * brow[k];
      pc[i * n + j] = acc;
    }
  }
  return c;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> t(a.cols, a.rows);
  for (int64_t i = 0; i < a.rows; ++i)
    for (int64_t j = 0; j < a.cols; ++j) t.data[j * a.rows + i] = a.data[i * a.cols + j];
  return t;
}

enum class Reducer { sum, max, mean };

/// Precomputed index pairs driving the scatter/gather primitives: entry k
/// sends source[k] to bucket target[k]. Many-to-one for pooling and col2im,
/// one-to-many when read in reverse for unpooling.
struct IndexMap {
  std::vector<int64_t> source;
  std::vector<int64_t> target;
  int64_t source_len = 0;
  int64_t target_len = 0;

  IndexMap() = default;
  IndexMap(std::vector<int64_t> src, std::vector<int64_t> tgt, int64_t src_len, int64_t tgt_len)
      : source(std::move(src)), target(std::move(tgt)), source_len(src_len), target_len(tgt_len) {
    if (source.size() != target.size())
      throw BoundsError("index map: source/target length mismatch");
    if (src_len < 0 || tgt_len < 1) throw BoundsError("index map: invalid domain lengths");
    for (size_t k = 0; k < source.size(); ++k) {
      if (source[k] < 0 || source[k] >= source_len)
        throw BoundsError("index map: source index " + std::to_string(source[k]) +
                          " out of range [0," + std::to_string(source_len) + ")");
      if (target[k] < 0 || target[k] >= target_len)
        throw BoundsError("index map: target index " + std::to_string(target[k]) +
                          " out of range [0," + std::to_string(target_len) + ")");
    }
  }

  int64_t pairs() const { return static_cast<int64_t>(source.size()); }

  /// O(S log S) duplicate-pair check; builders guarantee uniqueness, tests
  /// verify it here.
  void check_pairs_unique() const {
    std::vector<std::pair<int64_t, int64_t>> p(source.size());
    for (size_t k = 0; k < source.size(); ++k) p[k] = {source[k], target[k]};
    std::sort(p.begin(), p.end());
    if (std::adjacent_find(p.begin(), p.end()) != p.end())
      throw BoundsError("index map: duplicate (source,target) pair");
  }
};

/// out[t] = reducer over {values[s] : (s,t) in map}. Pairs are consumed in
/// construction order, which fixes the floating-point summation order. Empty
/// buckets yield 0 for every reducer (the max sentinel never escapes: the
/// pooling builders produce no empty buckets).
template <typename T>
std::vector<T> accumulate_by_index(const std::vector<T>& values, const IndexMap& map,
                                   Reducer reducer) {
  if (static_cast<int64_t>(values.size()) != map.source_len)
    throw BoundsError("accumulate_by_index: values length " + std::to_string(values.size()) +
                      " does not match declared source domain " + std::to_string(map.source_len));
  std::vector<T> out(static_cast<size_t>(map.target_len), T{});
  const int64_t s = map.pairs();
  switch (reducer) {
    case Reducer::sum:
      for (int64_t k = 0; k < s; ++k) out[map.target[k]] += values[map.source[k]];
      break;
    case Reducer::mean: {
      std::vector<int64_t> count(static_cast<size_t>(map.target_len), 0);
      for (int64_t k = 0; k < s; ++k) {
        out[map.target[k]] += values[map.source[k]];
        ++count[map.target[k]];
      }
      for (int64_t t = 0; t < map.target_len; ++t)
        if (count[t] > 0) out[t] /= static_cast<T>(count[t]);
      break;
    }
    case Reducer::max: {
      std::vector<uint8_t> filled(static_cast<size_t>(map.target_len), 0);
      for (int64_t k = 0; k < s; ++k) {
        const int64_t t = map.target[k];
        const T v = values[map.source[k]];
        if (!filled[t] || v > out[t]) {
          out[t] = v;
          filled[t] = 1;
        }
      }
      for (int64_t t = 0; t < map.target_len; ++t)
        if (!filled[t]) out[t] = T{};
      break;
    }
  }
  return out;
}

/// Max reduction that also records which source produced each bucket value.
/// Ties break to the lowest source index regardless of pair order; empty
/// buckets get value 0 and argument -1.
template <typename T>
std::vector<T> accumulate_max_arg(const std::vector<T>& values, const IndexMap& map,
                                  std::vector<int64_t>& arg_out) {
  if (static_cast<int64_t>(values.size()) != map.source_len)
    throw BoundsError("accumulate_max_arg: values length does not match source domain");
  std::vector<T> out(static_cast<size_t>(map.target_len), T{});
  arg_out.assign(static_cast<size_t>(map.target_len), -1);
  const int64_t s = map.pairs();
  for (int64_t k = 0; k < s; ++k) {
    const int64_t t = map.target[k];
    const int64_t src = map.source[k];
    const T v = values[src];
    if (arg_out[t] < 0 || v > out[t] || (v == out[t] && src < arg_out[t])) {
      out[t] = v;
      arg_out[t] = src;
    }
  }
  return out;
}

}  // namespace vcnn
