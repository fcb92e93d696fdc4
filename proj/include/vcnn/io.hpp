#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "vcnn/network.hpp"

namespace vcnn {

/// A loaded dataset: images plus either class labels or target images.
/// Pixels are normalized to [0,1]. The count is explicit so an empty file
/// parses to an empty dataset (tensor extents stay >= 1 by padding with one
/// placeholder sample that count() ignores).
template <typename T>
struct Dataset {
  int n = 0;
  Tensor<T> images;
  std::vector<int> labels;
  Tensor<T> targets;
  bool has_image_targets = false;
  std::string split;

  int count() const { return n; }

  void validate() const {
    if (n > 0 && images.n() != n)
      throw ShapeError("dataset: image batch extent does not match count");
    if (has_image_targets) {
      if (targets.n() != images.n())
        throw ShapeError("dataset: " + std::to_string(targets.n()) + " targets for " +
                         std::to_string(images.n()) + " images");
    } else if (!labels.empty() && static_cast<int>(labels.size()) != n) {
      throw ShapeError("dataset: " + std::to_string(labels.size()) + " labels for " +
                       std::to_string(n) + " images");
    }
    for (T v : images.data)
      if (!(v >= T(0) && v <= T(1))) throw ShapeError("dataset: pixel outside [0,1]");
  }
};

// ---------------------------------------------------------------------------
// IDX container (big-endian, u8 payload; magic 0x00000801 for label vectors,
// 0x00000803 for image stacks).

struct IdxFile {
  uint32_t magic = 0;
  std::vector<uint32_t> dims;
  std::vector<uint8_t> payload;
};

IdxFile load_idx_file(const std::string& path);
void save_idx_file(const std::string& path, const IdxFile& f);

constexpr uint32_t kIdxLabelMagic = 0x00000801;
constexpr uint32_t kIdxImageMagic = 0x00000803;

/// Images parsed to [rows, cols, 1, count], pixels scaled by 1/255. A header
/// declaring zero items yields an empty dataset.
template <typename T>
Dataset<T> load_idx(const std::string& path) {
  IdxFile f = load_idx_file(path);
  if (f.magic != kIdxImageMagic)
    throw ParseError("idx '" + path + "': magic " + std::to_string(f.magic) +
                     " is not an image file (expected 2051) at offset 0");
  const int count = static_cast<int>(f.dims[0]);
  const int rows = static_cast<int>(f.dims[1]);
  const int cols = static_cast<int>(f.dims[2]);
  Dataset<T> d;
  d.n = count;
  if (count == 0) {
    d.images = Tensor<T>(Shape::hwcn(1, 1, 1, 1));
    return d;
  }
  if (rows < 1 || cols < 1)
    throw ParseError("idx '" + path + "': zero-sized images (dims " + std::to_string(rows) + "x" +
                     std::to_string(cols) + ") at offset 8");
  d.images = Tensor<T>(Shape::hwcn(rows, cols, 1, count));
  for (size_t i = 0; i < f.payload.size(); ++i)
    d.images.data[i] = static_cast<T>(f.payload[i]) / T(255);
  return d;
}

std::vector<int> load_idx_labels(const std::string& path);

/// Images plus labels; the counts must agree.
template <typename T>
Dataset<T> load_idx(const std::string& images_path, const std::string& labels_path) {
  Dataset<T> d = load_idx<T>(images_path);
  d.labels = load_idx_labels(labels_path);
  if (static_cast<int>(d.labels.size()) != d.n)
    throw ParseError("idx: " + std::to_string(d.labels.size()) + " labels in '" + labels_path +
                     "' for " + std::to_string(d.n) + " images in '" + images_path + "'");
  return d;
}

/// Writes pixels quantized to u8 (round of 255*v, clamped).
template <typename T>
void save_idx_images(const std::string& path, const Tensor<T>& images) {
  IdxFile f;
  f.magic = kIdxImageMagic;
  f.dims = {static_cast<uint32_t>(images.n()), static_cast<uint32_t>(images.h()),
            static_cast<uint32_t>(images.w())};
  f.payload.resize(images.data.size());
  for (size_t i = 0; i < images.data.size(); ++i) {
    double v = static_cast<double>(images.data[i]) * 255.0 + 0.5;
    f.payload[i] = static_cast<uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
  }
  save_idx_file(path, f);
}

void save_idx_labels(const std::string& path, const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// Binary PGM (P5, maxval 255).

struct PgmImage {
  int width = 0, height = 0;
  std::vector<uint8_t> pixels;
};

PgmImage load_pgm_file(const std::string& path);
void save_pgm_file(const std::string& path, const PgmImage& img);

template <typename T>
Tensor<T> load_pgm(const std::string& path) {
  PgmImage img = load_pgm_file(path);
  Tensor<T> t(Shape::hwcn(img.height, img.width, 1, 1));
  for (size_t i = 0; i < img.pixels.size(); ++i)
    t.data[i] = static_cast<T>(img.pixels[i]) / T(255);
  return t;
}

template <typename T>
void save_pgm(const std::string& path, const Tensor<T>& image) {
  PgmImage img;
  img.width = image.w();
  img.height = image.h();
  img.pixels.resize(static_cast<size_t>(img.width) * img.height);
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    double v = static_cast<double>(image.data[i]) * 255.0 + 0.5;
    img.pixels[i] = static_cast<uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
  }
  save_pgm_file(path, img);
}

// ---------------------------------------------------------------------------
// Model persistence: magic "VCNN", format version 1, little-endian, trailing
// checksum. Round trips are bit exact.

struct ParamBlob {
  Dtype dtype = Dtype::f64;
  std::vector<uint32_t> dims;
  std::vector<uint8_t> raw;
};

struct ModelFile {
  NetworkSpec spec;
  Dtype dtype = Dtype::f64;
  std::vector<ParamBlob> blobs;  // weights then bias per parameterized layer
};

ModelFile load_model(const std::string& path);
void save_model(const std::string& path, const ModelFile& m);

namespace detail {
template <typename T>
ParamBlob blob_from(const std::vector<T>& v, std::vector<uint32_t> dims) {
  ParamBlob b;
  b.dtype = dtype_of<T>();
  b.dims = std::move(dims);
  b.raw.resize(v.size() * sizeof(T));
  std::memcpy(b.raw.data(), v.data(), b.raw.size());
  return b;
}

template <typename T>
void blob_into(const ParamBlob& b, std::vector<T>& v, const std::vector<uint32_t>& want_dims,
               const std::string& what) {
  if (b.dtype != dtype_of<T>())
    throw IoError("model: blob '" + what + "' stored as " + dtype_name(b.dtype) +
                  ", expected " + dtype_name(dtype_of<T>()));
  if (b.dims != want_dims) throw IoError("model: blob '" + what + "' has unexpected dims");
  uint64_t n = 1;
  for (uint32_t d : b.dims) n *= d;
  if (b.raw.size() != n * sizeof(T)) throw IoError("model: blob '" + what + "' size mismatch");
  v.resize(n);
  std::memcpy(v.data(), b.raw.data(), b.raw.size());
}
}  // namespace detail

template <typename T>
ModelFile model_from_network(const Network<T>& net) {
  ModelFile m;
  m.spec = net.spec;
  m.dtype = dtype_of<T>();
  for (const auto& layer : net.layers) {
    if (const auto* cl = std::get_if<ConvLayer<T>>(&layer)) {
      m.blobs.push_back(detail::blob_from(cl->weights.data,
                                          {static_cast<uint32_t>(cl->weights.rows),
                                           static_cast<uint32_t>(cl->weights.cols)}));
      m.blobs.push_back(detail::blob_from(cl->bias, {static_cast<uint32_t>(cl->bias.size())}));
    } else if (const auto* pl = std::get_if<PoolLayer<T>>(&layer)) {
      if (!pl->bias.empty())
        m.blobs.push_back(detail::blob_from(pl->bias, {static_cast<uint32_t>(pl->bias.size())}));
    } else {
      const auto& fl = std::get<FullLayer<T>>(layer);
      m.blobs.push_back(detail::blob_from(fl.weights.data,
                                          {static_cast<uint32_t>(fl.weights.rows),
                                           static_cast<uint32_t>(fl.weights.cols)}));
      m.blobs.push_back(detail::blob_from(fl.bias, {static_cast<uint32_t>(fl.bias.size())}));
    }
  }
  return m;
}

template <typename T>
Network<T> network_from_model(const ModelFile& m) {
  if (m.dtype != dtype_of<T>())
    throw IoError(std::string("model holds ") + dtype_name(m.dtype) + " parameters, requested " +
                  dtype_name(dtype_of<T>()));
  Network<T> net = build_network<T>(m.spec);
  size_t bi = 0;
  auto next = [&]() -> const ParamBlob& {
    if (bi >= m.blobs.size()) throw IoError("model: missing parameter blob");
    return m.blobs[bi++];
  };
  for (auto& layer : net.layers) {
    if (auto* cl = std::get_if<ConvLayer<T>>(&layer)) {
      detail::blob_into(next(), cl->weights.data,
                        {static_cast<uint32_t>(cl->weights.rows),
                         static_cast<uint32_t>(cl->weights.cols)},
                        "conv weights");
      detail::blob_into(next(), cl->bias, {static_cast<uint32_t>(cl->bias.size())}, "conv bias");
    } else if (auto* pl = std::get_if<PoolLayer<T>>(&layer)) {
      if (!pl->bias.empty())
        detail::blob_into(next(), pl->bias, {static_cast<uint32_t>(pl->bias.size())}, "pool bias");
    } else {
      auto& fl = std::get<FullLayer<T>>(layer);
      detail::blob_into(next(), fl.weights.data,
                        {static_cast<uint32_t>(fl.weights.rows),
                         static_cast<uint32_t>(fl.weights.cols)},
                        "full weights");
      detail::blob_into(next(), fl.bias, {static_cast<uint32_t>(fl.bias.size())}, "full bias");
    }
  }
  if (bi != m.blobs.size()) throw IoError("model: unused parameter blobs");
  return net;
}

// ---------------------------------------------------------------------------
// Synthetic data.

/// Clear-noisy pairs: noisy = clip(clean + N(0, sigma^2), 0, 1), seeded.
template <typename T>
Dataset<T> synth_denoise_pairs(const Tensor<T>& clean, double sigma, uint64_t seed) {
  if (sigma < 0) throw ConfigError("denoise sigma must be >= 0");
  Dataset<T> d;
  d.n = clean.n();
  d.targets = clean;
  d.has_image_targets = true;
  d.images = clean;
  Rng rng(seed);
  for (T& v : d.images.data) {
    double noisy = static_cast<double>(v) + sigma * rng.normal();
    v = static_cast<T>(noisy < 0 ? 0 : (noisy > 1 ? 1 : noisy));
  }
  d.split = "denoise";
  return d;
}

/// Piecewise-smooth grayscale images (sums of random blobs), suitable holdout
/// material for the denoiser.
template <typename T>
Tensor<T> synth_clean_images(int count, int h, int w, uint64_t seed) {
  Tensor<T> t(Shape::hwcn(h, w, 1, count));
  Rng rng(seed);
  for (int b = 0; b < count; ++b) {
    const int blobs = 4 + rng.uniform_int(4);
    std::vector<double> img(static_cast<size_t>(h) * w, 0.5);
    for (int k = 0; k < blobs; ++k) {
      const double cx = rng.uniform(0, w);
      const double cy = rng.uniform(0, h);
      const double s = rng.uniform(w / 10.0, w / 3.0);
      const double amp = rng.uniform(-0.45, 0.45);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
          img[static_cast<size_t>(y) * w + x] += amp * std::exp(-d2 / (2 * s * s));
        }
    }
    for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) {
      double v = img[i];
      t.data[static_cast<int64_t>(b) * h * w + i] =
          static_cast<T>(v < 0.02 ? 0.02 : (v > 0.98 ? 0.98 : v));
    }
  }
  return t;
}

/// Ten-class 28x28 glyph dataset: fixed per-class stroke patterns with
/// random shifts, intensity scaling and pixel noise. Stands in for digit
/// data where no corpus is available.
template <typename T>
Dataset<T> synth_digits(int count, uint64_t seed, const std::string& split) {
  constexpr int kSide = 28;
  // deterministic base pattern per class
  std::vector<std::vector<double>> base(10,
                                        std::vector<double>(static_cast<size_t>(kSide) * kSide));
  for (int cls = 0; cls < 10; ++cls) {
    Rng prng(0xD161u + cls);
    auto& p = base[cls];
    for (int r = 0; r < 3; ++r) {  // filled rectangles
      const int rw = 4 + prng.uniform_int(9);
      const int rh = 4 + prng.uniform_int(9);
      const int x0 = 2 + prng.uniform_int(kSide - rw - 4);
      const int y0 = 2 + prng.uniform_int(kSide - rh - 4);
      for (int y = y0; y < y0 + rh; ++y)
        for (int x = x0; x < x0 + rw; ++x) p[static_cast<size_t>(y) * kSide + x] = 1.0;
    }
    for (int l = 0; l < 2; ++l) {  // diagonal strokes
      int x = 3 + prng.uniform_int(kSide - 6);
      int y = 3 + prng.uniform_int(kSide - 6);
      const int dx = prng.uniform_int(2) ? 1 : -1;
      const int dy = prng.uniform_int(2) ? 1 : -1;
      for (int s = 0; s < 14; ++s) {
        if (x < 1 || x >= kSide - 1 || y < 1 || y >= kSide - 1) break;
        p[static_cast<size_t>(y) * kSide + x] = 1.0;
        p[static_cast<size_t>(y) * kSide + x + 1] = 1.0;
        x += dx;
        y += dy;
      }
    }
  }

  Dataset<T> d;
  d.n = count;
  d.split = split;
  d.images = Tensor<T>(Shape::hwcn(kSide, kSide, 1, count));
  d.labels.resize(count);
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    const int cls = i % 10;
    d.labels[i] = cls;
    const int dx = rng.uniform_int(5) - 2;
    const int dy = rng.uniform_int(5) - 2;
    const double scale = rng.uniform(0.6, 1.0);
    T* out = d.images.data.data() + static_cast<int64_t>(i) * kSide * kSide;
    for (int y = 0; y < kSide; ++y)
      for (int x = 0; x < kSide; ++x) {
        const int sy = y - dy, sx = x - dx;
        double v = 0.0;
        if (sy >= 0 && sy < kSide && sx >= 0 && sx < kSide)
          v = base[cls][static_cast<size_t>(sy) * kSide + sx] * scale;
        v += 0.1 * rng.normal();
        out[static_cast<size_t>(y) * kSide + x] = static_cast<T>(v < 0 ? 0 : (v > 1 ? 1 : v));
      }
  }
  return d;
}

/// Writes bytes to a temp file in the same directory, then renames over the
/// target.
void write_file_atomic(const std::string& path, const void* data, size_t size);

}  // namespace vcnn
