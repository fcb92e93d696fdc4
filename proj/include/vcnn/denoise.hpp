#pragma once

#include <string>

#include "vcnn/config.hpp"
#include "vcnn/io.hpp"
#include "vcnn/training.hpp"

namespace vcnn {

/// The default conv-only denoiser: three 5x5 stages, 16/16/1 maps,
/// relu/relu/identity, trained against mean squared error.
NetworkSpec default_denoise_net();

/// Denoise networks hold convolution layers only; anything else is rejected.
void validate_denoise_spec(const NetworkSpec& spec);

/// Total spatial shrink of a conv-only network: sum of (kernel-1) per layer.
int denoise_margin(const NetworkSpec& spec);

/// Center crop, used to align clean targets with the valid output region.
template <typename T>
Tensor<T> crop_center(const Tensor<T>& t, int margin_h, int margin_w) {
  const int oh = t.h() - 2 * margin_h;
  const int ow = t.w() - 2 * margin_w;
  if (oh < 1 || ow < 1)
    throw ShapeError("crop: margin " + std::to_string(margin_h) + "x" + std::to_string(margin_w) +
                     " exceeds image " + t.shape.str());
  Tensor<T> out(Shape::hwcn(oh, ow, t.c(), t.n()));
  for (int b = 0; b < t.n(); ++b)
    for (int c = 0; c < t.c(); ++c)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
          out.at(y, x, c, b) = t.at(y + margin_h, x + margin_w, c, b);
  return out;
}

/// Peak signal-to-noise ratio with peak value 1.0.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape != b.shape)
    throw ShapeError("psnr: shapes " + a.shape.str() + " vs " + b.shape.str());
  double mse = 0;
  for (int64_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse <= 0) return 1e9;  // identical images
  return 10.0 * std::log10(1.0 / mse);
}

template <typename T>
struct DenoiseResult {
  Network<T> net;
  double psnr_noisy = 0;     // noisy vs clean on held-out images
  double psnr_denoised = 0;  // denoised vs clean on held-out images
};

/// Runs the forward pass of a conv-only network over one or more images. The
/// output shrinks by the network margin per axis.
template <typename T>
Tensor<T> denoise_apply(const Network<T>& net, const Tensor<T>& images) {
  validate_denoise_spec(net.spec);
  const int margin = denoise_margin(net.spec);
  if (images.h() <= margin || images.w() <= margin)
    throw ShapeError("denoise: network margin " + std::to_string(margin) + " exceeds image " +
                     images.shape.str());
  Executor<T> exec(Variant::imp6);
  return exec.forward(net, images);
}

/// Trains the denoiser on synthesized clear-noisy pairs and evaluates PSNR on
/// held-out pairs.
template <typename T>
DenoiseResult<T> train_denoiser(const AppConfig& cfg) {
  NetworkSpec spec = cfg.net.layers.empty() ? default_denoise_net() : cfg.net;
  validate_denoise_spec(spec);

  const int side = cfg.denoise_image_size;
  spec.input = Shape{side, side, 1};
  const int margin = denoise_margin(spec);
  if (side <= margin)
    throw ConfigError("denoise: image size " + std::to_string(side) +
                      " does not cover the network margin " + std::to_string(margin));

  Tensor<T> clean_train =
      synth_clean_images<T>(cfg.denoise_train_images, side, side, cfg.denoise_data_seed);
  Tensor<T> clean_val =
      synth_clean_images<T>(cfg.denoise_val_images, side, side, cfg.denoise_data_seed + 1);
  Dataset<T> train = synth_denoise_pairs(clean_train, cfg.denoise_sigma, cfg.denoise_data_seed + 2);
  Dataset<T> val = synth_denoise_pairs(clean_val, cfg.denoise_sigma, cfg.denoise_data_seed + 3);

  DenoiseResult<T> res{build_network<T>(spec), 0, 0};
  Targets<T> targets = Targets<T>::from_values(crop_center(train.targets, margin / 2, margin / 2));
  Trainer<T> trainer(cfg.train);
  trainer.fit(res.net, train.images, targets);

  Tensor<T> clean_crop = crop_center(val.targets, margin / 2, margin / 2);
  Tensor<T> noisy_crop = crop_center(val.images, margin / 2, margin / 2);
  Tensor<T> denoised = denoise_apply(res.net, val.images);
  res.psnr_noisy = psnr(noisy_crop, clean_crop);
  res.psnr_denoised = psnr(denoised, clean_crop);
  return res;
}

}  // namespace vcnn
