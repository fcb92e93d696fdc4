#pragma once

#include <string>

#include "vcnn/network.hpp"
#include "vcnn/vectorize.hpp"

namespace vcnn {

/// Flat JSON config mirroring NetworkSpec and TrainConfig, plus data sources
/// and denoise settings. Unknown keys are rejected.
struct AppConfig {
  NetworkSpec net;
  TrainConfig train;

  // classification data: IDX paths, or a synthetic set when counts are given
  std::string train_images, train_labels, test_images, test_labels;
  int synthetic_train = 0, synthetic_test = 0;
  uint64_t data_seed = 99;

  // denoise settings
  double denoise_sigma = 0.1;
  int denoise_train_images = 64;
  int denoise_val_images = 8;
  int denoise_image_size = 48;
  uint64_t denoise_data_seed = 7;

  PoolBackwardMode pool_backward = PoolBackwardMode::exact;
};

AppConfig parse_config_json(const std::string& text);
AppConfig load_config(const std::string& path);

Activation parse_activation(const std::string& name);
LossKind parse_loss(const std::string& name);
PoolMode parse_pool_mode(const std::string& name);
Dtype parse_precision(const std::string& name);

}  // namespace vcnn
