#include "vcnn/denoise.hpp"

namespace vcnn {

NetworkSpec default_denoise_net() {
  NetworkSpec spec;
  spec.input = Shape{48, 48, 1};
  spec.loss = LossKind::mse;
  spec.seed = 11;
  spec.layers = {ConvSpec{16, 5, 5, 1, Activation::relu},
                 ConvSpec{16, 5, 5, 1, Activation::relu},
                 ConvSpec{1, 5, 5, 1, Activation::identity}};
  return spec;
}

void validate_denoise_spec(const NetworkSpec& spec) {
  if (spec.loss != LossKind::mse)
    throw ConfigError("denoise: loss must be mse, got " + std::string(loss_name(spec.loss)));
  for (size_t i = 0; i < spec.layers.size(); ++i)
    if (!std::holds_alternative<ConvSpec>(spec.layers[i]))
      throw ConfigError("denoise: layer " + std::to_string(i) +
                        " is not a convolution; denoise networks are conv-only");
  if (spec.layers.empty()) throw ConfigError("denoise: network has no layers");
}

int denoise_margin(const NetworkSpec& spec) {
  int margin = 0;
  for (const LayerSpec& l : spec.layers) {
    const auto& cs = std::get<ConvSpec>(l);
    if (cs.stride != 1)
      throw ConfigError("denoise: stride must be 1 so outputs align with the input grid");
    if (cs.kh != cs.kw) throw ConfigError("denoise: kernels must be square");
    margin += cs.kh - 1;
  }
  return margin;
}

}  // namespace vcnn
