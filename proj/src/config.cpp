#include "vcnn/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace vcnn {

using nlohmann::json;

namespace {

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
}

int get_int(const json& obj, const char* key, int fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number_integer()) throw ConfigError(std::string("config: '") + key +
                                                       "' must be an integer");
  return obj[key].get<int>();
}

double get_double(const json& obj, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number()) throw ConfigError(std::string("config: '") + key +
                                               "' must be a number");
  return obj[key].get<double>();
}

std::string get_string(const json& obj, const char* key, const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_string()) throw ConfigError(std::string("config: '") + key +
                                               "' must be a string");
  return obj[key].get<std::string>();
}

LayerSpec parse_layer(const json& j, size_t index) {
  const std::string where = "layers[" + std::to_string(index) + "]";
  if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
  const std::string kind = get_string(j, "kind", "");
  if (kind == "conv") {
    reject_unknown_keys(j, {"kind", "maps", "kernel", "stride", "activation"}, where);
    ConvSpec cs;
    cs.maps = get_int(j, "maps", 1);
    if (j.contains("kernel")) {
      const auto& k = j["kernel"];
      if (!k.is_array() || k.size() != 2) throw ConfigError("config: " + where +
                                                            ".kernel must be [kh, kw]");
      cs.kh = k[0].get<int>();
      cs.kw = k[1].get<int>();
    }
    cs.stride = get_int(j, "stride", 1);
    cs.act = parse_activation(get_string(j, "activation", "relu"));
    return cs;
  }
  if (kind == "pool") {
    reject_unknown_keys(j, {"kind", "window", "stride", "mode", "bias", "activation"}, where);
    PoolSpec ps;
    if (j.contains("window")) {
      const auto& w = j["window"];
      if (!w.is_array() || w.size() != 2) throw ConfigError("config: " + where +
                                                            ".window must be [ph, pw]");
      ps.ph = w[0].get<int>();
      ps.pw = w[1].get<int>();
    }
    ps.stride = get_int(j, "stride", ps.ph);
    ps.mode = parse_pool_mode(get_string(j, "mode", "max"));
    if (j.contains("bias")) {
      if (!j["bias"].is_boolean()) throw ConfigError("config: " + where + ".bias must be a bool");
      ps.bias = j["bias"].get<bool>();
    }
    ps.act = parse_activation(get_string(j, "activation", "identity"));
    return ps;
  }
  if (kind == "full") {
    reject_unknown_keys(j, {"kind", "units", "activation"}, where);
    FullSpec fs;
    fs.units = get_int(j, "units", 1);
    fs.act = parse_activation(get_string(j, "activation", "relu"));
    return fs;
  }
  throw ConfigError("config: " + where + " has unknown kind '" + kind + "'");
}

}  // namespace

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + name + "'");
}

LossKind parse_loss(const std::string& name) {
  if (name == "softmax_ce") return LossKind::softmax_ce;
  if (name == "mse") return LossKind::mse;
  throw ConfigError("unknown loss '" + name + "'");
}

PoolMode parse_pool_mode(const std::string& name) {
  if (name == "max") return PoolMode::max;
  if (name == "avg") return PoolMode::avg;
  throw ConfigError("unknown pool mode '" + name + "'");
}

Dtype parse_precision(const std::string& name) {
  if (name == "f32") return Dtype::f32;
  if (name == "f64") return Dtype::f64;
  throw ConfigError("unknown precision '" + name + "' (expected f32 or f64)");
}

AppConfig parse_config_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");

  static const std::set<std::string> kKeys = {
      "input",          "layers",        "loss",          "seed",
      "lr",             "momentum",      "batch",         "epochs",
      "precision",      "train_seed",    "train_images",  "train_labels",
      "test_images",    "test_labels",   "synthetic_train", "synthetic_test",
      "data_seed",      "denoise_sigma", "denoise_train_images", "denoise_val_images",
      "denoise_image_size", "denoise_data_seed", "pool_backward"};
  reject_unknown_keys(doc, kKeys, "config");

  AppConfig cfg;
  if (doc.contains("input")) {
    const auto& in = doc["input"];
    if (!in.is_array() || in.size() < 2 || in.size() > 3)
      throw ConfigError("config: 'input' must be [h, w] or [h, w, c]");
    const int h = in[0].get<int>();
    const int w = in[1].get<int>();
    const int c = in.size() == 3 ? in[2].get<int>() : 1;
    cfg.net.input = Shape{h, w, c};
  }
  if (doc.contains("layers")) {
    if (!doc["layers"].is_array()) throw ConfigError("config: 'layers' must be an array");
    size_t i = 0;
    for (const auto& l : doc["layers"]) cfg.net.layers.push_back(parse_layer(l, i++));
  }
  cfg.net.loss = parse_loss(get_string(doc, "loss", "softmax_ce"));
  cfg.net.seed = static_cast<uint64_t>(get_int(doc, "seed", 0));

  cfg.train.lr = get_double(doc, "lr", cfg.train.lr);
  cfg.train.momentum = get_double(doc, "momentum", cfg.train.momentum);
  cfg.train.batch = get_int(doc, "batch", cfg.train.batch);
  cfg.train.epochs = get_int(doc, "epochs", cfg.train.epochs);
  cfg.train.precision = parse_precision(get_string(doc, "precision", "f64"));
  cfg.train.seed = static_cast<uint64_t>(get_int(doc, "train_seed", 0));

  cfg.train_images = get_string(doc, "train_images", "");
  cfg.train_labels = get_string(doc, "train_labels", "");
  cfg.test_images = get_string(doc, "test_images", "");
  cfg.test_labels = get_string(doc, "test_labels", "");
  cfg.synthetic_train = get_int(doc, "synthetic_train", 0);
  cfg.synthetic_test = get_int(doc, "synthetic_test", 0);
  cfg.data_seed = static_cast<uint64_t>(get_int(doc, "data_seed", 99));

  cfg.denoise_sigma = get_double(doc, "denoise_sigma", cfg.denoise_sigma);
  cfg.denoise_train_images = get_int(doc, "denoise_train_images", cfg.denoise_train_images);
  cfg.denoise_val_images = get_int(doc, "denoise_val_images", cfg.denoise_val_images);
  cfg.denoise_image_size = get_int(doc, "denoise_image_size", cfg.denoise_image_size);
  cfg.denoise_data_seed = static_cast<uint64_t>(get_int(doc, "denoise_data_seed", 7));

  const std::string pb = get_string(doc, "pool_backward", "exact");
  if (pb == "exact")
    cfg.pool_backward = PoolBackwardMode::exact;
  else if (pb == "paper-nn")
    cfg.pool_backward = PoolBackwardMode::paper_nn;
  else
    throw ConfigError("config: pool_backward must be 'exact' or 'paper-nn'");

  return cfg;
}

AppConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_json(ss.str());
}

}  // namespace vcnn
