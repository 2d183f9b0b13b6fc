#include "pipnet/model/config.hpp"

#include <sstream>

#include "pipnet/error.hpp"

namespace pipnet::model {

namespace {

std::string join_doubles(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + format_double(values[i]);
  return out;
}

}  // namespace

std::size_t ModelConfig::grid_size() const {
  std::size_t size = image_size;
  for (const auto& stage : backbone) size = (size + 2 - 3) / stage.stride + 1;
  return size;
}

std::size_t ModelConfig::feature_dim() const { return backbone.empty() ? in_channels : backbone.back().channels; }

void ModelConfig::validate() const {
  if (image_size < 3) throw InvalidArgument("model.image_size must be >= 3");
  if (in_channels == 0) throw InvalidArgument("model.in_channels must be >= 1");
  if (num_prototypes == 0) throw InvalidArgument("model.num_prototypes must be >= 1");
  if (num_classes < 2) throw InvalidArgument("model.num_classes must be >= 2");
  if (backbone.empty()) throw InvalidArgument("model.backbone needs at least one stage");
  std::size_t size = image_size;
  for (const auto& stage : backbone) {
    if (stage.channels == 0 || stage.stride == 0) throw InvalidArgument("model.backbone stage with zero size");
    if (size + 2 < 3) throw InvalidArgument("model.backbone reduces the grid below the kernel size");
    size = (size + 2 - 3) / stage.stride + 1;
  }
  if (patch_scale == 0) throw InvalidArgument("model.patch_scale must be >= 1");
  if (pixel_mean.size() != in_channels || pixel_std.size() != in_channels) {
    throw InvalidArgument("model.pixel_mean/pixel_std need one value per input channel");
  }
  for (double s : pixel_std)
    if (!(s > 0.0)) throw InvalidArgument("model.pixel_std must be positive");
  if (!(relevance_epsilon >= 0.0) || !(abstain_epsilon >= 0.0)) {
    throw InvalidArgument("model epsilons must be non-negative");
  }
}

KeyValueConfig ModelConfig::to_kv(const std::string& prefix) const {
  KeyValueConfig kv;
  kv.set(prefix + "image_size", std::to_string(image_size));
  kv.set(prefix + "in_channels", std::to_string(in_channels));
  kv.set(prefix + "num_prototypes", std::to_string(num_prototypes));
  kv.set(prefix + "num_classes", std::to_string(num_classes));
  std::string channels, strides;
  for (std::size_t i = 0; i < backbone.size(); ++i) {
    channels += (i ? "," : "") + std::to_string(backbone[i].channels);
    strides += (i ? "," : "") + std::to_string(backbone[i].stride);
  }
  kv.set(prefix + "backbone_channels", channels);
  kv.set(prefix + "backbone_strides", strides);
  kv.set(prefix + "patch_scale", std::to_string(patch_scale));
  kv.set(prefix + "relevance_epsilon", format_double(relevance_epsilon));
  kv.set(prefix + "abstain_epsilon", format_double(abstain_epsilon));
  kv.set(prefix + "pixel_mean", join_doubles(pixel_mean));
  kv.set(prefix + "pixel_std", join_doubles(pixel_std));
  return kv;
}

void ModelConfig::apply(const KeyValueConfig& kv, const std::string& prefix) {
  std::vector<std::size_t> channels, strides;
  for (const auto& [key, value] : kv.entries()) {
    if (key.rfind(prefix, 0) != 0) continue;
    const std::string name = key.substr(prefix.size());
    if (name == "image_size") image_size = parse_size(key, value);
    else if (name == "in_channels") in_channels = parse_size(key, value);
    else if (name == "num_prototypes") num_prototypes = parse_size(key, value);
    else if (name == "num_classes") num_classes = parse_size(key, value);
    else if (name == "backbone_channels") channels = parse_size_list(key, value);
    else if (name == "backbone_strides") strides = parse_size_list(key, value);
    else if (name == "patch_scale") patch_scale = parse_size(key, value);
    else if (name == "relevance_epsilon") relevance_epsilon = parse_double(key, value);
    else if (name == "abstain_epsilon") abstain_epsilon = parse_double(key, value);
    else if (name == "pixel_mean") pixel_mean = parse_double_list(key, value);
    else if (name == "pixel_std") pixel_std = parse_double_list(key, value);
    else throw InvalidArgument("unknown config key '" + key + "'");
  }
  if (!channels.empty() || !strides.empty()) {
    if (channels.empty()) for (const auto& s : backbone) channels.push_back(s.channels);
    if (strides.empty()) for (const auto& s : backbone) strides.push_back(s.stride);
    if (channels.size() != strides.size()) {
      throw InvalidArgument(prefix + "backbone_channels and " + prefix + "backbone_strides differ in length");
    }
    backbone.clear();
    for (std::size_t i = 0; i < channels.size(); ++i) backbone.push_back({channels[i], strides[i]});
  }
}

}  // namespace pipnet::model
