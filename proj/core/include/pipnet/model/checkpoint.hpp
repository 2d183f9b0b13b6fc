#pragma once

#include <filesystem>

#include "pipnet/kv_config.hpp"
#include "pipnet/model/proto_model.hpp"

namespace pipnet::model {

// Checkpoint directory layout:
//   config        model configuration plus metadata (key=value)
//   weights/      one tensor snapshot per parameter, <name>.ptns
//   disabled      newline-separated disabled prototype ids
struct Checkpoint {
  ProtoModel model;
  KeyValueConfig metadata;  // keys outside "model."
};

void save_checkpoint(const std::filesystem::path& dir, const ProtoModel& model,
                     const KeyValueConfig& metadata = {});
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace pipnet::model
