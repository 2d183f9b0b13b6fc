#include "pipnet/model/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "pipnet/error.hpp"
#include "pipnet/numerics/snapshot.hpp"

namespace pipnet::model {

namespace fs = std::filesystem;

void save_checkpoint(const fs::path& dir, const ProtoModel& model, const KeyValueConfig& metadata) {
  fs::create_directories(dir / "weights");
  KeyValueConfig config = model.config().to_kv();
  for (const auto& [k, v] : metadata.entries()) {
    if (k.rfind("model.", 0) == 0) throw InvalidArgument("checkpoint metadata key '" + k + "' is reserved");
    config.set(k, v);
  }
  config.save(dir / "config");
  for (const auto& [name, tensor] : model.parameters()) {
    numerics::save_snapshot(dir / "weights" / (name + ".ptns"), tensor);
  }
  std::ofstream disabled(dir / "disabled");
  if (!disabled) throw IoError("cannot write " + (dir / "disabled").string());
  for (std::size_t id : model.sheet().disabled()) disabled << id << '\n';
}

Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("checkpoint directory " + dir.string() + " does not exist");
  const KeyValueConfig config = KeyValueConfig::load(dir / "config");
  ModelConfig model_config;
  model_config.apply(config);
  KeyValueConfig metadata;
  for (const auto& [k, v] : config.entries())
    if (k.rfind("model.", 0) != 0) metadata.set(k, v);

  ProtoModel model(model_config);
  for (auto& [name, tensor] : model.parameters()) {
    const fs::path path = dir / "weights" / (name + ".ptns");
    const numerics::Tensor loaded = numerics::load_snapshot(path);
    if (loaded.shape() != tensor.shape()) {
      throw IoError(path.string() + ": shape " + numerics::shape_string(loaded.shape()) + " does not match model " +
                    numerics::shape_string(tensor.shape()));
    }
    std::copy(loaded.data().begin(), loaded.data().end(), tensor.mutable_data().begin());
  }
  model.sheet().clamp_nonnegative();

  std::set<std::size_t> disabled;
  std::ifstream in(dir / "disabled");
  if (!in) throw IoError("cannot open " + (dir / "disabled").string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    disabled.insert(parse_size("disabled", line));
  }
  model.sheet().set_disabled(std::move(disabled));
  return Checkpoint{std::move(model), std::move(metadata)};
}

}  // namespace pipnet::model
