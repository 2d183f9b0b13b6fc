#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "pipnet/image.hpp"
#include "pipnet/model/config.hpp"

namespace pipnet::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "pipnet") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// 32x32 input, 8 prototypes, 4x4 grid. Cheap enough for property loops.
inline model::ModelConfig small_config() {
  model::ModelConfig config;
  config.image_size = 32;
  config.num_prototypes = 8;
  config.backbone = {{8, 2}, {8, 2}, {16, 2}, {16, 1}};
  return config;
}

inline Image random_image(std::size_t size, std::mt19937_64& rng, std::size_t channels = 3) {
  Image image(size, size, channels);
  std::uniform_int_distribution<int> dist(0, 255);
  for (auto& v : image.pixels) v = static_cast<std::uint8_t>(dist(rng));
  return image;
}

}  // namespace pipnet::testing
