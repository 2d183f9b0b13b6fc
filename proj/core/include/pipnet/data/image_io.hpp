#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pipnet/image.hpp"

namespace pipnet::data {

// PNG encoding for 1-channel (gray) and 3-channel (RGB) 8-bit images.
std::vector<std::uint8_t> encode_png(const Image& image);
Image decode_png(const std::vector<std::uint8_t>& bytes);

void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

}  // namespace pipnet::data
