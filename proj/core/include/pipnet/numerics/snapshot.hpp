#pragma once

#include <filesystem>
#include <iosfwd>

#include "pipnet/numerics/tensor.hpp"

namespace pipnet::numerics {

// Tensor snapshot, little-endian:
//   "PTNS" | version u32 | rank u32 | dims u64[rank] | float32[numel]
// Values are rounded to float32 on write.
inline constexpr std::uint32_t kSnapshotVersion = 1;

void write_snapshot(std::ostream& out, const Tensor& tensor);
Tensor read_snapshot(std::istream& in);

void save_snapshot(const std::filesystem::path& path, const Tensor& tensor);
Tensor load_snapshot(const std::filesystem::path& path);

}  // namespace pipnet::numerics
