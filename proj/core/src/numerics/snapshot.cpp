#include "pipnet/numerics/snapshot.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "pipnet/error.hpp"

namespace pipnet::numerics {

namespace {

constexpr std::array<char, 4> kMagic{'P', 'T', 'N', 'S'};

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = char((value >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw IoError("tensor snapshot truncated");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= T(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_snapshot(std::ostream& out, const Tensor& tensor) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kSnapshotVersion);
  put_le<std::uint32_t>(out, std::uint32_t(tensor.rank()));
  for (std::size_t d : tensor.shape()) put_le<std::uint64_t>(out, d);
  for (double v : tensor.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!out) throw IoError("failed writing tensor snapshot");
}

Tensor read_snapshot(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw IoError("not a tensor snapshot (bad magic)");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kSnapshotVersion) throw IoError("unsupported tensor snapshot version " + std::to_string(version));
  const auto rank = get_le<std::uint32_t>(in);
  if (rank > 16) throw IoError("tensor snapshot rank " + std::to_string(rank) + " is implausible");
  Shape shape(rank);
  for (auto& d : shape) d = std::size_t(get_le<std::uint64_t>(in));
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = double(std::bit_cast<float>(get_le<std::uint32_t>(in)));
  return Tensor::from_data(std::move(shape), std::move(values));
}

void save_snapshot(const std::filesystem::path& path, const Tensor& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_snapshot(out, tensor);
}

Tensor load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_snapshot(in);
}

}  // namespace pipnet::numerics
