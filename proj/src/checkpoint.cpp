#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>

#include "danet/ops.hpp"

namespace danet {

namespace {

constexpr std::array<char, 5> kMagic{'D', 'A', 'C', 'K', '1'};

template <typename U>
void put_le(std::ostream& os, U value) {
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  os.write(bytes, sizeof(U));
}

template <typename U>
U get_le(std::istream& is, const std::string& path) {
  unsigned char bytes[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw std::runtime_error("checkpoint " + path + ": truncated file");
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void save_checkpoint(const std::string& path, const NamedTensors& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint " + path + ": cannot open for writing");
  os.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) put_le<std::uint64_t>(os, d);
    for (double v : tensor.data()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw std::runtime_error("checkpoint " + path + ": write failed");
}

NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint " + path + ": cannot open");
  std::array<char, 5> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw std::runtime_error("checkpoint " + path + ": bad magic (expected DACK1)");
  }
  const auto count = get_le<std::uint32_t>(is, path);
  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto name_len = get_le<std::uint32_t>(is, path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) {
      throw std::runtime_error("checkpoint " + path + ": truncated name");
    }
    const auto rank = get_le<std::uint32_t>(is, path);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get_le<std::uint64_t>(is, path));
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(is, path));
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

}  // namespace danet
