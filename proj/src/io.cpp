#include "swd/io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace swd {

namespace {

constexpr std::array<char, 4> kMagic{'S', 'W', 'T', '1'};

template <class U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <class U>
U get_le(std::istream& in, const std::string& what) {
  std::array<unsigned char, sizeof(U)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw FormatError(what + ": truncated SWT1 data");
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes[i]) << (8 * i));
  return v;
}

}  // namespace

void write_swt1(std::ostream& out, const Tensor& tensor, DType dtype) {
  const auto& shape = tensor.shape();
  if (shape.size() > 255) throw FormatError("SWT1: rank above 255");
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(shape.size()));
  for (auto d : shape) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw FormatError("SWT1: dimension exceeds u32");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  for (double v : tensor.data()) {
    if (dtype == DType::kF64) {
      put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    } else {
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  if (!out) throw FormatError("SWT1: write failed");
}

Tensor read_swt1(std::istream& in, const std::string& what) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw FormatError(what + ": bad SWT1 magic");
  const auto code = get_le<std::uint8_t>(in, what);
  if (code > 1) throw FormatError(what + ": unknown SWT1 dtype code " + std::to_string(code));
  const auto rank = get_le<std::uint8_t>(in, what);
  Shape shape(rank);
  for (auto& d : shape) d = get_le<std::uint32_t>(in, what);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) {
    if (code == 1) {
      v = std::bit_cast<double>(get_le<std::uint64_t>(in, what));
    } else {
      v = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(in, what)));
    }
  }
  return Tensor(std::move(shape), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& tensor, DType dtype) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_swt1(out, tensor, dtype);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_swt1(in, path.string());
}

}  // namespace swd
