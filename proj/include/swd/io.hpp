#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "swd/tensor.hpp"

namespace swd {

/// Element encoding stored in an SWT1 header.
enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// SWT1 container: "SWT1", u8 dtype, u8 rank, rank x u32 LE dims, row-major LE payload.
void write_swt1(std::ostream& out, const Tensor& tensor, DType dtype = DType::kF64);
Tensor read_swt1(std::istream& in, const std::string& what = "stream");

void save_tensor(const std::filesystem::path& path, const Tensor& tensor, DType dtype = DType::kF64);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace swd
