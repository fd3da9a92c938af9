#pragma once

#include <complex>
#include <vector>

#include "swd/tensor.hpp"

namespace swd {

using Complex = std::complex<double>;

/// In-place DFT of any length: iterative radix-2 for powers of two, Bluestein
/// chirp-z otherwise. The inverse transform includes the 1/n factor.
void fft(std::vector<Complex>& data, bool inverse = false);

/// 2-D DFT of a row-major rows x cols grid.
void fft2(std::vector<Complex>& grid, std::size_t rows, std::size_t cols, bool inverse = false);

/// |DFT(field)|^2 on the half-spectrum grid H x (W/2+1). Analysis only, no autodiff.
Tensor rfft_power2(const Tensor& field);

/// Total power of the full 2-D spectrum recovered from the half grid; columns
/// with a conjugate mirror are counted twice.
double half_spectrum_total(const Tensor& power, std::size_t width);

bool is_power_of_two(std::size_t n);

}  // namespace swd
