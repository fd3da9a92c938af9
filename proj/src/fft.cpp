#include "swd/fft.hpp"

#include <cmath>
#include <numbers>

namespace swd {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

namespace {

void fft_radix2(std::vector<Complex>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::size_t half = len / 2;
    // Twiddles computed directly per index to avoid drift from repeated products.
    std::vector<Complex> w(half);
    for (std::size_t k = 0; k < half; ++k) w[k] = std::polar(1.0, ang * static_cast<double>(k));
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const Complex u = a[i + k];
        const Complex v = a[i + k + half] * w[k];
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

void fft_bluestein(std::vector<Complex>& a, bool inverse) {
  const std::size_t n = a.size();
  std::size_t m = 1;
  while (m < 2 * n - 1) m <<= 1;
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<Complex> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the angle argument small for large n.
    const std::size_t k2 = (k * k) % (2 * n);
    chirp[k] = std::polar(1.0, sign * std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n));
  }
  std::vector<Complex> x(m, 0.0), y(m, 0.0);
  for (std::size_t k = 0; k < n; ++k) x[k] = a[k] * chirp[k];
  y[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) y[k] = y[m - k] = std::conj(chirp[k]);
  fft_radix2(x, false);
  fft_radix2(y, false);
  for (std::size_t i = 0; i < m; ++i) x[i] *= y[i];
  fft_radix2(x, true);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * inv_m * chirp[k];
}

}  // namespace

void fft(std::vector<Complex>& data, bool inverse) {
  const std::size_t n = data.size();
  if (n <= 1) return;
  if (is_power_of_two(n)) {
    fft_radix2(data, inverse);
  } else {
    fft_bluestein(data, inverse);
  }
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& v : data) v *= inv;
  }
}

void fft2(std::vector<Complex>& grid, std::size_t rows, std::size_t cols, bool inverse) {
  if (grid.size() != rows * cols) throw ShapeError("fft2: grid size does not match rows x cols");
  std::vector<Complex> line(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(grid.begin() + static_cast<std::ptrdiff_t>(r * cols), cols, line.begin());
    fft(line, inverse);
    std::copy(line.begin(), line.end(), grid.begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  line.resize(rows);
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t r = 0; r < rows; ++r) line[r] = grid[r * cols + c];
    fft(line, inverse);
    for (std::size_t r = 0; r < rows; ++r) grid[r * cols + c] = line[r];
  }
}

Tensor rfft_power2(const Tensor& field) {
  if (field.rank() != 2) throw ShapeError("rfft_power2: expected a 2-D field, got " + shape_str(field.shape()));
  const std::size_t h = field.dim(0), w = field.dim(1);
  if (h < 2 || w < 2) throw ShapeError("rfft_power2: field must be at least 2x2, got " + shape_str(field.shape()));
  const std::size_t half = w / 2 + 1;
  auto x = field.data();
  std::vector<Complex> grid(h * half);
  std::vector<Complex> line(w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) line[c] = x[r * w + c];
    fft(line);
    for (std::size_t c = 0; c < half; ++c) grid[r * half + c] = line[c];
  }
  line.resize(h);
  for (std::size_t c = 0; c < half; ++c) {
    for (std::size_t r = 0; r < h; ++r) line[r] = grid[r * half + c];
    fft(line);
    for (std::size_t r = 0; r < h; ++r) grid[r * half + c] = line[r];
  }
  std::vector<double> power(h * half);
  for (std::size_t i = 0; i < power.size(); ++i) power[i] = std::norm(grid[i]);
  return Tensor({h, half}, std::move(power));
}

double half_spectrum_total(const Tensor& power, std::size_t width) {
  const std::size_t h = power.dim(0), half = power.dim(1);
  if (half != width / 2 + 1) throw ShapeError("half_spectrum_total: width does not match the half grid");
  auto p = power.data();
  double total = 0.0;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < half; ++c) {
      const bool self_mirror = c == 0 || (width % 2 == 0 && c == width / 2);
      total += (self_mirror ? 1.0 : 2.0) * p[r * half + c];
    }
  }
  return total;
}

}  // namespace swd
