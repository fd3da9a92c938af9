#include <cmath>
#include <numbers>

#include "doctest.h"
#include "swd/gradcheck.hpp"
#include "swd/resample.hpp"

using namespace swd;

namespace {

Tensor randn(const Shape& s, std::uint64_t seed) {
  Rng rng(seed, 3);
  return gaussian(s, rng);
}

double rmse(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
  return std::sqrt(s / static_cast<double>(a.numel()));
}

double mean_of(const Tensor& t) { return mean_all(t).item(); }

}  // namespace

TEST_CASE("area downsampling") {
  CHECK(downsample_area(Tensor::full({2, 8, 8}, 3.5), 2, 2).to_vector() == std::vector<double>(32, 3.5));
  Tensor x = randn({3, 16, 16}, 1);
  CHECK(std::abs(mean_of(downsample_area(x, 4, 2)) - mean_of(x)) < 1e-12);
  std::vector<double> board(64);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) board[i * 8 + j] = (i + j) % 2 ? 1.0 : -1.0;
  for (double v : downsample_area(Tensor({1, 8, 8}, board), 2, 2).to_vector()) CHECK(v == 0.0);
  CHECK_THROWS_AS(downsample_area(x, 3, 3), ShapeError);
  // Video: time pooled too.
  Tensor vid = randn({2, 4, 8, 8}, 2);
  CHECK(downsample_area(vid, 2, 2, 2).shape() == Shape{2, 2, 4, 4});
}

TEST_CASE("non-integer area resize preserves the mean") {
  Tensor x = randn({2, 32, 32}, 4);
  Tensor y = resize_area(x, 24, 24);
  CHECK(y.shape() == Shape{2, 24, 24});
  CHECK(std::abs(mean_of(y) - mean_of(x)) < 1e-12);
  for (double v : resize_area(Tensor::full({1, 32, 32}, -2.0), 24, 20).to_vector()) CHECK(v == doctest::Approx(-2.0).epsilon(1e-14));
}

TEST_CASE("bicubic upsampling basics") {
  Tensor x = randn({2, 8, 8}, 5);
  CHECK(upsample_bicubic(x, 1).to_vector() == x.to_vector());
  for (auto b : {Boundary::kMirror, Boundary::kClamp}) {
    for (double v : upsample_bicubic(Tensor::full({1, 8, 8}, 0.7), 4, b).to_vector()) {
      CHECK(v == doctest::Approx(0.7).epsilon(1e-14));
    }
  }
  // Kernel values at quarter offsets, worked by hand from the cubic.
  auto m = bicubic_matrix(8, 16);
  CHECK(m[4 * 8 + 0] == doctest::Approx(-0.0234375));
  CHECK(m[4 * 8 + 1] == doctest::Approx(0.2265625));
  CHECK(m[4 * 8 + 2] == doctest::Approx(0.8671875));
  CHECK(m[4 * 8 + 3] == doctest::Approx(-0.0703125));
}

TEST_CASE("integer-factor round trips keep the global mean") {
  Tensor x = randn({3, 8, 8}, 6);
  for (std::size_t f : {2u, 3u, 4u}) {
    Tensor up = upsample_bicubic(x, f);
    CHECK(std::abs(mean_of(up) - mean_of(x)) < 1e-10);
    CHECK(std::abs(mean_of(downsample_area(up, f, f)) - mean_of(x)) < 1e-10);
  }
  Tensor y = randn({2, 16, 16}, 7);
  CHECK(std::abs(mean_of(upsample_bicubic(downsample_area(y, 2, 2), 2)) - mean_of(y)) < 1e-10);
}

TEST_CASE("band-limited fields survive down then up") {
  // Cosines below half the Nyquist frequency of the coarse grid.
  const std::size_t n = 32;
  std::vector<double> v(n * n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      v[y * n + x] = std::cos(2 * std::numbers::pi * 2.0 * static_cast<double>(x) / n + 0.3) +
                     0.5 * std::sin(2 * std::numbers::pi * 3.0 * static_cast<double>(y) / n);
  Tensor f({1, n, n}, v);
  Tensor back = upsample_bicubic(downsample_area(f, 2, 2), 2);
  CHECK(rmse(back, f) < 0.05);
}

TEST_CASE("bicubic resize is differentiable") {
  Tensor probe = randn({2, 12, 12}, 8);
  auto r = grad_check([&](const Tensor& x) { return sum_all(mul(resize_bicubic(x, 12, 12), probe)); }, randn({2, 6, 6}, 9));
  CHECK(r.max_rel_error < 1e-6);
  Tensor probe2 = randn({1, 8, 8}, 10);
  auto r2 = grad_check([&](const Tensor& x) { return sum_all(mul(resize_area(x, 8, 8), probe2)); }, randn({1, 11, 11}, 11));
  CHECK(r2.max_rel_error < 1e-6);
}

TEST_CASE("temporal frame blending") {
  Tensor vid = randn({2, 3, 4, 4}, 12);
  CHECK(temporal_blend_upsample(vid, 3).to_vector() == vid.to_vector());
  // Static video stays static.
  std::vector<double> frame = randn({16}, 13).to_vector(), st;
  for (int t = 0; t < 3; ++t) st.insert(st.end(), frame.begin(), frame.end());
  Tensor up = temporal_blend_upsample(Tensor({1, 3, 4, 4}, st), 7);
  for (std::size_t t = 0; t < 7; ++t)
    for (std::size_t i = 0; i < 16; ++i) CHECK(up.data()[t * 16 + i] == doctest::Approx(frame[i]).epsilon(1e-14));
  // Linear ramp in time is reproduced exactly.
  std::vector<double> ramp(4);
  for (std::size_t t = 0; t < 4; ++t) ramp[t] = 2.0 + 3.0 * static_cast<double>(t) / 3.0;
  Tensor r = temporal_blend_upsample(Tensor({1, 4, 1, 1}, ramp), 10);
  for (std::size_t t = 0; t < 10; ++t) CHECK(r.data()[t] == doctest::Approx(2.0 + 3.0 * static_cast<double>(t) / 9.0).epsilon(1e-13));
  CHECK_THROWS(temporal_blend_upsample(vid, 2));
}

TEST_CASE("strategy transitions") {
  Rng rng(20);
  Tensor low = randn({4, 8, 8}, 21), full = randn({4, 16, 16}, 22);
  auto target = ScaleSpec::square(16);
  CHECK_THROWS_AS(strategy_transition(low, 0.5, target, Strategy::kA, rng), std::invalid_argument);
  // B at tau = 0 is the upsampled clean field.
  CHECK(strategy_transition(low, 0.0, target, Strategy::kB, rng).to_vector() == upsample_bicubic(low, 2).to_vector());
  // C at tau = 1 is upsampled white noise, whose per-pixel variance drops below 1.
  Tensor c = strategy_transition(randn({256, 8, 8}, 23), 1.0, target, Strategy::kC, rng);
  double var = mean_all(square(c)).item();
  // Oracle: the variance of a linear filter on white noise is the squared
  // weight sum; averaged over output pixels via the interpolation matrix.
  auto m = bicubic_matrix(8, 16);
  double row_energy = 0;
  for (std::size_t o = 0; o < 16; ++o) {
    double s = 0;
    for (std::size_t i = 0; i < 8; ++i) s += m[o * 8 + i] * m[o * 8 + i];
    row_energy += s / 16.0;
  }
  CHECK(var == doctest::Approx(row_energy * row_energy).epsilon(0.03));
  CHECK(var < 0.9);
  // A and B at tau = 1 are both white noise at full resolution.
  Tensor a = strategy_transition(full, 1.0, target, Strategy::kA, rng, &full);
  CHECK(mean_all(square(a)).item() == doctest::Approx(1.0).epsilon(0.1));
}
