#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "swd/diffusion.hpp"
#include "swd/spectral.hpp"

using namespace swd;

namespace {

double flat_ratio(const Spectrum& s, std::size_t lo, std::size_t hi) {
  double mn = 1e300, mx = 0;
  for (std::size_t f = lo; f <= hi; ++f) {
    mn = std::min(mn, s.power[f]);
    mx = std::max(mx, s.power[f]);
  }
  return mx / mn;
}

double slope(const Spectrum& s, std::size_t lo, std::size_t hi) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
  for (std::size_t f = lo; f <= hi; ++f) {
    const double x = std::log(double(f)), y = std::log(s.power[f]);
    sx += x, sy += y, sxx += x * x, sxy += x * y, n += 1;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

Tensor powerlaw(std::size_t n, std::size_t res, std::uint64_t seed, double beta) {
  DataSpec spec;
  spec.h = spec.w = res;
  spec.classes = 1;
  spec.betas = {beta};
  Rng rng(seed);
  return gen_dataset(spec, n, rng).x0;
}

}  // namespace

TEST_CASE("white noise has a flat radial spectrum") {
  Rng rng(1);
  Spectrum s = rapsd(gaussian({256, 64, 64}, rng));
  CHECK(s.size() == 33);
  CHECK(s.sample_count == 256);
  CHECK(flat_ratio(s, 1, 31) < 1.15);
  CHECK(s.power[10] == doctest::Approx(1.0).epsilon(0.05));
  for (std::size_t f = 0; f < s.size(); ++f) CHECK(s.freq[f] == double(f));
}

TEST_CASE("radial tone lands in its bin") {
  const std::size_t n = 32;
  std::vector<double> v(n * n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) v[y * n + x] = std::cos(2 * std::numbers::pi * 5.0 * double(x) / double(n));
  Spectrum s = rapsd(Tensor({n, n}, v));
  std::size_t arg = 0;
  for (std::size_t f = 1; f < s.size(); ++f)
    if (s.power[f] > s.power[arg]) arg = f;
  CHECK(arg == 5);
  double rest = 0;
  for (std::size_t f = 0; f < s.size(); ++f)
    if (f != 5) rest += s.power[f];
  CHECK(rest < 1e-20);
}

TEST_CASE("power-law slope") {
  Spectrum s = rapsd(powerlaw(128, 64, 2, 2.5));
  CHECK(slope(s, 8, 31) == doctest::Approx(-2.5).epsilon(0.3 / 2.5));
  Spectrum s2 = rapsd(powerlaw(128, 64, 3, 1.5));
  CHECK(slope(s2, 8, 31) == doctest::Approx(-1.5).epsilon(0.3 / 1.5));
}

TEST_CASE("rapsd is invariant to rotations and flips") {
  Tensor x = powerlaw(8, 16, 4, 2.0);
  Spectrum a = rapsd(x);
  Spectrum rot = rapsd(transpose(x, 1, 2));  // transpose = rotation composed with a flip
  std::vector<double> flipped(x.numel());
  const auto& d = x.data();
  for (std::size_t n = 0; n < 8; ++n)
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t c = 0; c < 16; ++c) flipped[(n * 16 + y) * 16 + c] = d[(n * 16 + y) * 16 + (15 - c)];
  Spectrum flip = rapsd(Tensor(x.shape(), flipped));
  // Bin 0 is skipped: the fields are standardized, so DC holds only rounding noise.
  for (std::size_t f = 1; f < a.size(); ++f) {
    CHECK(std::abs(rot.power[f] / a.power[f] - 1) < 1e-10);
    CHECK(std::abs(flip.power[f] / a.power[f] - 1) < 1e-10);
  }
  CHECK_THROWS(rapsd(Tensor::zeros({0, 4, 4})));
}

TEST_CASE("temporal spectra") {
  // Static video: only DC.
  Rng rng(5);
  Tensor frame = gaussian({2, 1, 4, 4}, rng);
  Tensor stat = concat({frame, frame, frame, frame, frame, frame, frame, frame}, 1);
  Spectrum s = temporal_psd(stat);
  CHECK(s.size() == 5);
  CHECK(s.power[0] > 0);
  for (std::size_t f = 1; f < s.size(); ++f) CHECK(s.power[f] < 1e-25);

  Spectrum w = temporal_psd(gaussian({256, 16, 4, 4}, rng));
  CHECK(flat_ratio(w, 1, 8) < 1.15);

  DataSpec spec;
  spec.kind = DataKind::kMovingBlob;
  spec.t = 16;
  spec.h = spec.w = 16;
  spec.classes = 1;
  spec.betas = {};
  auto vid = gen_dataset(spec, 64, rng);
  Spectrum m = temporal_psd(vid.x0);
  for (std::size_t f = 2; f < m.size(); ++f) CHECK(m.power[f] < m.power[f - 1]);
  CHECK_THROWS(temporal_psd(gaussian({1, 3, 4, 4}, rng)));
}

TEST_CASE("noisy spectra and additivity") {
  Tensor x0 = powerlaw(200, 32, 6, 2.5);
  Spectrum s = rapsd(x0);
  Rng r0(7);
  Spectrum at0 = noisy_spectrum(x0, 0.0, r0);
  for (std::size_t f = 0; f < s.size(); ++f) CHECK(at0.power[f] == s.power[f]);
  Rng r1(8);
  CHECK(flat_ratio(noisy_spectrum(x0, 1.0, r1), 1, 16) < 1.15);
  for (double tau : {0.3, 0.6, 0.8}) {
    Rng r(9);
    Tensor eps = gaussian(x0.shape(), r);
    Spectrum n = rapsd(eps);
    Spectrum mixed = rapsd(noise_to(x0, tau, eps));
    for (std::size_t f = 0; f < s.size(); ++f) {
      const double expect = (1 - tau) * (1 - tau) * s.power[f] + tau * tau * n.power[f];
      CHECK(std::abs(mixed.power[f] / expect - 1) < 0.05);
    }
  }
}

TEST_CASE("crossover frequency and safe scale") {
  Spectrum s = rapsd(powerlaw(128, 32, 10, 2.5));
  CHECK(crossover_frequency(s, 1.0) == 1);
  CHECK(crossover_frequency(s, 0.0) == s.max_freq() + 1);
  const auto f9 = crossover_frequency(s, 0.9), f6 = crossover_frequency(s, 0.6), f3 = crossover_frequency(s, 0.3);
  CHECK(f9 < f6);
  CHECK(f6 < f3);
  CHECK(safe_scale(s, 0.999, 32) == 8);
  CHECK(safe_scale(s, 0.0, 32) == 1);
  std::size_t prev = 8;
  for (double tau = 0.9; tau > 0.05; tau -= 0.1) {
    const auto d = safe_scale(s, tau, 32);
    CHECK(d <= prev);
    prev = d;
  }
  CHECK_THROWS(crossover_frequency(s, 0.5, 1.0));
  CHECK_THROWS(safe_scale(s, 0.5, 24));
}

TEST_CASE("spectrum report CSV and SVG") {
  Tensor x0 = powerlaw(16, 16, 11, 2.0);
  Rng rng(12);
  auto reps = analyze_spectrum(x0, {0.4, 0.8}, rng);
  std::ostringstream csv;
  write_spectrum_csv(csv, reps);
  const std::string text = csv.str();
  CHECK(text.rfind("tau,freq,signal_power,noise_power,noisy_power,masked\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 2 * 9);
  auto svg = svg_line_plot("spectra", {{"a", {1, 2, 3}, {1, 0.5, 0.25}}}, true, true);
  CHECK(svg.find("<polyline") != std::string::npos);
}
