#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "swd/rng.hpp"
#include "swd/tensor.hpp"

namespace swd {

/// Mean power per integer frequency bin; bin 0 is DC. Powers are normalized
/// by the number of transformed points, so unit white noise sits at 1.
struct Spectrum {
  std::vector<double> freq;
  std::vector<double> power;
  std::size_t sample_count = 0;

  std::size_t size() const { return power.size(); }
  std::size_t max_freq() const { return power.empty() ? 0 : power.size() - 1; }
};

/// Radially averaged PSD of N x H x W fields, binned by rounded radius up to
/// min(H, W) / 2. A single H x W field is accepted too.
Spectrum rapsd(const Tensor& fields);
/// Per-pixel PSD along time for N x T x H x W videos, bins 0..T/2.
Spectrum temporal_psd(const Tensor& videos);
/// rapsd for images, temporal_psd for videos.
Spectrum spectrum_of(const Tensor& x);
/// Spectrum of unit white noise with the given number of bins.
Spectrum white_spectrum(std::size_t bins);

/// Spectrum of noise_to(x0, tau, eps) with fresh eps.
Spectrum noisy_spectrum(const Tensor& x0, double tau, Rng& rng);

/// Smallest f >= 1 such that tau^2 N(f) >= rho (1-tau)^2 S(f) for every bin
/// from f up; max_freq + 1 when the top bin is not masked. N defaults to white.
std::size_t crossover_frequency(const Spectrum& signal, double tau, double rho = 3.0, const Spectrum* noise = nullptr);

/// Largest d in {1, 2, 4, ..., cap} with Nyquist(full_res / d) >= f*(tau).
std::size_t safe_scale(const Spectrum& signal, double tau, std::size_t full_res, double rho = 3.0,
                       std::size_t cap = 8, const Spectrum* noise = nullptr);

struct SpectrumReport {
  double tau = 0;
  Spectrum signal, noise, noisy;
  std::size_t crossover = 0;
};

std::vector<SpectrumReport> analyze_spectrum(const Tensor& x0, const std::vector<double>& taus, Rng& rng,
                                             double rho = 3.0);
/// CSV: tau,freq,signal_power,noise_power,noisy_power,masked
void write_spectrum_csv(std::ostream& out, const std::vector<SpectrumReport>& reports);

struct PlotSeries {
  std::string name;
  std::vector<double> x, y;
};
/// Standalone SVG line plot. Non-positive values are dropped on log axes.
std::string svg_line_plot(const std::string& title, const std::vector<PlotSeries>& series, bool log_x, bool log_y,
                          const std::string& x_label = "", const std::string& y_label = "");

}  // namespace swd
