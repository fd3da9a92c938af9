#include "swd/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "swd/config.hpp"
#include "swd/diffusion.hpp"
#include "swd/fft.hpp"

namespace swd {

namespace {

int signed_freq(std::size_t k, std::size_t n) {
  return k <= n / 2 ? static_cast<int>(k) : static_cast<int>(k) - static_cast<int>(n);
}

Spectrum finish(std::vector<double> sum, const std::vector<double>& weight, std::size_t samples) {
  Spectrum s;
  s.sample_count = samples;
  for (std::size_t f = 0; f < sum.size(); ++f) {
    s.freq.push_back(static_cast<double>(f));
    s.power.push_back(weight[f] > 0 ? sum[f] / weight[f] : 0.0);
  }
  return s;
}

}  // namespace

Spectrum rapsd(const Tensor& fields) {
  Tensor x = fields;
  if (x.rank() == 2) x = reshape(x, {1, x.dim(0), x.dim(1)});
  if (x.rank() != 3) throw ShapeError("rapsd: expected N x H x W fields, got " + shape_str(fields.shape()));
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (n == 0) throw std::invalid_argument("rapsd: empty field set");
  if (h < 2 || w < 2) throw ShapeError("rapsd: fields must be at least 2x2");
  const std::size_t bins = std::min(h, w) / 2 + 1;
  const std::size_t half = w / 2 + 1;
  // Bin index and multiplicity of every half-grid cell.
  std::vector<std::size_t> bin(h * half);
  std::vector<double> mult(h * half), weight(bins, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t c = 0; c < half; ++c) {
      const bool mirrored = c != 0 && !(w % 2 == 0 && c == w / 2);
      const auto r = static_cast<std::size_t>(std::lround(std::hypot(signed_freq(y, h), static_cast<double>(c))));
      bin[y * half + c] = r;
      mult[y * half + c] = mirrored ? 2.0 : 1.0;
      if (r < bins) weight[r] += mirrored ? 2.0 : 1.0;
    }
  }
  std::vector<double> sum(bins, 0.0);
  const double norm = 1.0 / static_cast<double>(h * w);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor p = rfft_power2(reshape(slice(x, 0, i, i + 1), {h, w}));
    const auto& pv = p.data();
    for (std::size_t j = 0; j < pv.size(); ++j) {
      if (bin[j] < bins) sum[bin[j]] += mult[j] * pv[j] * norm;
    }
  }
  for (auto& s : sum) s /= static_cast<double>(n);
  return finish(std::move(sum), weight, n);
}

Spectrum temporal_psd(const Tensor& videos) {
  if (videos.rank() != 4) throw ShapeError("temporal_psd: expected N x T x H x W, got " + shape_str(videos.shape()));
  const std::size_t n = videos.dim(0), t = videos.dim(1), hw = videos.dim(2) * videos.dim(3);
  if (t < 4) throw std::invalid_argument("temporal_psd: need at least 4 frames");
  const std::size_t bins = t / 2 + 1;
  std::vector<double> sum(bins, 0.0);
  std::vector<Complex> buf(t);
  const auto& v = videos.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t k = 0; k < t; ++k) buf[k] = Complex(v[(i * t + k) * hw + p], 0.0);
      fft(buf);
      for (std::size_t k = 0; k < bins; ++k) sum[k] += std::norm(buf[k]) / static_cast<double>(t);
    }
  }
  for (auto& s : sum) s /= static_cast<double>(n * hw);
  return finish(std::move(sum), std::vector<double>(bins, 1.0), n);
}

Spectrum spectrum_of(const Tensor& x) { return x.rank() == 4 ? temporal_psd(x) : rapsd(x); }

Spectrum white_spectrum(std::size_t bins) {
  return finish(std::vector<double>(bins, 1.0), std::vector<double>(bins, 1.0), 0);
}

Spectrum noisy_spectrum(const Tensor& x0, double tau, Rng& rng) {
  return spectrum_of(noise_to(x0, tau, gaussian(x0.shape(), rng)));
}

std::size_t crossover_frequency(const Spectrum& signal, double tau, double rho, const Spectrum* noise) {
  if (!(rho > 1.0)) throw std::invalid_argument("crossover_frequency: rho must exceed 1");
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("crossover_frequency: tau outside [0,1]");
  if (noise && noise->size() != signal.size()) throw std::invalid_argument("crossover_frequency: bin count mismatch");
  const std::size_t top = signal.max_freq();
  std::size_t f_star = top + 1;
  for (std::size_t f = top; f >= 1; --f) {
    const double np = noise ? noise->power[f] : 1.0;
    if (tau * tau * np >= rho * (1 - tau) * (1 - tau) * signal.power[f]) {
      f_star = f;
    } else {
      break;
    }
  }
  return f_star;
}

std::size_t safe_scale(const Spectrum& signal, double tau, std::size_t full_res, double rho, std::size_t cap,
                       const Spectrum* noise) {
  if (!is_power_of_two(full_res)) throw std::invalid_argument("safe_scale: full resolution must be a power of two");
  const std::size_t f_star = crossover_frequency(signal, tau, rho, noise);
  std::size_t best = 1;
  for (std::size_t d = 1; d <= cap && d <= full_res; d *= 2) {
    if (full_res / d / 2 >= f_star) best = d;
  }
  return best;
}

std::vector<SpectrumReport> analyze_spectrum(const Tensor& x0, const std::vector<double>& taus, Rng& rng, double rho) {
  std::vector<SpectrumReport> out;
  const Spectrum signal = spectrum_of(x0);
  for (std::size_t i = 0; i < taus.size(); ++i) {
    Rng r = rng.split(i);
    SpectrumReport rep;
    rep.tau = taus[i];
    rep.signal = signal;
    rep.noise = spectrum_of(gaussian(x0.shape(), r));
    rep.noisy = noisy_spectrum(x0, taus[i], r);
    rep.crossover = crossover_frequency(signal, taus[i], rho, &rep.noise);
    out.push_back(std::move(rep));
  }
  return out;
}

void write_spectrum_csv(std::ostream& out, const std::vector<SpectrumReport>& reports) {
  out << "tau,freq,signal_power,noise_power,noisy_power,masked\n";
  for (const auto& r : reports) {
    for (std::size_t f = 0; f < r.signal.size(); ++f) {
      out << format_double(r.tau) << "," << f << "," << format_double(r.signal.power[f]) << ","
          << format_double(r.noise.power[f]) << "," << format_double(r.noisy.power[f]) << ","
          << (f >= 1 && f >= r.crossover ? "true" : "false") << "\n";
    }
  }
}

std::string svg_line_plot(const std::string& title, const std::vector<PlotSeries>& series, bool log_x, bool log_y,
                          const std::string& x_label, const std::string& y_label) {
  constexpr double kW = 640, kH = 420, kL = 70, kR = 150, kT = 40, kB = 50;
  auto tx = [&](double v) { return log_x ? std::log10(v) : v; };
  auto ty = [&](double v) { return log_y ? std::log10(v) : v; };
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if ((log_x && s.x[i] <= 0) || (log_y && s.y[i] <= 0)) continue;
      x0 = std::min(x0, tx(s.x[i]));
      x1 = std::max(x1, tx(s.x[i]));
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  }
  if (x0 > x1) x0 = 0, x1 = 1;
  if (y0 > y1) y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double v) { return kL + (tx(v) - x0) / (x1 - x0) * (kW - kL - kR); };
  auto py = [&](double v) { return kH - kB - (ty(v) - y0) / (y1 - y0) * (kH - kT - kB); };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
    << title << "</text>\n";
  o << "<rect x=\"" << kL << "\" y=\"" << kT << "\" width=\"" << kW - kL - kR << "\" height=\"" << kH - kT - kB
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  auto label = [&](double v, bool log) {
    std::ostringstream s;
    s.precision(3);
    s << (log ? std::pow(10.0, v) : v);
    return s.str();
  };
  o << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<text x=\"" << kL << "\" y=\"" << kH - kB + 16 << "\">" << label(x0, log_x) << "</text>\n";
  o << "<text x=\"" << kW - kR << "\" y=\"" << kH - kB + 16 << "\" text-anchor=\"end\">" << label(x1, log_x)
    << "</text>\n";
  o << "<text x=\"" << kL - 6 << "\" y=\"" << kH - kB << "\" text-anchor=\"end\">" << label(y0, log_y) << "</text>\n";
  o << "<text x=\"" << kL - 6 << "\" y=\"" << kT + 10 << "\" text-anchor=\"end\">" << label(y1, log_y) << "</text>\n";
  o << "<text x=\"" << (kW - kR + kL) / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">" << x_label
    << "</text>\n";
  o << "<text x=\"16\" y=\"" << (kH - kB + kT) / 2 << "\" transform=\"rotate(-90 16," << (kH - kB + kT) / 2
    << ")\" text-anchor=\"middle\">" << y_label << "</text>\n";
  o << "</g>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % 7];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if ((log_x && s.x[i] <= 0) || (log_y && s.y[i] <= 0)) continue;
      o << px(s.x[i]) << "," << py(s.y[i]) << " ";
    }
    o << "\"/>\n";
    o << "<text x=\"" << kW - kR + 10 << "\" y=\"" << kT + 14 + 16 * static_cast<double>(k)
      << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << color << "\">" << s.name << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace swd
