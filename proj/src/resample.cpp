#include "swd/resample.hpp"

#include <cmath>
#include <stdexcept>

#include "swd/diffusion.hpp"

namespace swd {

namespace {

double catmull_rom(double x) {
  x = std::abs(x);
  if (x <= 1.0) return (1.5 * x - 2.5) * x * x + 1.0;
  if (x < 2.0) return ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0;
  return 0.0;
}

std::size_t fold(std::ptrdiff_t j, std::size_t n, Boundary b) {
  const auto sn = static_cast<std::ptrdiff_t>(n);
  if (b == Boundary::kClamp) return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(j, 0, sn - 1));
  // Half-sample symmetric: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
  const std::ptrdiff_t period = 2 * sn;
  j %= period;
  if (j < 0) j += period;
  if (j >= sn) j = period - 1 - j;
  return static_cast<std::size_t>(j);
}

// Applies an out x in matrix along one axis of x.
Tensor apply_axis(const Tensor& x, const std::vector<double>& m, std::size_t in, std::size_t out, std::size_t axis) {
  std::vector<double> mt(in * out);
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t i = 0; i < in; ++i) mt[i * out + o] = m[o * in + i];
  }
  Tensor rhs({in, out}, std::move(mt));
  const std::size_t last = x.rank() - 1;
  if (axis == last) return matmul(x, rhs);
  Tensor moved = transpose(x, static_cast<std::ptrdiff_t>(axis), static_cast<std::ptrdiff_t>(last));
  return transpose(matmul(moved, rhs), static_cast<std::ptrdiff_t>(axis), static_cast<std::ptrdiff_t>(last));
}

void check_spatial(const Tensor& x, const char* op) {
  if (x.rank() != 3 && x.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected N x H x W or N x T x H x W, got " + shape_str(x.shape()));
  }
}

}  // namespace

std::string ScaleSpec::str() const {
  if (t == 1 && h == w) return std::to_string(h);
  return std::to_string(t) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

ScaleSpec scale_of(const Tensor& x) {
  check_spatial(x, "scale_of");
  const auto& s = x.shape();
  if (s.size() == 3) return {1, s[1], s[2]};
  return {s[1], s[2], s[3]};
}

Tensor downsample_area(const Tensor& x, std::size_t fh, std::size_t fw, std::size_t ft) {
  check_spatial(x, "downsample_area");
  const auto& s = x.shape();
  if (fh == 0 || fw == 0 || ft == 0) throw std::invalid_argument("downsample_area: factors must be positive");
  const std::size_t r = s.size();
  const std::size_t h = s[r - 2], w = s[r - 1];
  const std::size_t t = r == 4 ? s[1] : 1;
  if (h % fh != 0 || w % fw != 0 || t % ft != 0 || (r == 3 && ft != 1)) {
    throw ShapeError("downsample_area: shape " + shape_str(s) + " not divisible by factors (" + std::to_string(ft) +
                     "," + std::to_string(fh) + "," + std::to_string(fw) + ")");
  }
  if (fh == 1 && fw == 1 && ft == 1) return x;
  if (r == 3) return mean(reshape(x, {s[0], h / fh, fh, w / fw, fw}), {2, 4});
  return mean(reshape(x, {s[0], t / ft, ft, h / fh, fh, w / fw, fw}), {2, 4, 6});
}

std::vector<double> area_matrix(std::size_t in, std::size_t out) {
  if (in == 0 || out == 0) throw std::invalid_argument("area_matrix: sizes must be positive");
  std::vector<double> m(out * in, 0.0);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double lo = static_cast<double>(o) * ratio, hi = static_cast<double>(o + 1) * ratio;
    for (auto i = static_cast<std::size_t>(std::floor(lo)); i < in && static_cast<double>(i) < hi; ++i) {
      const double overlap = std::min(hi, static_cast<double>(i + 1)) - std::max(lo, static_cast<double>(i));
      if (overlap > 0) m[o * in + i] = overlap / ratio;
    }
  }
  return m;
}

std::vector<double> bicubic_matrix(std::size_t in, std::size_t out, Boundary boundary) {
  if (in == 0 || out == 0) throw std::invalid_argument("bicubic_matrix: sizes must be positive");
  std::vector<double> m(out * in, 0.0);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    const auto base = static_cast<std::ptrdiff_t>(std::floor(src));
    for (std::ptrdiff_t j = base - 1; j <= base + 2; ++j) {
      m[o * in + fold(j, in, boundary)] += catmull_rom(src - static_cast<double>(j));
    }
  }
  return m;
}

std::vector<double> blend_matrix(std::size_t in, std::size_t out) {
  if (in == 0 || out == 0) throw std::invalid_argument("blend_matrix: sizes must be positive");
  std::vector<double> m(out * in, 0.0);
  for (std::size_t o = 0; o < out; ++o) {
    const double c =
        out == 1 ? 0.0 : static_cast<double>(o) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
    const auto lo = std::min(static_cast<std::size_t>(std::floor(c)), in - 1);
    const double frac = c - static_cast<double>(lo);
    m[o * in + lo] += 1.0 - frac;
    if (frac > 0) m[o * in + lo + 1] += frac;
  }
  return m;
}

Tensor resize_area(const Tensor& x, std::size_t h, std::size_t w) {
  check_spatial(x, "resize_area");
  const std::size_t r = x.rank();
  const std::size_t ih = x.dim(r - 2), iw = x.dim(r - 1);
  if (h > ih || w > iw || h == 0 || w == 0) {
    throw std::invalid_argument("resize_area: target " + std::to_string(h) + "x" + std::to_string(w) +
                                " must be positive and no larger than " + std::to_string(ih) + "x" +
                                std::to_string(iw));
  }
  if (ih % h == 0 && iw % w == 0) return downsample_area(x, ih / h, iw / w);
  Tensor y = x;
  if (w != iw) y = apply_axis(y, area_matrix(iw, w), iw, w, r - 1);
  if (h != ih) y = apply_axis(y, area_matrix(ih, h), ih, h, r - 2);
  return y;
}

Tensor resize_bicubic(const Tensor& x, std::size_t h, std::size_t w, Boundary boundary) {
  check_spatial(x, "resize_bicubic");
  const std::size_t r = x.rank();
  const std::size_t ih = x.dim(r - 2), iw = x.dim(r - 1);
  if (h == 0 || w == 0) throw std::invalid_argument("resize_bicubic: target size must be positive");
  Tensor y = x;
  if (w != iw) y = apply_axis(y, bicubic_matrix(iw, w, boundary), iw, w, r - 1);
  if (h != ih) y = apply_axis(y, bicubic_matrix(ih, h, boundary), ih, h, r - 2);
  return y;
}

Tensor upsample_bicubic(const Tensor& x, std::size_t factor, Boundary boundary) {
  if (factor == 0) throw std::invalid_argument("upsample_bicubic: factor must be >= 1");
  if (factor == 1) return x;
  const std::size_t r = x.rank();
  return resize_bicubic(x, x.dim(r - 2) * factor, x.dim(r - 1) * factor, boundary);
}

Tensor temporal_blend_upsample(const Tensor& video, std::size_t frames) {
  if (video.rank() != 4) throw ShapeError("temporal_blend_upsample: expected N x T x H x W, got " + shape_str(video.shape()));
  const std::size_t t = video.dim(1);
  if (frames < t) {
    throw std::invalid_argument("temporal_blend_upsample: target " + std::to_string(frames) + " frames < input " +
                                std::to_string(t));
  }
  if (frames == t) return video;
  return apply_axis(video, blend_matrix(t, frames), t, frames, 1);
}

Tensor resize_to(const Tensor& x, const ScaleSpec& target) {
  const ScaleSpec cur = scale_of(x);
  if (x.rank() == 3 && target.t != 1) throw ShapeError("resize_to: image batch cannot move to " + target.str());
  Tensor y = x;
  if (target.t > cur.t) {
    y = temporal_blend_upsample(y, target.t);
  } else if (target.t < cur.t) {
    y = apply_axis(y, area_matrix(cur.t, target.t), cur.t, target.t, 1);
  }
  const bool shrink_h = target.h < cur.h, shrink_w = target.w < cur.w;
  if (shrink_h || shrink_w) {
    y = resize_area(y, std::min(target.h, cur.h), std::min(target.w, cur.w));
  }
  if (target.h > cur.h || target.w > cur.w) y = resize_bicubic(y, target.h, target.w);
  return y;
}

char strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kA: return 'A';
    case Strategy::kB: return 'B';
    case Strategy::kC: return 'C';
  }
  return '?';
}

Tensor strategy_transition(const Tensor& x0_low, double tau, const ScaleSpec& target, Strategy strategy, Rng& rng,
                           const Tensor* x0_full) {
  switch (strategy) {
    case Strategy::kA: {
      if (!x0_full) throw std::invalid_argument("strategy A needs the full-resolution clean field");
      if (!(scale_of(*x0_full) == target)) {
        throw ShapeError("strategy A: full-resolution field is " + scale_of(*x0_full).str() + ", target " + target.str());
      }
      return noise_to(*x0_full, tau, gaussian(x0_full->shape(), rng));
    }
    case Strategy::kB: {
      Tensor up = resize_to(x0_low, target);
      return noise_to(up, tau, gaussian(up.shape(), rng));
    }
    case Strategy::kC: {
      Tensor noisy = noise_to(x0_low, tau, gaussian(x0_low.shape(), rng));
      return resize_to(noisy, target);
    }
  }
  throw std::invalid_argument("unknown strategy");
}

}  // namespace swd
