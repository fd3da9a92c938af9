#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "swd/rng.hpp"
#include "swd/tensor.hpp"

namespace swd {

/// How bicubic taps that fall outside the field are folded back in.
/// kMirror (half-sample symmetric) keeps integer-factor upsampling exactly
/// mean preserving; kClamp repeats the edge pixel.
enum class Boundary { kMirror, kClamp };

/// Target size of a field; t = 1 for images.
struct ScaleSpec {
  std::size_t t = 1;
  std::size_t h = 0;
  std::size_t w = 0;

  static ScaleSpec square(std::size_t s) { return {1, s, s}; }
  bool operator==(const ScaleSpec&) const = default;
  std::string str() const;
};

/// Spatial size of an image batch N x H x W or video batch N x T x H x W.
ScaleSpec scale_of(const Tensor& x);

/// Block-mean pooling over the trailing spatial axes (and time for rank-4
/// input when ft > 1). Differentiable.
Tensor downsample_area(const Tensor& x, std::size_t fh, std::size_t fw, std::size_t ft = 1);

/// Separable resampling matrices, out x in.
std::vector<double> area_matrix(std::size_t in, std::size_t out);
std::vector<double> bicubic_matrix(std::size_t in, std::size_t out, Boundary boundary = Boundary::kMirror);
std::vector<double> blend_matrix(std::size_t in, std::size_t out);

/// Area-weighted resize to a smaller (possibly non-integer ratio) size.
Tensor resize_area(const Tensor& x, std::size_t h, std::size_t w);
/// Catmull-Rom (a = -0.5) resize with half-pixel centres. Differentiable.
Tensor resize_bicubic(const Tensor& x, std::size_t h, std::size_t w, Boundary boundary = Boundary::kMirror);
Tensor upsample_bicubic(const Tensor& x, std::size_t factor, Boundary boundary = Boundary::kMirror);
/// Each output frame blends the two input frames around its normalized time.
Tensor temporal_blend_upsample(const Tensor& video, std::size_t frames);

/// Moves x to `target` per axis: area pooling when shrinking, bicubic
/// (spatial) or frame blending (time) when growing.
Tensor resize_to(const Tensor& x, const ScaleSpec& target);

enum class Strategy { kA, kB, kC };
char strategy_name(Strategy s);

/// Noisy latent at the target scale.
///   A: noise the full-resolution data directly (needs x0_full)
///   B: upsample the low-resolution clean field, then noise
///   C: noise at low resolution, then upsample
Tensor strategy_transition(const Tensor& x0_low, double tau, const ScaleSpec& target, Strategy strategy, Rng& rng,
                           const Tensor* x0_full = nullptr);

}  // namespace swd
