#pragma once

#include <array>
#include <cstdint>

#include "swd/tensor.hpp"

namespace swd {

/// Counter-based generator (Philox4x32-10). Output depends only on
/// (seed, stream, draw index), so results reproduce across platforms and
/// independent streams can be handed to workers without coordination.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  /// Number of 32-bit words consumed so far.
  std::uint64_t position() const { return counter_ * 4 + (4 - available_); }

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal (Box-Muller, pairs cached).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Independent child generator; same parent and id always yield the same child.
  Rng split(std::uint64_t id) const;

  static std::array<std::uint32_t, 4> philox(std::array<std::uint32_t, 4> counter,
                                             std::array<std::uint32_t, 2> key);

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int available_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// I.i.d. standard normal tensor.
Tensor gaussian(const Shape& shape, Rng& rng);
/// I.i.d. uniform [lo, hi) tensor.
Tensor uniform(const Shape& shape, Rng& rng, double lo = 0.0, double hi = 1.0);

std::uint64_t mix64(std::uint64_t x);

}  // namespace swd
