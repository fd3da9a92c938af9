#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "swd/resample.hpp"
#include "swd/spectral.hpp"

namespace swd {

/// Paired timestep and scale lists. Timesteps are stored as integers in
/// [0, 1000] (tau = t / 1000) so text round-trips exactly.
struct ScheduleSpec {
  std::vector<int> t;
  std::vector<ScaleSpec> scales;
  /// Written back as TxHxW triples rather than plain sizes.
  bool triples = false;

  std::size_t size() const { return t.size(); }
  double tau(std::size_t i) const { return static_cast<double>(t.at(i)) / 1000.0; }
  std::vector<double> taus() const;
  const ScaleSpec& target() const { return scales.back(); }
  bool operator==(const ScheduleSpec&) const = default;
};

struct Violation {
  std::size_t index = 0;
  std::string rule;
};

/// Checks every schedule invariant; an empty result means valid. patch = 0
/// skips the divisibility rule, a null target skips the final-scale rule.
std::vector<Violation> validate(const ScheduleSpec& spec, std::size_t patch = 0, const ScaleSpec* target = nullptr);
std::string describe(const std::vector<Violation>& violations);

class ScheduleParseError : public std::invalid_argument {
 public:
  ScheduleParseError(const std::string& what, std::size_t pos)
      : std::invalid_argument(what + " (at column " + std::to_string(pos + 1) + ")"), position(pos) {}
  std::size_t position;
};

/// Grammar: `t=<ints 0..1000>; s=<ints or TxHxW triples>`.
ScheduleSpec parse_schedule(const std::string& text);
std::string serialize(const ScheduleSpec& spec);

/// Same timesteps, every scale set to the final one.
ScheduleSpec full_resolution(const ScheduleSpec& spec);

/// n taus from 1 downward: uniform grid 1 - i/n pushed toward noise by
/// shift s: tau -> s tau / (1 + (s - 1) tau).
std::vector<double> default_tau_grid(std::size_t n, double shift = 3.0);

/// Assigns each tau the smallest size allowed by safe_scale, rounded up to
/// the patch size, made non-decreasing, and ending at target_res.
ScheduleSpec suggest_schedule(const Spectrum& signal, std::size_t n, std::size_t target_res, double rho = 3.0,
                              const std::vector<double>& tau_grid = {}, std::size_t patch = 4, double shift = 3.0);

/// Video variant: spatial and temporal sizes come from their own spectra
/// (rapsd and temporal_psd) and are combined per step. Frame counts are
/// rounded up to a multiple of temporal_patch.
ScheduleSpec suggest_video_schedule(const Spectrum& spatial, const Spectrum& temporal, std::size_t n,
                                    const ScaleSpec& target, double rho = 3.0,
                                    const std::vector<double>& tau_grid = {}, std::size_t patch = 4,
                                    std::size_t temporal_patch = 2, double shift = 3.0);

}  // namespace swd
