#pragma once

#include <functional>
#include <string>
#include <vector>

#include "swd/distill.hpp"
#include "swd/network.hpp"
#include "swd/schedule.hpp"

namespace swd {

/// Per-image token means (N x C) of the teacher's middle block at tau = 0
/// with the null class.
Tensor teacher_features(const DenoiserNet& teacher, const Tensor& samples, std::size_t batch = 64);

struct FrechetResult {
  double distance = 0.0;
  /// Added to both covariance diagonals when either was near singular; 0 otherwise.
  double ridge = 0.0;
};

/// sqrt(|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2))) between Gaussians fit
/// to the rows of a and b.
FrechetResult frechet_distance(const Tensor& a, const Tensor& b);

/// FD-teacher between two sample sets. Sets the ridge in `detail` when given.
double fd_teacher(const Tensor& samples, const Tensor& reference, const DenoiserNet& teacher,
                  FrechetResult* detail = nullptr);

/// mmd2 over the same features as fd_teacher.
double mmd_metric(const Tensor& samples, const Tensor& reference, const DenoiserNet& teacher,
                  const KernelSpec& kernel = {KernelSpec::Kind::kRbf, 0.0});

struct LatencyResult {
  double mean = 0.0;  // seconds per sample
  double stddev = 0.0;
  std::size_t runs = 0;
  std::size_t batch = 0;
};

/// Times sampler(batch) over `runs` calls after `warmup` discarded ones.
LatencyResult latency_bench(const std::function<void(std::size_t batch)>& sampler, std::size_t runs = 100,
                            std::size_t batch = 8, std::size_t warmup = 2);

/// Multiply-adds of one forward pass on `tokens` tokens.
double forward_flops(const NetConfig& config, std::size_t tokens);
/// Per-step multiply-adds along a schedule.
std::vector<double> step_flops(const NetConfig& config, const ScheduleSpec& schedule);
/// Total multiply-adds per sample.
double flop_estimate(const NetConfig& config, const ScheduleSpec& schedule);

}  // namespace swd
