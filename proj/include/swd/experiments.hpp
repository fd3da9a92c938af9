#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "swd/distill.hpp"
#include "swd/evalbench.hpp"
#include "swd/resample.hpp"

namespace swd {

// ---------------------------------------------------------------------------
// Noisy-latent upsampling strategies

struct StrategyExperimentConfig {
  std::vector<double> taus{0.4, 0.6, 0.8};
  /// (low, full) square sizes.
  std::vector<std::pair<std::size_t, std::size_t>> pairs{{8, 32}, {16, 32}, {24, 32}};
  std::vector<Strategy> strategies{Strategy::kA, Strategy::kB, Strategy::kC};
  std::size_t n = 256;
  /// Euler steps for a full 1 -> 0 trajectory; a cell starting at tau runs round(tau * steps).
  std::size_t euler_steps = 20;
  double cfg_scale = 4.5;
  std::size_t batch = 64;
};

struct StrategyCell {
  Strategy strategy = Strategy::kA;
  double tau = 0.0;
  std::size_t low = 0, full = 0;  // A ignores low; reported as low == full
  double fd = 0.0;
};

/// For every (strategy, tau, pair) cell, builds x_t from the first n source
/// samples, lets the teacher finish the trajectory with Euler steps and scores
/// the result with fd_teacher against `reference`. Strategy A does not depend
/// on the pair and is run once per tau. All cells at one tau share their noise
/// draws (rng.split(tau index)), so results do not depend on which strategies
/// or pairs run alongside.
std::vector<StrategyCell> run_strategy_experiment(const DenoiserNet& teacher, const Dataset& source,
                                                  const Dataset& reference, const StrategyExperimentConfig& config,
                                                  const Rng& rng);
void write_strategy_csv(std::ostream& out, const std::vector<StrategyCell>& cells);
/// Looks up a cell; A matches any pair.
const StrategyCell& find_cell(const std::vector<StrategyCell>& cells, Strategy s, double tau, std::size_t low = 0);

// ---------------------------------------------------------------------------
// Students

struct StudentSpec {
  std::string name;
  DistillConfig config;
};

struct EvalOptions {
  std::size_t samples = 512;
  std::size_t latency_runs = 20;
  std::size_t latency_batch = 8;
  bool latency = true;
};

struct StudentResult {
  std::string name;
  ScheduleSpec schedule;
  double fd = 0.0;
  double mmd = 0.0;
  double sec_per_sample = 0.0;
  double sec_std = 0.0;
  double flops = 0.0;
};

/// Scores a student with fixed sampling seeds. `metric` extracts the features.
StudentResult evaluate_student(const std::string& name, const DenoiserNet& student, const ScheduleSpec& schedule,
                               const DenoiserNet& metric, const Dataset& reference, std::uint64_t seed,
                               const EvalOptions& options);

/// Scale-wise N-step, full-resolution N-step and time-matched full-resolution
/// students built from one base config (the base schedule is the scale-wise one).
std::vector<StudentSpec> full_vs_scalewise_specs(const DistillConfig& base, const ScheduleSpec& time_matched);

/// Distills every spec into out/<name> (resuming finished or partial runs)
/// and evaluates each student against `reference` with the teacher as metric.
std::vector<StudentResult> compare_full_vs_scalewise(const DenoiserNet& teacher, const Dataset& train,
                                                     const Dataset& reference, const std::vector<StudentSpec>& specs,
                                                     const std::filesystem::path& out, std::uint64_t seed,
                                                     const EvalOptions& options);
/// Quality columns only, so the file is reproducible; timing goes to the latency CSV.
void write_student_csv(std::ostream& out, const std::vector<StudentResult>& rows);
void write_latency_csv(std::ostream& out, const std::vector<StudentResult>& rows);

struct RobustnessCell {
  std::string teacher;  // "full" or "highres"
  std::string loss;     // "mmd" or "dmd"
  StudentResult result;
};

/// Distills four students (2 teachers x {MMD-only, DMD-only}) on the same
/// data; all are scored with `metric` so the cells share one feature space.
std::vector<RobustnessCell> lowres_robustness(const DenoiserNet& full_teacher, const DenoiserNet& highres_teacher,
                                              const DenoiserNet& metric, const Dataset& train,
                                              const Dataset& reference, const DistillConfig& base,
                                              const std::filesystem::path& out, std::uint64_t seed,
                                              const EvalOptions& options);
void write_robustness_csv(std::ostream& out, const std::vector<RobustnessCell>& cells);

}  // namespace swd
