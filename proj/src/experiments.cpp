#include "swd/experiments.hpp"

#include <cmath>
#include <ostream>

#include "swd/config.hpp"

namespace swd {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Noisy-latent upsampling strategies

namespace {

// Builds x_t for one cell batch by batch and finishes each trajectory.
Tensor continue_cell(const DenoiserNet& teacher, const Dataset& src, Strategy s, double tau, std::size_t low,
                     std::size_t full, const StrategyExperimentConfig& cfg, const Rng& rng) {
  const VelocityFn v = velocity_of(teacher);
  const ScaleSpec target = ScaleSpec::square(full);
  const std::size_t steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(tau * cfg.euler_steps)));
  std::vector<Tensor> parts;
  for (std::size_t start = 0, b = 0; start < cfg.n; start += cfg.batch, ++b) {
    const std::size_t m = std::min(cfg.batch, cfg.n - start);
    const Tensor x0 = slice(src.x0, 0, start, start + m);
    const std::vector<int> cls(src.classes.begin() + static_cast<std::ptrdiff_t>(start),
                               src.classes.begin() + static_cast<std::ptrdiff_t>(start + m));
    const Tensor x0_full = resize_to(x0, target);
    const Tensor x0_low = resize_to(x0, ScaleSpec::square(low));
    Rng r = rng.split(b);
    const Tensor xt = strategy_transition(x0_low, tau, target, s, r, &x0_full);
    parts.push_back(euler_integrate(v, xt, tau, steps, cfg.cfg_scale, cls));
  }
  return parts.size() == 1 ? parts[0] : concat(parts, 0);
}

}  // namespace

std::vector<StrategyCell> run_strategy_experiment(const DenoiserNet& teacher, const Dataset& source,
                                                  const Dataset& reference, const StrategyExperimentConfig& config,
                                                  const Rng& rng) {
  if (source.size() < config.n) {
    throw std::invalid_argument("strategy experiment: need " + std::to_string(config.n) + " source samples, have " +
                                std::to_string(source.size()));
  }
  std::vector<StrategyCell> cells;
  const Tensor ref_features = teacher_features(teacher, reference.x0);
  for (std::size_t ti = 0; ti < config.taus.size(); ++ti) {
    const double tau = config.taus[ti];
    for (Strategy s : config.strategies) {
      for (std::size_t pi = 0; pi < config.pairs.size(); ++pi) {
        auto [low, full] = config.pairs[pi];
        if (s == Strategy::kA) {
          if (pi > 0) continue;
          low = full;
        }
        // Every cell at one tau gets the same draws, so A and B see identical
        // noise and their difference is the upsampling error alone.
        const Tensor out = continue_cell(teacher, source, s, tau, low, full, config, rng.split(ti));
        StrategyCell c;
        c.strategy = s;
        c.tau = tau;
        c.low = low;
        c.full = full;
        c.fd = frechet_distance(teacher_features(teacher, out), ref_features).distance;
        cells.push_back(c);
      }
    }
  }
  return cells;
}

void write_strategy_csv(std::ostream& out, const std::vector<StrategyCell>& cells) {
  out << "strategy,tau,low,full,fd_teacher\n";
  for (const auto& c : cells) {
    out << strategy_name(c.strategy) << "," << format_double(c.tau) << "," << c.low << "," << c.full << ","
        << format_double(c.fd) << "\n";
  }
}

const StrategyCell& find_cell(const std::vector<StrategyCell>& cells, Strategy s, double tau, std::size_t low) {
  for (const auto& c : cells) {
    if (c.strategy == s && std::abs(c.tau - tau) < 1e-12 && (s == Strategy::kA || c.low == low)) return c;
  }
  throw std::out_of_range(std::string("no strategy cell ") + strategy_name(s) + " tau=" + format_double(tau) +
                          " low=" + std::to_string(low));
}

// ---------------------------------------------------------------------------
// Students

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

}  // namespace

StudentResult evaluate_student(const std::string& name, const DenoiserNet& student, const ScheduleSpec& schedule,
                               const DenoiserNet& metric, const Dataset& reference, std::uint64_t seed,
                               const EvalOptions& options) {
  StudentResult r;
  r.name = name;
  r.schedule = schedule;
  const VelocityFn v = velocity_of(student);
  const std::size_t k = student.config().num_classes;
  const Tensor samples = sample_batched(v, schedule, options.samples, k, Rng(seed, 11));
  const Tensor fs_ = teacher_features(metric, samples), fr = teacher_features(metric, reference.x0);
  r.fd = frechet_distance(fs_, fr).distance;
  {
    NoGradGuard guard;
    r.mmd = mmd2(fs_, fr, {KernelSpec::Kind::kRbf, 0.0}).item();
  }
  r.flops = flop_estimate(student.config(), schedule);
  if (options.latency) {
    std::size_t call = 0;
    const auto lat = latency_bench(
        [&](std::size_t batch) {
          std::vector<int> cls(batch);
          for (std::size_t i = 0; i < batch; ++i) cls[i] = static_cast<int>(i % k);
          scalewise_sample(v, schedule, cls, Rng(seed, 12).split(call++));
        },
        options.latency_runs, options.latency_batch);
    r.sec_per_sample = lat.mean;
    r.sec_std = lat.stddev;
  }
  return r;
}

std::vector<StudentSpec> full_vs_scalewise_specs(const DistillConfig& base, const ScheduleSpec& time_matched) {
  std::vector<StudentSpec> specs;
  const std::size_t n = base.schedule.size();
  specs.push_back({"scalewise-" + std::to_string(n) + "step", base});
  DistillConfig full = base;
  full.schedule = full_resolution(base.schedule);
  specs.push_back({"fullres-" + std::to_string(n) + "step", full});
  DistillConfig matched = base;
  matched.schedule = full_resolution(time_matched);
  specs.push_back({"fullres-" + std::to_string(matched.schedule.size()) + "step", matched});
  return specs;
}

namespace {

DenoiserNet distill_or_resume(const DistillConfig& cfg, const DenoiserNet& teacher, const Dataset& train,
                              const fs::path& dir, std::uint64_t seed) {
  return distill_run(cfg, teacher, train, nullptr, dir, seed, true);
}

}  // namespace

std::vector<StudentResult> compare_full_vs_scalewise(const DenoiserNet& teacher, const Dataset& train,
                                                     const Dataset& reference, const std::vector<StudentSpec>& specs,
                                                     const fs::path& out, std::uint64_t seed,
                                                     const EvalOptions& options) {
  std::vector<StudentResult> rows;
  for (const auto& spec : specs) {
    const DenoiserNet student = distill_or_resume(spec.config, teacher, train, out / spec.name, seed);
    rows.push_back(evaluate_student(spec.name, student, spec.config.schedule, teacher, reference, seed, options));
  }
  return rows;
}

void write_student_csv(std::ostream& out, const std::vector<StudentResult>& rows) {
  out << "name,schedule,fd_teacher,mmd_rbf,madds_per_sample\n";
  for (const auto& r : rows) {
    out << csv_field(r.name) << "," << csv_field(serialize(r.schedule)) << "," << format_double(r.fd) << "," << format_double(r.mmd)
        << "," << format_double(r.flops) << "\n";
  }
}

void write_latency_csv(std::ostream& out, const std::vector<StudentResult>& rows) {
  out << "name,schedule,sec_per_sample,sec_std,madds_per_sample\n";
  for (const auto& r : rows) {
    out << csv_field(r.name) << "," << csv_field(serialize(r.schedule)) << "," << format_double(r.sec_per_sample) << ","
        << format_double(r.sec_std) << "," << format_double(r.flops) << "\n";
  }
}

std::vector<RobustnessCell> lowres_robustness(const DenoiserNet& full_teacher, const DenoiserNet& highres_teacher,
                                              const DenoiserNet& metric, const Dataset& train,
                                              const Dataset& reference, const DistillConfig& base,
                                              const fs::path& out, std::uint64_t seed, const EvalOptions& options) {
  std::vector<RobustnessCell> cells;
  const std::pair<const char*, const DenoiserNet*> teachers[] = {{"full", &full_teacher},
                                                                  {"highres", &highres_teacher}};
  for (const auto& [tname, teacher] : teachers) {
    for (const char* loss : {"mmd", "dmd"}) {
      DistillConfig cfg = base;
      cfg.weights = std::string(loss) == "mmd" ? LossWeights{1.0, 0.0, 0.0} : LossWeights{0.0, 1.0, 0.0};
      const std::string name = std::string(tname) + "-" + loss;
      const DenoiserNet student = distill_or_resume(cfg, *teacher, train, out / name, seed);
      RobustnessCell c;
      c.teacher = tname;
      c.loss = loss;
      c.result = evaluate_student(name, student, cfg.schedule, metric, reference, seed, options);
      cells.push_back(c);
    }
  }
  return cells;
}

void write_robustness_csv(std::ostream& out, const std::vector<RobustnessCell>& cells) {
  out << "teacher,loss,fd_teacher,mmd_rbf\n";
  for (const auto& c : cells) {
    out << c.teacher << "," << c.loss << "," << format_double(c.result.fd) << "," << format_double(c.result.mmd)
        << "\n";
  }
}

}  // namespace swd
