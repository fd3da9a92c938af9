// swdlab: command-line front end for data generation, teacher training,
// spectral analysis, distillation, sampling and benchmarks.
//
// Every subcommand resolves its settings as defaults < --config file < flags
// and writes run.meta (version, seed, command, resolved settings) next to
// its outputs. Exit codes: 0 ok, 1 runtime failure, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "swd/config.hpp"
#include "swd/diffusion.hpp"
#include "swd/distill.hpp"
#include "swd/evalbench.hpp"
#include "swd/experiments.hpp"
#include "swd/parallel.hpp"
#include "swd/schedule.hpp"
#include "swd/spectral.hpp"

#ifndef SWD_VERSION
#define SWD_VERSION "unknown"
#endif

using namespace swd;
namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 1;
  std::string config;
  std::string out;
  std::size_t threads = 1;
  bool quiet = false;
  std::vector<std::string> sets;  // --set key=value
};

Globals g;

void note(const std::string& msg) {
  if (!g.quiet) std::cerr << msg << std::endl;
}

// Defaults < file < flags. Keys absent from `defaults` are usage errors.
KeyValues resolve(const KeyValues& defaults, const std::map<std::string, std::string>& flags) {
  KeyValues kv = defaults;
  auto check = [&](const std::string& key, const std::string& where) {
    if (!defaults.has(key)) throw UsageError("unknown setting '" + key + "' in " + where);
  };
  if (!g.config.empty()) {
    if (!fs::exists(g.config)) throw UsageError("--config: no such file " + g.config);
    KeyValues file;
    try {
      file = KeyValues::load(g.config);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    for (const auto& [k, v] : file.entries()) check(k, g.config);
    kv.merge(file);
  }
  for (const auto& s : g.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    const std::string key = trim(s.substr(0, eq));
    check(key, "--set");
    kv.set(key, trim(s.substr(eq + 1)));
  }
  for (const auto& [k, v] : flags) {
    check(k, "flags");
    kv.set(k, v);
  }
  return kv;
}

// Wraps struct parsing so malformed values count as usage errors.
template <class F>
auto parse_settings(F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

void write_meta(const fs::path& dir, const std::string& command, const KeyValues& resolved,
                const std::map<std::string, std::string>& inputs) {
  fs::create_directories(dir);
  std::ofstream meta(dir / "run.meta");
  meta << "version=" << SWD_VERSION << "\n";
  meta << "command=" << command << "\n";
  meta << "seed=" << g.seed << "\n";
  meta << "threads=" << g.threads << "\n";
  for (const auto& [k, v] : inputs) meta << "input." << k << "=" << v << "\n";
  meta << "# resolved settings\n" << resolved.to_text();
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

PlotSeries loss_curve(const fs::path& csv, const std::string& name, const std::string& column) {
  PlotSeries s{name, {}, {}};
  std::ifstream in(csv);
  std::string line;
  if (!std::getline(in, line)) return s;
  const auto header = split(line, ',');
  std::size_t col = 0;
  while (col < header.size() && header[col] != column) ++col;
  if (col == header.size()) return s;
  while (std::getline(in, line)) {
    const auto f = split(line, ',');
    if (f.size() <= col) continue;
    s.x.push_back(std::stod(f[0]));
    s.y.push_back(std::stod(f[col]));
  }
  return s;
}

// ---------------------------------------------------------------------------
// gen-data

void run_gen_data(const std::map<std::string, std::string>& flags) {
  KeyValues defaults = KeyValues::parse(DataSpec{}.to_text());
  defaults.set("n", "1024");
  const KeyValues kv = resolve(defaults, flags);
  const DataSpec spec = parse_settings([&] {
    DataSpec s = DataSpec::from_text(kv.to_text());
    s.validate();
    return s;
  });
  const auto n = static_cast<std::size_t>(kv.get_int("n", 0));
  if (n == 0) throw UsageError("n must be positive");
  const fs::path out = g.out;
  Rng rng(g.seed);
  note("generating " + std::to_string(n) + " samples");
  save_dataset(gen_dataset(spec, n, rng), out);
  write_meta(out, "gen-data", kv, {});
}

// ---------------------------------------------------------------------------
// train-teacher

void run_train_teacher(const std::string& data_dir, const std::map<std::string, std::string>& flags) {
  const KeyValues kv = resolve(KeyValues::parse(TeacherConfig{}.to_text()), flags);
  const TeacherConfig cfg = parse_settings([&] {
    TeacherConfig c = TeacherConfig::from_text(kv.to_text());
    c.net.validate();
    return c;
  });
  const Dataset data = load_dataset(data_dir);
  const fs::path out = g.out;
  fs::create_directories(out);
  auto csv = open_out(out / "loss.csv");
  csv << "step,loss\n";
  const DenoiserNet net = train_teacher(cfg, data, g.seed, [&](std::size_t step, double loss) {
    csv << step << "," << format_double(loss) << "\n";
    if ((step + 1) % 100 == 0) note("step " + std::to_string(step + 1) + " loss " + format_double(loss));
  });
  net.save(out);
  write_meta(out, "train-teacher", kv, {{"data", data_dir}});
}

// ---------------------------------------------------------------------------
// analyze-spectrum

void run_analyze_spectrum(const std::string& data_dir, bool svg, const std::map<std::string, std::string>& flags) {
  KeyValues defaults;
  defaults.set("taus", "0.2,0.4,0.6,0.8,0.95");
  defaults.set("rho", "3");
  defaults.set("steps", "4");
  defaults.set("patch", "4");
  defaults.set("temporal_patch", "2");
  defaults.set("shift", "3");
  const KeyValues kv = resolve(defaults, flags);
  const auto taus = parse_settings([&] { return parse_double_list(kv.require("taus")); });
  const double rho = kv.get_double("rho", 3), shift = kv.get_double("shift", 3);
  const auto steps = static_cast<std::size_t>(kv.get_int("steps", 4));
  const auto patch = static_cast<std::size_t>(kv.get_int("patch", 4));
  const Dataset data = load_dataset(data_dir);
  const fs::path out = g.out;
  fs::create_directories(out);

  Rng rng(g.seed);
  const auto reports = analyze_spectrum(data.x0, taus, rng, rho);
  {
    auto csv = open_out(out / "spectrum.csv");
    write_spectrum_csv(csv, reports);
  }
  ScheduleSpec suggested;
  if (data.x0.rank() == 4) {
    const ScaleSpec target{data.x0.dim(1), data.x0.dim(2), data.x0.dim(3)};
    suggested = suggest_video_schedule(rapsd(data.x0), temporal_psd(data.x0), steps, target, rho, {}, patch,
                                       static_cast<std::size_t>(kv.get_int("temporal_patch", 2)), shift);
  } else {
    suggested = suggest_schedule(rapsd(data.x0), steps, data.x0.dim(1), rho, {}, patch, shift);
  }
  {
    auto txt = open_out(out / "schedule.txt");
    txt << serialize(suggested) << "\n";
  }
  std::cout << serialize(suggested) << "\n";
  if (svg) {
    std::vector<PlotSeries> series;
    series.push_back({"signal", reports[0].signal.freq, reports[0].signal.power});
    series.push_back({"noise", reports[0].noise.freq, reports[0].noise.power});
    for (const auto& r : reports) series.push_back({"tau=" + format_double(r.tau), r.noisy.freq, r.noisy.power});
    auto f = open_out(out / "spectrum.svg");
    f << svg_line_plot("radial power spectrum", series, true, true, "frequency", "power");
  }
  write_meta(out, "analyze-spectrum", kv, {{"data", data_dir}});
}

// ---------------------------------------------------------------------------
// ablate-upsampling

void run_ablate(const std::string& teacher_dir, const std::string& source_dir, const std::string& reference_dir,
                bool svg, const std::map<std::string, std::string>& flags) {
  const StrategyExperimentConfig base;
  KeyValues defaults;
  std::string taus, pairs;
  for (double t : base.taus) taus += (taus.empty() ? "" : ",") + format_double(t);
  for (const auto& [lo, hi] : base.pairs) pairs += (pairs.empty() ? "" : ",") + std::to_string(lo) + ":" + std::to_string(hi);
  defaults.set("taus", taus);
  defaults.set("pairs", pairs);
  defaults.set("strategies", "A,B,C");
  defaults.set("n", std::to_string(base.n));
  defaults.set("euler_steps", std::to_string(base.euler_steps));
  defaults.set("cfg_scale", format_double(base.cfg_scale));
  defaults.set("batch", std::to_string(base.batch));
  const KeyValues kv = resolve(defaults, flags);
  const StrategyExperimentConfig cfg = parse_settings([&] {
    StrategyExperimentConfig c;
    c.taus = parse_double_list(kv.require("taus"));
    c.pairs.clear();
    for (const auto& p : split(kv.require("pairs"), ',')) {
      const auto f = split(p, ':');
      if (f.size() != 2) throw ConfigError("pairs expects low:full entries, got '" + p + "'");
      c.pairs.push_back({std::stoul(f[0]), std::stoul(f[1])});
    }
    c.strategies.clear();
    for (const auto& s : split(kv.require("strategies"), ',')) {
      const std::string t = trim(s);
      if (t == "A") c.strategies.push_back(Strategy::kA);
      else if (t == "B") c.strategies.push_back(Strategy::kB);
      else if (t == "C") c.strategies.push_back(Strategy::kC);
      else throw ConfigError("unknown strategy '" + t + "' (expected A, B or C)");
    }
    c.n = static_cast<std::size_t>(kv.get_int("n", 256));
    c.euler_steps = static_cast<std::size_t>(kv.get_int("euler_steps", 20));
    c.cfg_scale = kv.get_double("cfg_scale", 4.5);
    c.batch = static_cast<std::size_t>(kv.get_int("batch", 64));
    return c;
  });
  const DenoiserNet teacher = DenoiserNet::load(teacher_dir);
  const Dataset source = load_dataset(source_dir), reference = load_dataset(reference_dir);
  const fs::path out = g.out;
  note("running " + std::to_string(cfg.taus.size()) + " noise levels");
  const auto cells = run_strategy_experiment(teacher, source, reference, cfg, Rng(g.seed));
  {
    auto csv = open_out(out / "strategy.csv");
    write_strategy_csv(csv, cells);
  }
  if (svg) {
    std::vector<PlotSeries> series;
    for (const auto& c : cells) {
      const std::string name = std::string(1, strategy_name(c.strategy)) +
                               (c.strategy == Strategy::kA ? "" : " " + std::to_string(c.low) + "->" +
                                                                       std::to_string(c.full));
      auto it = std::find_if(series.begin(), series.end(), [&](const PlotSeries& s) { return s.name == name; });
      if (it == series.end()) it = series.insert(series.end(), PlotSeries{name, {}, {}});
      it->x.push_back(c.tau);
      it->y.push_back(c.fd);
    }
    auto f = open_out(out / "strategy.svg");
    f << svg_line_plot("fd_teacher by noise level", series, false, false, "tau", "fd_teacher");
  }
  write_meta(out, "ablate-upsampling", kv,
             {{"teacher", teacher_dir}, {"source", source_dir}, {"reference", reference_dir}});
}

// ---------------------------------------------------------------------------
// distill

DistillConfig distill_settings(const KeyValues& kv) {
  return parse_settings([&] {
    DistillConfig c = DistillConfig::from_text(kv.to_text());
    c.validate();
    return c;
  });
}

void run_distill(const std::string& teacher_dir, const std::string& data_dir, const std::string& reference_dir,
                 bool resume, const std::map<std::string, std::string>& flags) {
  const KeyValues kv = resolve(KeyValues::parse(DistillConfig{}.to_text()), flags);
  const DistillConfig cfg = distill_settings(kv);
  if (cfg.eval_every > 0 && reference_dir.empty()) throw UsageError("eval_every > 0 needs --reference");
  const DenoiserNet teacher = DenoiserNet::load(teacher_dir);
  const Dataset train = load_dataset(data_dir);
  Dataset reference;
  if (!reference_dir.empty()) reference = load_dataset(reference_dir);
  const fs::path out = g.out;
  DistillLog log;
  log.on_step = [&](const StepReport& r) {
    if ((r.step + 1) % 50 == 0) note("step " + std::to_string(r.step + 1) + " loss " + format_double(r.loss));
  };
  log.on_eval = [&](std::size_t step, double fd) {
    note("step " + std::to_string(step) + " fd_teacher " + format_double(fd));
  };
  const DenoiserNet student =
      distill_run(cfg, teacher, train, reference_dir.empty() ? nullptr : &reference, out, g.seed, resume, log);
  student.save(out / "student");
  write_meta(out, "distill", kv, {{"teacher", teacher_dir}, {"data", data_dir}, {"reference", reference_dir}});
}

// ---------------------------------------------------------------------------
// sample

void run_sample(const std::string& student_dir, const std::map<std::string, std::string>& flags) {
  KeyValues defaults;
  defaults.set("schedule", serialize(DistillConfig{}.schedule));
  defaults.set("n", "64");
  defaults.set("batch", "64");
  const KeyValues kv = resolve(defaults, flags);
  const ScheduleSpec schedule = parse_settings([&] { return parse_schedule(kv.require("schedule")); });
  const DenoiserNet student = DenoiserNet::load(student_dir);
  const auto problems = validate(schedule, student.config().patch_size);
  if (!problems.empty()) throw UsageError("schedule: " + describe(problems));
  const auto n = static_cast<std::size_t>(kv.get_int("n", 64));
  const auto batch = static_cast<std::size_t>(kv.get_int("batch", 64));
  if (n == 0 || batch == 0) throw UsageError("n and batch must be positive");
  Dataset d;
  d.x0 = sample_batched(velocity_of(student), schedule, n, student.config().num_classes, Rng(g.seed), batch);
  for (std::size_t i = 0; i < n; ++i) d.classes.push_back(static_cast<int>(i % student.config().num_classes));
  save_dataset(d, g.out);
  write_meta(g.out, "sample", kv, {{"student", student_dir}});
}

// ---------------------------------------------------------------------------
// bench

struct BenchInputs {
  std::string mode;
  std::string student, teacher, highres_teacher, data, reference;
  std::vector<std::string> schedules;
  bool svg = false;
};

void require_input(const std::string& value, const char* flag, const std::string& mode) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required for --mode " + mode);
}

EvalOptions eval_options(const KeyValues& kv) {
  EvalOptions o;
  o.samples = static_cast<std::size_t>(kv.get_int("samples", 512));
  o.latency_runs = static_cast<std::size_t>(kv.get_int("latency_runs", 100));
  o.latency_batch = static_cast<std::size_t>(kv.get_int("latency_batch", 8));
  if (o.samples < 2 || o.latency_runs == 0 || o.latency_batch == 0) {
    throw UsageError("samples must be >= 2, latency_runs and latency_batch positive");
  }
  return o;
}

void training_curves(const fs::path& runs, const std::vector<std::string>& names, const fs::path& svg) {
  std::vector<PlotSeries> series;
  for (const auto& n : names) series.push_back(loss_curve(runs / n / "losses.csv", n, "loss"));
  auto f = open_out(svg);
  f << svg_line_plot("generator loss", series, false, true, "step", "loss");
}

void run_bench(const BenchInputs& in, const std::map<std::string, std::string>& flags) {
  KeyValues defaults = KeyValues::parse(DistillConfig{}.to_text());
  defaults.set("samples", "512");
  defaults.set("latency_runs", "100");
  defaults.set("latency_batch", "8");
  defaults.set("time_matched", "t=1000,750; s=32,32");
  const KeyValues kv = resolve(defaults, flags);
  EvalOptions opts = eval_options(kv);
  const fs::path csv = g.out;
  const fs::path dir = csv.has_parent_path() ? csv.parent_path() : fs::path(".");
  std::map<std::string, std::string> inputs{{"mode", in.mode}};

  std::vector<ScheduleSpec> schedules;
  for (const auto& s : in.schedules) schedules.push_back(parse_settings([&] { return parse_schedule(s); }));
  if (schedules.empty()) schedules.push_back(parse_settings([&] { return parse_schedule(kv.require("schedule")); }));

  if (in.mode == "latency" || in.mode == "quality") {
    require_input(in.student, "--student", in.mode);
    const DenoiserNet student = DenoiserNet::load(in.student);
    inputs["student"] = in.student;
    std::unique_ptr<DenoiserNet> metric;
    Dataset reference;
    if (in.mode == "quality") {
      require_input(in.teacher, "--teacher", in.mode);
      require_input(in.reference, "--reference", in.mode);
      metric = std::make_unique<DenoiserNet>(DenoiserNet::load(in.teacher));
      reference = load_dataset(in.reference);
      inputs["teacher"] = in.teacher;
      inputs["reference"] = in.reference;
    }
    opts.latency = in.mode == "latency";
    std::vector<StudentResult> rows;
    for (const auto& s : schedules) {
      const auto problems = validate(s, student.config().patch_size);
      if (!problems.empty()) throw UsageError("schedule " + serialize(s) + ": " + describe(problems));
      if (in.mode == "latency") {
        StudentResult r;
        r.name = serialize(s);
        r.schedule = s;
        r.flops = flop_estimate(student.config(), s);
        std::size_t call = 0;
        const VelocityFn v = velocity_of(student);
        const auto lat = latency_bench(
            [&](std::size_t batch) {
              std::vector<int> cls(batch);
              for (std::size_t i = 0; i < batch; ++i) cls[i] = static_cast<int>(i % student.config().num_classes);
              scalewise_sample(v, s, cls, Rng(g.seed, 12).split(call++));
            },
            opts.latency_runs, opts.latency_batch);
        r.sec_per_sample = lat.mean;
        r.sec_std = lat.stddev;
        rows.push_back(r);
      } else {
        rows.push_back(evaluate_student(serialize(s), student, s, *metric, reference, g.seed, opts));
      }
    }
    auto f = open_out(csv);
    if (in.mode == "latency") {
      write_latency_csv(f, rows);
    } else {
      write_student_csv(f, rows);
    }
  } else if (in.mode == "compare") {
    require_input(in.teacher, "--teacher", in.mode);
    require_input(in.data, "--data", in.mode);
    require_input(in.reference, "--reference", in.mode);
    const DistillConfig base = distill_settings(kv);
    const ScheduleSpec matched = parse_settings([&] { return parse_schedule(kv.require("time_matched")); });
    const DenoiserNet teacher = DenoiserNet::load(in.teacher);
    const Dataset train = load_dataset(in.data), reference = load_dataset(in.reference);
    const auto specs = full_vs_scalewise_specs(base, matched);
    const fs::path runs = dir / "runs";
    const auto rows = compare_full_vs_scalewise(teacher, train, reference, specs, runs, g.seed, opts);
    {
      auto f = open_out(csv);
      write_student_csv(f, rows);
    }
    {
      auto f = open_out(dir / (csv.stem().string() + "_latency.csv"));
      write_latency_csv(f, rows);
    }
    if (in.svg) {
      std::vector<std::string> names;
      for (const auto& s : specs) names.push_back(s.name);
      training_curves(runs, names, dir / (csv.stem().string() + ".svg"));
    }
    inputs.insert({{"teacher", in.teacher}, {"data", in.data}, {"reference", in.reference}});
  } else if (in.mode == "robustness") {
    require_input(in.teacher, "--teacher", in.mode);
    require_input(in.highres_teacher, "--highres-teacher", in.mode);
    require_input(in.data, "--data", in.mode);
    require_input(in.reference, "--reference", in.mode);
    const DistillConfig base = distill_settings(kv);
    const DenoiserNet full = DenoiserNet::load(in.teacher), high = DenoiserNet::load(in.highres_teacher);
    const Dataset train = load_dataset(in.data), reference = load_dataset(in.reference);
    const fs::path runs = dir / "runs";
    opts.latency = false;
    const auto cells = lowres_robustness(full, high, full, train, reference, base, runs, g.seed, opts);
    {
      auto f = open_out(csv);
      write_robustness_csv(f, cells);
    }
    if (in.svg) training_curves(runs, {"full-mmd", "full-dmd", "highres-mmd", "highres-dmd"},
                                dir / (csv.stem().string() + ".svg"));
    inputs.insert({{"teacher", in.teacher},
                   {"highres_teacher", in.highres_teacher},
                   {"data", in.data},
                   {"reference", in.reference}});
  }
  write_meta(dir, "bench", kv, inputs);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"swdlab: scale-wise diffusion distillation at toy scale"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", SWD_VERSION);
  app.add_option("--seed", g.seed, "Random seed (u64)");
  app.add_option("--config", g.config, "key=value settings file; flags override it");
  app.add_option("--out", g.out, "Output directory (bench: CSV path)");
  app.add_option("--threads", g.threads, "Worker threads for batch-parallel metric and sampling work")
      ->check(CLI::PositiveNumber);
  app.add_flag("--quiet", g.quiet, "No progress output");
  app.add_option("--set", g.sets, "Override one setting, key=value (repeatable)");

  std::map<std::string, std::string> flags;
  auto keyed = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(flag, [&flags, key](const std::string& v) { flags[key] = v; }, help);
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  keyed(gen, "--n", "n", "Number of samples");
  keyed(gen, "--kind", "kind", "powerlaw-texture, blob-scene or moving-blob-video");
  gen->add_option_function<std::string>(
      "--res",
      [&flags](const std::string& v) {
        flags["h"] = v;
        flags["w"] = v;
      },
      "Square resolution");

  std::string data, teacher, highres, reference, student, source;
  bool resume = false, svg = false;

  auto* train = app.add_subcommand("train-teacher", "Train a flow-matching teacher");
  train->add_option("--data", data, "Dataset directory")->required();
  keyed(train, "--steps", "steps", "Optimizer steps");
  keyed(train, "--batch", "batch", "Batch size");
  keyed(train, "--scales", "scales", "Comma-separated square training resolutions");

  auto* spec = app.add_subcommand("analyze-spectrum", "Radial spectra under noise and a suggested schedule");
  spec->add_option("--data", data, "Dataset directory")->required();
  keyed(spec, "--taus", "taus", "Comma-separated noise levels");
  keyed(spec, "--steps", "steps", "Length of the suggested schedule");
  spec->add_flag("--svg", svg, "Also write spectrum.svg");

  auto* ablate = app.add_subcommand("ablate-upsampling", "Compare noisy-latent upsampling strategies");
  ablate->add_option("--teacher", teacher, "Teacher checkpoint directory")->required();
  ablate->add_option("--source", source, "Dataset the noisy latents are built from")->required();
  ablate->add_option("--reference", reference, "Reference dataset for fd_teacher")->required();
  keyed(ablate, "--taus", "taus", "Comma-separated noise levels");
  keyed(ablate, "--n", "n", "Samples per cell");
  ablate->add_flag("--svg", svg, "Also write strategy.svg");

  auto* dist = app.add_subcommand("distill", "Distill a scale-wise student");
  dist->add_option("--teacher", teacher, "Teacher checkpoint directory")->required();
  dist->add_option("--data", data, "Training dataset directory")->required();
  dist->add_option("--reference", reference, "Reference dataset for periodic fd_teacher");
  dist->add_flag("--resume", resume, "Continue from <out>/ckpt");
  keyed(dist, "--schedule", "schedule", "Schedule, e.g. \"t=1000,945,790,602; s=8,16,24,32\"");
  keyed(dist, "--steps", "steps", "Optimizer steps");
  keyed(dist, "--batch", "batch", "Batch size");

  auto* sample = app.add_subcommand("sample", "Draw samples from a student");
  sample->add_option("--student", student, "Student checkpoint directory")->required();
  keyed(sample, "--schedule", "schedule", "Sampling schedule");
  keyed(sample, "--n", "n", "Number of samples");

  BenchInputs bi;
  auto* bench = app.add_subcommand("bench", "Latency, quality and comparison benchmarks");
  bench->add_option("--mode", bi.mode, "latency, quality, compare or robustness")
      ->required()
      ->check(CLI::IsMember({"latency", "quality", "compare", "robustness"}));
  bench->add_option("--student", bi.student, "Student checkpoint (latency, quality)");
  bench->add_option("--teacher", bi.teacher, "Teacher checkpoint (quality metric, compare, robustness)");
  bench->add_option("--highres-teacher", bi.highres_teacher, "Teacher trained at full resolution only (robustness)");
  bench->add_option("--data", bi.data, "Training dataset (compare, robustness)");
  bench->add_option("--reference", bi.reference, "Reference dataset (quality, compare, robustness)");
  bench->add_option("--schedule", bi.schedules, "Schedule to measure (repeatable; latency, quality)");
  bench->add_flag("--svg", bi.svg, "Also write training curves as SVG (compare, robustness)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* failing = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << failing->help();
    return 2;
  }

  set_worker_threads(g.threads);
  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  if (g.out.empty()) g.out = name == "bench" ? "bench.csv" : "swdlab_out";
  try {
    if (name == "gen-data") {
      run_gen_data(flags);
    } else if (name == "train-teacher") {
      run_train_teacher(data, flags);
    } else if (name == "analyze-spectrum") {
      run_analyze_spectrum(data, svg, flags);
    } else if (name == "ablate-upsampling") {
      run_ablate(teacher, source, reference, svg, flags);
    } else if (name == "distill") {
      run_distill(teacher, data, reference, resume, flags);
    } else if (name == "sample") {
      run_sample(student, flags);
    } else if (name == "bench") {
      run_bench(bi, flags);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << sub->help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
