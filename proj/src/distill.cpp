#include "swd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "swd/config.hpp"
#include "swd/evalbench.hpp"
#include "swd/io.hpp"
#include "swd/parallel.hpp"

namespace swd {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Kernel discrepancy

double median_bandwidth(const Tensor& x, const Tensor& y) {
  const std::size_t d = x.dim(1);
  std::vector<const double*> rows;
  for (std::size_t i = 0; i < x.dim(0); ++i) rows.push_back(x.data().data() + i * d);
  for (std::size_t i = 0; i < y.dim(0); ++i) rows.push_back(y.data().data() + i * d);
  std::vector<double> dist;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) s += (rows[i][c] - rows[j][c]) * (rows[i][c] - rows[j][c]);
      dist.push_back(std::sqrt(s));
    }
  }
  if (dist.empty()) return 1.0;
  auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  return *mid > 0 ? *mid : 1.0;
}

namespace {

Tensor kernel_matrix(const Tensor& a, const Tensor& b, const KernelSpec& k, double bandwidth) {
  Tensor dot = matmul(a, transpose(b, 0, 1));
  if (k.kind == KernelSpec::Kind::kLinear) return dot;
  Tensor na = sum(square(a), {1}, true);                       // N x 1
  Tensor nb = reshape(sum(square(b), {1}, false), {1, b.dim(0)});  // 1 x M
  Tensor d2 = sub(add(na, nb), scale(dot, 2.0));
  return exp(scale(d2, -1.0 / (2.0 * bandwidth * bandwidth)));
}

Tensor off_diagonal_mask(std::size_t n) {
  std::vector<double> m(n * n, 1.0);
  for (std::size_t i = 0; i < n; ++i) m[i * n + i] = 0.0;
  return Tensor({n, n}, std::move(m));
}

}  // namespace

Tensor mmd2(const Tensor& x, const Tensor& y, const KernelSpec& kernel, bool unbiased) {
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(1)) {
    throw ShapeError("mmd2: expected N x D and M x D, got " + shape_str(x.shape()) + " and " + shape_str(y.shape()));
  }
  const std::size_t n = x.dim(0), m = y.dim(0);
  if (unbiased && (n < 2 || m < 2)) throw std::invalid_argument("mmd2: the unbiased estimate needs N, M >= 2");
  if (n == 0 || m == 0) throw std::invalid_argument("mmd2: empty sample set");
  double bw = kernel.bandwidth;
  if (kernel.kind == KernelSpec::Kind::kRbf && bw <= 0) bw = median_bandwidth(x.detach(), y.detach());

  Tensor kxx = kernel_matrix(x, x, kernel, bw);
  Tensor kyy = kernel_matrix(y, y, kernel, bw);
  Tensor kxy = kernel_matrix(x, y, kernel, bw);
  if (!unbiased) return sub(add(mean_all(kxx), mean_all(kyy)), scale(mean_all(kxy), 2.0));

  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  Tensor within = add(scale(sum_all(mul(kxx, off_diagonal_mask(n))), 1.0 / (nn * (nn - 1))),
                      scale(sum_all(mul(kyy, off_diagonal_mask(m))), 1.0 / (mm * (mm - 1))));
  // Equal sizes: the paired U-statistic also drops i == j from the cross term.
  Tensor cross = n == m ? scale(sum_all(mul(kxy, off_diagonal_mask(n))), 1.0 / (nn * (nn - 1))) : mean_all(kxy);
  return sub(within, scale(cross, 2.0));
}

const char* mmd_variant_name(MmdVariant v) {
  switch (v) {
    case MmdVariant::kMain: return "main";
    case MmdVariant::kRbf: return "rbf";
    case MmdVariant::kBatchMean: return "batch_mean";
    case MmdVariant::kNoNoise: return "no_noise";
  }
  return "main";
}

MmdVariant parse_mmd_variant(const std::string& s) {
  for (auto v : {MmdVariant::kMain, MmdVariant::kRbf, MmdVariant::kBatchMean, MmdVariant::kNoNoise}) {
    if (s == mmd_variant_name(v)) return v;
  }
  throw ConfigError("unknown mmd variant '" + s + "' (main, rbf, batch_mean, no_noise)");
}

Tensor mmd_loss(const Tensor& f_real, const Tensor& f_fake, MmdVariant variant) {
  if (f_real.rank() != 3 || f_fake.rank() != 3 || f_real.dim(0) != f_fake.dim(0) || f_real.dim(2) != f_fake.dim(2)) {
    throw ShapeError("mmd_loss: feature maps " + shape_str(f_real.shape()) + " and " + shape_str(f_fake.shape()) +
                     " do not match in batch and channels");
  }
  switch (variant) {
    case MmdVariant::kMain:
    case MmdVariant::kNoNoise:
      return sum_all(square(sub(mean(f_real, {1}), mean(f_fake, {1}))));
    case MmdVariant::kBatchMean:
      return sum_all(square(sub(mean(f_real, {0, 1}), mean(f_fake, {0, 1}))));
    case MmdVariant::kRbf: {
      Tensor total;
      const KernelSpec k{KernelSpec::Kind::kRbf, 0.0};
      for (std::size_t i = 0; i < f_real.dim(0); ++i) {
        Tensor a = reshape(slice(f_real, 0, i, i + 1), {f_real.dim(1), f_real.dim(2)});
        Tensor b = reshape(slice(f_fake, 0, i, i + 1), {f_fake.dim(1), f_fake.dim(2)});
        Tensor term = mmd2(a, b, k, false);
        total = i == 0 ? term : add(total, term);
      }
      return total;
    }
  }
  throw std::logic_error("mmd_loss: unhandled variant");
}

FeaturePair feature_pipeline(const Tensor& real, const Tensor& fake, std::span<const int> classes,
                             const DenoiserNet& teacher, std::array<double, 2> interval, MmdVariant variant,
                             Rng& rng) {
  if (real.shape() != fake.shape()) {
    throw ShapeError("feature_pipeline: real " + shape_str(real.shape()) + " vs fake " + shape_str(fake.shape()));
  }
  FeaturePair out;
  const std::size_t n = real.dim(0);
  out.tau.assign(n, 0.0);
  Tensor real_in = real.detach(), fake_in = fake;
  if (variant != MmdVariant::kNoNoise) {
    for (auto& t : out.tau) t = rng.uniform(interval[0], interval[1]);
    const Tensor eps = gaussian(real.shape(), rng);
    real_in = noise_to(real_in, out.tau, eps);
    fake_in = noise_to(fake, out.tau, eps);
  }
  {
    NoGradGuard guard;
    out.real = teacher.features(real_in, out.tau, classes);
  }
  out.fake = teacher.features(fake_in, out.tau, classes);
  return out;
}

// ---------------------------------------------------------------------------
// Distribution matching and adversarial terms

Tensor dmd_grad(const Tensor& student_x0, std::span<const int> classes, const VelocityFn& real,
                const VelocityFn& fake, double w, Rng& rng, std::array<double, 2> tau_range) {
  NoGradGuard guard;
  const Tensor x = student_x0.detach();
  const std::size_t n = x.dim(0);
  std::vector<double> tau(n);
  for (auto& t : tau) t = rng.uniform(tau_range[0], tau_range[1]);
  const Tensor xt = noise_to(x, tau, gaussian(x.shape(), rng));
  const Tensor real_x0 = x0_from_v(xt, guided_velocity(real, xt, tau, classes, w), tau);
  const Tensor fake_x0 = x0_from_v(xt, guided_velocity(fake, xt, tau, classes, 1.0), tau);

  const std::size_t per = x.numel() / n;
  std::vector<double> norm(n, 0.0);
  auto rd = real_x0.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < per; ++j) norm[i] += std::abs(rd[i * per + j] - xd[i * per + j]);
    norm[i] = std::max(norm[i] / static_cast<double>(per), 1e-12);
  }
  return div(sub(fake_x0, real_x0), per_sample(norm, x.rank()));
}

Tensor dmd_surrogate(const Tensor& x0, const Tensor& g) {
  const Tensor target = sub(x0.detach(), g.detach());
  return scale(mean_all(square(sub(x0, target))), 0.5);
}

double fake_train_step(DenoiserNet& fake, Adam& opt, const Tensor& student_x0, std::span<const int> classes,
                       Rng& rng) {
  return fm_train_step(fake, opt, student_x0.detach(), classes, rng, 0.0);
}

DiscHead DiscHead::init(std::size_t width, Rng& rng) {
  if (width == 0) throw std::invalid_argument("DiscHead: width must be positive");
  DiscHead h;
  h.width_ = width;
  const double sd = 1.0 / std::sqrt(static_cast<double>(width));
  for (int layer = 0; layer < 4; ++layer) {
    const std::size_t out = layer == 3 ? 1 : width;
    Tensor w = gaussian({width, out}, rng);
    std::vector<double> v = w.to_vector();
    for (auto& x : v) x *= sd;
    h.weights_.emplace_back(Shape{width, out}, std::move(v), true);
    h.biases_.push_back(Tensor::zeros({out}, true));
  }
  return h;
}

Tensor DiscHead::logits(const Tensor& features) const {
  if (weights_.empty()) throw std::logic_error("DiscHead: head is not initialized");
  if (features.rank() != 3 || features.dim(2) != width_) {
    throw ShapeError("DiscHead: expected N x L x " + std::to_string(width_) + " features, got " +
                     shape_str(features.shape()));
  }
  Tensor h = mean(features, {1});
  for (std::size_t i = 0; i < 4; ++i) {
    h = linear(h, weights_[i], biases_[i]);
    if (i < 3) h = silu(h);
  }
  return reshape(h, {features.dim(0)});
}

std::vector<Tensor> DiscHead::parameters() const {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    out.push_back(weights_[i]);
    out.push_back(biases_[i]);
  }
  return out;
}

void DiscHead::set_trainable(bool trainable) {
  for (auto& t : weights_) t.set_requires_grad(trainable);
  for (auto& t : biases_) t.set_requires_grad(trainable);
}

void DiscHead::save(const fs::path& dir) const {
  fs::create_directories(dir);
  std::ofstream(dir / "disc.txt") << "width=" << width_ << "\n";
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    save_tensor(dir / ("w" + std::to_string(i) + ".swt1"), weights_[i]);
    save_tensor(dir / ("b" + std::to_string(i) + ".swt1"), biases_[i]);
  }
}

DiscHead DiscHead::load(const fs::path& dir) {
  const auto kv = KeyValues::load((dir / "disc.txt").string());
  DiscHead h;
  h.width_ = static_cast<std::size_t>(kv.get_int("width", 0));
  for (int i = 0; i < 4; ++i) {
    Tensor w = load_tensor(dir / ("w" + std::to_string(i) + ".swt1"));
    Tensor b = load_tensor(dir / ("b" + std::to_string(i) + ".swt1"));
    const std::size_t out = i == 3 ? 1 : h.width_;
    if (w.shape() != Shape{h.width_, out} || b.shape() != Shape{out}) {
      throw FormatError("DiscHead: layer " + std::to_string(i) + " in " + dir.string() + " has the wrong shape");
    }
    h.weights_.push_back(Tensor(w.shape(), w.to_vector(), true));
    h.biases_.push_back(Tensor(b.shape(), b.to_vector(), true));
  }
  return h;
}

GanLosses gan_losses(const DiscHead& head, const Tensor& f_real, const Tensor& f_fake) {
  GanLosses out;
  const Tensor lr = head.logits(f_real);
  const Tensor lf = head.logits(f_fake);
  out.d_loss = add(mean_all(softplus(neg(lr))), mean_all(softplus(lf)));
  out.g_loss = mean_all(softplus(neg(lf)));
  std::size_t right = 0;
  for (double v : lr.data()) right += v > 0;
  for (double v : lf.data()) right += v < 0;
  out.d_accuracy = static_cast<double>(right) / static_cast<double>(lr.numel() + lf.numel());
  return out;
}

// ---------------------------------------------------------------------------
// Sampling

namespace {

Shape batch_shape(std::size_t n, const ScaleSpec& s) {
  return s.t == 1 ? Shape{n, s.h, s.w} : Shape{n, s.t, s.h, s.w};
}

}  // namespace

Tensor scalewise_sample(const VelocityFn& student, const ScheduleSpec& schedule, std::span<const int> classes,
                        const Rng& rng, SampleTrace* trace) {
  if (auto v = validate(schedule); !v.empty()) throw std::invalid_argument("scalewise_sample: " + describe(v));
  NoGradGuard guard;
  Rng r0 = rng.split(0);
  Tensor x = gaussian(batch_shape(classes.size(), schedule.scales[0]), r0);
  Tensor x0;
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const double tau = schedule.tau(i);
    x0 = x0_from_v(x, student(x, std::span<const double>(&tau, 1), classes), tau);
    if (trace) {
      trace->x_t.push_back(x);
      trace->x0_hat.push_back(x0);
    }
    if (i + 1 < schedule.size()) {
      const Tensor up = resize_to(x0, schedule.scales[i + 1]);
      Rng r = rng.split(i + 1);
      x = noise_to(up, schedule.tau(i + 1), gaussian(up.shape(), r));
    }
  }
  return x0;
}

Tensor sample_batched(const VelocityFn& student, const ScheduleSpec& schedule, std::size_t n,
                      std::size_t num_classes, const Rng& rng, std::size_t batch) {
  if (n == 0 || batch == 0 || num_classes == 0) throw std::invalid_argument("sample_batched: empty request");
  std::vector<Tensor> parts((n + batch - 1) / batch);
  parallel_for(parts.size(), [&](std::size_t b) {
    const std::size_t start = b * batch, m = std::min(batch, n - start);
    std::vector<int> cls(m);
    for (std::size_t i = 0; i < m; ++i) cls[i] = static_cast<int>((start + i) % num_classes);
    parts[b] = scalewise_sample(student, schedule, cls, rng.split(b));
  });
  return parts.size() == 1 ? parts[0] : concat(parts, 0);
}

Tensor multistep_sample(const VelocityFn& model, std::span<const double> taus, const ScaleSpec& res,
                        std::span<const int> classes, const Rng& rng) {
  if (taus.empty()) throw std::invalid_argument("multistep_sample: no steps");
  NoGradGuard guard;
  Rng r0 = rng.split(0);
  Tensor x = gaussian(batch_shape(classes.size(), res), r0);
  Tensor x0;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    x0 = x0_from_v(x, model(x, taus.subspan(i, 1), classes), taus[i]);
    if (i + 1 < taus.size()) {
      Rng r = rng.split(i + 1);
      x = noise_to(x0, taus[i + 1], gaussian(x0.shape(), r));
    }
  }
  return x0;
}

// ---------------------------------------------------------------------------
// Config

void DistillConfig::validate() const {
  if (auto v = swd::validate(schedule); !v.empty()) throw ConfigError("distill: invalid schedule: " + describe(v));
  const auto& w = weights;
  if (w.mmd < 0 || w.alpha < 0 || w.beta < 0) throw ConfigError("distill: loss weights must be >= 0");
  if (w.mmd == 0 && w.alpha == 0 && w.beta == 0) throw ConfigError("distill: all loss weights are zero");
  if (!(0 <= mmd_interval[0] && mmd_interval[0] <= mmd_interval[1] && mmd_interval[1] <= 1)) {
    throw ConfigError("distill: mmd interval must satisfy 0 <= lo <= hi <= 1");
  }
  if (!(0 < dmd_tau_range[0] && dmd_tau_range[0] < dmd_tau_range[1] && dmd_tau_range[1] < 1)) {
    throw ConfigError("distill: dmd tau range must lie strictly inside (0, 1)");
  }
  if (batch < 2) throw ConfigError("distill: batch must be >= 2");
  if (checkpoint_every == 0) throw ConfigError("distill: checkpoint_every must be positive");
  if (w.needs_fake() && fake_steps == 0) throw ConfigError("distill: fake_steps must be positive with DMD or GAN");
}

namespace {

void put_adam(KeyValues& kv, const std::string& p, const AdamConfig& a) {
  kv.set(p + ".lr", format_double(a.lr));
  kv.set(p + ".beta1", format_double(a.beta1));
  kv.set(p + ".beta2", format_double(a.beta2));
  kv.set(p + ".eps", format_double(a.eps));
  kv.set(p + ".clip", format_double(a.clip));
}

AdamConfig get_adam(const KeyValues& kv, const std::string& p, AdamConfig a) {
  a.lr = kv.get_double(p + ".lr", a.lr);
  a.beta1 = kv.get_double(p + ".beta1", a.beta1);
  a.beta2 = kv.get_double(p + ".beta2", a.beta2);
  a.eps = kv.get_double(p + ".eps", a.eps);
  a.clip = kv.get_double(p + ".clip", a.clip);
  return a;
}

std::array<double, 2> get_pair(const KeyValues& kv, const std::string& key, std::array<double, 2> fallback) {
  auto v = kv.get(key);
  if (!v) return fallback;
  auto list = parse_double_list(*v);
  if (list.size() != 2) throw ConfigError("key '" + key + "' expects two numbers, got '" + *v + "'");
  return {list[0], list[1]};
}

}  // namespace

std::string DistillConfig::to_text() const {
  KeyValues kv;
  kv.set("schedule", serialize(schedule));
  kv.set("loss.mmd", format_double(weights.mmd));
  kv.set("loss.alpha", format_double(weights.alpha));
  kv.set("loss.beta", format_double(weights.beta));
  kv.set("mmd.interval", format_double(mmd_interval[0]) + "," + format_double(mmd_interval[1]));
  kv.set("mmd.variant", mmd_variant_name(variant));
  kv.set("dmd.cfg_scale", format_double(cfg_scale));
  kv.set("dmd.tau_range", format_double(dmd_tau_range[0]) + "," + format_double(dmd_tau_range[1]));
  put_adam(kv, "student", student_adam);
  put_adam(kv, "fake", fake_adam);
  kv.set("fake_steps", std::to_string(fake_steps));
  kv.set("steps", std::to_string(steps));
  kv.set("batch", std::to_string(batch));
  kv.set("checkpoint_every", std::to_string(checkpoint_every));
  kv.set("eval_every", std::to_string(eval_every));
  kv.set("eval_samples", std::to_string(eval_samples));
  return kv.to_text();
}

DistillConfig DistillConfig::from_text(const std::string& text) {
  const KeyValues kv = KeyValues::parse(text, "distill config");
  DistillConfig c;
  if (auto s = kv.get("schedule")) c.schedule = parse_schedule(*s);
  c.weights.mmd = kv.get_double("loss.mmd", c.weights.mmd);
  c.weights.alpha = kv.get_double("loss.alpha", c.weights.alpha);
  c.weights.beta = kv.get_double("loss.beta", c.weights.beta);
  c.mmd_interval = get_pair(kv, "mmd.interval", c.mmd_interval);
  if (auto v = kv.get("mmd.variant")) c.variant = parse_mmd_variant(*v);
  c.cfg_scale = kv.get_double("dmd.cfg_scale", c.cfg_scale);
  c.dmd_tau_range = get_pair(kv, "dmd.tau_range", c.dmd_tau_range);
  c.student_adam = get_adam(kv, "student", c.student_adam);
  c.fake_adam = get_adam(kv, "fake", c.fake_adam);
  c.fake_steps = static_cast<std::size_t>(kv.get_u64("fake_steps", c.fake_steps));
  c.steps = static_cast<std::size_t>(kv.get_u64("steps", c.steps));
  c.batch = static_cast<std::size_t>(kv.get_u64("batch", c.batch));
  c.checkpoint_every = static_cast<std::size_t>(kv.get_u64("checkpoint_every", c.checkpoint_every));
  c.eval_every = static_cast<std::size_t>(kv.get_u64("eval_every", c.eval_every));
  c.eval_samples = static_cast<std::size_t>(kv.get_u64("eval_samples", c.eval_samples));
  return c;
}

// ---------------------------------------------------------------------------
// State

namespace {

std::vector<Tensor> fake_parameters(const DenoiserNet& fake, const DiscHead& disc) {
  std::vector<Tensor> p = fake.parameters();
  for (auto& t : disc.parameters()) p.push_back(t);
  return p;
}

}  // namespace

DistillState DistillState::from_teacher(const DenoiserNet& teacher, const DistillConfig& config, std::uint64_t seed) {
  DistillState s;
  s.student = teacher.clone(NetRole::kStudent);
  s.student_opt = Adam(s.student.parameters(), config.student_adam);
  if (config.weights.needs_fake()) {
    s.fake = teacher.clone(NetRole::kFake);
    if (config.weights.beta > 0) {
      Rng r(seed, 7);
      s.disc = DiscHead::init(teacher.config().width, r);
    }
    s.fake_opt = Adam(fake_parameters(s.fake, s.disc), config.fake_adam);
  }
  return s;
}

void DistillState::save(const fs::path& dir) const {
  fs::create_directories(dir);
  student.save(dir / "student");
  student_opt.save(dir, "student_opt");
  if (!fake.weights().empty()) {
    fake.save(dir / "fake");
    fake_opt.save(dir, "fake_opt");
  }
  if (disc.width() > 0) disc.save(dir / "disc");
  std::ofstream(dir / "state.txt") << "step=" << step << "\n";
}

DistillState DistillState::load(const fs::path& dir, const DistillConfig& config) {
  DistillState s;
  const auto kv = KeyValues::load((dir / "state.txt").string());
  s.step = static_cast<std::size_t>(kv.get_u64("step", 0));
  s.student = DenoiserNet::load(dir / "student");
  s.student.set_role(NetRole::kStudent);
  s.student_opt = Adam(s.student.parameters(), config.student_adam);
  s.student_opt.load(dir, "student_opt");
  if (config.weights.needs_fake()) {
    s.fake = DenoiserNet::load(dir / "fake");
    s.fake.set_role(NetRole::kFake);
    if (config.weights.beta > 0) s.disc = DiscHead::load(dir / "disc");
    s.fake_opt = Adam(fake_parameters(s.fake, s.disc), config.fake_adam);
    s.fake_opt.load(dir, "fake_opt");
  }
  return s;
}

// ---------------------------------------------------------------------------
// Training

TrainingPair training_pair(const ScheduleSpec& schedule, std::size_t k) {
  if (k >= schedule.size()) throw std::out_of_range("training_pair: step index out of range");
  TrainingPair p;
  p.k = k;
  p.source = schedule.scales[k == 0 ? 0 : k - 1];
  p.target = schedule.scales[k];
  p.tau = schedule.tau(k);
  return p;
}

GeneratorPass generator_loss(const DenoiserNet& student, const DenoiserNet& teacher, const DenoiserNet* fake,
                             const DiscHead* disc, const Tensor& x0_full, std::span<const int> classes,
                             const DistillConfig& config, std::size_t k, const Rng& rng) {
  const TrainingPair pair = training_pair(config.schedule, k);
  if (!(scale_of(x0_full) == config.schedule.target())) {
    throw std::invalid_argument("generator_loss: batch at " + scale_of(x0_full).str() + " but the schedule ends at " +
                                config.schedule.target().str());
  }
  if (classes.size() != x0_full.dim(0)) throw std::invalid_argument("generator_loss: one class per sample expected");
  const auto& w = config.weights;
  if (w.needs_fake() && (!fake || (w.beta > 0 && !disc))) {
    throw std::invalid_argument("generator_loss: DMD/GAN weights need the fake model and head");
  }

  GeneratorPass out;
  out.target = resize_to(x0_full, pair.target);
  const Tensor x_in = resize_to(resize_to(x0_full, pair.source), pair.target);
  Rng r_noise = rng.split(0);
  const Tensor xt = noise_to(x_in, pair.tau, gaussian(x_in.shape(), r_noise));
  const double tau = pair.tau;
  const Tensor v = student.forward(xt, std::span<const double>(&tau, 1), classes).velocity;
  out.x0_hat = x0_from_v(xt, v, tau);

  Tensor loss;
  auto accumulate = [&](const Tensor& term, double weight) {
    Tensor t = scale(term, weight);
    loss = loss.defined() ? add(loss, t) : t;
  };
  if (w.mmd > 0) {
    Rng r = rng.split(1);
    const FeaturePair fp =
        feature_pipeline(out.target, out.x0_hat, classes, teacher, config.mmd_interval, config.variant, r);
    const Tensor l = mmd_loss(fp.real, fp.fake, config.variant);
    out.mmd = l.item();
    accumulate(l, w.mmd);
  }
  if (w.alpha > 0) {
    Rng r = rng.split(2);
    const Tensor g = dmd_grad(out.x0_hat, classes, velocity_of(teacher), velocity_of(*fake), config.cfg_scale, r,
                              config.dmd_tau_range);
    const Tensor l = dmd_surrogate(out.x0_hat, g);
    double gn = 0;
    for (double x : g.data()) gn += x * x;
    out.dmd = std::sqrt(gn / static_cast<double>(g.numel()));
    accumulate(l, w.alpha);
  }
  if (w.beta > 0) {
    Rng r = rng.split(3);
    std::vector<double> t(out.x0_hat.dim(0));
    for (auto& x : t) x = r.uniform(config.dmd_tau_range[0], config.dmd_tau_range[1]);
    const Tensor noisy = noise_to(out.x0_hat, t, gaussian(out.x0_hat.shape(), r));
    const Tensor lf = disc->logits(fake->features(noisy, t, classes));
    const Tensor l = mean_all(softplus(neg(lf)));
    out.gan = l.item();
    accumulate(l, w.beta);
  }
  out.loss = loss;
  return out;
}

StepReport swd_training_step(DistillState& state, const DenoiserNet& teacher, const Tensor& x0_full,
                             std::span<const int> classes, const DistillConfig& config, const Rng& rng) {
  StepReport rep;
  rep.step = state.step;
  const auto& w = config.weights;
  Rng pick = rng.split(0);
  const std::size_t k = static_cast<std::size_t>(pick.below(config.schedule.size()));
  rep.pair = training_pair(config.schedule, k);

  const bool fake_on = w.needs_fake();
  if (fake_on) {
    state.fake.set_trainable(false);
    state.disc.set_trainable(false);
  }
  const GeneratorPass pass = generator_loss(state.student, teacher, fake_on ? &state.fake : nullptr,
                                            w.beta > 0 ? &state.disc : nullptr, x0_full, classes, config, k,
                                            rng.split(1));
  pass.loss.backward();
  rep.grad_norm = state.student_opt.step();
  rep.loss = pass.loss.item();
  rep.mmd = pass.mmd;
  rep.dmd = pass.dmd;
  rep.gan_g = pass.gan;
  if (!fake_on) return rep;

  state.fake.set_trainable(true);
  state.disc.set_trainable(true);
  const Tensor x_det = pass.x0_hat.detach();
  for (std::size_t j = 0; j < config.fake_steps; ++j) {
    Rng r = rng.split(2 + j);
    Tensor loss = fm_loss(velocity_of(state.fake), x_det, classes, r, 0.0);
    rep.fake_loss = loss.item();
    if (w.beta > 0) {
      std::vector<double> t(x_det.dim(0));
      for (auto& x : t) x = r.uniform(config.dmd_tau_range[0], config.dmd_tau_range[1]);
      const Tensor eps = gaussian(x_det.shape(), r);
      const Tensor fr = state.fake.features(noise_to(pass.target, t, eps), t, classes);
      const Tensor ff = state.fake.features(noise_to(x_det, t, eps), t, classes);
      const GanLosses g = gan_losses(state.disc, fr, ff);
      rep.gan_d = g.d_loss.item();
      rep.d_accuracy = g.d_accuracy;
      loss = add(loss, scale(g.d_loss, w.beta));
    }
    loss.backward();
    state.fake_opt.step();
  }
  state.fake.set_trainable(false);
  state.disc.set_trainable(false);
  return rep;
}

// ---------------------------------------------------------------------------
// Run

namespace {

const char* kLossHeader = "step,k,source,target,tau,loss,mmd,dmd,gan_g,fake_fm,gan_d,d_accuracy,grad_norm";

std::string loss_row(const StepReport& r) {
  std::ostringstream os;
  os << r.step << "," << r.pair.k << "," << r.pair.source.str() << "," << r.pair.target.str() << ","
     << format_double(r.pair.tau) << "," << format_double(r.loss) << "," << format_double(r.mmd) << ","
     << format_double(r.dmd) << "," << format_double(r.gan_g) << "," << format_double(r.fake_loss) << ","
     << format_double(r.gan_d) << "," << format_double(r.d_accuracy) << "," << format_double(r.grad_norm);
  return os.str();
}

// Keeps the header and rows whose leading step number is below `step`.
void truncate_csv(const fs::path& path, const std::string& header, std::size_t step) {
  std::vector<std::string> keep{header};
  if (std::ifstream in(path); in) {
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoull(line.substr(0, line.find(','))) < step) keep.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << "\n";
}

void checkpoint(const DistillState& state, const fs::path& out) {
  const fs::path tmp = out / "ckpt.tmp", dst = out / "ckpt";
  fs::remove_all(tmp);
  state.save(tmp);
  fs::remove_all(dst);
  fs::rename(tmp, dst);
}

}  // namespace

DenoiserNet distill_run(const DistillConfig& config, const DenoiserNet& teacher, const Dataset& train,
                        const Dataset* reference, const fs::path& out, std::uint64_t seed, bool resume,
                        const DistillLog& log) {
  config.validate();
  const ScaleSpec target = config.schedule.target();
  if (auto v = validate(config.schedule, teacher.config().patch_size, &target); !v.empty()) {
    throw ConfigError("distill: schedule does not fit the teacher: " + describe(v));
  }
  if (train.size() == 0) throw std::invalid_argument("distill: empty training set");
  if (!(scale_of(train.x0) == target)) {
    throw std::invalid_argument("distill: training data is " + scale_of(train.x0).str() + " but the schedule ends at " +
                                target.str());
  }
  if (config.eval_every > 0 && !reference) throw std::invalid_argument("distill: evaluation needs a reference set");

  DenoiserNet frozen = teacher.clone(NetRole::kTeacher);
  frozen.set_trainable(false);
  fs::create_directories(out);
  std::ofstream(out / "distill.cfg") << config.to_text();

  DistillState state = (resume && fs::exists(out / "ckpt" / "state.txt"))
                           ? DistillState::load(out / "ckpt", config)
                           : DistillState::from_teacher(frozen, config, seed);
  const std::size_t start = state.step;
  truncate_csv(out / "losses.csv", kLossHeader, start);
  if (config.eval_every > 0) truncate_csv(out / "eval.csv", "step,fd_teacher", start);
  std::ofstream losses(out / "losses.csv", std::ios::app);
  std::ofstream evals;
  if (config.eval_every > 0) evals.open(out / "eval.csv", std::ios::app);

  auto evaluate = [&](std::size_t step) {
    const Tensor samples = sample_batched(velocity_of(state.student), config.schedule, config.eval_samples,
                                          teacher.config().num_classes, Rng(seed, 5));
    const double fd = fd_teacher(samples, reference->x0, frozen);
    evals << step << "," << format_double(fd) << "\n" << std::flush;
    if (log.on_eval) log.on_eval(step, fd);
  };
  if (config.eval_every > 0 && start % config.eval_every == 0) evaluate(start);

  const Rng base(seed, 3);
  for (std::size_t s = start; s < config.steps; ++s) {
    const Rng r = base.split(s);
    Rng pick = r.split(0);
    std::vector<std::size_t> idx(config.batch);
    for (auto& i : idx) i = static_cast<std::size_t>(pick.below(train.size()));
    const Dataset b = train.gather(idx);
    StepReport rep;
    try {
      rep = swd_training_step(state, frozen, b.x0, b.classes, config, r.split(1));
    } catch (const std::runtime_error& e) {
      losses.flush();
      throw TrainingError("distill: step " + std::to_string(s) + " diverged (" + e.what() +
                          "); the last good checkpoint is " + (out / "ckpt").string());
    }
    state.step = s + 1;
    losses << loss_row(rep) << "\n";
    if (log.on_step) log.on_step(rep);
    if (state.step % config.checkpoint_every == 0 || state.step == config.steps) {
      losses.flush();
      checkpoint(state, out);
    }
    if (config.eval_every > 0 && state.step % config.eval_every == 0) evaluate(state.step);
  }
  return state.student;
}

}  // namespace swd
