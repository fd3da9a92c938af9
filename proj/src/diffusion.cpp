#include "swd/diffusion.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "swd/config.hpp"
#include "swd/fft.hpp"
#include "swd/io.hpp"

namespace swd {

namespace {

void check_tau(double tau, const char* op) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument(std::string(op) + ": tau " + format_double(tau) + " outside [0,1]");
}

void check_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  }
}

std::string prefixed(const KeyValues& kv, const std::string& prefix) {
  std::string out;
  for (const auto& [k, v] : kv.entries()) {
    if (k.rfind(prefix, 0) == 0) out += k.substr(prefix.size()) + "=" + v + "\n";
  }
  return out;
}

}  // namespace

Tensor per_sample(std::span<const double> values, std::size_t rank) {
  Shape s(rank, 1);
  s[0] = values.size();
  return Tensor(s, std::vector<double>(values.begin(), values.end()));
}

Tensor noise_to(const Tensor& x0, double tau, const Tensor& eps) {
  check_same(x0, eps, "noise_to");
  check_tau(tau, "noise_to");
  return add(scale(x0, 1.0 - tau), scale(eps, tau));
}

Tensor noise_to(const Tensor& x0, std::span<const double> tau, const Tensor& eps) {
  check_same(x0, eps, "noise_to");
  if (tau.size() == 1) return noise_to(x0, tau[0], eps);
  if (tau.size() != x0.dim(0)) throw ShapeError("noise_to: one tau per batch element expected");
  std::vector<double> keep(tau.size());
  for (std::size_t i = 0; i < tau.size(); ++i) {
    check_tau(tau[i], "noise_to");
    keep[i] = 1.0 - tau[i];
  }
  return add(mul(x0, per_sample(keep, x0.rank())), mul(eps, per_sample(tau, x0.rank())));
}

Tensor x0_from_v(const Tensor& x_t, const Tensor& v, double tau) {
  check_same(x_t, v, "x0_from_v");
  check_tau(tau, "x0_from_v");
  return sub(x_t, scale(v, tau));
}

Tensor x0_from_v(const Tensor& x_t, const Tensor& v, std::span<const double> tau) {
  check_same(x_t, v, "x0_from_v");
  if (tau.size() == 1) return x0_from_v(x_t, v, tau[0]);
  if (tau.size() != x_t.dim(0)) throw ShapeError("x0_from_v: one tau per batch element expected");
  for (double t : tau) check_tau(t, "x0_from_v");
  return sub(x_t, mul(v, per_sample(tau, x_t.rank())));
}

Tensor v_from_pair(const Tensor& x0, const Tensor& eps) {
  check_same(x0, eps, "v_from_pair");
  return sub(eps, x0);
}

VelocityFn velocity_of(const DenoiserNet& net) {
  return [&net](const Tensor& x, std::span<const double> tau, std::span<const int> classes) {
    return net.forward(x, tau, classes).velocity;
  };
}

Tensor guided_velocity(const VelocityFn& v, const Tensor& x, std::span<const double> tau, std::span<const int> classes,
                       double w) {
  if (w == 1.0) return v(x, tau, classes);
  const std::size_t n = x.dim(0);
  std::vector<int> both(classes.begin(), classes.end());
  both.resize(2 * n, kNullClass);
  std::vector<double> taus(tau.begin(), tau.end());
  if (taus.size() == n) taus.insert(taus.end(), tau.begin(), tau.end());
  Tensor out = v(concat({x, x}, 0), taus, both);
  Tensor vc = slice(out, 0, 0, n), vu = slice(out, 0, n, 2 * n);
  return add(vu, scale(sub(vc, vu), w));
}

Tensor analytic_gaussian_v(const Tensor& x_t, double tau, double mu, double sigma2) {
  if (!(sigma2 > 0)) throw std::invalid_argument("analytic_gaussian_v: variance must be positive");
  check_tau(tau, "analytic_gaussian_v");
  const double a = 1.0 - tau;
  // Cov(eps - x0, x) / Var(x) for x = a x0 + tau eps.
  const double gain = (tau - a * sigma2) / (a * a * sigma2 + tau * tau);
  std::vector<double> out(x_t.numel());
  const auto& x = x_t.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = -mu + gain * (x[i] - a * mu);
  return Tensor(x_t.shape(), std::move(out));
}

VelocityFn gaussian_oracle(double mu, double sigma2) {
  return [mu, sigma2](const Tensor& x, std::span<const double> tau, std::span<const int>) {
    if (tau.size() == 1) return analytic_gaussian_v(x, tau[0], mu, sigma2);
    std::vector<Tensor> parts;
    for (std::size_t n = 0; n < x.dim(0); ++n) {
      parts.push_back(analytic_gaussian_v(slice(x, 0, n, n + 1), tau[n], mu, sigma2));
    }
    return concat(parts, 0);
  };
}

Tensor euler_integrate(const VelocityFn& v, Tensor x, double tau_start, std::size_t steps, double w,
                       std::span<const int> classes) {
  check_tau(tau_start, "euler_integrate");
  if (steps == 0) throw std::invalid_argument("euler_integrate: steps must be >= 1");
  NoGradGuard guard;
  for (std::size_t k = 0; k < steps; ++k) {
    const double t0 = tau_start * (1.0 - static_cast<double>(k) / static_cast<double>(steps));
    const double t1 = tau_start * (1.0 - static_cast<double>(k + 1) / static_cast<double>(steps));
    const double tau[1] = {t0};
    x = add(x, scale(guided_velocity(v, x, tau, classes, w), t1 - t0));
  }
  return x;
}

Tensor euler_sample(const VelocityFn& v, std::size_t steps, double w, std::span<const int> classes, Rng& rng,
                    const ScaleSpec& res) {
  if (steps == 0) throw std::invalid_argument("euler_sample: steps must be >= 1");
  Shape shape = res.t == 1 ? Shape{classes.size(), res.h, res.w} : Shape{classes.size(), res.t, res.h, res.w};
  return euler_integrate(v, gaussian(shape, rng), 1.0, steps, w, classes);
}

// ---------------------------------------------------------------------------
// Optimizer

Adam::Adam(std::vector<Tensor> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

double Adam::step() {
  double sq = 0;
  for (const auto& p : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw TrainingError("adam: gradient norm is not finite; parameters left untouched");
  const double clip = (config_.clip > 0 && norm > config_.clip) ? config_.clip / norm : 1.0;
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    const auto& g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    auto* w = p.mutable_data().data();
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double gj = g[j] * clip;
      m[j] = config_.beta1 * m[j] + (1 - config_.beta1) * gj;
      v[j] = config_.beta2 * v[j] + (1 - config_.beta2) * gj * gj;
      w[j] -= config_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
    }
    p.zero_grad();
  }
  return norm;
}

void Adam::save(const std::filesystem::path& dir, const std::string& prefix) const {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / (prefix + ".state")) << "steps=" << t_ << "\nparams=" << params_.size() << "\n";
  for (std::size_t i = 0; i < params_.size(); ++i) {
    save_tensor(dir / (prefix + ".m" + std::to_string(i) + ".swt1"), Tensor({m_[i].size()}, m_[i]));
    save_tensor(dir / (prefix + ".v" + std::to_string(i) + ".swt1"), Tensor({v_[i].size()}, v_[i]));
  }
}

void Adam::load(const std::filesystem::path& dir, const std::string& prefix) {
  auto kv = KeyValues::load((dir / (prefix + ".state")).string());
  if (static_cast<std::size_t>(kv.get_int("params", -1)) != params_.size()) {
    throw FormatError("optimizer state " + prefix + ": parameter count mismatch");
  }
  t_ = static_cast<std::size_t>(kv.get_int("steps", 0));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto m = load_tensor(dir / (prefix + ".m" + std::to_string(i) + ".swt1")).to_vector();
    auto v = load_tensor(dir / (prefix + ".v" + std::to_string(i) + ".swt1")).to_vector();
    if (m.size() != m_[i].size() || v.size() != v_[i].size()) {
      throw FormatError("optimizer state " + prefix + ": moment " + std::to_string(i) + " has the wrong size");
    }
    m_[i] = std::move(m);
    v_[i] = std::move(v);
  }
}

// ---------------------------------------------------------------------------
// Flow-matching training

Tensor fm_loss(const VelocityFn& v, const Tensor& x0, std::span<const int> classes, Rng& rng, double null_prob) {
  const std::size_t n = x0.dim(0);
  if (n == 0) throw std::invalid_argument("fm_loss: empty batch");
  if (classes.size() != n) throw std::invalid_argument("fm_loss: one class id per sample expected");
  std::vector<double> tau(n);
  for (auto& t : tau) t = rng.uniform();
  Tensor eps = gaussian(x0.shape(), rng);
  std::vector<int> cls(classes.begin(), classes.end());
  for (auto& c : cls) {
    if (rng.uniform() < null_prob) c = kNullClass;
  }
  Tensor xt = noise_to(x0, tau, eps);
  Tensor pred = v(xt, tau, cls);
  return mean_all(square(sub(pred, v_from_pair(x0, eps))));
}

double fm_train_step(DenoiserNet& net, Adam& opt, const Tensor& x0, std::span<const int> classes, Rng& rng,
                     double null_prob) {
  Tensor loss;
  try {
    loss = fm_loss(velocity_of(net), x0, classes, rng, null_prob);
    loss.backward();
  } catch (const NumericError& e) {
    double mx = 0;
    for (double x : x0.data()) mx = std::max(mx, std::abs(x));
    throw TrainingError(std::string("flow-matching step diverged after ") + std::to_string(opt.steps()) +
                        " updates (" + e.what() + "); batch " + shape_str(x0.shape()) + ", max |x0| " +
                        format_double(mx));
  }
  const double value = loss.item();
  if (!std::isfinite(value)) throw TrainingError("flow-matching loss is not finite");
  opt.step();
  return value;
}

// ---------------------------------------------------------------------------
// Data

const char* data_kind_name(DataKind k) {
  switch (k) {
    case DataKind::kPowerlaw: return "powerlaw-texture";
    case DataKind::kBlobs: return "blob-scene";
    case DataKind::kMovingBlob: return "moving-blob-video";
  }
  return "powerlaw-texture";
}

DataKind parse_data_kind(const std::string& s) {
  if (s == "powerlaw-texture" || s == "powerlaw") return DataKind::kPowerlaw;
  if (s == "blob-scene" || s == "blobs") return DataKind::kBlobs;
  if (s == "moving-blob-video" || s == "video") return DataKind::kMovingBlob;
  throw ConfigError("unknown data kind '" + s + "'");
}

void DataSpec::validate() const {
  if (classes == 0) throw ConfigError("data: classes must be positive");
  if (h < 4 || w < 4) throw ConfigError("data: resolution too small");
  if (kind == DataKind::kPowerlaw && betas.size() != classes) {
    throw ConfigError("data: need one beta per class (" + std::to_string(classes) + "), got " +
                      std::to_string(betas.size()));
  }
  if (kind == DataKind::kMovingBlob && t < 2) throw ConfigError("data: video needs at least 2 frames");
  if (kind != DataKind::kMovingBlob && t != 1) throw ConfigError("data: image kinds need t=1");
}

std::string DataSpec::to_text() const {
  KeyValues kv;
  kv.set("kind", data_kind_name(kind));
  kv.set("classes", std::to_string(classes));
  std::string b;
  for (std::size_t i = 0; i < betas.size(); ++i) b += (i ? "," : "") + format_double(betas[i]);
  kv.set("betas", b);
  kv.set("t", std::to_string(t));
  kv.set("h", std::to_string(h));
  kv.set("w", std::to_string(w));
  kv.set("normalize", normalize ? "1" : "0");
  return kv.to_text();
}

DataSpec DataSpec::from_text(const std::string& text) {
  auto kv = KeyValues::parse(text, "data spec");
  DataSpec s;
  s.kind = parse_data_kind(kv.get_or("kind", data_kind_name(s.kind)));
  s.classes = static_cast<std::size_t>(kv.get_int("classes", 2));
  if (auto b = kv.get("betas")) s.betas = parse_double_list(*b);
  s.t = static_cast<std::size_t>(kv.get_int("t", 1));
  s.h = static_cast<std::size_t>(kv.get_int("h", 32));
  s.w = static_cast<std::size_t>(kv.get_int("w", static_cast<long long>(s.h)));
  s.normalize = kv.get_int("normalize", 1) != 0;
  s.validate();
  return s;
}

namespace {

int signed_freq(std::size_t k, std::size_t n) {
  return k <= n / 2 ? static_cast<int>(k) : static_cast<int>(k) - static_cast<int>(n);
}

std::vector<double> powerlaw_field(std::size_t h, std::size_t w, double beta, Rng& rng) {
  // White noise shaped by a radial amplitude filter: uniform phases, power
  // falling as (1 + f)^-beta.
  std::vector<Complex> grid(h * w);
  for (auto& g : grid) g = Complex(rng.normal(), 0.0);
  fft2(grid, h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double fy = signed_freq(y, h), fx = signed_freq(x, w);
      grid[y * w + x] *= std::pow(1.0 + std::hypot(fy, fx), -beta / 2.0);
    }
  }
  fft2(grid, h, w, true);
  std::vector<double> out(h * w);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = grid[i].real();
  return out;
}

double wrap_dist(double a, double b, double n) {
  double d = std::fmod(std::abs(a - b), n);
  return std::min(d, n - d);
}

std::vector<double> blob_field(std::size_t h, std::size_t w, std::size_t k, Rng& rng) {
  const double sigma = static_cast<double>(std::min(h, w)) / 12.0;
  const double min_sep = 4.0 * sigma;
  std::vector<std::array<double, 2>> centres;
  for (int attempt = 0; centres.size() < k; ++attempt) {
    if (attempt > 10000) throw std::runtime_error("blob-scene: cannot place " + std::to_string(k) + " separated blobs");
    std::array<double, 2> c{rng.uniform(sigma, static_cast<double>(h) - sigma),
                            rng.uniform(sigma, static_cast<double>(w) - sigma)};
    bool ok = true;
    for (const auto& o : centres) ok = ok && std::hypot(c[0] - o[0], c[1] - o[1]) >= min_sep;
    if (ok) centres.push_back(c);
  }
  std::vector<double> out(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double v = 0;
      for (const auto& c : centres) {
        const double dy = static_cast<double>(y) - c[0], dx = static_cast<double>(x) - c[1];
        v += std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
      }
      out[y * w + x] = v;
    }
  }
  return out;
}

void normalize_in_place(double* p, std::size_t n) {
  double m = 0;
  for (std::size_t i = 0; i < n; ++i) m += p[i];
  m /= static_cast<double>(n);
  double var = 0;
  for (std::size_t i = 0; i < n; ++i) var += (p[i] - m) * (p[i] - m);
  const double sd = std::sqrt(var / static_cast<double>(n));
  const double inv = sd > 0 ? 1.0 / sd : 1.0;
  for (std::size_t i = 0; i < n; ++i) p[i] = (p[i] - m) * inv;
}

}  // namespace

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  Dataset d;
  d.x0 = swd::slice(x0, 0, begin, end);
  d.classes.assign(classes.begin() + static_cast<std::ptrdiff_t>(begin), classes.begin() + static_cast<std::ptrdiff_t>(end));
  if (!velocity.empty()) {
    d.velocity.assign(velocity.begin() + static_cast<std::ptrdiff_t>(begin),
                      velocity.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return d;
}

Dataset Dataset::gather(std::span<const std::size_t> idx) const {
  const std::size_t per = x0.numel() / std::max<std::size_t>(size(), 1);
  Shape s = x0.shape();
  s[0] = idx.size();
  std::vector<double> out(idx.size() * per);
  Dataset d;
  const auto& src = x0.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= size()) throw std::out_of_range("Dataset::gather: index out of range");
    std::copy(src.begin() + static_cast<std::ptrdiff_t>(idx[i] * per),
              src.begin() + static_cast<std::ptrdiff_t>((idx[i] + 1) * per), out.begin() + static_cast<std::ptrdiff_t>(i * per));
    d.classes.push_back(classes[idx[i]]);
    if (!velocity.empty()) d.velocity.push_back(velocity[idx[i]]);
  }
  d.x0 = Tensor(s, std::move(out));
  return d;
}

Dataset gen_dataset(const DataSpec& spec, std::size_t n, Rng& rng) {
  spec.validate();
  if (n == 0) throw std::invalid_argument("gen_dataset: n must be >= 1");
  const std::size_t frame = spec.h * spec.w, per = spec.t * frame;
  std::vector<double> all(n * per);
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    Rng r = rng.split(i);
    const int c = static_cast<int>(i % spec.classes);
    d.classes.push_back(c);
    double* dst = all.data() + i * per;
    switch (spec.kind) {
      case DataKind::kPowerlaw: {
        auto f = powerlaw_field(spec.h, spec.w, spec.betas[static_cast<std::size_t>(c)], r);
        std::copy(f.begin(), f.end(), dst);
        break;
      }
      case DataKind::kBlobs: {
        auto f = blob_field(spec.h, spec.w, static_cast<std::size_t>(c) + 1, r);
        std::copy(f.begin(), f.end(), dst);
        break;
      }
      case DataKind::kMovingBlob: {
        // Integer velocity so every frame is an exact periodic shift of the first.
        static constexpr int kDirs[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}};
        const auto& dir = kDirs[r.below(8)];
        const double speed = static_cast<double>(c + 1);
        const std::array<double, 2> vel{dir[0] * speed, dir[1] * speed};
        d.velocity.push_back(vel);
        const double hh = static_cast<double>(spec.h), ww = static_cast<double>(spec.w);
        const double y0 = r.uniform(0, hh), x0 = r.uniform(0, ww);
        const double sigma = std::min(hh, ww) / 10.0;
        for (std::size_t t = 0; t < spec.t; ++t) {
          const double cy = y0 + vel[0] * static_cast<double>(t), cx = x0 + vel[1] * static_cast<double>(t);
          for (std::size_t y = 0; y < spec.h; ++y) {
            for (std::size_t x = 0; x < spec.w; ++x) {
              const double dy = wrap_dist(static_cast<double>(y), cy, hh);
              const double dx = wrap_dist(static_cast<double>(x), cx, ww);
              dst[t * frame + y * spec.w + x] = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
            }
          }
        }
        break;
      }
    }
    if (spec.normalize) normalize_in_place(dst, per);
  }
  Shape s = spec.t == 1 ? Shape{n, spec.h, spec.w} : Shape{n, spec.t, spec.h, spec.w};
  d.x0 = Tensor(s, std::move(all));
  return d;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_tensor(dir / "x0.swt1", data.x0, DType::kF64);
  std::ofstream cls(dir / "classes.csv");
  cls << "index,class\n";
  for (std::size_t i = 0; i < data.size(); ++i) cls << i << "," << data.classes[i] << "\n";
  if (!data.velocity.empty()) {
    std::ofstream vel(dir / "velocity.csv");
    vel << "index,vy,vx\n";
    for (std::size_t i = 0; i < data.velocity.size(); ++i) {
      vel << i << "," << format_double(data.velocity[i][0]) << "," << format_double(data.velocity[i][1]) << "\n";
    }
  }
}

namespace {

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (!trim(line).empty()) rows.push_back(split(trim(line), ','));
  }
  return rows;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.x0 = load_tensor(dir / "x0.swt1");
  for (const auto& row : read_csv(dir / "classes.csv")) {
    if (row.size() != 2) throw FormatError("classes.csv: expected index,class rows");
    d.classes.push_back(std::stoi(row[1]));
  }
  if (d.classes.size() != d.x0.dim(0)) {
    throw FormatError("dataset " + dir.string() + ": " + std::to_string(d.classes.size()) + " class ids for " +
                      std::to_string(d.x0.dim(0)) + " samples");
  }
  if (std::filesystem::exists(dir / "velocity.csv")) {
    for (const auto& row : read_csv(dir / "velocity.csv")) {
      d.velocity.push_back({std::stod(row.at(1)), std::stod(row.at(2))});
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Teacher

std::string TeacherConfig::to_text() const {
  KeyValues kv;
  const auto net_kv = KeyValues::parse(net.to_text());
  for (const auto& [k, v] : net_kv.entries()) kv.set("net." + k, v);
  kv.set("steps", std::to_string(steps));
  kv.set("batch", std::to_string(batch));
  kv.set("lr", format_double(adam.lr));
  kv.set("clip", format_double(adam.clip));
  kv.set("null_prob", format_double(null_prob));
  std::string s;
  for (std::size_t i = 0; i < scales.size(); ++i) s += (i ? "," : "") + std::to_string(scales[i]);
  kv.set("scales", s);
  return kv.to_text();
}

TeacherConfig TeacherConfig::from_text(const std::string& text) {
  auto kv = KeyValues::parse(text, "teacher config");
  TeacherConfig c;
  c.net = NetConfig::from_text(prefixed(kv, "net."));
  c.steps = static_cast<std::size_t>(kv.get_int("steps", static_cast<long long>(c.steps)));
  c.batch = static_cast<std::size_t>(kv.get_int("batch", static_cast<long long>(c.batch)));
  c.adam.lr = kv.get_double("lr", c.adam.lr);
  c.adam.clip = kv.get_double("clip", c.adam.clip);
  c.null_prob = kv.get_double("null_prob", c.null_prob);
  if (auto s = kv.get("scales")) {
    for (double v : parse_double_list(*s)) c.scales.push_back(static_cast<std::size_t>(v));
  }
  return c;
}

DenoiserNet train_teacher(const TeacherConfig& config, const Dataset& data, std::uint64_t seed, const StepLogger& log) {
  if (data.size() == 0) throw std::invalid_argument("train_teacher: empty dataset");
  if (config.batch == 0) throw std::invalid_argument("train_teacher: batch must be positive");
  Rng init_rng(seed, 1);
  DenoiserNet net = DenoiserNet::init(config.net, init_rng, NetRole::kTeacher);
  Adam opt(net.parameters(), config.adam);
  const Rng step_base(seed, 2);
  std::vector<std::size_t> idx(config.batch);
  for (std::size_t k = 0; k < config.steps; ++k) {
    Rng r = step_base.split(k);
    for (auto& i : idx) i = static_cast<std::size_t>(r.below(data.size()));
    Dataset b = data.gather(idx);
    Tensor x0 = b.x0;
    if (!config.scales.empty()) {
      const std::size_t s = config.scales[r.below(config.scales.size())];
      const auto cur = scale_of(x0);
      if (s != cur.h || s != cur.w) x0 = resize_area(x0, s, s);
    }
    const double loss = fm_train_step(net, opt, x0, b.classes, r, config.null_prob);
    if (log) log(k, loss);
  }
  return net;
}

Dataset synth_dataset(const DenoiserNet& teacher, std::size_t n, const ScaleSpec& res, Rng& rng, std::size_t steps,
                      double w, std::size_t batch) {
  const std::size_t classes = teacher.config().num_classes;
  std::vector<Tensor> parts;
  Dataset d;
  const VelocityFn v = velocity_of(teacher);
  for (std::size_t start = 0, b = 0; start < n; start += batch, ++b) {
    const std::size_t m = std::min(batch, n - start);
    std::vector<int> cls(m);
    for (std::size_t i = 0; i < m; ++i) cls[i] = static_cast<int>((start + i) % classes);
    Rng r = rng.split(b);
    parts.push_back(euler_sample(v, steps, w, cls, r, res));
    d.classes.insert(d.classes.end(), cls.begin(), cls.end());
  }
  d.x0 = concat(parts, 0);
  return d;
}

}  // namespace swd
