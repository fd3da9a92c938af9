#include "swd/network.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "swd/config.hpp"
#include "swd/io.hpp"

namespace swd {

namespace {

constexpr double kInitStd = 0.02;

Tensor trunc_normal(const Shape& shape, Rng& rng, double stddev) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) {
    double z = rng.normal();
    while (std::abs(z) > 2.0) z = rng.normal();
    x = z * stddev;
  }
  return Tensor(shape, std::move(v), true);
}

std::string file_name_for(const std::string& tensor_name) { return tensor_name + ".swt1"; }

std::string block_key(std::size_t i, const char* leaf) { return "blocks." + std::to_string(i) + "." + leaf; }

// x * (1 + scale) + shift with scale/shift of shape [N, 1, C].
Tensor modulate(const Tensor& x, const Tensor& shift, const Tensor& scl) {
  return add(mul(x, add_scalar(scl, 1.0)), shift);
}

}  // namespace

void NetConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("NetConfig: " + m); };
  if (patch_size == 0) fail("patch_size must be positive");
  if (depth == 0 || depth % 2 != 0) fail("depth must be even and positive, got " + std::to_string(depth));
  if (heads == 0 || width % heads != 0) {
    fail("width " + std::to_string(width) + " not divisible by heads " + std::to_string(heads));
  }
  if (width < 8 || width % 8 != 0) fail("width must be a positive multiple of 8");
  if (num_classes == 0) fail("num_classes must be positive");
  if (temporal_patch != 1 && temporal_patch != 2) fail("temporal_patch must be 1 (images) or 2 (video)");
  for (auto g : max_grid) {
    if (g == 0) fail("max_grid entries must be positive");
  }
}

std::string NetConfig::to_text() const {
  KeyValues kv;
  kv.set("patch_size", std::to_string(patch_size));
  kv.set("width", std::to_string(width));
  kv.set("depth", std::to_string(depth));
  kv.set("heads", std::to_string(heads));
  kv.set("num_classes", std::to_string(num_classes));
  kv.set("temporal_patch", std::to_string(temporal_patch));
  kv.set("max_grid", std::to_string(max_grid[0]) + "," + std::to_string(max_grid[1]) + "," +
                         std::to_string(max_grid[2]));
  return kv.to_text();
}

NetConfig NetConfig::from_text(const std::string& text) {
  auto kv = KeyValues::parse(text, "net config");
  NetConfig c;
  c.patch_size = static_cast<std::size_t>(kv.get_int("patch_size", static_cast<long long>(c.patch_size)));
  c.width = static_cast<std::size_t>(kv.get_int("width", static_cast<long long>(c.width)));
  c.depth = static_cast<std::size_t>(kv.get_int("depth", static_cast<long long>(c.depth)));
  c.heads = static_cast<std::size_t>(kv.get_int("heads", static_cast<long long>(c.heads)));
  c.num_classes = static_cast<std::size_t>(kv.get_int("num_classes", static_cast<long long>(c.num_classes)));
  c.temporal_patch =
      static_cast<std::size_t>(kv.get_int("temporal_patch", static_cast<long long>(c.temporal_patch)));
  if (auto g = kv.get("max_grid")) {
    auto v = parse_double_list(*g);
    if (v.size() != 3) throw ConfigError("max_grid expects three values");
    for (std::size_t i = 0; i < 3; ++i) c.max_grid[i] = static_cast<std::size_t>(v[i]);
  }
  c.validate();
  return c;
}

const char* role_name(NetRole role) {
  switch (role) {
    case NetRole::kTeacher: return "teacher";
    case NetRole::kStudent: return "student";
    case NetRole::kFake: return "fake";
  }
  return "teacher";
}

NetRole parse_role(const std::string& name) {
  if (name == "teacher") return NetRole::kTeacher;
  if (name == "student") return NetRole::kStudent;
  if (name == "fake") return NetRole::kFake;
  throw ConfigError("unknown net role '" + name + "'");
}

std::array<std::size_t, 3> token_grid(const NetConfig& config, const Shape& s) {
  const std::size_t p = config.patch_size;
  std::size_t t = 1, h = 0, w = 0;
  if (config.video()) {
    if (s.size() != 4) throw ShapeError("forward: video model expects N x T x H x W, got " + shape_str(s));
    t = s[1];
    h = s[2];
    w = s[3];
    if (t % config.temporal_patch != 0) {
      throw ShapeError("forward: frame count " + std::to_string(t) + " not divisible by temporal patch " +
                       std::to_string(config.temporal_patch));
    }
  } else {
    if (s.size() != 3) throw ShapeError("forward: image model expects N x H x W, got " + shape_str(s));
    h = s[1];
    w = s[2];
  }
  if (h % p != 0 || w % p != 0 || h == 0 || w == 0) {
    throw ShapeError("forward: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by patch size " + std::to_string(p));
  }
  return {t / config.temporal_patch, h / p, w / p};
}

Tensor pos_encoding(const std::array<std::size_t, 3>& grid, std::size_t width,
                    const std::array<std::size_t, 3>& max_grid, bool video) {
  for (std::size_t a = 0; a < 3; ++a) {
    if (grid[a] == 0 || grid[a] > max_grid[a]) {
      throw std::invalid_argument("pos_encoding: grid (" + std::to_string(grid[0]) + "," +
                                  std::to_string(grid[1]) + "," + std::to_string(grid[2]) +
                                  ") exceeds cap (" + std::to_string(max_grid[0]) + "," +
                                  std::to_string(max_grid[1]) + "," + std::to_string(max_grid[2]) + ")");
    }
  }
  // Channel budget per axis (t, y, x); each is even so sin/cos pairs fit.
  std::array<std::size_t, 3> channels{};
  if (video) {
    channels[0] = 2 * (width / 8);
    const std::size_t rest = width - channels[0];
    channels[1] = 2 * (rest / 4);
    channels[2] = rest - channels[1];
  } else {
    channels[1] = 2 * (width / 4);
    channels[2] = width - channels[1];
  }
  const std::size_t tokens = grid[0] * grid[1] * grid[2];
  std::vector<double> out(tokens * width, 0.0);
  std::size_t base = 0;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const std::size_t pairs = channels[axis] / 2;
    if (pairs == 0) continue;
    // Frequency 0 is a constant channel; the rest are geometric from pi up to pi * cap.
    std::vector<double> omega(pairs, 0.0);
    const double top = std::log2(static_cast<double>(std::max<std::size_t>(max_grid[axis], 2)));
    for (std::size_t j = 1; j < pairs; ++j) {
      const double frac = pairs > 2 ? static_cast<double>(j - 1) / static_cast<double>(pairs - 2) : 0.0;
      omega[j] = std::numbers::pi * std::exp2(frac * top);
    }
    for (std::size_t t = 0; t < grid[0]; ++t) {
      for (std::size_t y = 0; y < grid[1]; ++y) {
        for (std::size_t x = 0; x < grid[2]; ++x) {
          const std::size_t idx[3] = {t, y, x};
          const double coord = static_cast<double>(idx[axis]) / static_cast<double>(grid[axis]);
          double* row = out.data() + ((t * grid[1] + y) * grid[2] + x) * width + base;
          for (std::size_t j = 0; j < pairs; ++j) {
            row[2 * j] = std::sin(omega[j] * coord);
            row[2 * j + 1] = std::cos(omega[j] * coord);
          }
        }
      }
    }
    base += channels[axis];
  }
  return Tensor({tokens, width}, std::move(out));
}

DenoiserNet::DenoiserNet(NetConfig config, std::map<std::string, Tensor> weights, NetRole role)
    : config_(config), weights_(std::move(weights)), role_(role) {
  config_.validate();
  // Shape consistency against a freshly described layout.
  const std::size_t c = config_.width, pd = config_.patch_dim();
  std::map<std::string, Shape> expect{
      {"patch_embed.w", {pd, c}},
      {"patch_embed.b", {c}},
      {"t_mlp.0.w", {c, c}},
      {"t_mlp.0.b", {c}},
      {"t_mlp.1.w", {c, c}},
      {"t_mlp.1.b", {c}},
      {"class_emb", {config_.num_classes + 1, c}},
      {"final.mod.w", {c, 2 * c}},
      {"final.mod.b", {2 * c}},
      {"final.proj.w", {c, pd}},
      {"final.proj.b", {pd}},
  };
  for (std::size_t i = 0; i < config_.depth; ++i) {
    expect[block_key(i, "mod.w")] = {c, 6 * c};
    expect[block_key(i, "mod.b")] = {6 * c};
    expect[block_key(i, "qkv.w")] = {c, 3 * c};
    expect[block_key(i, "qkv.b")] = {3 * c};
    expect[block_key(i, "proj.w")] = {c, c};
    expect[block_key(i, "proj.b")] = {c};
    expect[block_key(i, "fc1.w")] = {c, 4 * c};
    expect[block_key(i, "fc1.b")] = {4 * c};
    expect[block_key(i, "fc2.w")] = {4 * c, c};
    expect[block_key(i, "fc2.b")] = {c};
  }
  if (expect.size() != weights_.size()) {
    throw std::invalid_argument("DenoiserNet: expected " + std::to_string(expect.size()) + " tensors, got " +
                                std::to_string(weights_.size()));
  }
  for (const auto& [name, shape] : expect) {
    auto it = weights_.find(name);
    if (it == weights_.end()) throw std::invalid_argument("DenoiserNet: missing tensor '" + name + "'");
    if (it->second.shape() != shape) {
      throw std::invalid_argument("DenoiserNet: tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                                  ", expected " + shape_str(shape));
    }
    for (double v : it->second.data()) {
      if (!std::isfinite(v)) throw NumericError("DenoiserNet: tensor '" + name + "' holds non-finite values");
    }
  }
}

DenoiserNet DenoiserNet::init(const NetConfig& config, Rng& rng, NetRole role) {
  config.validate();
  const std::size_t c = config.width, pd = config.patch_dim();
  std::map<std::string, Tensor> w;
  auto dense = [&](const std::string& name, std::size_t in, std::size_t out, bool zero) {
    w[name + ".w"] = zero ? Tensor::zeros({in, out}, true) : trunc_normal({in, out}, rng, kInitStd);
    w[name + ".b"] = Tensor::zeros({out}, true);
  };
  dense("patch_embed", pd, c, false);
  dense("t_mlp.0", c, c, false);
  dense("t_mlp.1", c, c, false);
  w["class_emb"] = trunc_normal({config.num_classes + 1, c}, rng, kInitStd);
  for (std::size_t i = 0; i < config.depth; ++i) {
    const std::string b = "blocks." + std::to_string(i);
    dense(b + ".mod", c, 6 * c, true);
    dense(b + ".qkv", c, 3 * c, false);
    dense(b + ".proj", c, c, false);
    dense(b + ".fc1", c, 4 * c, false);
    dense(b + ".fc2", 4 * c, c, false);
  }
  dense("final.mod", c, 2 * c, true);
  dense("final.proj", c, pd, true);
  return DenoiserNet(config, std::move(w), role);
}

const Tensor& DenoiserNet::weight(const std::string& name) const {
  auto it = weights_.find(name);
  if (it == weights_.end()) throw std::out_of_range("DenoiserNet: no tensor named '" + name + "'");
  return it->second;
}

std::vector<Tensor> DenoiserNet::parameters() const {
  std::vector<Tensor> out;
  out.reserve(weights_.size());
  for (const auto& [name, t] : weights_) out.push_back(t);
  return out;
}

std::size_t DenoiserNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : weights_) n += t.numel();
  return n;
}

void DenoiserNet::set_trainable(bool trainable) {
  for (auto& [name, t] : weights_) t.set_requires_grad(trainable);
}

void DenoiserNet::zero_grad() {
  for (auto& [name, t] : weights_) t.zero_grad();
}

DenoiserNet DenoiserNet::clone(NetRole role) const {
  std::map<std::string, Tensor> w;
  for (const auto& [name, t] : weights_) w[name] = Tensor(t.shape(), t.to_vector(), true);
  return DenoiserNet(config_, std::move(w), role);
}

Tensor DenoiserNet::conditioning(std::span<const double> tau, std::span<const int> classes,
                                 std::size_t batch) const {
  if (tau.size() != 1 && tau.size() != batch) {
    throw std::invalid_argument("forward: expected 1 or " + std::to_string(batch) + " tau values, got " +
                                std::to_string(tau.size()));
  }
  if (classes.size() != batch) {
    throw std::invalid_argument("forward: expected " + std::to_string(batch) + " class ids, got " +
                                std::to_string(classes.size()));
  }
  const std::size_t c = config_.width, half = c / 2;
  std::vector<double> emb(batch * c);
  for (std::size_t n = 0; n < batch; ++n) {
    const double t = tau.size() == 1 ? tau[0] : tau[n];
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("forward: tau " + format_double(t) + " outside [0,1]");
    for (std::size_t j = 0; j < half; ++j) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(j) / static_cast<double>(half));
      emb[n * c + j] = std::cos(1000.0 * t * freq);
      emb[n * c + half + j] = std::sin(1000.0 * t * freq);
    }
  }
  std::vector<std::size_t> ids(batch);
  for (std::size_t n = 0; n < batch; ++n) {
    if (classes[n] == kNullClass) {
      ids[n] = config_.num_classes;
    } else if (classes[n] < 0 || static_cast<std::size_t>(classes[n]) >= config_.num_classes) {
      throw std::invalid_argument("forward: class id " + std::to_string(classes[n]) + " out of range for " +
                                  std::to_string(config_.num_classes) + " classes");
    } else {
      ids[n] = static_cast<std::size_t>(classes[n]);
    }
  }
  Tensor t_emb = Tensor({batch, c}, std::move(emb));
  Tensor h = linear(silu(linear(t_emb, weight("t_mlp.0.w"), weight("t_mlp.0.b"))), weight("t_mlp.1.w"),
                    weight("t_mlp.1.b"));
  return add(h, embedding(weight("class_emb"), ids));
}

Tensor DenoiserNet::run(const Tensor& x, std::span<const double> tau, std::span<const int> classes,
                        bool want_features, bool stop_at_features, Tensor* features) const {
  const auto grid = token_grid(config_, x.shape());
  const std::size_t n = x.dim(0), p = config_.patch_size, pt = config_.temporal_patch;
  const std::size_t c = config_.width, heads = config_.heads, dh = c / heads;
  const std::size_t tokens = grid[0] * grid[1] * grid[2];
  const std::size_t pd = config_.patch_dim();

  Tensor patches;
  if (config_.video()) {
    patches = reshape(permute(reshape(x, {n, grid[0], pt, grid[1], p, grid[2], p}), {0, 1, 3, 5, 2, 4, 6}),
                      {n, tokens, pd});
  } else {
    patches = reshape(permute(reshape(x, {n, grid[1], p, grid[2], p}), {0, 1, 3, 2, 4}), {n, tokens, pd});
  }
  Tensor cond = conditioning(tau, classes, n);
  Tensor cond_act = reshape(silu(cond), {n, 1, c});

  Tensor h = linear(patches, weight("patch_embed.w"), weight("patch_embed.b"));
  h = add(h, pos_encoding(grid, c, config_.max_grid, config_.video()));
  h = add(h, reshape(cond, {n, 1, c}));

  for (std::size_t b = 0; b < config_.depth; ++b) {
    Tensor mod = linear(cond_act, weight(block_key(b, "mod.w")), weight(block_key(b, "mod.b")));
    auto chunk = [&](std::size_t k) { return slice(mod, 2, k * c, (k + 1) * c); };

    Tensor a = modulate(layer_norm(h), chunk(0), chunk(1));
    Tensor qkv = linear(a, weight(block_key(b, "qkv.w")), weight(block_key(b, "qkv.b")));
    qkv = reshape(permute(reshape(qkv, {n, tokens, 3, heads, dh}), {2, 0, 3, 1, 4}), {3, n * heads, tokens, dh});
    auto part = [&](std::size_t k) { return reshape(slice(qkv, 0, k, k + 1), {n * heads, tokens, dh}); };
    Tensor att = attention(part(0), part(1), part(2));
    att = reshape(permute(reshape(att, {n, heads, tokens, dh}), {0, 2, 1, 3}), {n, tokens, c});
    att = linear(att, weight(block_key(b, "proj.w")), weight(block_key(b, "proj.b")));
    h = add(h, mul(att, chunk(2)));

    Tensor m = modulate(layer_norm(h), chunk(3), chunk(4));
    m = gelu(linear(m, weight(block_key(b, "fc1.w")), weight(block_key(b, "fc1.b"))));
    m = linear(m, weight(block_key(b, "fc2.w")), weight(block_key(b, "fc2.b")));
    h = add(h, mul(m, chunk(5)));

    if (b + 1 == config_.middle_block()) {
      if (want_features && features) *features = h;
      if (stop_at_features) return h;
    }
  }

  Tensor fmod = linear(cond_act, weight("final.mod.w"), weight("final.mod.b"));
  Tensor out = modulate(layer_norm(h), slice(fmod, 2, 0, c), slice(fmod, 2, c, 2 * c));
  out = linear(out, weight("final.proj.w"), weight("final.proj.b"));
  if (config_.video()) {
    return reshape(permute(reshape(out, {n, grid[0], grid[1], grid[2], pt, p, p}), {0, 1, 4, 2, 5, 3, 6}),
                   x.shape());
  }
  return reshape(permute(reshape(out, {n, grid[1], grid[2], p, p}), {0, 1, 3, 2, 4}), x.shape());
}

ForwardOut DenoiserNet::forward(const Tensor& x, std::span<const double> tau, std::span<const int> classes,
                                bool want_features) const {
  ForwardOut out;
  out.velocity = run(x, tau, classes, want_features, false, &out.features);
  return out;
}

ForwardOut DenoiserNet::forward(const Tensor& x, double tau, std::span<const int> classes,
                                bool want_features) const {
  const double t[1] = {tau};
  return forward(x, std::span<const double>(t, 1), classes, want_features);
}

Tensor DenoiserNet::features(const Tensor& x, std::span<const double> tau, std::span<const int> classes) const {
  Tensor f;
  run(x, tau, classes, true, true, &f);
  return f;
}

void DenoiserNet::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw FormatError("cannot write manifest in " + dir.string());
  manifest << "# swd checkpoint\n";
  manifest << "role=" << role_name(role_) << "\n";
  manifest << config_.to_text();
  for (const auto& [name, t] : weights_) {
    manifest << "tensor." << name << "=" << shape_str(t.shape()) << " f64 " << file_name_for(name) << "\n";
    save_tensor(dir / file_name_for(name), t, DType::kF64);
  }
}

DenoiserNet DenoiserNet::load(const std::filesystem::path& dir, const NetConfig* expected) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw FormatError("checkpoint " + dir.string() + ": missing manifest.txt");
  std::stringstream ss;
  ss << in.rdbuf();
  auto kv = KeyValues::parse(ss.str(), (dir / "manifest.txt").string());
  std::string cfg_text;
  std::map<std::string, std::string> files;
  for (const auto& [k, v] : kv.entries()) {
    if (k.rfind("tensor.", 0) == 0) {
      auto parts = split(v, ' ');
      if (parts.size() != 3) throw FormatError("checkpoint manifest: malformed entry for " + k);
      files[k.substr(7)] = parts[2];
    } else if (k != "role") {
      cfg_text += k + "=" + v + "\n";
    }
  }
  NetConfig config = NetConfig::from_text(cfg_text);
  if (expected && !(*expected == config)) {
    throw std::invalid_argument("checkpoint " + dir.string() + ": config mismatch (stored:\n" + config.to_text() +
                                "expected:\n" + expected->to_text() + ")");
  }
  std::map<std::string, Tensor> weights;
  for (const auto& [name, file] : files) {
    try {
      Tensor t = load_tensor(dir / file);
      weights[name] = Tensor(t.shape(), t.to_vector(), true);
    } catch (const std::exception& e) {
      throw FormatError("checkpoint tensor '" + name + "' failed to load: " + e.what());
    }
  }
  return DenoiserNet(config, std::move(weights), parse_role(kv.get_or("role", "teacher")));
}

std::vector<int> repeat_class(int class_id, std::size_t n) { return std::vector<int>(n, class_id); }

}  // namespace swd
