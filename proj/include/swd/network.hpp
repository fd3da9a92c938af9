#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "swd/rng.hpp"
#include "swd/tensor.hpp"

namespace swd {

/// Class id meaning "no class" (unconditional branch for guidance).
inline constexpr int kNullClass = -1;

struct NetConfig {
  std::size_t patch_size = 4;
  std::size_t width = 128;
  std::size_t depth = 6;
  std::size_t heads = 4;
  std::size_t num_classes = 2;
  /// 1 for image models, 2 for video models (frames per temporal patch).
  std::size_t temporal_patch = 1;
  /// Token-grid caps (T, H, W) in patches.
  std::array<std::size_t, 3> max_grid{8, 32, 32};

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;
  std::size_t patch_dim() const { return temporal_patch * patch_size * patch_size; }
  std::size_t middle_block() const { return depth / 2; }
  bool video() const { return temporal_patch > 1; }

  std::string to_text() const;
  static NetConfig from_text(const std::string& text);
  bool operator==(const NetConfig&) const = default;
};

enum class NetRole { kTeacher, kStudent, kFake };
const char* role_name(NetRole role);
NetRole parse_role(const std::string& name);

/// Token grid (T, H, W) in patches for an input of the given shape.
std::array<std::size_t, 3> token_grid(const NetConfig& config, const Shape& input_shape);

/// Factorized sinusoidal encoding over per-axis coordinates i / g in [0, 1).
/// A grid of size 2g contains the grid of size g as its even-indexed tokens,
/// so encodings stay consistent across scales. Returns L x width.
Tensor pos_encoding(const std::array<std::size_t, 3>& grid, std::size_t width,
                    const std::array<std::size_t, 3>& max_grid, bool video);

struct ForwardOut {
  Tensor velocity;
  Tensor features;  // N x L x C, defined only when requested
};

/// Patch transformer with adaLN conditioning on (tau, class). Inputs are
/// N x H x W (images) or N x T x H x W (video); the output has the input shape.
class DenoiserNet {
 public:
  DenoiserNet() = default;
  DenoiserNet(NetConfig config, std::map<std::string, Tensor> weights, NetRole role);

  /// Truncated normal (sigma 0.02) init; the output projection and adaLN
  /// modulation layers start at zero, so a fresh net predicts zero velocity.
  static DenoiserNet init(const NetConfig& config, Rng& rng, NetRole role = NetRole::kTeacher);

  /// tau holds one value per batch element or a single shared value.
  ForwardOut forward(const Tensor& x, std::span<const double> tau, std::span<const int> classes,
                     bool want_features = false) const;
  ForwardOut forward(const Tensor& x, double tau, std::span<const int> classes,
                     bool want_features = false) const;
  /// Middle-block tokens only; stops after the tapped block.
  Tensor features(const Tensor& x, std::span<const double> tau, std::span<const int> classes) const;

  const NetConfig& config() const { return config_; }
  NetRole role() const { return role_; }
  void set_role(NetRole role) { role_ = role; }
  const std::map<std::string, Tensor>& weights() const { return weights_; }
  const Tensor& weight(const std::string& name) const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  void set_trainable(bool trainable);
  void zero_grad();
  /// Deep copy with fresh leaves.
  DenoiserNet clone(NetRole role) const;

  void save(const std::filesystem::path& dir) const;
  /// Loads a checkpoint; when `expected` is given the stored config must match it.
  static DenoiserNet load(const std::filesystem::path& dir, const NetConfig* expected = nullptr);

 private:
  Tensor run(const Tensor& x, std::span<const double> tau, std::span<const int> classes, bool want_features,
             bool stop_at_features, Tensor* features) const;
  Tensor conditioning(std::span<const double> tau, std::span<const int> classes, std::size_t batch) const;

  NetConfig config_;
  std::map<std::string, Tensor> weights_;
  NetRole role_ = NetRole::kTeacher;
};

/// Batch of identical class ids.
std::vector<int> repeat_class(int class_id, std::size_t n);

}  // namespace swd
