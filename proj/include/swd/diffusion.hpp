#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "swd/network.hpp"
#include "swd/resample.hpp"
#include "swd/rng.hpp"
#include "swd/tensor.hpp"

namespace swd {

/// Integer timestep t in [0, 1000] to tau = t / 1000.
inline double tau_of(int t) { return static_cast<double>(t) / 1000.0; }

/// Shape [N, 1, ...] holding one value per batch element, broadcastable
/// against a tensor of the given rank.
Tensor per_sample(std::span<const double> values, std::size_t rank);

/// x_tau = (1 - tau) x0 + tau eps. Differentiable in x0 and eps.
Tensor noise_to(const Tensor& x0, double tau, const Tensor& eps);
Tensor noise_to(const Tensor& x0, std::span<const double> tau, const Tensor& eps);
/// x0_hat = x_t - tau v.
Tensor x0_from_v(const Tensor& x_t, const Tensor& v, double tau);
Tensor x0_from_v(const Tensor& x_t, const Tensor& v, std::span<const double> tau);
/// Flow-matching target eps - x0.
Tensor v_from_pair(const Tensor& x0, const Tensor& eps);

/// Anything that predicts velocity: a network or an analytic oracle.
using VelocityFn = std::function<Tensor(const Tensor& x, std::span<const double> tau, std::span<const int> classes)>;
/// Wraps a network; the net must outlive the closure.
VelocityFn velocity_of(const DenoiserNet& net);

/// v_uncond + w (v_cond - v_uncond); w == 1 evaluates the conditional branch only.
Tensor guided_velocity(const VelocityFn& v, const Tensor& x, std::span<const double> tau, std::span<const int> classes,
                       double w);

/// E[eps - x0 | x_tau = x] when x0 ~ N(mu, sigma2) per pixel.
Tensor analytic_gaussian_v(const Tensor& x_t, double tau, double mu, double sigma2);
VelocityFn gaussian_oracle(double mu, double sigma2);

/// Euler integration of the probability-flow ODE from tau = 1 (fresh noise) to 0.
Tensor euler_sample(const VelocityFn& v, std::size_t steps, double w, std::span<const int> classes, Rng& rng,
                    const ScaleSpec& res);
/// Continues from x at tau_start down to 0 in `steps` uniform Euler steps.
Tensor euler_integrate(const VelocityFn& v, Tensor x, double tau_start, std::size_t steps, double w,
                       std::span<const int> classes);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double clip = 1.0;
};

/// Adam over a fixed parameter list. step() consumes and clears the grads.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor> params, AdamConfig config);

  /// Returns the pre-clip gradient norm.
  double step();
  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

  void save(const std::filesystem::path& dir, const std::string& prefix) const;
  void load(const std::filesystem::path& dir, const std::string& prefix);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig config_;
  std::size_t t_ = 0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// mean |v(x_tau) - (eps - x0)|^2 with tau ~ U[0,1] per element and a
/// fraction null_prob of class ids replaced by the null class.
Tensor fm_loss(const VelocityFn& v, const Tensor& x0, std::span<const int> classes, Rng& rng, double null_prob = 0.1);
/// fm_loss + backward + optimizer step. Throws TrainingError on a non-finite loss.
double fm_train_step(DenoiserNet& net, Adam& opt, const Tensor& x0, std::span<const int> classes, Rng& rng,
                     double null_prob = 0.1);

enum class DataKind { kPowerlaw, kBlobs, kMovingBlob };
const char* data_kind_name(DataKind k);
DataKind parse_data_kind(const std::string& s);

struct DataSpec {
  DataKind kind = DataKind::kPowerlaw;
  std::size_t classes = 2;
  /// Power-law exponent per class (powerlaw kind).
  std::vector<double> betas{1.5, 2.5};
  std::size_t t = 1;
  std::size_t h = 32;
  std::size_t w = 32;
  /// Each field rescaled to zero mean and unit std, so the set is too.
  bool normalize = true;

  void validate() const;
  std::string to_text() const;
  static DataSpec from_text(const std::string& text);
};

struct Dataset {
  Tensor x0;                                     // N x H x W or N x T x H x W
  std::vector<int> classes;                      // one per sample
  std::vector<std::array<double, 2>> velocity;   // (vy, vx) px/frame, video only

  std::size_t size() const { return classes.size(); }
  Dataset slice(std::size_t begin, std::size_t end) const;
  Dataset gather(std::span<const std::size_t> idx) const;
};

/// Sample i uses rng.split(i), so any subset regenerates identically.
Dataset gen_dataset(const DataSpec& spec, std::size_t n, Rng& rng);
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

struct TeacherConfig {
  NetConfig net;
  std::size_t steps = 20000;
  std::size_t batch = 64;
  AdamConfig adam{2e-4, 0.9, 0.999, 1e-8, 1.0};
  double null_prob = 0.1;
  /// Square training resolutions drawn uniformly per step; empty means the
  /// dataset resolution only.
  std::vector<std::size_t> scales;

  std::string to_text() const;
  static TeacherConfig from_text(const std::string& text);
};

using StepLogger = std::function<void(std::size_t step, double loss)>;

/// Trains a fresh net from `seed`; step k draws from Rng(seed).split(k).
DenoiserNet train_teacher(const TeacherConfig& config, const Dataset& data, std::uint64_t seed,
                          const StepLogger& log = {});

/// Teacher-generated training set: `steps`-step Euler with guidance w, classes
/// cycling 0..K-1.
Dataset synth_dataset(const DenoiserNet& teacher, std::size_t n, const ScaleSpec& res, Rng& rng,
                      std::size_t steps = 50, double w = 4.5, std::size_t batch = 64);

}  // namespace swd
