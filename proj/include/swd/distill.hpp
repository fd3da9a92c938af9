#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "swd/diffusion.hpp"
#include "swd/network.hpp"
#include "swd/schedule.hpp"

namespace swd {

// ---------------------------------------------------------------------------
// Kernel discrepancy

struct KernelSpec {
  enum class Kind { kLinear, kRbf };
  Kind kind = Kind::kLinear;
  /// RBF width; <= 0 means the median pairwise distance of the pooled rows.
  double bandwidth = 0.0;
};

double median_bandwidth(const Tensor& x, const Tensor& y);

/// Squared MMD between the rows of x (N x D) and y (M x D). The unbiased form
/// drops the diagonal of the within-set kernel matrices. Differentiable.
Tensor mmd2(const Tensor& x, const Tensor& y, const KernelSpec& kernel = {}, bool unbiased = true);

enum class MmdVariant { kMain, kRbf, kBatchMean, kNoNoise };
const char* mmd_variant_name(MmdVariant v);
MmdVariant parse_mmd_variant(const std::string& s);

/// Loss between N x L x C feature maps.
///   main / no_noise: sum over images of |token mean (real) - token mean (fake)|^2
///   rbf: per-image biased RBF MMD over the token sets, summed over images
///   batch_mean: |mean over all images and tokens (real - fake)|^2
Tensor mmd_loss(const Tensor& f_real, const Tensor& f_fake, MmdVariant variant);

struct FeaturePair {
  Tensor real;  // detached
  Tensor fake;
  std::vector<double> tau;
};

/// Noises both sets with one (tau, eps) per batch slot, tau ~ U[lo, hi], and
/// reads the teacher's middle-block tokens. no_noise uses clean inputs.
FeaturePair feature_pipeline(const Tensor& real, const Tensor& fake, std::span<const int> classes,
                             const DenoiserNet& teacher, std::array<double, 2> interval, MmdVariant variant,
                             Rng& rng);

// ---------------------------------------------------------------------------
// Distribution matching and adversarial terms

/// Per-sample (x0_fake - x0_real) / mean|x0_real - student_x0| at a random
/// noise level. The real branch is guided with scale w. Never tracks grads.
Tensor dmd_grad(const Tensor& student_x0, std::span<const int> classes, const VelocityFn& real,
                const VelocityFn& fake, double w, Rng& rng, std::array<double, 2> tau_range = {0.02, 0.98});
/// 0.5 mean (x - sg(x - g))^2, whose gradient in x is g / numel.
Tensor dmd_surrogate(const Tensor& x0, const Tensor& g);

/// One flow-matching step of the fake model on detached student samples.
double fake_train_step(DenoiserNet& fake, Adam& opt, const Tensor& student_x0, std::span<const int> classes,
                       Rng& rng);

/// 4-layer MLP on per-image token means; one logit per image.
class DiscHead {
 public:
  DiscHead() = default;
  static DiscHead init(std::size_t width, Rng& rng);

  Tensor logits(const Tensor& features) const;
  std::vector<Tensor> parameters() const;
  void set_trainable(bool trainable);
  std::size_t width() const { return width_; }

  void save(const std::filesystem::path& dir) const;
  static DiscHead load(const std::filesystem::path& dir);

 private:
  std::size_t width_ = 0;
  std::vector<Tensor> weights_, biases_;
};

struct GanLosses {
  Tensor d_loss;
  Tensor g_loss;
  /// Fraction of real logits > 0 and fake logits < 0.
  double d_accuracy = 0.0;
};

/// Non-saturating losses from feature maps of real and generated samples.
GanLosses gan_losses(const DiscHead& head, const Tensor& f_real, const Tensor& f_fake);

// ---------------------------------------------------------------------------
// Sampling

struct SampleTrace {
  std::vector<Tensor> x_t;
  std::vector<Tensor> x0_hat;
};

/// Noise at s_1, then per step predict x0, upsample to the next scale and
/// renoise with fresh eps. Step i draws from rng.split(i). Returns the last x0_hat.
Tensor scalewise_sample(const VelocityFn& student, const ScheduleSpec& schedule, std::span<const int> classes,
                        const Rng& rng, SampleTrace* trace = nullptr);
/// n samples at the schedule's target scale; batch b draws from rng.split(b)
/// and classes cycle 0..num_classes-1.
Tensor sample_batched(const VelocityFn& student, const ScheduleSpec& schedule, std::size_t n,
                      std::size_t num_classes, const Rng& rng, std::size_t batch = 64);
/// Fixed-resolution stochastic multistep sampler with the same draw layout.
Tensor multistep_sample(const VelocityFn& model, std::span<const double> taus, const ScaleSpec& res,
                        std::span<const int> classes, const Rng& rng);

// ---------------------------------------------------------------------------
// Training

struct LossWeights {
  /// Weight of the feature MMD term; 0 gives DMD-only runs.
  double mmd = 1.0;
  double alpha = 1.0;
  double beta = 0.1;
  bool needs_fake() const { return alpha > 0 || beta > 0; }
};

struct DistillConfig {
  ScheduleSpec schedule = parse_schedule("t=1000,945,790,602; s=8,16,24,32");
  LossWeights weights;
  std::array<double, 2> mmd_interval{0.0, 0.6};
  MmdVariant variant = MmdVariant::kMain;
  /// Guidance scale of the real score in the DMD term.
  double cfg_scale = 4.5;
  std::array<double, 2> dmd_tau_range{0.02, 0.98};
  AdamConfig student_adam{1e-4, 0.9, 0.999, 1e-8, 1.0};
  AdamConfig fake_adam{1e-4, 0.9, 0.999, 1e-8, 1.0};
  /// Fake-model updates per generator update.
  std::size_t fake_steps = 2;
  std::size_t steps = 3000;
  std::size_t batch = 32;
  std::size_t checkpoint_every = 500;
  /// 0 disables periodic FD-teacher evaluation.
  std::size_t eval_every = 0;
  std::size_t eval_samples = 256;

  void validate() const;
  std::string to_text() const;
  static DistillConfig from_text(const std::string& text);
};

struct DistillState {
  DenoiserNet student;
  DenoiserNet fake;  // empty when the fake model is not needed
  DiscHead disc;     // empty when beta == 0
  Adam student_opt;
  Adam fake_opt;     // covers fake and disc parameters
  std::size_t step = 0;

  static DistillState from_teacher(const DenoiserNet& teacher, const DistillConfig& config, std::uint64_t seed);
  void save(const std::filesystem::path& dir) const;
  static DistillState load(const std::filesystem::path& dir, const DistillConfig& config);
};

/// Training pair for sampling step k (0-based): the input comes from scale
/// s_{k-1} (s_0 itself for k = 0), the target is s_k at noise tau_k.
struct TrainingPair {
  std::size_t k = 0;
  ScaleSpec source, target;
  double tau = 1.0;
};
TrainingPair training_pair(const ScheduleSpec& schedule, std::size_t k);

struct GeneratorPass {
  Tensor loss;
  Tensor x0_hat;
  Tensor target;  // data at the target scale
  double mmd = 0, dmd = 0, gan = 0;
};

/// Student loss for one batch of full-resolution data at pair k.
/// `fake` and `disc` may be null when their weights are zero.
GeneratorPass generator_loss(const DenoiserNet& student, const DenoiserNet& teacher, const DenoiserNet* fake,
                             const DiscHead* disc, const Tensor& x0_full, std::span<const int> classes,
                             const DistillConfig& config, std::size_t k, const Rng& rng);

struct StepReport {
  std::size_t step = 0;
  TrainingPair pair;
  double loss = 0, mmd = 0, dmd = 0, gan_g = 0;
  double fake_loss = 0, gan_d = 0, d_accuracy = 0;
  double grad_norm = 0;
};

/// Generator update followed by config.fake_steps fake/disc updates.
StepReport swd_training_step(DistillState& state, const DenoiserNet& teacher, const Tensor& x0_full,
                             std::span<const int> classes, const DistillConfig& config, const Rng& rng);

struct DistillLog {
  std::function<void(const StepReport&)> on_step;
  std::function<void(std::size_t step, double fd)> on_eval;
};

/// Full run: student and fake start from the teacher, step s draws from
/// Rng(seed).split(s), checkpoints go to out/ckpt and losses to
/// out/losses.csv (plus out/eval.csv when evaluating). With resume, picks
/// up from out/ckpt. A diverged step aborts and leaves the last checkpoint.
DenoiserNet distill_run(const DistillConfig& config, const DenoiserNet& teacher, const Dataset& train,
                        const Dataset* reference, const std::filesystem::path& out, std::uint64_t seed,
                        bool resume = false, const DistillLog& log = {});

}  // namespace swd
