#include <cmath>
#include <filesystem>
#include <fstream>
#include <algorithm>
#include <sstream>

#include "doctest.h"
#include "swd/config.hpp"
#include "swd/distill.hpp"
#include "swd/gradcheck.hpp"

using namespace swd;
namespace fs = std::filesystem;

namespace {

NetConfig tiny_config() {
  NetConfig c;
  c.width = 32;
  c.depth = 2;
  c.heads = 2;
  c.max_grid = {1, 4, 4};
  return c;
}

Tensor randn(const Shape& s, std::uint64_t seed) {
  Rng rng(seed, 9);
  return gaussian(s, rng);
}

// Jittered weights so no gate or output layer sits at exactly zero.
DenoiserNet perturbed(std::uint64_t seed, double amount = 0.1) {
  Rng rng(seed);
  auto net = DenoiserNet::init(tiny_config(), rng);
  std::map<std::string, Tensor> w;
  for (const auto& [name, t] : net.weights()) {
    auto v = t.to_vector();
    for (auto& x : v) x += amount * rng.normal();
    w[name] = Tensor(t.shape(), v, true);
  }
  return DenoiserNet(tiny_config(), w, NetRole::kTeacher);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && a.to_vector() == b.to_vector();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

DistillConfig tiny_distill() {
  DistillConfig c;
  c.schedule = parse_schedule("t=1000,700; s=8,16");
  c.weights = {1.0, 0.0, 0.0};
  c.batch = 4;
  c.steps = 6;
  c.checkpoint_every = 3;
  return c;
}

Dataset tiny_data(std::size_t n) {
  DataSpec spec;
  spec.h = spec.w = 16;
  Rng rng(21);
  return gen_dataset(spec, n, rng);
}

}  // namespace

TEST_CASE("linear mmd matches the squared mean gap") {
  const Tensor x = randn({40, 6}, 1), y = add_scalar(randn({30, 6}, 2), 0.3);
  const Tensor gap = sub(mean(x, {0}), mean(y, {0}));
  const double expect = sum_all(square(gap)).item();
  CHECK(mmd2(x, y, {}, false).item() == doctest::Approx(expect).epsilon(1e-12));

  // Unbiased form: the within-set terms lose their diagonal, i.e.
  // mean-gap minus (tr Sxx / N - |mean x|^2) / (N - 1) style corrections.
  auto row_sq = [](const Tensor& a) { return sum_all(square(a)).item() / double(a.dim(0)); };
  const double n = 40, m = 30;
  const double mx2 = sum_all(square(mean(x, {0}))).item(), my2 = sum_all(square(mean(y, {0}))).item();
  const double ub = (n * mx2 - row_sq(x)) / (n - 1) + (m * my2 - row_sq(y)) / (m - 1) -
                    2 * sum_all(mul(mean(x, {0}), mean(y, {0}))).item();
  CHECK(mmd2(x, y).item() == doctest::Approx(ub).epsilon(1e-10));

  CHECK(mmd2(x, x).item() == 0.0);
  CHECK(mmd2(x, x, {}, false).item() == 0.0);
  CHECK(std::abs(mmd2(x, x, {KernelSpec::Kind::kRbf, 1.3}).item()) < 1e-15);
  CHECK_THROWS_AS(mmd2(slice(x, 0, 0, 1), y), std::invalid_argument);
  CHECK_THROWS_AS(mmd2(x, randn({5, 4}, 3)), ShapeError);
}

TEST_CASE("linear mmd recovers a known mean shift") {
  Rng rng(5);
  const Tensor x = gaussian({1000, 4}, rng);
  std::vector<double> shift{1, 0, 0, 0};
  const Tensor y = add(gaussian({1000, 4}, rng), Tensor({1, 4}, shift));
  CHECK(mmd2(x, y).item() == doctest::Approx(1.0).epsilon(0.10));
}

TEST_CASE("unbiased estimator centres on zero when P equals Q") {
  Rng rng(8);
  const int reps = 1000;
  double s = 0, s2 = 0;
  for (int i = 0; i < reps; ++i) {
    const Tensor x = gaussian({20, 3}, rng), y = gaussian({20, 3}, rng);
    const double v = mmd2(x, y, {KernelSpec::Kind::kRbf, 1.0}).item();
    s += v;
    s2 += v * v;
  }
  const double mean_v = s / reps, se = std::sqrt((s2 / reps - mean_v * mean_v) / reps);
  CHECK(std::abs(mean_v) < 3 * se);
  // The biased estimate has a positive offset the unbiased one removes.
  const Tensor x = gaussian({20, 3}, rng), y = gaussian({20, 3}, rng);
  CHECK(mmd2(x, y, {KernelSpec::Kind::kRbf, 1.0}, false).item() > 0);
}

TEST_CASE("median bandwidth") {
  const Tensor x({2, 1}, {0.0, 1.0}), y({1, 1}, {3.0});
  // Pairwise distances 1, 3, 2.
  CHECK(median_bandwidth(x, y) == 2.0);
}

TEST_CASE("mmd loss variants") {
  const Tensor a = randn({3, 5, 4}, 11), b = randn({3, 5, 4}, 12);
  for (auto v : {MmdVariant::kMain, MmdVariant::kRbf, MmdVariant::kBatchMean, MmdVariant::kNoNoise}) {
    CHECK(mmd_loss(a, a, v).item() == 0.0);
    CHECK(mmd_loss(a, b, v).item() > 0.0);
  }

  double per_image = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    per_image += mmd2(reshape(slice(a, 0, i, i + 1), {5, 4}), reshape(slice(b, 0, i, i + 1), {5, 4}), {}, false).item();
  }
  const double main = mmd_loss(a, b, MmdVariant::kMain).item();
  CHECK(std::abs(main - per_image) <= 1e-10 * per_image);

  // Token order inside an image does not matter.
  const Tensor shuffled = concat({slice(b, 1, 3, 5), slice(b, 1, 0, 3)}, 1);
  CHECK(mmd_loss(a, shuffled, MmdVariant::kMain).item() == doctest::Approx(main).epsilon(1e-13));

  const double bm = sum_all(square(sub(mean(a, {0, 1}), mean(b, {0, 1})))).item();
  CHECK(mmd_loss(a, b, MmdVariant::kBatchMean).item() == doctest::Approx(bm).epsilon(1e-13));
  // Batch-level means hide per-image differences that the main variant sees.
  const Tensor swapped = concat({slice(a, 0, 1, 3), slice(a, 0, 0, 1)}, 0);
  CHECK(mmd_loss(a, swapped, MmdVariant::kBatchMean).item() < 1e-25);
  CHECK(mmd_loss(a, swapped, MmdVariant::kMain).item() > 0.1);

  CHECK_THROWS_AS(mmd_loss(a, randn({2, 5, 4}, 1), MmdVariant::kMain), ShapeError);
  CHECK(parse_mmd_variant("batch_mean") == MmdVariant::kBatchMean);
  CHECK_THROWS(parse_mmd_variant("median"));
}

TEST_CASE("feature pipeline shares noise and detaches the real branch") {
  const auto teacher = perturbed(31);
  const Tensor real = randn({3, 8, 8}, 32);
  const std::vector<int> cls{0, 1, kNullClass};

  Rng r1(1), r2(1);
  auto clean = feature_pipeline(real, real, cls, teacher, {0.0, 0.0}, MmdVariant::kMain, r1);
  auto nn = feature_pipeline(real, real, cls, teacher, {0.3, 0.9}, MmdVariant::kNoNoise, r2);
  CHECK(bitwise_equal(clean.fake, nn.fake));
  CHECK(clean.real.shape() == Shape{3, 4, 32});

  Rng r3(2);
  auto same = feature_pipeline(real, real, cls, teacher, {0.0, 0.6}, MmdVariant::kMain, r3);
  CHECK(mmd_loss(same.real, same.fake, MmdVariant::kMain).item() == 0.0);
  for (double t : same.tau) CHECK((t >= 0.0 && t <= 0.6));

  // Gradient reaches the fake input and matches finite differences; the real
  // input gets nothing.
  Tensor real_leaf = Tensor(real.shape(), real.to_vector(), true);
  const Tensor fake0 = randn({3, 8, 8}, 33);
  auto loss_of = [&](const Tensor& fake) {
    Rng r(4);
    auto fp = feature_pipeline(real_leaf, fake, cls, teacher, {0.0, 0.6}, MmdVariant::kMain, r);
    return mmd_loss(fp.real, fp.fake, MmdVariant::kMain);
  };
  CHECK(grad_check(loss_of, fake0).max_rel_error < 1e-4);
  Tensor fake_leaf = Tensor(fake0.shape(), fake0.to_vector(), true);
  loss_of(fake_leaf).backward();
  CHECK(fake_leaf.has_grad());
  CHECK_FALSE(real_leaf.has_grad());
}

TEST_CASE("dmd direction") {
  const auto teacher = perturbed(41);
  const std::vector<int> cls{0, 1};
  Tensor x = Tensor(Shape{2, 8, 8}, randn({2, 8, 8}, 42).to_vector(), true);
  Rng r(3);
  const Tensor g0 = dmd_grad(x, cls, velocity_of(teacher), velocity_of(teacher), 1.0, r);
  for (double v : g0.data()) CHECK(v == 0.0);

  // Gaussian oracles: real data N(1, 1), fake N(0, 1). The posterior mean
  // under the real prior is always larger, so descent moves samples up.
  Tensor z = randn({64, 4, 4}, 43);
  Rng r2(5);
  const Tensor g = dmd_grad(z, repeat_class(0, 64), gaussian_oracle(1.0, 1.0), gaussian_oracle(0.0, 1.0), 1.0, r2);
  bool all_negative = true;
  for (double v : g.data()) all_negative = all_negative && v < 0;
  CHECK(all_negative);

  // Surrogate gradient is g / numel and nothing flows into the nets.
  auto fake = perturbed(44);
  Rng r3(6);
  const Tensor g2 = dmd_grad(x, cls, velocity_of(teacher), velocity_of(fake), 3.0, r3);
  dmd_surrogate(x, g2).backward();
  const auto grad = x.grad();
  for (std::size_t i = 0; i < grad.size(); ++i) {
    CHECK(grad[i] == doctest::Approx(g2.data()[i] / double(x.numel())).epsilon(1e-12));
  }
  for (const auto& p : fake.parameters()) CHECK_FALSE(p.has_grad());
  for (const auto& p : teacher.parameters()) CHECK_FALSE(p.has_grad());
}

TEST_CASE("fake model training") {
  const auto teacher = perturbed(51, 0.02);
  Rng rs(52);
  const Dataset d = tiny_data(8);
  Tensor student_x0 = Tensor(Shape{8, 16, 16}, resize_to(d.x0, ScaleSpec::square(16)).to_vector(), true);

  // A copy of the teacher starts with the teacher's loss on the same draws.
  auto fake = teacher.clone(NetRole::kFake);
  Rng a(7), b(7);
  CHECK(fm_loss(velocity_of(teacher), student_x0, d.classes, a, 0.0).item() ==
        fm_loss(velocity_of(fake), student_x0, d.classes, b, 0.0).item());

  Adam opt(fake.parameters(), {1e-3, 0.9, 0.999, 1e-8, 1.0});
  double first = 0, last = 0;
  for (int step = 0; step < 500; ++step) {
    Rng r = Rng(9).split(step);
    const double l = fake_train_step(fake, opt, student_x0, d.classes, r);
    if (step < 50) first += l / 50;
    if (step >= 450) last += l / 50;
  }
  CHECK(last < 0.8 * first);
  CHECK_FALSE(student_x0.has_grad());
}

TEST_CASE("discriminator head") {
  Rng rng(61);
  auto head = DiscHead::init(8, rng);
  const Tensor f = randn({16, 5, 8}, 62);
  auto same = gan_losses(head, f, f);
  CHECK(same.d_accuracy == 0.5);
  CHECK(same.g_loss.item() == doctest::Approx(mean_all(softplus(neg(head.logits(f)))).item()));

  // Linearly separable token means: the head learns them quickly.
  Tensor pos = add_scalar(randn({32, 3, 8}, 63), 0.0);
  std::vector<double> shift(8, 0.0);
  shift[0] = 3.0;
  Tensor neg_set = add(randn({32, 3, 8}, 64), Tensor({1, 1, 8}, shift));
  Adam opt(head.parameters(), {1e-2, 0.9, 0.999, 1e-8, 0.0});
  for (int i = 0; i < 200; ++i) {
    gan_losses(head, pos, neg_set).d_loss.backward();
    opt.step();
  }
  CHECK(gan_losses(head, pos, neg_set).d_accuracy > 0.95);

  const fs::path dir = fs::temp_directory_path() / "swd_test_disc";
  head.save(dir);
  auto back = DiscHead::load(dir);
  CHECK(bitwise_equal(back.logits(pos), head.logits(pos)));
  fs::remove_all(dir);
}

TEST_CASE("scale-wise sampler") {
  const auto net = perturbed(71);
  const VelocityFn v = velocity_of(net);
  const std::vector<int> cls{0, 1, 0};
  const Rng rng(72);

  // All scales at full resolution: the stochastic multistep sampler exactly.
  const auto full = parse_schedule("t=1000,800,500; s=16,16,16");
  const std::vector<double> taus{1.0, 0.8, 0.5};
  CHECK(bitwise_equal(scalewise_sample(v, full, cls, rng),
                      multistep_sample(v, taus, ScaleSpec::square(16), cls, rng)));

  // One step at the target scale is one-step generation.
  const auto one = parse_schedule("t=1000; s=16");
  Rng r0 = rng.split(0);
  const Tensor z = gaussian({3, 16, 16}, r0);
  const double t1 = 1.0;
  CHECK(bitwise_equal(scalewise_sample(v, one, cls, rng), x0_from_v(z, v(z, std::span(&t1, 1), cls), 1.0)));

  // Deterministic, and earlier steps never depend on later draws.
  const auto sched = parse_schedule("t=1000,900,700; s=4,8,16");
  SampleTrace a, b;
  const Tensor out = scalewise_sample(v, sched, cls, rng, &a);
  CHECK(bitwise_equal(out, scalewise_sample(v, sched, cls, rng)));
  CHECK(out.shape() == Shape{3, 16, 16});
  scalewise_sample(v, parse_schedule("t=1000,900; s=4,8"), cls, rng, &b);
  REQUIRE(a.x0_hat.size() == 3);
  REQUIRE(b.x0_hat.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(bitwise_equal(a.x0_hat[i], b.x0_hat[i]));
    CHECK(bitwise_equal(a.x_t[i], b.x_t[i]));
  }
  CHECK(a.x_t[1].shape() == Shape{3, 8, 8});

  const Tensor many = sample_batched(v, sched, 5, 2, rng, 2);
  CHECK(many.shape() == Shape{5, 16, 16});
  CHECK(bitwise_equal(slice(many, 0, 0, 2), scalewise_sample(v, sched, std::vector<int>{0, 1}, rng.split(0))));
  CHECK_THROWS_AS(scalewise_sample(v, parse_schedule("t=1000,900; s=8,4"), cls, rng), std::invalid_argument);
}

TEST_CASE("training pairs follow the sampling steps") {
  const auto s = parse_schedule("t=1000,945,790,602; s=8,16,24,32");
  auto p0 = training_pair(s, 0);
  CHECK(p0.source == ScaleSpec::square(8));
  CHECK(p0.target == ScaleSpec::square(8));
  CHECK(p0.tau == 1.0);
  auto p3 = training_pair(s, 3);
  CHECK(p3.source == ScaleSpec::square(24));
  CHECK(p3.target == ScaleSpec::square(32));
  CHECK(p3.tau == doctest::Approx(0.602));
  CHECK_THROWS(training_pair(s, 4));
}

TEST_CASE("student gradient of the MMD objective matches finite differences") {
  const auto teacher = perturbed(81);
  const auto student = perturbed(82);
  DistillConfig cfg = tiny_distill();
  const Dataset d = tiny_data(3);
  for (std::size_t k : {0u, 1u}) {
    for (const char* name : {"blocks.0.qkv.w", "blocks.1.fc2.w", "final.proj.w"}) {
      auto weights = student.weights();
      auto r = grad_check(
          [&](const Tensor& w) {
            auto ws = weights;
            ws[name] = w;
            DenoiserNet s(tiny_config(), ws, NetRole::kStudent);
            return generator_loss(s, teacher, nullptr, nullptr, d.x0, d.classes, cfg, k, Rng(83)).loss;
          },
          student.weight(name));
      INFO(name << " k=" << k);
      CHECK(r.max_rel_error < 1e-3);
    }
  }
  CHECK_THROWS_AS(generator_loss(student, teacher, nullptr, nullptr, resize_to(d.x0, ScaleSpec::square(8)),
                                 d.classes, cfg, 0, Rng(1)),
                  std::invalid_argument);
  cfg.weights.alpha = 1.0;
  CHECK_THROWS_AS(generator_loss(student, teacher, nullptr, nullptr, d.x0, d.classes, cfg, 0, Rng(1)),
                  std::invalid_argument);
}

TEST_CASE("training steps are deterministic and skip unused parts") {
  auto teacher = perturbed(91, 0.02);
  teacher.set_trainable(false);
  const Dataset d = tiny_data(4);

  DistillConfig mmd_only = tiny_distill();
  auto s1 = DistillState::from_teacher(teacher, mmd_only, 1);
  auto s2 = DistillState::from_teacher(teacher, mmd_only, 1);
  CHECK(s1.fake.weights().empty());
  CHECK(s1.disc.width() == 0);
  auto r1 = swd_training_step(s1, teacher, d.x0, d.classes, mmd_only, Rng(5));
  auto r2 = swd_training_step(s2, teacher, d.x0, d.classes, mmd_only, Rng(5));
  CHECK(r1.loss == r2.loss);
  CHECK(r1.dmd == 0.0);
  CHECK(r1.fake_loss == 0.0);
  CHECK(bitwise_equal(s1.student.weight("blocks.0.qkv.w"), s2.student.weight("blocks.0.qkv.w")));
  CHECK_FALSE(bitwise_equal(s1.student.weight("blocks.0.qkv.w"), teacher.weight("blocks.0.qkv.w")));

  DistillConfig full = tiny_distill();
  full.weights = {1.0, 1.0, 0.1};
  auto s3 = DistillState::from_teacher(teacher, full, 1);
  CHECK(s3.disc.width() == 32);
  const auto fake_before = s3.fake.weight("blocks.0.qkv.w").to_vector();
  auto r3 = swd_training_step(s3, teacher, d.x0, d.classes, full, Rng(5));
  CHECK(r3.dmd > 0.0);
  CHECK(r3.gan_d > 0.0);
  CHECK(r3.fake_loss > 0.0);
  CHECK(s3.fake.weight("blocks.0.qkv.w").to_vector() != fake_before);
  for (const auto& p : teacher.parameters()) CHECK_FALSE(p.has_grad());
}

TEST_CASE("distill config text round trip") {
  DistillConfig c;
  c.weights = {0.0, 2.0, 0.5};
  c.variant = MmdVariant::kRbf;
  c.mmd_interval = {0.1, 0.5};
  c.schedule = parse_schedule("t=1000,600; s=16,32");
  c.student_adam.lr = 3e-4;
  c.steps = 77;
  const auto back = DistillConfig::from_text(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(back.schedule == c.schedule);
  CHECK(back.weights.alpha == 2.0);
  CHECK(back.variant == MmdVariant::kRbf);

  DistillConfig bad = c;
  bad.weights = {0, 0, 0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.mmd_interval = {0.7, 0.2};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("resumed run reproduces the uninterrupted one") {
  auto teacher = perturbed(101, 0.02);
  const Dataset d = tiny_data(16);
  const fs::path root = fs::temp_directory_path() / "swd_test_resume";
  fs::remove_all(root);

  DistillConfig cfg = tiny_distill();
  cfg.weights = {1.0, 1.0, 0.1};
  const auto straight = distill_run(cfg, teacher, d, nullptr, root / "a", 3);

  DistillConfig half = cfg;
  half.steps = 3;
  distill_run(half, teacher, d, nullptr, root / "b", 3);
  const auto resumed = distill_run(cfg, teacher, d, nullptr, root / "b", 3, true);

  CHECK(slurp(root / "a" / "losses.csv") == slurp(root / "b" / "losses.csv"));
  for (const auto& [name, t] : straight.weights()) CHECK(bitwise_equal(t, resumed.weight(name)));
  const auto lines = slurp(root / "a" / "losses.csv");
  CHECK(std::count(lines.begin(), lines.end(), '\n') == 7);
  fs::remove_all(root);
}

TEST_CASE("a diverged step aborts and keeps the last good checkpoint") {
  auto teacher = perturbed(111, 0.02);
  Dataset d = tiny_data(64);
  auto v = d.x0.to_vector();
  v[5 * 256 + 3] = std::nan("");  // sample 5 is poisoned
  d.x0 = Tensor(d.x0.shape(), v);
  const fs::path root = fs::temp_directory_path() / "swd_test_nan";
  fs::remove_all(root);
  DistillConfig cfg = tiny_distill();
  cfg.steps = 200;
  cfg.checkpoint_every = 1;
  std::string msg;
  try {
    distill_run(cfg, teacher, d, nullptr, root, 3);
  } catch (const TrainingError& e) {
    msg = e.what();
  }
  REQUIRE_FALSE(msg.empty());
  CHECK(msg.find("last good checkpoint") != std::string::npos);
  const std::size_t failed = std::stoul(msg.substr(msg.find("step ") + 5));
  const auto state = slurp(root / "ckpt" / "state.txt");
  if (failed > 0) CHECK(state == "step=" + std::to_string(failed) + "\n");
  fs::remove_all(root);
}
