#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "swd/gradcheck.hpp"
#include "swd/network.hpp"

using namespace swd;

namespace {

NetConfig small_config() {
  NetConfig c;
  c.width = 32;
  c.depth = 2;
  c.heads = 2;
  return c;
}

Tensor randn(const Shape& s, std::uint64_t seed) {
  Rng rng(seed, 7);
  return gaussian(s, rng);
}

// Fresh nets have zero-initialised gates and outputs, which would make most
// gradients vanish; jitter every tensor so the check sees real signal.
DenoiserNet perturbed(const NetConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  auto net = DenoiserNet::init(c, rng);
  std::map<std::string, Tensor> w;
  for (const auto& [name, t] : net.weights()) {
    auto v = t.to_vector();
    for (auto& x : v) x += 0.1 * rng.normal();
    w[name] = Tensor(t.shape(), v, true);
  }
  return DenoiserNet(c, w, NetRole::kTeacher);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST_CASE("token count and output shape") {
  NetConfig c = small_config();
  CHECK(token_grid(c, {2, 32, 32}) == std::array<std::size_t, 3>{1, 8, 8});
  Rng rng(1);
  auto net = DenoiserNet::init(c, rng);
  auto cls = repeat_class(0, 2);
  for (std::size_t s : {8u, 16u, 24u, 32u}) {
    auto out = net.forward(randn({2, s, s}, s), 0.5, cls);
    CHECK(out.velocity.shape() == Shape{2, s, s});
  }
  CHECK_THROWS_AS(net.forward(randn({2, 30, 32}, 1), 0.5, cls), ShapeError);
  CHECK_THROWS_AS(net.forward(randn({2, 32, 32}, 1), 1.5, cls), std::invalid_argument);
  auto bad = repeat_class(2, 2);
  CHECK_THROWS_AS(net.forward(randn({2, 32, 32}, 1), 0.5, bad), std::invalid_argument);
  CHECK_THROWS_AS(net.forward(randn({2, 256, 256}, 1), 0.5, cls), std::invalid_argument);
}

TEST_CASE("fresh net predicts near-zero velocity") {
  NetConfig c;
  c.width = 64;
  c.depth = 4;
  Rng rng(3);
  auto net = DenoiserNet::init(c, rng);
  auto cls = repeat_class(1, 4);
  auto v = net.forward(randn({4, 32, 32}, 2), 0.7, cls).velocity;
  for (double x : v.data()) CHECK(std::abs(x) < 0.1);
}

TEST_CASE("forward is bitwise repeatable") {
  auto net = perturbed(small_config(), 5);
  Tensor x = randn({3, 16, 16}, 9);
  std::vector<double> tau{0.1, 0.5, 0.9};
  std::vector<int> cls{0, 1, kNullClass};
  auto a = net.forward(x, tau, cls).velocity.to_vector();
  auto b = net.forward(x, tau, cls).velocity.to_vector();
  CHECK(a == b);
}

TEST_CASE("batch permutation equivariance") {
  auto net = perturbed(small_config(), 6);
  Tensor x = randn({3, 16, 16}, 10);
  std::vector<double> tau{0.2, 0.4, 0.8};
  std::vector<int> cls{1, 0, kNullClass};
  auto y = net.forward(x, tau, cls).velocity;
  // Reverse the batch.
  std::vector<double> xr;
  for (int n = 2; n >= 0; --n) {
    auto part = slice(x, 0, n, n + 1).to_vector();
    xr.insert(xr.end(), part.begin(), part.end());
  }
  std::vector<double> tr(tau.rbegin(), tau.rend());
  std::vector<int> cr(cls.rbegin(), cls.rend());
  auto yr = net.forward(Tensor({3, 16, 16}, xr), tr, cr).velocity;
  for (std::size_t n = 0; n < 3; ++n) {
    CHECK(max_abs_diff(slice(y, 0, n, n + 1), slice(yr, 0, 2 - n, 3 - n)) < 1e-12);
  }
}

TEST_CASE("feature tap leaves the output untouched") {
  auto net = perturbed(small_config(), 8);
  Tensor x = randn({2, 16, 16}, 11);
  auto cls = repeat_class(0, 2);
  auto plain = net.forward(x, 0.3, cls);
  auto tapped = net.forward(x, 0.3, cls, true);
  CHECK(!plain.features.defined());
  CHECK(tapped.features.shape() == Shape{2, 16, 32});
  CHECK(plain.velocity.to_vector() == tapped.velocity.to_vector());
  std::vector<double> tau{0.3};
  CHECK(net.features(x, tau, cls).to_vector() == tapped.features.to_vector());
}

TEST_CASE("positional encoding nests across scales") {
  std::array<std::size_t, 3> cap{1, 32, 32};
  Tensor small = pos_encoding({1, 4, 4}, 32, cap, false);
  Tensor big = pos_encoding({1, 8, 8}, 32, cap, false);
  CHECK(small.shape() == Shape{16, 32});
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 4; ++x) {
      auto a = slice(small, 0, y * 4 + x, y * 4 + x + 1).to_vector();
      auto b = slice(big, 0, (2 * y) * 8 + 2 * x, (2 * y) * 8 + 2 * x + 1).to_vector();
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    }
  }
  // Distinct tokens get distinct codes.
  for (std::size_t i = 1; i < 64; ++i) CHECK(max_abs_diff(slice(big, 0, 0, 1), slice(big, 0, i, i + 1)) > 1e-3);
  CHECK_THROWS(pos_encoding({1, 40, 4}, 32, cap, false));
}

TEST_CASE("video model patches time") {
  NetConfig c = small_config();
  c.temporal_patch = 2;
  auto net = perturbed(c, 12);
  auto cls = repeat_class(0, 2);
  auto v = net.forward(randn({2, 4, 16, 16}, 3), 0.5, cls).velocity;
  CHECK(v.shape() == Shape{2, 4, 16, 16});
  CHECK_THROWS_AS(net.forward(randn({2, 3, 16, 16}, 3), 0.5, cls), ShapeError);
}

TEST_CASE("checkpoint round trip") {
  auto net = perturbed(small_config(), 13);
  auto dir = std::filesystem::temp_directory_path() / "swd_test_ckpt";
  std::filesystem::remove_all(dir);
  net.save(dir);
  NetConfig c = small_config();
  auto back = DenoiserNet::load(dir, &c);
  Tensor x = randn({2, 16, 16}, 14);
  auto cls = repeat_class(1, 2);
  CHECK(net.forward(x, 0.6, cls).velocity.to_vector() == back.forward(x, 0.6, cls).velocity.to_vector());
  CHECK(back.parameter_count() == net.parameter_count());

  NetConfig other = c;
  other.width = 64;
  CHECK_THROWS_AS(DenoiserNet::load(dir, &other), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

TEST_CASE("gradients through the network match finite differences") {
  NetConfig c = small_config();
  auto net = perturbed(c, 15);
  Tensor x0 = randn({2, 8, 8}, 16);
  std::vector<double> tau{0.25, 0.75};
  std::vector<int> cls{0, kNullClass};
  Tensor probe = randn({2, 8, 8}, 17);

  auto wrt_input = grad_check(
      [&](const Tensor& x) { return sum_all(mul(net.forward(x, tau, cls).velocity, probe)); }, x0);
  CHECK(wrt_input.max_rel_error < 1e-4);

  for (const char* name : {"blocks.0.qkv.w", "blocks.1.mod.w", "final.proj.w", "class_emb", "t_mlp.0.w"}) {
    auto weights = net.weights();
    auto r = grad_check(
        [&](const Tensor& w) {
          auto ws = weights;
          ws[name] = w;
          DenoiserNet n(c, ws, NetRole::kTeacher);
          return sum_all(mul(n.forward(x0, tau, cls).velocity, probe));
        },
        net.weight(name));
    INFO(name);
    CHECK(r.max_rel_error < 1e-4);
  }
}
