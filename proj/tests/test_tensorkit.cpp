#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "swd/fft.hpp"
#include "swd/gradcheck.hpp"
#include "swd/io.hpp"
#include "swd/rng.hpp"
#include "swd/tensor.hpp"

using namespace swd;

namespace {

Tensor randn(const Shape& s, std::uint64_t seed) {
  Rng rng(seed, 99);
  return gaussian(s, rng);
}

// Contracts an op output with fixed random weights so every output element
// contributes a distinct gradient.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  return sum_all(mul(y, randn(y.shape(), seed)));
}

}  // namespace

TEST_CASE("core ops: worked examples") {
  Tensor a({2}, {1, 2});
  Tensor b({2}, {3, 4});
  CHECK(add(a, b).to_vector() == std::vector<double>{4, 6});

  Tensor m = randn({3, 3}, 1);
  CHECK(matmul(Tensor::eye(3), m).to_vector() == m.to_vector());

  CHECK(mean_all(Tensor::ones({4, 4})).item() == 1.0);
}

TEST_CASE("shape mismatch names the op and both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 3});
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,3]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  CHECK_THROWS_AS(reshape(a, {5}), ShapeError);
  CHECK_THROWS_AS(slice(a, 1, 2, 5), ShapeError);
}

TEST_CASE("broadcasting follows trailing-axis rules") {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor row({3}, {10, 20, 30});
  Tensor col({2, 1}, {100, 200});
  CHECK(add(x, row).to_vector() == std::vector<double>{11, 22, 33, 14, 25, 36});
  CHECK(add(x, col).to_vector() == std::vector<double>{101, 102, 103, 204, 205, 206});
  CHECK(mul(x, Tensor::scalar(2.0)).to_vector() == std::vector<double>{2, 4, 6, 8, 10, 12});
}

TEST_CASE("backward: worked examples") {
  Tensor x({3}, {1, 2, 3}, true);
  sum_all(mul(x, x)).backward();
  CHECK(x.grad() == std::vector<double>{2, 4, 6});

  Tensor y({4}, {1, 5, -2, 7}, true);
  mean_all(y).backward();
  CHECK(y.grad() == std::vector<double>{0.25, 0.25, 0.25, 0.25});
}

TEST_CASE("backward: bilinear chain matches central differences") {
  Tensor w = randn({4, 5}, 2);
  Tensor yv = randn({5, 1}, 3);
  auto f = [&](const Tensor& x) { return sum_all(matmul(reshape(x, {1, 4}), matmul(w, yv))); };
  auto res = grad_check(f, randn({4}, 4));
  CHECK(res.max_rel_error < 1e-6);
}

TEST_CASE("backward: errors and accumulation") {
  Tensor x({2}, {1, 2}, true);
  CHECK_THROWS_AS(mul(x, x).backward(), ShapeError);

  sum_all(x).backward();
  sum_all(x).backward();
  CHECK(x.grad() == std::vector<double>{2, 2});
  x.zero_grad();
  sum_all(x).backward();
  CHECK(x.grad() == std::vector<double>{1, 1});
}

TEST_CASE("no-grad mode builds no graph") {
  Tensor x({2}, {1, 2}, true);
  NoGradGuard guard;
  Tensor y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("non-finite values surface immediately") {
  CHECK_THROWS_AS(log(Tensor({1}, {-1.0})), NumericError);
  CHECK_THROWS_AS(div(Tensor({1}, {1.0}), Tensor({1}, {0.0})), NumericError);
}

TEST_CASE("every registered op passes gradient checks at 10 random points") {
  struct Case {
    const char* name;
    Shape shape;
    std::function<Tensor(const Tensor&)> f;
  };
  const Tensor other23 = randn({2, 3}, 11);
  const Tensor pos23 = add_scalar(square(randn({2, 3}, 12)), 0.5);
  const Tensor w34 = randn({3, 4}, 13);
  const Tensor b4 = randn({4}, 14);
  const Tensor b234 = randn({2, 3, 4}, 15);
  const std::vector<std::size_t> ids{2, 0, 2, 1};
  std::vector<Case> cases{
      {"add", {2, 3}, [&](const Tensor& x) { return weighted_sum(add(x, other23), 1); }},
      {"add_broadcast", {3}, [&](const Tensor& x) { return weighted_sum(add(other23, x), 1); }},
      {"sub", {2, 3}, [&](const Tensor& x) { return weighted_sum(sub(other23, x), 1); }},
      {"mul", {2, 3}, [&](const Tensor& x) { return weighted_sum(mul(x, other23), 1); }},
      {"mul_broadcast", {2, 1}, [&](const Tensor& x) { return weighted_sum(mul(other23, x), 1); }},
      {"div_num", {2, 3}, [&](const Tensor& x) { return weighted_sum(div(x, pos23), 1); }},
      {"div_den", {2, 3}, [&](const Tensor& x) { return weighted_sum(div(other23, add_scalar(square(x), 0.5)), 1); }},
      {"scale", {2, 3}, [&](const Tensor& x) { return weighted_sum(scale(x, -1.7), 1); }},
      {"add_scalar", {2, 3}, [&](const Tensor& x) { return weighted_sum(add_scalar(x, 0.3), 1); }},
      {"matmul_lhs", {2, 3}, [&](const Tensor& x) { return weighted_sum(matmul(x, w34), 1); }},
      {"matmul_rhs", {3, 4}, [&](const Tensor& x) { return weighted_sum(matmul(other23, x), 1); }},
      {"matmul_batched", {2, 3, 4}, [&](const Tensor& x) { return weighted_sum(matmul(x, transpose(b234, 1, 2)), 1); }},
      {"linear_x", {2, 3}, [&](const Tensor& x) { return weighted_sum(linear(x, w34, b4), 1); }},
      {"linear_w", {3, 4}, [&](const Tensor& x) { return weighted_sum(linear(other23, x, b4), 1); }},
      {"linear_b", {4}, [&](const Tensor& x) { return weighted_sum(linear(other23, w34, x), 1); }},
      {"sum_axis", {2, 3, 4}, [&](const Tensor& x) { return weighted_sum(sum(x, {1}), 1); }},
      {"mean_axes", {2, 3, 4}, [&](const Tensor& x) { return weighted_sum(mean(x, {0, 2}, true), 1); }},
      {"reshape", {2, 3, 4}, [&](const Tensor& x) { return weighted_sum(reshape(x, {6, 4}), 1); }},
      {"permute", {2, 3, 4}, [&](const Tensor& x) { return weighted_sum(permute(x, {2, 0, 1}), 1); }},
      {"transpose", {2, 3, 4}, [&](const Tensor& x) { return weighted_sum(transpose(x, 0, 2), 1); }},
      {"concat", {2, 3}, [&](const Tensor& x) { return weighted_sum(concat({x, other23, x}, 1), 1); }},
      {"slice", {2, 3, 4}, [&](const Tensor& x) { return weighted_sum(slice(x, 2, 1, 3), 1); }},
      {"embedding", {3, 4}, [&](const Tensor& x) { return weighted_sum(embedding(x, ids), 1); }},
      {"exp", {2, 3}, [&](const Tensor& x) { return weighted_sum(exp(x), 1); }},
      {"log", {2, 3}, [&](const Tensor& x) { return weighted_sum(log(add_scalar(square(x), 0.5)), 1); }},
      {"square", {2, 3}, [&](const Tensor& x) { return weighted_sum(square(x), 1); }},
      {"gelu", {2, 3}, [&](const Tensor& x) { return weighted_sum(gelu(x), 1); }},
      {"silu", {2, 3}, [&](const Tensor& x) { return weighted_sum(silu(x), 1); }},
      {"sigmoid", {2, 3}, [&](const Tensor& x) { return weighted_sum(sigmoid(x), 1); }},
      {"softplus", {2, 3}, [&](const Tensor& x) { return weighted_sum(softplus(x), 1); }},
      {"leaky_relu", {2, 3}, [&](const Tensor& x) { return weighted_sum(leaky_relu(x), 1); }},
      {"layer_norm", {3, 5}, [&](const Tensor& x) { return weighted_sum(layer_norm(x), 1); }},
      {"softmax", {3, 5}, [&](const Tensor& x) { return weighted_sum(softmax(x), 1); }},
      {"attention_q", {2, 4, 3}, [&](const Tensor& x) { return weighted_sum(attention(x, randn({2, 5, 3}, 4), randn({2, 5, 2}, 5)), 1); }},
      {"attention_kv", {2, 3, 4}, [&](const Tensor& x) { return weighted_sum(attention(randn({2, 5, 4}, 6), x, x), 1); }},
  };
  for (const auto& c : cases) {
    double worst = 0.0;
    for (std::uint64_t point = 0; point < 10; ++point) {
      Tensor x = randn(c.shape, 1000 + point);
      worst = std::max(worst, grad_check(c.f, x).max_rel_error);
    }
    INFO("op " << c.name);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("grad_check: sum of squares and negative control") {
  auto ok = grad_check([](const Tensor& x) { return sum_all(square(x)); }, randn({5}, 7));
  CHECK(ok.max_rel_error < 1e-7);

  // Forward is x^3, backward deliberately reports 2x.
  auto broken = [](const Tensor& x) {
    auto v = x.to_vector();
    for (auto& e : v) e = e * e * e;
    return sum_all(make_op_result("broken_cube", x.shape(), std::move(v), {x}, [](detail::Node& self) {
      double* g = input_grad(self, 0);
      const auto& xv = input_data(self, 0);
      for (std::size_t i = 0; i < xv.size(); ++i) g[i] += self.grad[i] * 2.0 * xv[i];
    }));
  };
  CHECK(grad_check(broken, randn({5}, 8)).max_rel_error > 1e-2);
}

TEST_CASE("grad_check: attention block output norm") {
  // Single-head self-attention with projections and a residual, reduced to its squared norm.
  const Tensor wq = scale(randn({6, 6}, 21), 0.5), wk = scale(randn({6, 6}, 22), 0.5),
               wv = scale(randn({6, 6}, 23), 0.5), wo = scale(randn({6, 6}, 24), 0.5);
  auto block = [&](const Tensor& x) {
    Tensor h = layer_norm(x);
    Tensor o = attention(matmul(h, wq), matmul(h, wk), matmul(h, wv));
    return sum_all(square(add(x, matmul(o, wo))));
  };
  CHECK(grad_check(block, randn({2, 5, 6}, 25)).max_rel_error < 1e-4);
}

TEST_CASE("ops are bit-deterministic") {
  Tensor q = randn({3, 7, 8}, 31), k = randn({3, 7, 8}, 32), v = randn({3, 7, 8}, 33);
  CHECK(attention(q, k, v).to_vector() == attention(q, k, v).to_vector());
  CHECK(layer_norm(q).to_vector() == layer_norm(q).to_vector());
}

TEST_CASE("philox known-answer vector") {
  auto out = Rng::philox({0, 0, 0, 0}, {0, 0});
  CHECK(out[0] == 0x6627e8d5u);
  CHECK(out[1] == 0xe169c58du);
  CHECK(out[2] == 0xbc57ac4cu);
  CHECK(out[3] == 0x9b00dbd8u);
}

TEST_CASE("gaussian: moments, reproducibility, stream independence") {
  Rng rng(42, 0);
  Tensor g = gaussian({1000000}, rng);
  double m = 0.0, v = 0.0;
  for (double x : g.data()) m += x;
  m /= 1e6;
  for (double x : g.data()) v += (x - m) * (x - m);
  v /= 1e6;
  CHECK(std::abs(m) < 0.005);
  CHECK(std::abs(v - 1.0) < 0.01);

  Rng r1(5, 3), r2(5, 3);
  CHECK(gaussian({64}, r1).to_vector() == gaussian({64}, r2).to_vector());

  Rng sa(5, 1), sb(5, 2);
  auto xa = gaussian({100000}, sa).to_vector();
  auto xb = gaussian({100000}, sb).to_vector();
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < xa.size(); ++i) {
    sab += xa[i] * xb[i];
    saa += xa[i] * xa[i];
    sbb += xb[i] * xb[i];
  }
  CHECK(std::abs(sab / std::sqrt(saa * sbb)) < 0.01);

  CHECK_THROWS_AS(gaussian({}, rng), ShapeError);
}

TEST_CASE("fft: matches a direct DFT for radix-2 and Bluestein lengths") {
  for (std::size_t n : {8u, 12u, 7u}) {
    Rng rng(n, 0);
    std::vector<Complex> x(n);
    for (auto& v : x) v = Complex(rng.normal(), rng.normal());
    auto y = x;
    fft(y);
    for (std::size_t k = 0; k < n; ++k) {
      Complex ref = 0;
      for (std::size_t j = 0; j < n; ++j) {
        ref += x[j] * std::polar(1.0, -2.0 * std::numbers::pi * double(j * k) / double(n));
      }
      CHECK(std::abs(y[k] - ref) < 1e-10);
    }
    fft(y, true);
    for (std::size_t j = 0; j < n; ++j) CHECK(std::abs(y[j] - x[j]) < 1e-12);
  }
}

TEST_CASE("rfft_power2: constant, pure tone, Parseval") {
  const double c = 1.5;
  Tensor p = rfft_power2(Tensor::full({8, 8}, c));
  CHECK(p.at({0, 0}) == doctest::Approx(std::pow(c * 64, 2)));
  double rest = half_spectrum_total(p, 8) - p.at({0, 0});
  CHECK(rest < 1e-12);

  const std::size_t h = 16, w = 16, k = 3;
  std::vector<double> tone(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t col = 0; col < w; ++col)
      tone[r * w + col] = 0.3 + std::cos(2 * std::numbers::pi * double(k * col) / double(w));
  Tensor pt = rfft_power2(Tensor({h, w}, tone));
  const double total_ac = half_spectrum_total(pt, w) - pt.at({0, 0});
  CHECK(2.0 * pt.at({0, k}) / total_ac >= 0.99);

  for (auto [hh, ww] : {std::pair<std::size_t, std::size_t>{32, 32}, {12, 10}, {9, 16}}) {
    Tensor f = randn({hh, ww}, hh * 100 + ww);
    double energy = 0.0;
    for (double v : f.data()) energy += v * v;
    const double spec = half_spectrum_total(rfft_power2(f), ww) / double(hh * ww);
    CHECK(std::abs(spec - energy) / energy < 1e-10);
  }
  CHECK_THROWS_AS(rfft_power2(Tensor::zeros({4, 4, 4})), ShapeError);
}

TEST_CASE("SWT1: header layout and bit-exact round trip") {
  Tensor t = randn({2, 3}, 77);
  std::stringstream ss;
  write_swt1(ss, t);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "SWT1");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 2);
  CHECK(bytes.size() == 4 + 2 + 2 * 4 + 6 * 8);
  CHECK(static_cast<unsigned char>(bytes[6]) == 2);
  CHECK(static_cast<unsigned char>(bytes[10]) == 3);
  Tensor back = read_swt1(ss);
  CHECK(back.shape() == t.shape());
  CHECK(back.to_vector() == t.to_vector());

  std::stringstream f32;
  write_swt1(f32, t, DType::kF32);
  CHECK(f32.str().size() == 4 + 2 + 8 + 6 * 4);
  Tensor back32 = read_swt1(f32);
  for (std::size_t i = 0; i < 6; ++i) CHECK(back32.data()[i] == doctest::Approx(t.data()[i]).epsilon(1e-6));

  std::stringstream bad(std::string("SWT2\x01\x00", 6));
  CHECK_THROWS_AS(read_swt1(bad), FormatError);
  std::stringstream truncated(bytes.substr(0, 20));
  CHECK_THROWS_AS(read_swt1(truncated), FormatError);
}
