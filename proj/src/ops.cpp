#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "swd/tensor.hpp"

namespace swd {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

std::size_t norm_axis(std::ptrdiff_t axis, std::size_t rank, const char* op) {
  auto r = static_cast<std::ptrdiff_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(axis);
}

// Iteration over an output shape with up to two strided operand views. Dims are
// coalesced so the innermost loop is as long as possible.
struct StridedPlan {
  std::vector<std::size_t> dims;
  std::vector<std::size_t> sa;
  std::vector<std::size_t> sb;

  void coalesce() {
    std::vector<std::size_t> d, a, b;
    for (std::size_t i = 0; i < dims.size(); ++i) {
      if (dims[i] == 1) continue;
      if (!d.empty() && a.back() == sa[i] * dims[i] && b.back() == sb[i] * dims[i]) {
        d.back() *= dims[i];
        a.back() = sa[i];
        b.back() = sb[i];
      } else {
        d.push_back(dims[i]);
        a.push_back(sa[i]);
        b.push_back(sb[i]);
      }
    }
    if (d.empty()) {
      d.push_back(1);
      a.push_back(0);
      b.push_back(0);
    }
    dims = std::move(d);
    sa = std::move(a);
    sb = std::move(b);
  }

  template <class F>
  void run(F&& f) const {
    const std::size_t r = dims.size();
    const std::size_t inner = dims[r - 1];
    const std::size_t ia_step = sa[r - 1];
    const std::size_t ib_step = sb[r - 1];
    std::size_t outer = 1;
    for (std::size_t i = 0; i + 1 < r; ++i) outer *= dims[i];
    std::vector<std::size_t> idx(r, 0);
    std::size_t o = 0, ia = 0, ib = 0;
    for (std::size_t it = 0; it < outer; ++it) {
      std::size_t a = ia, b = ib;
      for (std::size_t j = 0; j < inner; ++j, ++o, a += ia_step, b += ib_step) f(o, a, b);
      for (std::size_t k = r - 1; k-- > 0;) {
        ++idx[k];
        ia += sa[k];
        ib += sb[k];
        if (idx[k] < dims[k]) break;
        ia -= sa[k] * dims[k];
        ib -= sb[k] * dims[k];
        idx[k] = 0;
      }
    }
  }
};

struct Broadcast {
  Shape out;
  StridedPlan plan;
};

Broadcast broadcast_plan(const char* op, const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Broadcast bc;
  bc.out.assign(r, 1);
  Shape pa(r, 1), pb(r, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(r - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(r - b.size()));
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    bc.out[i] = std::max(pa[i], pb[i]);
  }
  auto ca = contiguous_strides(pa), cb = contiguous_strides(pb);
  bc.plan.dims = bc.out;
  bc.plan.sa.resize(r);
  bc.plan.sb.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    bc.plan.sa[i] = pa[i] == 1 ? 0 : ca[i];
    bc.plan.sb[i] = pb[i] == 1 ? 0 : cb[i];
  }
  bc.plan.coalesce();
  return bc;
}

enum class BinOp { kAdd, kSub, kMul, kDiv };

template <BinOp K>
Tensor binary(const char* name, const Tensor& a, const Tensor& b) {
  auto bc = broadcast_plan(name, a.shape(), b.shape());
  std::vector<double> out(shape_numel(bc.out));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data();
  bc.plan.run([&](std::size_t o, std::size_t ia, std::size_t ib) {
    if constexpr (K == BinOp::kAdd) po[o] = pa[ia] + pb[ib];
    if constexpr (K == BinOp::kSub) po[o] = pa[ia] - pb[ib];
    if constexpr (K == BinOp::kMul) po[o] = pa[ia] * pb[ib];
    if constexpr (K == BinOp::kDiv) po[o] = pa[ia] / pb[ib];
  });
  auto plan = bc.plan;
  return make_op_result(name, bc.out, std::move(out), {a, b}, [plan](detail::Node& self) {
    const double* g = self.grad.data();
    const double* xa = input_data(self, 0).data();
    const double* xb = input_data(self, 1).data();
    if (double* ga = input_grad(self, 0)) {
      plan.run([&](std::size_t o, std::size_t ia, std::size_t ib) {
        if constexpr (K == BinOp::kAdd || K == BinOp::kSub) ga[ia] += g[o];
        if constexpr (K == BinOp::kMul) ga[ia] += g[o] * xb[ib];
        if constexpr (K == BinOp::kDiv) ga[ia] += g[o] / xb[ib];
      });
    }
    if (double* gb = input_grad(self, 1)) {
      plan.run([&](std::size_t o, std::size_t ia, std::size_t ib) {
        if constexpr (K == BinOp::kAdd) gb[ib] += g[o];
        if constexpr (K == BinOp::kSub) gb[ib] -= g[o];
        if constexpr (K == BinOp::kMul) gb[ib] += g[o] * xa[ia];
        if constexpr (K == BinOp::kDiv) gb[ib] -= g[o] * xa[ia] / (xb[ib] * xb[ib]);
      });
    }
  });
}

template <class Fwd, class Deriv>
Tensor unary(const char* name, const Tensor& a, Fwd fwd, Deriv deriv) {
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  return make_op_result(name, a.shape(), std::move(out), {a}, [deriv](detail::Node& self) {
    double* ga = input_grad(self, 0);
    if (!ga) return;
    const auto& xv = input_data(self, 0);
    const auto& yv = self.data;
    const auto& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(xv[i], yv[i]);
  });
}

constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluC = 0.044715;

// Packet exp through an aligned scratch block. Every element takes the same
// code path whatever the alignment of p, so results are reproducible.
void exp_inplace(double* p, std::size_t n) {
  constexpr std::size_t kBlock = 256;
  Eigen::Array<double, kBlock, 1> buf;
  for (std::size_t start = 0; start < n; start += kBlock) {
    const std::size_t len = std::min(kBlock, n - start);
    std::copy(p + start, p + start + len, buf.data());
    std::fill(buf.data() + len, buf.data() + kBlock, 0.0);
    buf = buf.exp();
    std::copy(buf.data(), buf.data() + len, p + start);
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary<BinOp::kAdd>("add", a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary<BinOp::kSub>("sub", a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary<BinOp::kMul>("mul", a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary<BinOp::kDiv>("div", a, b); }

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double x) { return x * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary("add_scalar", a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor gelu(const Tensor& a) {
  auto x = a.data();
  const std::size_t n = x.size();
  std::vector<double> t(n), out(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = 2.0 * kSqrt2OverPi * (x[i] + kGeluC * x[i] * x[i] * x[i]);
  exp_inplace(t.data(), n);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = 1.0 - 2.0 / (t[i] + 1.0);  // tanh
    out[i] = 0.5 * x[i] * (1.0 + t[i]);
  }
  return make_op_result("gelu", a.shape(), std::move(out), {a}, [t = std::move(t)](detail::Node& self) {
    double* ga = input_grad(self, 0);
    if (!ga) return;
    const auto& xv = input_data(self, 0);
    const auto& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluC * xv[i] * xv[i]);
      ga[i] += g[i] * (0.5 * (1.0 + t[i]) + 0.5 * xv[i] * (1.0 - t[i] * t[i]) * du);
    }
  });
}

Tensor silu(const Tensor& a) {
  auto x = a.data();
  const std::size_t n = x.size();
  std::vector<double> sg(n), out(n);
  for (std::size_t i = 0; i < n; ++i) sg[i] = -x[i];
  exp_inplace(sg.data(), n);
  for (std::size_t i = 0; i < n; ++i) {
    sg[i] = 1.0 / (1.0 + sg[i]);
    out[i] = x[i] * sg[i];
  }
  return make_op_result("silu", a.shape(), std::move(out), {a}, [sg = std::move(sg)](detail::Node& self) {
    double* ga = input_grad(self, 0);
    if (!ga) return;
    const auto& xv = input_data(self, 0);
    const auto& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sg[i] * (1.0 + xv[i] * (1.0 - sg[i]));
  });
}

Tensor sigmoid(const Tensor& a) {
  return unary("sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& a) {
  return unary(
      "softplus", a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary("leaky_relu", a, [slope](double x) { return x > 0 ? x : slope * x; },
               [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  auto fail = [&] {
    return ShapeError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  };
  if (sa.size() < 2 || sb.size() < 2) throw fail();
  const std::size_t m = sa[sa.size() - 2], k = sa.back();
  if (sb[sb.size() - 2] != k) throw fail();
  const std::size_t n = sb.back();
  const bool shared_rhs = sb.size() == 2;
  if (!shared_rhs) {
    if (sb.size() != sa.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin())) throw fail();
  }
  const std::size_t batch = shape_numel(sa) / (m * k);
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(n);
  std::vector<double> out(batch * m * n);
  const auto eidx = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  if (shared_rhs) {
    MapMat(out.data(), eidx(batch * m), eidx(n)).noalias() =
        MapConstMat(a.data().data(), eidx(batch * m), eidx(k)) * MapConstMat(b.data().data(), eidx(k), eidx(n));
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      MapMat(out.data() + i * m * n, eidx(m), eidx(n)).noalias() =
          MapConstMat(a.data().data() + i * m * k, eidx(m), eidx(k)) *
          MapConstMat(b.data().data() + i * k * n, eidx(k), eidx(n));
    }
  }
  return make_op_result("matmul", std::move(out_shape), std::move(out), {a, b},
                        [=](detail::Node& self) {
                          const double* g = self.grad.data();
                          const double* xa = input_data(self, 0).data();
                          const double* xb = input_data(self, 1).data();
                          double* ga = input_grad(self, 0);
                          double* gb = input_grad(self, 1);
                          if (shared_rhs) {
                            MapConstMat G(g, eidx(batch * m), eidx(n));
                            if (ga) MapMat(ga, eidx(batch * m), eidx(k)).noalias() += G * MapConstMat(xb, eidx(k), eidx(n)).transpose();
                            if (gb) MapMat(gb, eidx(k), eidx(n)).noalias() += MapConstMat(xa, eidx(batch * m), eidx(k)).transpose() * G;
                            return;
                          }
                          for (std::size_t i = 0; i < batch; ++i) {
                            MapConstMat G(g + i * m * n, eidx(m), eidx(n));
                            if (ga) MapMat(ga + i * m * k, eidx(m), eidx(k)).noalias() += G * MapConstMat(xb + i * k * n, eidx(k), eidx(n)).transpose();
                            if (gb) MapMat(gb + i * k * n, eidx(k), eidx(n)).noalias() += MapConstMat(xa + i * m * k, eidx(m), eidx(k)).transpose() * G;
                          }
                        });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const auto& sx = x.shape();
  const auto& sw = weight.shape();
  if (sx.empty() || sw.size() != 2 || sx.back() != sw[0]) {
    throw ShapeError("linear: input " + shape_str(sx) + " incompatible with weight " + shape_str(sw));
  }
  const std::size_t in = sw[0], out_dim = sw[1];
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " incompatible with weight " + shape_str(sw));
  }
  const std::size_t rows = shape_numel(sx) / in;
  const auto e = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  std::vector<double> out(rows * out_dim);
  MapMat Y(out.data(), e(rows), e(out_dim));
  Y.noalias() = MapConstMat(x.data().data(), e(rows), e(in)) * MapConstMat(weight.data().data(), e(in), e(out_dim));
  if (bias.defined()) {
    Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), e(out_dim));
  }
  Shape out_shape = sx;
  out_shape.back() = out_dim;
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_op_result("linear", std::move(out_shape), std::move(out), std::move(inputs),
                        [=](detail::Node& self) {
                          MapConstMat G(self.grad.data(), e(rows), e(out_dim));
                          if (double* gx = input_grad(self, 0)) {
                            MapMat(gx, e(rows), e(in)).noalias() +=
                                G * MapConstMat(input_data(self, 1).data(), e(in), e(out_dim)).transpose();
                          }
                          if (double* gw = input_grad(self, 1)) {
                            MapMat(gw, e(in), e(out_dim)).noalias() +=
                                MapConstMat(input_data(self, 0).data(), e(rows), e(in)).transpose() * G;
                          }
                          if (double* gb = input_grad(self, 2)) {
                            const double* g = self.grad.data();
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[r * out_dim + j];
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a, std::vector<std::ptrdiff_t> axes, bool keepdim) {
  const auto& s = a.shape();
  std::vector<bool> reduced(s.size(), false);
  for (auto ax : axes) reduced[norm_axis(ax, s.size(), "sum")] = true;
  Shape kept(s.size()), out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    kept[i] = reduced[i] ? 1 : s[i];
    if (!reduced[i]) out_shape.push_back(s[i]);
    else if (keepdim) out_shape.push_back(1);
  }
  auto ks = contiguous_strides(kept);
  StridedPlan plan;
  plan.dims = s;
  plan.sa.resize(s.size());
  plan.sb.assign(s.size(), 0);
  for (std::size_t i = 0; i < s.size(); ++i) plan.sa[i] = reduced[i] ? 0 : ks[i];
  plan.coalesce();
  std::vector<double> out(shape_numel(kept), 0.0);
  const double* x = a.data().data();
  plan.run([&](std::size_t i, std::size_t o, std::size_t) { out[o] += x[i]; });
  return make_op_result("sum", std::move(out_shape), std::move(out), {a}, [plan](detail::Node& self) {
    double* ga = input_grad(self, 0);
    if (!ga) return;
    const double* g = self.grad.data();
    plan.run([&](std::size_t i, std::size_t o, std::size_t) { ga[i] += g[o]; });
  });
}

Tensor mean(const Tensor& a, std::vector<std::ptrdiff_t> axes, bool keepdim) {
  std::size_t count = 1;
  for (auto ax : axes) count *= a.shape()[norm_axis(ax, a.rank(), "mean")];
  return scale(sum(a, std::move(axes), keepdim), 1.0 / static_cast<double>(count));
}

Tensor sum_all(const Tensor& a) {
  std::vector<std::ptrdiff_t> axes(a.rank());
  std::iota(axes.begin(), axes.end(), 0);
  if (axes.empty()) return scale(a, 1.0);
  return sum(a, axes, false);
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.numel())); }

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return make_op_result("reshape", std::move(shape), a.to_vector(), {a}, [](detail::Node& self) {
    double* ga = input_grad(self, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& a, std::vector<std::size_t> order) {
  const auto& s = a.shape();
  std::vector<bool> seen(s.size(), false);
  if (order.size() != s.size()) throw ShapeError("permute: order rank mismatch for " + shape_str(s));
  for (auto o : order) {
    if (o >= s.size() || seen[o]) throw ShapeError("permute: invalid axis order for " + shape_str(s));
    seen[o] = true;
  }
  auto in_strides = contiguous_strides(s);
  Shape out_shape(s.size());
  StridedPlan plan;
  plan.sa.resize(s.size());
  plan.sb.assign(s.size(), 0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    out_shape[i] = s[order[i]];
    plan.sa[i] = in_strides[order[i]];
  }
  plan.dims = out_shape;
  plan.coalesce();
  std::vector<double> out(a.numel());
  const double* x = a.data().data();
  plan.run([&](std::size_t o, std::size_t i, std::size_t) { out[o] = x[i]; });
  return make_op_result("permute", std::move(out_shape), std::move(out), {a}, [plan](detail::Node& self) {
    double* ga = input_grad(self, 0);
    if (!ga) return;
    const double* g = self.grad.data();
    plan.run([&](std::size_t o, std::size_t i, std::size_t) { ga[i] += g[o]; });
  });
}

Tensor transpose(const Tensor& a, std::ptrdiff_t axis0, std::ptrdiff_t axis1) {
  std::vector<std::size_t> order(a.rank());
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[norm_axis(axis0, a.rank(), "transpose")], order[norm_axis(axis1, a.rank(), "transpose")]);
  return permute(a, std::move(order));
}

Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = norm_axis(axis, s0.size(), "concat");
  Shape out_shape = s0;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    const auto& sp = p.shape();
    bool ok = sp.size() == s0.size();
    for (std::size_t i = 0; ok && i < sp.size(); ++i) ok = i == ax || sp[i] == s0[i];
    if (!ok) throw ShapeError("concat: incompatible shapes " + shape_str(s0) + " and " + shape_str(sp));
    out_shape[ax] += sp[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s0[i];
  for (std::size_t i = ax + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[ax] * inner);
  const std::size_t row = out_shape[ax] * inner;
  std::vector<double> out(outer * row);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const double* src = parts[k].data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src + o * widths[k], widths[k], out.data() + o * row + offset);
    }
    offset += widths[k];
  }
  return make_op_result("concat", std::move(out_shape), std::move(out), parts,
                        [widths, outer, row](detail::Node& self) {
                          std::size_t off = 0;
                          for (std::size_t k = 0; k < widths.size(); ++k) {
                            if (double* gk = input_grad(self, k)) {
                              for (std::size_t o = 0; o < outer; ++o) {
                                const double* g = self.grad.data() + o * row + off;
                                for (std::size_t j = 0; j < widths[k]; ++j) gk[o * widths[k] + j] += g[j];
                              }
                            }
                            off += widths[k];
                          }
                        });
}

Tensor slice(const Tensor& a, std::ptrdiff_t axis, std::size_t begin, std::size_t end) {
  const auto& s = a.shape();
  const std::size_t ax = norm_axis(axis, s.size(), "slice");
  if (begin >= end || end > s[ax]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for axis " + std::to_string(ax) + " of " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[ax] = end - begin;
  const std::size_t src_row = s[ax] * inner, dst_row = (end - begin) * inner, off = begin * inner;
  std::vector<double> out(outer * dst_row);
  const double* x = a.data().data();
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(x + o * src_row + off, dst_row, out.data() + o * dst_row);
  return make_op_result("slice", std::move(out_shape), std::move(out), {a}, [=](detail::Node& self) {
    double* ga = input_grad(self, 0);
    if (!ga) return;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < dst_row; ++j) ga[o * src_row + off + j] += self.grad[o * dst_row + j];
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be 2-D, got " + shape_str(table.shape()));
  const std::size_t rows = table.dim(0), width = table.dim(1);
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  std::vector<double> out(idv.size() * width);
  const double* t = table.data().data();
  for (std::size_t i = 0; i < idv.size(); ++i) {
    if (idv[i] >= rows) {
      throw std::out_of_range("embedding: id " + std::to_string(idv[i]) + " out of range for " +
                              std::to_string(rows) + " rows");
    }
    std::copy_n(t + idv[i] * width, width, out.data() + i * width);
  }
  return make_op_result("embedding", {idv.size(), width}, std::move(out), {table},
                        [idv, width](detail::Node& self) {
                          double* gt = input_grad(self, 0);
                          if (!gt) return;
                          for (std::size_t i = 0; i < idv.size(); ++i) {
                            for (std::size_t j = 0; j < width; ++j) gt[idv[i] * width + j] += self.grad[i * width + j];
                          }
                        });
}

// ---------------------------------------------------------------------------
// Normalization and attention

Tensor layer_norm(const Tensor& a, double eps) {
  if (a.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = a.shape().back();
  const std::size_t rows = a.numel() / d;
  const double* x = a.data().data();
  std::vector<double> out(a.numel());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (xr[j] - mu) * rstd[r];
  }
  return make_op_result("layer_norm", a.shape(), std::move(out), {a}, [rstd, d, rows](detail::Node& self) {
    double* ga = input_grad(self, 0);
    if (!ga) return;
    const double* y = self.data.data();
    const double* g = self.grad.data();
    for (std::size_t r = 0; r < rows; ++r) {
      double mg = 0.0, mgy = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        mg += g[r * d + j];
        mgy += g[r * d + j] * y[r * d + j];
      }
      mg /= static_cast<double>(d);
      mgy /= static_cast<double>(d);
      for (std::size_t j = 0; j < d; ++j) {
        ga[r * d + j] += rstd[r] * (g[r * d + j] - mg - y[r * d + j] * mgy);
      }
    }
  });
}

Tensor softmax(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("softmax: scalar input");
  const std::size_t d = a.shape().back();
  const std::size_t rows = a.numel() / d;
  const double* x = a.data().data();
  std::vector<double> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * d;
    double mx = *std::max_element(xr, xr + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += (out[r * d + j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] /= z;
  }
  return make_op_result("softmax", a.shape(), std::move(out), {a}, [d, rows](detail::Node& self) {
    double* ga = input_grad(self, 0);
    if (!ga) return;
    const double* y = self.data.data();
    const double* g = self.grad.data();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
      for (std::size_t j = 0; j < d; ++j) ga[r * d + j] += y[r * d + j] * (g[r * d + j] - dot);
    }
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const auto& sq = q.shape();
  const auto& sk = k.shape();
  const auto& sv = v.shape();
  if (sq.size() != 3 || sk.size() != 3 || sv.size() != 3 || sq[0] != sk[0] || sk[0] != sv[0] ||
      sq[2] != sk[2] || sk[1] != sv[1]) {
    throw ShapeError("attention: incompatible shapes q" + shape_str(sq) + " k" + shape_str(sk) + " v" +
                     shape_str(sv));
  }
  const std::size_t batch = sq[0], lq = sq[1], lk = sk[1], d = sq[2], dv = sv[2];
  const double sc = 1.0 / std::sqrt(static_cast<double>(d));
  const auto e = [](std::size_t x) { return static_cast<Eigen::Index>(x); };
  std::vector<double> probs(batch * lq * lk);
  std::vector<double> out(batch * lq * dv);
  for (std::size_t b = 0; b < batch; ++b) {
    MapMat P(probs.data() + b * lq * lk, e(lq), e(lk));
    P.noalias() = sc * MapConstMat(q.data().data() + b * lq * d, e(lq), e(d)) *
                  MapConstMat(k.data().data() + b * lk * d, e(lk), e(d)).transpose();
    // Scalar loops: Eigen's vectorized row reductions depend on buffer alignment,
    // which would make results vary between otherwise identical calls.
    for (std::size_t r = 0; r < lq; ++r) {
      double* row = probs.data() + (b * lq + r) * lk;
      double mx = row[0];
      for (std::size_t j = 1; j < lk; ++j) mx = std::max(mx, row[j]);
      for (std::size_t j = 0; j < lk; ++j) row[j] -= mx;
      exp_inplace(row, lk);
      double total = 0;
      for (std::size_t j = 0; j < lk; ++j) total += row[j];
      for (std::size_t j = 0; j < lk; ++j) row[j] /= total;
    }
    MapMat(out.data() + b * lq * dv, e(lq), e(dv)).noalias() =
        P * MapConstMat(v.data().data() + b * lk * dv, e(lk), e(dv));
  }
  return make_op_result(
      "attention", {batch, lq, dv}, std::move(out), {q, k, v},
      [probs = std::move(probs), batch, lq, lk, d, dv, sc, e](detail::Node& self) {
        double* gq = input_grad(self, 0);
        double* gk = input_grad(self, 1);
        double* gv = input_grad(self, 2);
        const double* xq = input_data(self, 0).data();
        const double* xk = input_data(self, 1).data();
        const double* xv = input_data(self, 2).data();
        RowMat dP(e(lq), e(lk));
        for (std::size_t b = 0; b < batch; ++b) {
          MapConstMat P(probs.data() + b * lq * lk, e(lq), e(lk));
          MapConstMat G(self.grad.data() + b * lq * dv, e(lq), e(dv));
          if (gv) MapMat(gv + b * lk * dv, e(lk), e(dv)).noalias() += P.transpose() * G;
          if (!gq && !gk) continue;
          dP.noalias() = G * MapConstMat(xv + b * lk * dv, e(lk), e(dv)).transpose();
          for (std::size_t r = 0; r < lq; ++r) {
            double* drow = dP.data() + r * lk;
            const double* prow = probs.data() + (b * lq + r) * lk;
            double dot = 0;
            for (std::size_t j = 0; j < lk; ++j) dot += drow[j] * prow[j];
            for (std::size_t j = 0; j < lk; ++j) drow[j] = prow[j] * (drow[j] - dot);
          }
          if (gq) MapMat(gq + b * lq * d, e(lq), e(d)).noalias() += sc * dP * MapConstMat(xk + b * lk * d, e(lk), e(d));
          if (gk) MapMat(gk + b * lk * d, e(lk), e(d)).noalias() += sc * dP.transpose() * MapConstMat(xq + b * lq * d, e(lq), e(d));
        }
      });
}

}  // namespace swd
