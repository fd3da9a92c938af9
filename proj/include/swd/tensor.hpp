#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace swd {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised on incompatible operand shapes; the message names the op and both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised as soon as an op produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  double* grad_buffer();
};

}  // namespace detail

/// Dense row-major array of doubles with optional reverse-mode gradient tracking.
///
/// A Tensor is a shared handle: copies alias the same storage. Values produced by
/// ops are never mutated afterwards; only leaves may be written through
/// mutable_data() (optimizers, initializers).
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor eye(std::size_t n);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::ptrdiff_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  /// Accumulated gradient; zeros when nothing has been accumulated yet.
  std::vector<double> grad() const;
  Tensor grad_tensor() const;
  void zero_grad();

  /// Same values, cut from the graph.
  Tensor detach() const;
  /// Deep copy of the values as a fresh leaf.
  Tensor clone() const;

  /// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls;
  /// interior graph links are released afterwards.
  void backward() const;

  const char* op_name() const;
  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph construction on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

/// Builds an op result. The backward closure runs only when some input
/// requires grad and grad mode is on; it reads the result's grad and
/// accumulates into inputs via accumulate_grad().
Tensor make_op_result(const char* op, Shape shape, std::vector<double> values,
                      std::vector<Tensor> inputs, std::function<void(detail::Node&)> backward);

/// Helpers for writing backward closures.
bool wants_grad(const detail::Node& self, std::size_t input);
double* input_grad(detail::Node& self, std::size_t input);
const std::vector<double>& input_data(const detail::Node& self, std::size_t input);

// ---------------------------------------------------------------------------
// Core ops. Binary elementwise ops broadcast numpy-style.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor neg(const Tensor& a);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, double s);
Tensor operator*(double s, const Tensor& a);

/// [..., m, k] x [..., k, n] with equal batch dims, or [..., m, k] x [k, n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[..., in] * weight[in, out] + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor sum(const Tensor& a, std::vector<std::ptrdiff_t> axes, bool keepdim = false);
Tensor mean(const Tensor& a, std::vector<std::ptrdiff_t> axes, bool keepdim = false);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, std::vector<std::size_t> order);
Tensor transpose(const Tensor& a, std::ptrdiff_t axis0, std::ptrdiff_t axis1);
Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis);
Tensor slice(const Tensor& a, std::ptrdiff_t axis, std::size_t begin, std::size_t end);
/// Rows of a [K, C] table selected by ids -> [ids.size(), C].
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.2);

/// Normalizes over the last axis, no affine parameters.
Tensor layer_norm(const Tensor& a, double eps = 1e-6);
Tensor softmax(const Tensor& a);
/// softmax(q k^T / sqrt(d)) v for q, k, v of shape [B, L, d].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

}  // namespace swd
