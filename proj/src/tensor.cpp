#include "swd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include <malloc.h>

namespace swd {

namespace {

// Op buffers are a few MB each and churn constantly. With glibc defaults they
// are mmap'd and returned on free, so every op pays fresh page faults.
const bool kMallocTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();

}  // namespace

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

double* detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad.data();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_mode_enabled() { return g_grad_enabled; }

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::eye(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor({n, n}, std::move(v));
}

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("tensor: use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::ptrdiff_t axis) const {
  auto r = static_cast<std::ptrdiff_t>(rank());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return shape()[static_cast<std::size_t>(axis)];
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!node_) throw std::logic_error("tensor: use of undefined tensor");
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw std::logic_error("tensor: use of undefined tensor");
  if (node_->backward_fn) throw std::logic_error("tensor: op results are immutable");
  return node_->data;
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("at: rank mismatch for " + shape_str(s));
  std::size_t off = 0;
  std::size_t i = 0;
  for (auto v : index) {
    if (v >= s[i]) throw std::out_of_range("at: index out of range for " + shape_str(s));
    off = off * s[i] + v;
    ++i;
  }
  return node_->data[off];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!node_) throw std::logic_error("tensor: use of undefined tensor");
  node_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  if (!node_) throw std::logic_error("tensor: use of undefined tensor");
  if (node_->grad.empty()) return std::vector<double>(node_->data.size(), 0.0);
  return node_->grad;
}

Tensor Tensor::grad_tensor() const { return Tensor(shape(), grad()); }

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->data); }

Tensor Tensor::clone() const { return Tensor(shape(), node_->data, requires_grad()); }

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

void Tensor::backward() const {
  if (!node_) throw std::logic_error("backward: undefined tensor");
  if (node_->data.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(node_->shape));
  }
  if (!node_->requires_grad) throw std::logic_error("backward: loss does not require grad");

  // Iterative post-order DFS for a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  for (detail::Node* n : order) {
    if (n->backward_fn) {
      n->backward_fn = nullptr;
      n->parents.clear();
    }
  }
}

Tensor make_op_result(const char* op, Shape shape, std::vector<double> values,
                      std::vector<Tensor> inputs, std::function<void(detail::Node&)> backward) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      std::string msg = std::string(op) + ": produced a non-finite value (inputs:";
      for (const auto& in : inputs) msg += " " + shape_str(in.shape());
      throw NumericError(msg + ")");
    }
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->op = op;
  bool any = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) any = any || in.requires_grad();
  }
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(backward);
  }
  return Tensor(std::move(node));
}

bool wants_grad(const detail::Node& self, std::size_t input) {
  return input < self.parents.size() && self.parents[input]->requires_grad;
}

double* input_grad(detail::Node& self, std::size_t input) {
  if (!wants_grad(self, input)) return nullptr;
  return self.parents[input]->grad_buffer();
}

const std::vector<double>& input_data(const detail::Node& self, std::size_t input) {
  return self.parents[input]->data;
}

}  // namespace swd
