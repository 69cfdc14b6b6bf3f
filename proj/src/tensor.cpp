#include "rapforge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace rap {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor() : impl_(std::make_shared<detail::TensorImpl>()) {
  impl_->shape = {};
  impl_->data = {0.0};
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  auto impl = std::make_shared<detail::TensorImpl>();
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
  }
  impl->data.assign(numel(shape), value);
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  return from_buffer(std::move(shape), Buffer(values.begin(), values.end()));
}

Tensor Tensor::from_buffer(Shape shape, Buffer values) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
  }
  if (numel(shape) != values.size()) {
    throw ShapeError("shape " + to_string(shape) + " needs " + std::to_string(numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return from({values.size()}, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  return impl_->shape[axis];
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() needs a single-element tensor, got " + to_string(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return zeros(shape().empty() ? Shape{} : shape());
  return from_buffer(shape(), impl_->grad);
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const { return from_buffer(shape(), impl_->data); }

void Tensor::accumulate_grad(std::span<const double> g) const {
  auto& buf = impl_->grad;
  if (buf.empty()) {
    buf.assign(g.begin(), g.end());
    return;
  }
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, Buffer values, std::vector<Tensor> inputs, const char* name,
                   std::function<void(std::span<const double>)> backward_fn) {
  for (const auto& in : inputs) {
    for (double v : in.data()) {
      if (!std::isfinite(v)) throw NonFiniteError(std::string("op '") + name + "' received a non-finite input");
    }
  }
  Tensor out = Tensor::from_buffer(std::move(shape), std::move(values));
  for (double v : out.data()) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string("op '") + name + "' produced a non-finite value");
  }
  if (!g_grad_enabled) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  auto fn = std::make_shared<detail::GradFn>();
  fn->parents = std::move(inputs);
  fn->backward = std::move(backward_fn);
  fn->name = name;
  out.impl_->grad_fn = std::move(fn);
  out.impl_->requires_grad = true;
  return out;
}

void backward(const Tensor& root) {
  if (root.size() != 1) throw GraphError("backward() needs a scalar root, got shape " + to_string(root.shape()));
  if (!root.requires_grad()) throw GraphError("backward() on a tensor that is not part of a recorded graph");

  // Iterative post-order DFS gives a topological order. Handles keep every
  // node alive while the tape is being released.
  std::vector<Tensor> order;
  std::unordered_set<detail::TensorImpl*> seen;
  std::vector<std::pair<Tensor, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(&root.impl());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    auto& impl = node.impl();
    if (impl.grad_fn && next < impl.grad_fn->parents.size()) {
      const Tensor parent = impl.grad_fn->parents[next++];
      if (parent.requires_grad() && seen.insert(&parent.impl()).second) stack.emplace_back(parent, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  root.accumulate_grad(std::vector<double>{1.0});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl& node = it->impl();
    if (!node.grad_fn) continue;
    if (!node.grad.empty()) node.grad_fn->backward(node.grad);
    node.grad_fn.reset();
    node.requires_grad = false;
    node.grad.clear();
    node.grad.shrink_to_fit();
  }
}

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw Error("finite difference step must be positive");
  std::vector<double> base(x.data().begin(), x.data().end());
  std::vector<double> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base;
    auto minus = base;
    plus[i] += h;
    minus[i] -= h;
    out[i] = (f(Tensor::from(x.shape(), std::move(plus))) - f(Tensor::from(x.shape(), std::move(minus)))) / (2.0 * h);
  }
  return Tensor::from(x.shape(), std::move(out));
}

}  // namespace rap
