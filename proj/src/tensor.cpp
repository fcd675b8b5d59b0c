#include "danet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace danet {

namespace {

thread_local bool t_grad_mode = true;
thread_local bool t_finite_checks = true;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

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

Tensor::Tensor(Shape shape, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), 0.0);
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw ShapeError("dim: axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item: tensor of shape " + shape_str(shape()) +
                     " is not a scalar");
  }
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

std::span<const double> Tensor::grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::clone() const {
  return Tensor(impl_->shape, impl_->data, impl_->requires_grad);
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data); }

void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     shape_str(shape()));
  }
  if (!impl_->grad_fn) {
    throw std::logic_error(
        "backward: loss was not produced by any recorded operation");
  }

  // Topological order over tensors reachable through grad_fn edges. The
  // order owns its tensors: releasing a node must not free later entries.
  std::vector<std::shared_ptr<TensorImpl>> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack;
  stack.emplace_back(impl_, 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    const auto* inputs = t->grad_fn ? &t->grad_fn->inputs : nullptr;
    if (inputs && next < inputs->size()) {
      const std::shared_ptr<TensorImpl>& child = (*inputs)[next++];
      if (child->requires_grad && seen.insert(child.get()).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(std::move(t));
    stack.pop_back();
  }

  impl_->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = it->get();
    if (!t->grad_fn) continue;
    if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
    auto node = std::move(t->grad_fn);
    node->backward(t->grad);
    // Intermediate gradients are not retained.
    t->grad.clear();
    t->grad.shrink_to_fit();
  }
}

bool grad_mode_enabled() { return t_grad_mode; }

NoGradGuard::NoGradGuard() : previous_(t_grad_mode) { t_grad_mode = false; }
NoGradGuard::~NoGradGuard() { t_grad_mode = previous_; }

bool finite_checks_enabled() { return t_finite_checks; }
void set_finite_checks(bool enabled) { t_finite_checks = enabled; }

Tensor make_result(std::string_view op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs,
                   std::function<void(std::span<const double>)> backward) {
  if (t_finite_checks) {
    for (double v : data) {
      if (!std::isfinite(v)) {
        throw std::domain_error("non-finite value produced by op '" +
                                std::string(op) + "' (output shape " +
                                shape_str(shape) + ")");
      }
    }
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  const bool record =
      t_grad_mode && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
        return t.defined() && t.requires_grad();
      });
  if (record) {
    auto node = std::make_shared<Node>();
    node->op = std::string(op);
    for (const Tensor& t : inputs) {
      if (t.defined()) node->inputs.push_back(t.impl());
    }
    node->backward = std::move(backward);
    impl->requires_grad = true;
    impl->grad_fn = std::move(node);
  }
  return Tensor(std::move(impl));
}

std::span<double> grad_accumulator(const std::shared_ptr<TensorImpl>& t) {
  if (!t || !t->requires_grad) return {};
  if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
  return t->grad;
}

}  // namespace danet
