#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace danet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when operand shapes do not conform for an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TensorImpl;

// One recorded operation. `backward` receives the gradient of the output and
// accumulates into the gradients of `inputs`.
struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(std::span<const double>)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient reaches this tensor
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;
};

/// Dense row-major tensor of doubles with reverse-mode autodiff.
///
/// Copies share storage (handle semantics, like a shared_ptr); use clone()
/// for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor scalar(double value);
  static Tensor full(Shape shape, double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const { return impl_->grad_fn == nullptr; }

  bool has_grad() const { return !impl_->grad.empty(); }
  // Zero-filled span of numel() when no gradient has been accumulated.
  std::span<const double> grad() const;
  void zero_grad();

  Tensor clone() const;
  Tensor detach() const;

  /// Backpropagates from this scalar through every recorded operation.
  void backward() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor make_result(std::string_view, Shape, std::vector<double>,
                            const std::vector<Tensor>&,
                            std::function<void(std::span<const double>)>);

  std::shared_ptr<TensorImpl> impl_;
};

// True when operations should be recorded for differentiation.
bool grad_mode_enabled();

/// Disables recording for its lifetime (evaluation passes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Every op checks its outputs for NaN/Inf and throws std::domain_error naming
// the op. On by default.
bool finite_checks_enabled();
void set_finite_checks(bool enabled);

/// Builds an op result and records it when any input requires grad.
///
/// `backward` gets the output gradient and must accumulate into the inputs
/// via grad_accumulator(). It is dropped when nothing requires grad.
Tensor make_result(std::string_view op, Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs,
                   std::function<void(std::span<const double>)> backward);

// Gradient buffer to accumulate into, or an empty span when `t` does not
// require grad. Valid only inside a backward closure.
std::span<double> grad_accumulator(const std::shared_ptr<TensorImpl>& t);

}  // namespace danet
