#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pipnet::numerics {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor;

namespace detail {

struct TensorImpl;

// One recorded primitive. `backward` reads the gradient of the output it
// produced and accumulates into the gradients of `inputs`.
struct Node {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(TensorImpl& output)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass reaches this tensor
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // null for leaves

  std::vector<double>& ensure_grad();
};

}  // namespace detail

// Dense row-major tensor with an optional gradient record.
//
// Tensor is a shared handle: copies alias the same storage. Use clone() for
// an independent copy. Values are stored as doubles.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writable view. Only valid for tensors that are not recorded as inputs of
  // a pending computation (e.g. parameters between optimizer steps).
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  bool is_leaf() const;

  // Runs reverse-mode differentiation from this scalar. Gradients are added
  // to existing ones. The recorded graph is released afterwards.
  void backward() const;

  // Independent copy of the values, without gradient record.
  Tensor clone() const;
  Tensor detach() const { return clone(); }

  // Internal: used by operation implementations.
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl);

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Zeroes the gradient of every tensor in the list.
void zero_grads(std::span<Tensor> tensors);

// Gradient recording is on by default; a NoGradGuard disables it for the
// current thread while alive.
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

}  // namespace pipnet::numerics
