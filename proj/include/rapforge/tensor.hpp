#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "rapforge/error.hpp"

namespace rap {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tensor;

// 64-byte aligned allocations. Vectorized kernels pick their code path from
// the pointer alignment, so unaligned buffers would make results depend on
// heap layout.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

namespace detail {

// One recorded operation on the tape. `backward` receives the gradient of
// the node's output and accumulates into the parents' gradient buffers.
struct GradFn {
  std::vector<Tensor> parents;
  std::function<void(std::span<const double> grad_out)> backward;
  const char* name = "";
};

struct TensorImpl {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty when absent
  bool requires_grad = false;
  std::shared_ptr<GradFn> grad_fn;  // null for leaves
};

}  // namespace detail

// Dense row-major tensor of doubles with an optional gradient slot.
//
// Copies share storage, so a Tensor behaves like a handle. Values produced
// by ops are never mutated afterwards; only leaf parameters are updated in
// place (by the optimizer) through mutable_data().
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor from_buffer(Shape shape, Buffer values);
  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  Tensor grad_tensor() const;
  void zero_grad();

  // True when this tensor is the output of a recorded op.
  bool has_grad_fn() const { return impl_->grad_fn != nullptr; }

  // New leaf sharing no tape history; data is copied.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  // Internal hooks used by ops.
  detail::TensorImpl& impl() const { return *impl_; }
  void accumulate_grad(std::span<const double> g) const;

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor make_result(Shape, Buffer, std::vector<Tensor>, const char*,
                            std::function<void(std::span<const double>)>);
};

// Whether ops record onto the tape. Thread-local.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds an op output. The tape node is recorded only if grad mode is on
// and at least one input requires a gradient.
Tensor make_result(Shape shape, Buffer values, std::vector<Tensor> inputs, const char* name,
                   std::function<void(std::span<const double>)> backward);

// Reverse-mode sweep from a scalar root. Leaf gradients accumulate; the
// traversed part of the tape is released afterwards.
void backward(const Tensor& root);

// Central differences of a scalar function, one coordinate at a time.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

}  // namespace rap
