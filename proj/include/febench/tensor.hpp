#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "febench/profiling.hpp"

namespace febench {

using Shape = std::vector<std::size_t>;
using TensorId = std::uint64_t;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
TensorId next_tensor_id();
}

/// Storage behind a Tensor handle. Buffers attached to a ledger report their
/// size on attach/allocation and release it on detach/destruction.
template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  TensorId id = detail::next_tensor_id();
  MemoryLedger* ledger = nullptr;
  MemoryCategory category = MemoryCategory::activations;

  TensorImpl(Shape s, std::vector<T> d, bool rg) : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {}
  TensorImpl(const TensorImpl&) = delete;
  TensorImpl& operator=(const TensorImpl&) = delete;
  ~TensorImpl() {
    if (ledger) {
      release_grad();
      ledger->record_free(category, bytes());
    }
  }

  std::uint64_t bytes() const { return data.size() * sizeof(T); }

  MemoryCategory grad_category() const {
    return is_leaf ? MemoryCategory::gradients : MemoryCategory::activations;
  }

  /// Allocates a zero gradient buffer if none exists.
  std::vector<T>& ensure_grad() {
    if (grad.empty()) {
      grad.assign(data.size(), T(0));
      if (ledger) ledger->record_alloc(grad_category(), bytes());
    }
    return grad;
  }

  void release_grad() {
    if (grad.empty()) return;
    if (ledger) ledger->record_free(grad_category(), bytes());
    grad.clear();
    grad.shrink_to_fit();
  }

  void attach(MemoryLedger* l, MemoryCategory c) {
    detach();
    if (!l) return;
    ledger = l;
    category = c;
    ledger->record_alloc(category, bytes());
    if (!grad.empty()) ledger->record_alloc(grad_category(), bytes());
  }

  void detach() {
    if (!ledger) return;
    if (!grad.empty()) ledger->record_free(grad_category(), bytes());
    ledger->record_free(category, bytes());
    ledger = nullptr;
  }
};

/// Shared handle to a dense row-major array. Copies alias the same storage;
/// use `clone()` for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (febench::numel(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_str(shape));
    }
    for (auto d : shape) {
      if (d == 0) throw ShapeError("zero-sized dimension in shape " + shape_str(shape));
    }
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<T>>(std::move(shape), std::move(data), requires_grad);
    return t;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = febench::numel(shape);
    return from(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) { return from({}, {value}, requires_grad); }

  bool defined() const { return static_cast<bool>(impl_); }
  TensorId id() const { return impl_->id; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    if (!rg) impl_->release_grad();
  }
  bool is_leaf() const { return impl_->is_leaf; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad() {
    for (auto& g : impl_->grad) g = T(0);
  }
  void release_grad() { impl_->release_grad(); }

  void attach_ledger(MemoryLedger* ledger, MemoryCategory category) { impl_->attach(ledger, category); }
  void detach_ledger() { impl_->detach(); }

  Tensor clone() const {
    auto t = from(shape(), impl_->data, requires_grad());
    return t;
  }

  TensorImpl<T>* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl<T>>& shared() const { return impl_; }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.impl_ == b.impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

/// Converts element type (used to run float models through double-precision checks).
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> out(t.data().begin(), t.data().end());
  return Tensor<To>::from(t.shape(), std::move(out), t.requires_grad());
}

}  // namespace febench
