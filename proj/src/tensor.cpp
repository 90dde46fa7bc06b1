#include "febench/tensor.hpp"

#include <atomic>

namespace febench {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += " x ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {
TensorId next_tensor_id() {
  static std::atomic<TensorId> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

}  // namespace febench
