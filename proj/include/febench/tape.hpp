#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "febench/tensor.hpp"

namespace febench {

enum class OpKind {
  matmul,
  add,
  mul,
  conv1d_valid,
  max_over_time,
  relu,
  gelu,
  tanh,
  layer_norm,
  embedding_lookup,
  scaled_dot_attention,
  concat,
  linear,
  sum,
  reshape,
  softmax_cross_entropy,
  sigmoid_bce,
};

std::string_view to_string(OpKind kind);

inline constexpr double kLayerNormEps = 1e-12;

/// Non-tensor arguments of a primitive. Only the fields a kind uses are read.
struct OpAttrs {
  std::vector<std::size_t> ids;      // embedding_lookup rows; softmax_cross_entropy targets
  std::vector<double> targets;       // sigmoid_bce {0,1} matrix, row-major
  std::size_t heads = 1;             // scaled_dot_attention
  std::optional<std::size_t> limit;  // attention key mask / max_over_time window count
  Shape shape;                       // reshape
};

class KernelTooLongError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

class StaleRecordError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NonScalarError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One recorded primitive application, as exposed for inspection.
struct RecordEntry {
  OpKind kind;
  std::vector<TensorId> inputs;
  TensorId output;
};

/// Leaf tensors reached by backward, mapped to views of their accumulated gradient.
template <typename T>
using GradientMap = std::map<TensorId, std::span<const T>>;

/// Reverse-mode computation record.
///
/// Every `apply` evaluates a primitive eagerly. When at least one input requires a
/// gradient the application is appended to the record together with whatever
/// forward values its backward rule needs; otherwise nothing is kept and the
/// output is a constant. `backward` walks the record once in reverse, accumulates
/// into leaf gradients and drops the record. A second `backward` without an
/// intervening `apply` throws StaleRecordError.
///
/// Outputs and saved values are reported to the ledger (if any) as activations.
/// A Tape and the tensors it produces belong to one thread.
template <typename T>
class Tape {
 public:
  explicit Tape(MemoryLedger* ledger = nullptr, bool recording = true) : ledger_(ledger), recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor<T> apply(OpKind kind, std::span<const Tensor<T>> inputs, const OpAttrs& attrs = {});
  Tensor<T> apply(OpKind kind, std::initializer_list<Tensor<T>> inputs, const OpAttrs& attrs = {}) {
    return apply(kind, std::span<const Tensor<T>>(inputs.begin(), inputs.size()), attrs);
  }

  Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) { return apply(OpKind::matmul, {a, b}); }
  Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return apply(OpKind::add, {a, b}); }
  Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return apply(OpKind::mul, {a, b}); }
  Tensor<T> conv1d_valid(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    return apply(OpKind::conv1d_valid, {x, w, bias});
  }
  Tensor<T> conv1d_valid(const Tensor<T>& x, const Tensor<T>& w) { return apply(OpKind::conv1d_valid, {x, w}); }
  Tensor<T> max_over_time(const Tensor<T>& x, std::optional<std::size_t> windows = std::nullopt) {
    OpAttrs a;
    a.limit = windows;
    return apply(OpKind::max_over_time, {x}, a);
  }
  Tensor<T> relu(const Tensor<T>& x) { return apply(OpKind::relu, {x}); }
  Tensor<T> gelu(const Tensor<T>& x) { return apply(OpKind::gelu, {x}); }
  Tensor<T> tanh(const Tensor<T>& x) { return apply(OpKind::tanh, {x}); }
  Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
    return apply(OpKind::layer_norm, {x, gamma, beta});
  }
  Tensor<T> embedding_lookup(const Tensor<T>& table, std::vector<std::size_t> ids) {
    OpAttrs a;
    a.ids = std::move(ids);
    return apply(OpKind::embedding_lookup, {table}, a);
  }
  Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                      std::optional<std::size_t> valid_keys = std::nullopt) {
    OpAttrs a;
    a.heads = heads;
    a.limit = valid_keys;
    return apply(OpKind::scaled_dot_attention, {q, k, v}, a);
  }
  Tensor<T> concat(std::span<const Tensor<T>> parts) { return apply(OpKind::concat, parts); }
  Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return apply(OpKind::linear, {x, w, b});
  }
  Tensor<T> sum(const Tensor<T>& x) { return apply(OpKind::sum, {x}); }
  Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    OpAttrs a;
    a.shape = std::move(shape);
    return apply(OpKind::reshape, {x}, a);
  }
  Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::vector<std::size_t> targets) {
    OpAttrs a;
    a.ids = std::move(targets);
    return apply(OpKind::softmax_cross_entropy, {logits}, a);
  }
  Tensor<T> sigmoid_bce(const Tensor<T>& logits, std::vector<double> targets) {
    OpAttrs a;
    a.targets = std::move(targets);
    return apply(OpKind::sigmoid_bce, {logits}, a);
  }

  GradientMap<T> backward(const Tensor<T>& loss);

  std::size_t size() const { return entries_.size(); }
  std::vector<RecordEntry> record() const;
  MemoryLedger* ledger() const { return ledger_; }
  /// A non-recording tape evaluates primitives but never keeps a record
  /// (inference); its outputs never require a gradient.
  bool recording() const { return recording_; }

 private:
  struct Entry {
    OpKind kind;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    std::function<void()> backward;
  };

  MemoryLedger* ledger_;
  bool recording_;
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace febench
