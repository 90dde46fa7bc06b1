#pragma once

#include <cstddef>
#include <cstring>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "febench/tensor.hpp"

namespace febench {

/// Insertion-ordered map of named parameter tensors.
template <typename T>
class ParameterSet {
 public:
  void add(std::string name, Tensor<T> tensor) {
    if (index_.contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(tensor));
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  const Tensor<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("missing parameter '" + name + "'");
    return entries_[it->second].second;
  }

  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
  }

  void set_requires_grad(bool requires_grad) {
    for (auto& [name, t] : entries_) t.set_requires_grad(requires_grad);
  }

  /// Appends every entry of `other` (names must not collide).
  void merge(const ParameterSet& other) {
    for (const auto& [name, t] : other.entries_) add(name, t);
  }

  ParameterSet clone() const {
    ParameterSet out;
    for (const auto& [name, t] : entries_) out.add(name, t.clone());
    return out;
  }

  template <typename To>
  ParameterSet<To> cast_to() const {
    ParameterSet<To> out;
    for (const auto& [name, t] : entries_) out.add(name, febench::cast<To>(t));
    return out;
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// True when both sets hold the same names, shapes and bit-identical values in the same order.
template <typename T>
bool bitwise_equal(const ParameterSet<T>& a, const ParameterSet<T>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& [na, ta] = a.entries()[i];
    const auto& [nb, tb] = b.entries()[i];
    if (na != nb || ta.shape() != tb.shape()) return false;
    auto da = ta.data();
    auto db = tb.data();
    if (std::memcmp(da.data(), db.data(), da.size_bytes()) != 0) return false;
  }
  return true;
}

}  // namespace febench
