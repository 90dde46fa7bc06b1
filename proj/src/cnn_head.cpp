#include "febench/cnn_head.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace febench {

namespace {

std::string conv_name(std::size_t i, const char* part) { return "head.conv." + std::to_string(i) + "." + part; }

}  // namespace

std::size_t CnnHeadConfig::max_kernel() const {
  return kernel_sizes.empty() ? 0 : *std::max_element(kernel_sizes.begin(), kernel_sizes.end());
}

void CnnHeadConfig::validate(TaskKind task_kind, std::size_t max_len) const {
  if (kernel_sizes.empty()) throw std::invalid_argument("cnn head: no kernel sizes");
  for (auto k : kernel_sizes) {
    if (k < 1 || k > max_len) {
      throw std::invalid_argument("cnn head: kernel size " + std::to_string(k) + " outside [1, " + std::to_string(max_len) + "]");
    }
  }
  if (filters < 1) throw std::invalid_argument("cnn head: filters must be positive");
  if (hidden < 1) throw std::invalid_argument("cnn head: hidden size must be positive");
  const std::size_t min_classes = task_kind == TaskKind::single_label ? 2 : 1;
  if (classes < min_classes) {
    throw std::invalid_argument("cnn head: " + std::to_string(classes) + " classes is too few for a " +
                                std::string(to_string(task_kind)) + " task");
  }
}

std::size_t feature_dim(const CnnHeadConfig& config) { return config.kernel_sizes.size() * config.filters; }

std::size_t param_count(const CnnHeadConfig& c) {
  std::size_t n = 0;
  for (auto k : c.kernel_sizes) n += k * c.hidden * c.filters + c.filters;
  return n + feature_dim(c) * c.classes + c.classes;
}

ParameterSet<float> init_head_weights(const CnnHeadConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParameterSet<float> out;
  auto uniform = [&](Shape shape, std::size_t fan_in) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
    std::uniform_real_distribution<float> dist(-bound, bound);
    std::vector<float> data(numel(shape));
    for (auto& v : data) v = dist(rng);
    return Tensor<float>::from(std::move(shape), std::move(data), true);
  };
  for (std::size_t i = 0; i < c.kernel_sizes.size(); ++i) {
    const auto k = c.kernel_sizes[i];
    out.add(conv_name(i, "weight"), uniform({k, c.hidden, c.filters}, k * c.hidden));
    out.add(conv_name(i, "bias"), uniform({c.filters}, k * c.hidden));
  }
  out.add("head.projection.weight", uniform({feature_dim(c), c.classes}, feature_dim(c)));
  out.add("head.projection.bias", uniform({c.classes}, feature_dim(c)));
  return out;
}

void validate_head_weights(const CnnHeadConfig& c, const ParameterSet<float>& w) {
  auto expect = [&](const std::string& name, const Shape& shape) {
    if (!w.contains(name)) throw std::invalid_argument("head weights lack '" + name + "'");
    if (w.at(name).shape() != shape) {
      throw std::invalid_argument("head weight '" + name + "' has shape " + shape_str(w.at(name).shape()) +
                                  ", config needs " + shape_str(shape));
    }
  };
  for (std::size_t i = 0; i < c.kernel_sizes.size(); ++i) {
    expect(conv_name(i, "weight"), {c.kernel_sizes[i], c.hidden, c.filters});
    expect(conv_name(i, "bias"), {c.filters});
  }
  expect("head.projection.weight", {feature_dim(c), c.classes});
  expect("head.projection.bias", {c.classes});
  std::size_t own = 0;
  for (const auto& [name, t] : w.entries())
    if (name.starts_with("head.")) ++own;
  if (own != 2 * c.kernel_sizes.size() + 2) throw std::invalid_argument("head weights contain unexpected entries");
}

template <typename T>
Tensor<T> cnn_forward(Tape<T>& tape, const CnnHeadConfig& config, const ParameterSet<T>& weights,
                      const Tensor<T>& hidden, std::size_t valid_length) {
  if (hidden.rank() != 2 || hidden.dim(1) != config.hidden) {
    throw ShapeError("cnn_forward: hidden sequence " + shape_str(hidden.shape()) + " does not have width " +
                     std::to_string(config.hidden));
  }
  if (valid_length > hidden.dim(0)) {
    throw ShapeError("cnn_forward: valid_length " + std::to_string(valid_length) + " exceeds sequence length " +
                     std::to_string(hidden.dim(0)));
  }
  if (valid_length < config.max_kernel()) {
    throw KernelTooLongError("cnn_forward: valid_length " + std::to_string(valid_length) + " is shorter than kernel " +
                             std::to_string(config.max_kernel()));
  }
  std::vector<Tensor<T>> pooled;
  pooled.reserve(config.kernel_sizes.size());
  for (std::size_t i = 0; i < config.kernel_sizes.size(); ++i) {
    const auto k = config.kernel_sizes[i];
    auto conv = tape.relu(tape.conv1d_valid(hidden, weights.at(conv_name(i, "weight")), weights.at(conv_name(i, "bias"))));
    pooled.push_back(tape.max_over_time(conv, valid_length - k + 1));
  }
  auto features = tape.concat(pooled);
  return tape.linear(features, weights.at("head.projection.weight"), weights.at("head.projection.bias"));
}

template Tensor<float> cnn_forward(Tape<float>&, const CnnHeadConfig&, const ParameterSet<float>&,
                                   const Tensor<float>&, std::size_t);
template Tensor<double> cnn_forward(Tape<double>&, const CnnHeadConfig&, const ParameterSet<double>&,
                                    const Tensor<double>&, std::size_t);

std::vector<std::size_t> predict(std::span<const float> logits, TaskKind task_kind, double threshold) {
  std::vector<std::size_t> out;
  if (logits.empty()) return out;
  if (task_kind == TaskKind::single_label) {
    out.push_back(static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin()));
    return out;
  }
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("predict: threshold must lie in (0, 1)");
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    if (p >= threshold) out.push_back(i);
  }
  return out;
}

}  // namespace febench
