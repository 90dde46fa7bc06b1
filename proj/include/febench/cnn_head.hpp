#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "febench/params.hpp"
#include "febench/tape.hpp"
#include "febench/text.hpp"

namespace febench {

/// Parallel valid convolutions of widths `kernel_sizes`, each with `filters`
/// output channels, max-over-time pooled, concatenated and projected to
/// `classes` logits.
struct CnnHeadConfig {
  std::vector<std::size_t> kernel_sizes = {3, 4, 5, 6};
  std::size_t filters = 100;
  std::size_t hidden = 0;
  std::size_t classes = 2;

  void validate(TaskKind task_kind, std::size_t max_len = kDefaultMaxLen) const;
  std::size_t max_kernel() const;
};

/// Length of the pooled feature vector: len(kernel_sizes) * filters.
std::size_t feature_dim(const CnnHeadConfig& config);

std::size_t param_count(const CnnHeadConfig& config);

/// Weight names: head.conv.<i>.weight [k_i x H x f], head.conv.<i>.bias [f],
/// head.projection.weight [c*f x C], head.projection.bias [C]. Values are
/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), deterministic for the seed; all
/// tensors require a gradient.
ParameterSet<float> init_head_weights(const CnnHeadConfig& config, std::uint64_t seed);

void validate_head_weights(const CnnHeadConfig& config, const ParameterSet<float>& weights);

/// Logits [classes]. Windows that reach into padding (start > valid_length - k)
/// are left out of the max. Throws ShapeError when valid_length < max kernel.
template <typename T>
Tensor<T> cnn_forward(Tape<T>& tape, const CnnHeadConfig& config, const ParameterSet<T>& weights,
                      const Tensor<T>& hidden, std::size_t valid_length);

extern template Tensor<float> cnn_forward(Tape<float>&, const CnnHeadConfig&, const ParameterSet<float>&,
                                          const Tensor<float>&, std::size_t);
extern template Tensor<double> cnn_forward(Tape<double>&, const CnnHeadConfig&, const ParameterSet<double>&,
                                           const Tensor<double>&, std::size_t);

/// single_label: {argmax}, lowest index on ties. multi_label: every i with
/// sigmoid(logit_i) >= threshold (possibly none).
std::vector<std::size_t> predict(std::span<const float> logits, TaskKind task_kind, double threshold = 0.5);

}  // namespace febench
