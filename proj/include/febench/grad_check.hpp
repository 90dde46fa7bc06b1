#pragma once

#include <functional>
#include <vector>

#include "febench/tape.hpp"

namespace febench {

/// A scalar-valued program over a list of input tensors, recorded on `tape`.
using TensorProgram = std::function<Tensor<double>(Tape<double>& tape, const std::vector<Tensor<double>>& inputs)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients against central differences for every
/// coordinate of every input with requires_grad set. The error per coordinate is
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
///
/// The program is re-evaluated on a fresh tape for each perturbation, so it must
/// be a pure function of its inputs. Throws NonScalarError when the output is
/// not a scalar and std::invalid_argument when eps <= 0.
GradCheckResult grad_check(const TensorProgram& program, const std::vector<Tensor<double>>& point, double eps = 1e-5);

}  // namespace febench
