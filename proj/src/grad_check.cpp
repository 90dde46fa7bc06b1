#include "febench/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace febench {

namespace {

double evaluate(const TensorProgram& program, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  auto out = program(tape, inputs);
  if (!out.defined() || out.numel() != 1) {
    throw NonScalarError("grad_check: program output must be scalar, got " +
                         (out.defined() ? shape_str(out.shape()) : std::string("<undefined>")));
  }
  return out.item();
}

}  // namespace

GradCheckResult grad_check(const TensorProgram& program, const std::vector<Tensor<double>>& point, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");

  for (const auto& t : point) {
    if (t.requires_grad()) {
      t.impl()->release_grad();
    }
  }
  Tape<double> tape;
  auto out = program(tape, point);
  if (!out.defined() || out.numel() != 1) {
    throw NonScalarError("grad_check: program output must be scalar, got " +
                         (out.defined() ? shape_str(out.shape()) : std::string("<undefined>")));
  }
  tape.backward(out);

  GradCheckResult result;
  for (const auto& t : point) {
    if (!t.requires_grad()) continue;
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto data = t.impl()->data.data();
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double up = evaluate(program, point);
      data[i] = saved - eps;
      const double down = evaluate(program, point);
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
      result.max_relative_error = std::max(result.max_relative_error, err);
      ++result.coordinates;
    }
  }
  return result;
}

}  // namespace febench
