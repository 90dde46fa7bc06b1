#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "febench/tape.hpp"
#include "febench/tensor.hpp"

namespace testutil {

using febench::Shape;
using febench::Tape;
using febench::Tensor;

inline std::vector<double> normal_values(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> out(n);
  for (auto& v : out) v = d(rng);
  return out;
}

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true, double scale = 1.0) {
  auto n = febench::numel(shape);
  return Tensor<double>::from(std::move(shape), normal_values(n, rng, scale), requires_grad);
}

// sum(out * r) with fixed random r, so no output symmetry cancels the gradient
inline Tensor<double> weighted_sum(Tape<double>& tape, const Tensor<double>& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  auto r = Tensor<double>::from(out.shape(), normal_values(out.numel(), rng));
  return tape.sum(tape.mul(out, r));
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("febench_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testutil
