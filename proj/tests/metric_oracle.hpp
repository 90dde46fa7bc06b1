#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "febench/metrics.hpp"

namespace metric_oracle {

struct Instance {
  std::size_t labels = 0;
  std::vector<febench::LabelSet> preds;
  std::vector<febench::LabelSet> golds;
};

inline Instance random_instance(std::mt19937_64& rng) {
  Instance inst;
  inst.labels = std::uniform_int_distribution<std::size_t>(1, 5)(rng);
  const auto docs = std::uniform_int_distribution<std::size_t>(1, 10)(rng);
  std::bernoulli_distribution in(0.4);
  auto draw = [&] {
    febench::LabelSet s;
    for (std::size_t l = 0; l < inst.labels; ++l)
      if (in(rng)) s.push_back(l);
    return s;
  };
  for (std::size_t d = 0; d < docs; ++d) {
    inst.preds.push_back(draw());
    inst.golds.push_back(draw());
  }
  return inst;
}

// per-class 2x2 confusion matrices from membership tests, then summed
inline febench::PrfScores brute_force(const Instance& inst) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t c = 0; c < inst.labels; ++c) {
    for (std::size_t d = 0; d < inst.preds.size(); ++d) {
      const auto& p = inst.preds[d];
      const auto& g = inst.golds[d];
      const bool in_p = std::find(p.begin(), p.end(), c) != p.end();
      const bool in_g = std::find(g.begin(), g.end(), c) != g.end();
      if (in_p && in_g) tp += 1;
      if (in_p && !in_g) fp += 1;
      if (!in_p && in_g) fn += 1;
    }
  }
  febench::PrfScores s;
  s.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  s.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

}  // namespace metric_oracle
