#include "febench/metrics.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace febench {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(a) + " predictions vs " + std::to_string(b) +
                                " golds");
  }
}

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> golds) {
  check_lengths(predictions.size(), golds.size(), "accuracy");
  if (golds.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) hits += predictions[i] == golds[i];
  return static_cast<double>(hits) / static_cast<double>(golds.size());
}

ConfusionTotals confusion_totals(std::span<const LabelSet> predictions, std::span<const LabelSet> golds) {
  check_lengths(predictions.size(), golds.size(), "micro_prf");
  ConfusionTotals t;
  for (std::size_t d = 0; d < golds.size(); ++d) {
    LabelSet p = predictions[d];
    LabelSet g = golds[d];
    std::sort(p.begin(), p.end());
    p.erase(std::unique(p.begin(), p.end()), p.end());
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());
    LabelSet both;
    std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(both));
    t.true_positive += both.size();
    t.false_positive += p.size() - both.size();
    t.false_negative += g.size() - both.size();
  }
  return t;
}

PrfScores micro_prf(const ConfusionTotals& t) {
  PrfScores s;
  s.precision = ratio(t.true_positive, t.true_positive + t.false_positive);
  s.recall = ratio(t.true_positive, t.true_positive + t.false_negative);
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

PrfScores micro_prf(std::span<const LabelSet> predictions, std::span<const LabelSet> golds) {
  return micro_prf(confusion_totals(predictions, golds));
}

double label_density(const Dataset& dataset) {
  std::size_t examples = 0, labels = 0;
  for (const auto* part : {&dataset.train, &dataset.test}) {
    for (const auto& ex : *part) {
      ++examples;
      labels += ex.labels.size();
    }
  }
  if (examples == 0) throw std::invalid_argument("label_density: dataset " + dataset.name + " is empty");
  return static_cast<double>(labels) / static_cast<double>(examples);
}

}  // namespace febench
