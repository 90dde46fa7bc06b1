#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "febench/text.hpp"

namespace febench {

using LabelSet = std::vector<std::size_t>;  // sorted, unique label indices

struct ConfusionTotals {
  std::uint64_t true_positive = 0;
  std::uint64_t false_positive = 0;
  std::uint64_t false_negative = 0;
};

struct PrfScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Fraction of positions where prediction equals gold.
double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> golds);

/// Micro totals summed over documents and labels. Sets need not be sorted.
ConfusionTotals confusion_totals(std::span<const LabelSet> predictions, std::span<const LabelSet> golds);

/// Precision, recall and F1 from the micro totals; any 0/0 is 0.
PrfScores micro_prf(const ConfusionTotals& totals);
PrfScores micro_prf(std::span<const LabelSet> predictions, std::span<const LabelSet> golds);

/// Mean number of labels per example over train and test.
double label_density(const Dataset& dataset);

}  // namespace febench
