#include "febench/profiling.hpp"

#include <numeric>

namespace febench {

std::string_view to_string(MemoryCategory category) {
  switch (category) {
    case MemoryCategory::parameters: return "parameters";
    case MemoryCategory::gradients: return "gradients";
    case MemoryCategory::optimizer_state: return "optimizer_state";
    case MemoryCategory::activations: return "activations";
  }
  return "unknown";
}

void MemoryLedger::record_alloc(MemoryCategory category, std::uint64_t bytes) {
  const auto i = index(category);
  by_category_[i] += bytes;
  current_ += bytes;
  if (by_category_[i] > peak_by_category_[i]) peak_by_category_[i] = by_category_[i];
  if (current_ > peak_) {
    peak_ = current_;
    at_peak_ = by_category_;
  }
}

void MemoryLedger::record_free(MemoryCategory category, std::uint64_t bytes) {
  const auto i = index(category);
  if (bytes > by_category_[i]) {
    throw LedgerError("over-free in category '" + std::string(to_string(category)) + "': freeing " +
                      std::to_string(bytes) + " bytes with " + std::to_string(by_category_[i]) +
                      " live");
  }
  by_category_[i] -= bytes;
  current_ -= bytes;
}

double TimingTrace::mean_epoch_seconds() const {
  if (epoch_seconds.empty()) return 0.0;
  return std::accumulate(epoch_seconds.begin(), epoch_seconds.end(), 0.0) /
         static_cast<double>(epoch_seconds.size());
}

void TimingTrace::validate() const {
  double sum = 0.0;
  for (double s : epoch_seconds) {
    if (!(s > 0.0)) throw LedgerError("non-positive epoch duration");
    sum += s;
  }
  if (total_seconds < sum) throw LedgerError("total duration shorter than the sum of epochs");
}

std::map<std::string, double> relative_times(const std::map<std::string, double>& epoch_times,
                                             const std::string& baseline) {
  auto it = epoch_times.find(baseline);
  if (it == epoch_times.end()) throw std::invalid_argument("baseline '" + baseline + "' missing");
  if (!(it->second > 0.0)) throw std::invalid_argument("baseline '" + baseline + "' is not positive");
  std::map<std::string, double> out;
  for (const auto& [method, seconds] : epoch_times) out[method] = seconds / it->second;
  return out;
}

}  // namespace febench
