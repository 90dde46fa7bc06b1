#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace febench {

enum class MemoryCategory : std::uint8_t { parameters, gradients, optimizer_state, activations };

inline constexpr std::array<MemoryCategory, 4> kAllMemoryCategories = {
    MemoryCategory::parameters, MemoryCategory::gradients, MemoryCategory::optimizer_state,
    MemoryCategory::activations};

std::string_view to_string(MemoryCategory category);

class LedgerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Byte-exact accounting of live tensor storage, split by category.
///
/// Every tensor buffer that is attached to a ledger reports its allocation and
/// release here. `peak()` is the high-water mark of the category sum, and
/// `peak_of()` is the per-category high-water mark (each category tracked
/// independently, so the per-category peaks need not sum to `peak()`).
///
/// A ledger is owned by one run and is not thread-safe.
class MemoryLedger {
 public:
  void record_alloc(MemoryCategory category, std::uint64_t bytes);
  void record_free(MemoryCategory category, std::uint64_t bytes);

  std::uint64_t current() const { return current_; }
  std::uint64_t peak() const { return peak_; }
  std::uint64_t current_of(MemoryCategory category) const { return by_category_[index(category)]; }
  std::uint64_t peak_of(MemoryCategory category) const { return peak_by_category_[index(category)]; }

  /// Category breakdown captured at the moment the overall peak was reached.
  const std::array<std::uint64_t, 4>& breakdown_at_peak() const { return at_peak_; }

 private:
  static std::size_t index(MemoryCategory c) { return static_cast<std::size_t>(c); }

  std::uint64_t current_ = 0;
  std::uint64_t peak_ = 0;
  std::array<std::uint64_t, 4> by_category_{};
  std::array<std::uint64_t, 4> peak_by_category_{};
  std::array<std::uint64_t, 4> at_peak_{};
};

/// Monotonic stopwatch; durations in seconds.
class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  void restart() { start_ = std::chrono::steady_clock::now(); }
  double elapsed_seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

struct TimingTrace {
  std::vector<double> epoch_seconds;
  double total_seconds = 0.0;

  double mean_epoch_seconds() const;
  /// Throws LedgerError when an invariant (total >= sum(epochs), all > 0) is violated.
  void validate() const;
};

/// Divides every entry by the baseline entry. Throws std::invalid_argument when
/// the baseline is missing or not positive.
std::map<std::string, double> relative_times(const std::map<std::string, double>& epoch_times,
                                             const std::string& baseline);

}  // namespace febench
