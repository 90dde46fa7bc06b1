#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "febench/text.hpp"
#include "febench/training.hpp"

namespace febench {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Settings shared by all cells unless a cell overrides them.
struct CellSettings {
  std::optional<std::size_t> epochs;  // reference_epochs(dataset name) or 1 when unset
  std::size_t batch_size = 0;         // 0 selects the mode default
  double learning_rate = kDefaultLearningRate;
  double threshold = 0.5;
  std::vector<std::size_t> kernel_sizes = {3, 4, 5, 6};
  std::size_t filters = 100;
  bool cache_frozen_features = false;
};

struct BenchmarkCell {
  std::string id;
  std::string preset;
  TrainMode mode = TrainMode::FE;
  CellSettings settings;
};

struct BenchmarkConfig {
  std::string name = "benchmark";
  std::filesystem::path dataset;
  DatasetFormat format = DatasetFormat::jsonl;
  std::optional<TaskKind> task_kind;
  std::optional<std::filesystem::path> embeddings;  // text-format vectors for the glove preset
  std::vector<BenchmarkCell> cells;
  std::size_t repeats = 3;
  std::uint64_t seed = 0;
  std::uint64_t encoder_seed = 0;
  std::size_t parallel = 1;
  std::size_t max_len = kDefaultMaxLen;
  std::size_t vocab_size = 30000;
  std::size_t vocab_min_freq = 1;
  std::filesystem::path out = "results";
  std::optional<std::string> baseline;

  /// Throws ConfigError.
  void validate() const;
  const BenchmarkCell* find_cell(const std::string& id) const;
};

/// INI-style text: a [benchmark] section, an optional [defaults] section and
/// one [cell.<id>] section per cell. Relative paths resolve against `base_dir`.
BenchmarkConfig parse_benchmark_config(const std::string& text, const std::filesystem::path& base_dir = {});
BenchmarkConfig load_benchmark_config(const std::filesystem::path& path);

/// FNV-1a of the raw config bytes, 16 hex digits.
std::string config_hash(const std::string& text);

}  // namespace febench
