#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "febench/bench_config.hpp"
#include "febench/report.hpp"

namespace febench {

/// Environment variable that replaces the configured output directory.
inline constexpr const char* kOutRootEnv = "FEBENCH_OUT";

struct BenchmarkOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> repeats;
  std::optional<std::size_t> parallel;
  std::optional<std::filesystem::path> out;  // beats the environment variable
  std::optional<std::string> baseline;
};

struct BenchmarkOutcome {
  int exit_code = 0;  // 0 all cells ok, 1 some run failed, 2 config error
  std::string message;
  BenchmarkResults results;
  std::string baseline;
  std::filesystem::path out_dir;
};

/// Loads the config, runs every cell and writes the result files.
/// Never throws for config or run problems; they map to exit codes.
BenchmarkOutcome run_benchmark(const std::filesystem::path& config_path, const BenchmarkOverrides& overrides = {},
                               std::ostream* log = nullptr);

/// Same, for an already parsed config. `config_text` feeds the provenance hash.
BenchmarkOutcome run_benchmark(BenchmarkConfig config, const std::string& config_text,
                               const BenchmarkOverrides& overrides = {}, std::ostream* log = nullptr);

/// Output directory after applying --out and the environment variable.
std::filesystem::path resolve_out_dir(const BenchmarkConfig& config, const BenchmarkOverrides& overrides);

}  // namespace febench
