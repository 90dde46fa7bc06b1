#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "febench/text.hpp"
#include "febench/training.hpp"

namespace febench {

struct CellResult {
  std::string cell;
  std::string preset;
  TrainMode mode = TrainMode::FE;
  bool failed = false;
  std::string error;
  std::size_t epochs = 0;
  std::size_t encoder_params = 0;
  std::size_t head_params = 0;
  MeanStd accuracy;
  MeanStd precision;
  MeanStd recall;
  MeanStd f1;
  std::uint64_t peak_bytes = 0;
  std::vector<std::uint64_t> seeds;
  // timing, kept out of the deterministic record
  std::vector<double> epoch_seconds;  // per epoch index, mean over runs
  double total_seconds = 0.0;         // mean over runs

  double mean_epoch_seconds() const;
};

struct Provenance {
  std::string name;
  std::string config_hash;
  std::string dataset;
  std::uint64_t master_seed = 0;
  std::uint64_t encoder_seed = 0;
  std::size_t repeats = 0;
  std::string precision = "float32";
};

struct BenchmarkResults {
  Provenance provenance;
  TaskKind task_kind = TaskKind::single_label;
  std::vector<CellResult> cells;
};

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fractions rendered as percentages: (0.9297, 0.0006) -> "92.97 ± 0.06".
std::string format_mean_std(double mean, double std);
/// Whole MiB, rounded.
std::string format_mib(std::uint64_t bytes);
std::string format_ratio(double ratio);
std::string format_hours(double seconds);

/// The FE cell with the most encoder parameters (first in order on ties);
/// falls back to the first cell when no FE cell succeeded.
std::string default_baseline(const std::vector<CellResult>& cells);

/// Mean epoch time of each successful cell divided by the baseline's.
std::map<std::string, double> cell_relative_times(const std::vector<CellResult>& cells, const std::string& baseline);

/// Human-readable tables. Throws ReportError when `baseline` is not a cell.
std::string emit_report(const BenchmarkResults& results, const std::string& baseline);
std::string emit_tsv(const BenchmarkResults& results, const std::string& baseline);

/// One JSON object per line, no timing.
std::string result_record(const CellResult& cell, TaskKind task_kind);
std::string timing_record(const CellResult& cell);

/// Writes results.jsonl, timings.jsonl, provenance.json, report.tsv and report.txt.
void write_results(const BenchmarkResults& results, const std::filesystem::path& dir, const std::string& baseline);

/// Reads results.jsonl (a file or the directory holding it) plus the sibling
/// timings.jsonl and provenance.json when present.
BenchmarkResults read_results(const std::filesystem::path& path);

}  // namespace febench
