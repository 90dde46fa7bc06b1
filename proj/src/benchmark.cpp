#include "febench/benchmark.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "febench/encoder.hpp"

namespace febench {

std::filesystem::path resolve_out_dir(const BenchmarkConfig& config, const BenchmarkOverrides& overrides) {
  if (overrides.out) return *overrides.out;
  if (const char* env = std::getenv(kOutRootEnv); env && *env) return env;
  return config.out;
}

namespace {

CellResult failed_cell(const BenchmarkCell& cell, const std::string& why) {
  CellResult r;
  r.cell = cell.id;
  r.preset = cell.preset;
  r.mode = cell.mode;
  r.failed = true;
  r.error = why;
  return r;
}

}  // namespace

BenchmarkOutcome run_benchmark(BenchmarkConfig config, const std::string& config_text,
                               const BenchmarkOverrides& overrides, std::ostream* log) {
  BenchmarkOutcome outcome;
  std::mutex log_mutex;
  auto say = [&](const std::string& line) {
    if (!log) return;
    std::lock_guard lock(log_mutex);
    *log << line << std::endl;
  };

  if (overrides.seed) config.seed = *overrides.seed;
  if (overrides.repeats) config.repeats = *overrides.repeats;
  if (overrides.parallel) config.parallel = *overrides.parallel;
  if (overrides.baseline) config.baseline = *overrides.baseline;
  try {
    config.validate();
  } catch (const std::exception& e) {
    outcome.exit_code = 2;
    outcome.message = e.what();
    return outcome;
  }
  outcome.out_dir = resolve_out_dir(config, overrides);

  auto& results = outcome.results;
  results.provenance = {config.name, config_hash(config_text), config.dataset.string(), config.seed,
                        config.encoder_seed, config.repeats, "float32"};

  Dataset dataset;
  std::optional<EmbeddingTable> embeddings;
  try {
    dataset = load_dataset(config.dataset, config.format, config.task_kind);
    if (config.embeddings) embeddings = load_embeddings(*config.embeddings, config.encoder_seed);
  } catch (const std::exception& e) {
    say(std::string("dataset: ") + e.what());
    for (const auto& c : config.cells) results.cells.push_back(failed_cell(c, e.what()));
    outcome.exit_code = 1;
    outcome.message = e.what();
    outcome.baseline = config.baseline.value_or(config.cells.front().id);
    write_results(results, outcome.out_dir, outcome.baseline);
    return outcome;
  }
  results.task_kind = dataset.task_kind;

  std::vector<std::size_t> epochs(config.cells.size());
  for (std::size_t i = 0; i < config.cells.size(); ++i) {
    const auto& c = config.cells[i];
    auto e = c.settings.epochs ? c.settings.epochs : reference_epochs(dataset.name, c.mode);
    if (!e) {
      outcome.exit_code = 2;
      outcome.message = "cell '" + c.id + "': epochs not set and no reference count for dataset '" + dataset.name + "'";
      return outcome;
    }
    epochs[i] = *e;
  }

  const Vocabulary vocab = dataset_vocab(dataset, config.vocab_size, config.vocab_min_freq);
  results.cells.resize(config.cells.size());

  auto run_cell = [&](std::size_t i, std::size_t repeat_workers) {
    const auto& cell = config.cells[i];
    try {
      ExperimentConfig ex;
      ex.run.mode = cell.mode;
      ex.run.batch_size = cell.settings.batch_size;
      ex.run.learning_rate = cell.settings.learning_rate;
      ex.run.epochs = epochs[i];
      ex.run.seed = config.seed;
      ex.run.task_kind = dataset.task_kind;
      ex.run.threshold = cell.settings.threshold;
      ex.run.max_len = config.max_len;
      ex.run.cache_frozen_features = cell.settings.cache_frozen_features && cell.mode == TrainMode::FE;
      ex.head.kernel_sizes = cell.settings.kernel_sizes;
      ex.head.filters = cell.settings.filters;
      ex.encoder_seed = config.encoder_seed;
      ex.repeats = config.repeats;
      ex.parallel = repeat_workers;
      if (embeddings && encoder_preset(cell.preset, 1).kind == EncoderKind::static_embedding) {
        ex.vocab = embeddings->vocab;
        ex.encoder = encoder_preset(cell.preset, embeddings->vocab.size());
        ex.encoder.hidden = embeddings->dim;
        ex.encoder_weights = encoder_weights_from_embeddings(ex.encoder, *embeddings);
      } else {
        ex.vocab = vocab;
        ex.encoder = encoder_preset(cell.preset, vocab.size());
      }
      ex.encoder.frozen = cell.mode == TrainMode::FE;
      say("cell " + cell.id + ": " + std::to_string(config.repeats) + " run(s) of " + std::to_string(epochs[i]) +
          " epoch(s)");
      auto agg = run_experiment(ex, dataset);

      CellResult r;
      r.cell = cell.id;
      r.preset = cell.preset;
      r.mode = cell.mode;
      r.epochs = epochs[i];
      r.encoder_params = agg.runs.front().encoder_params;
      r.head_params = agg.runs.front().head_params;
      r.accuracy = agg.accuracy;
      r.precision = agg.precision;
      r.recall = agg.recall;
      r.f1 = agg.f1;
      r.peak_bytes = agg.peak_bytes;
      r.seeds = agg.seeds;
      r.epoch_seconds = agg.mean_epoch_seconds;
      r.total_seconds = agg.total_seconds.mean;
      results.cells[i] = std::move(r);
      say("cell " + cell.id + ": done");
    } catch (const std::exception& e) {
      say("cell " + cell.id + ": FAILED: " + e.what());
      results.cells[i] = failed_cell(cell, e.what());
    }
  };

  const auto n = config.cells.size();
  const auto cell_workers = std::max<std::size_t>(1, std::min(config.parallel, n));
  const auto repeat_workers = std::max<std::size_t>(1, config.parallel / cell_workers);
  if (cell_workers == 1) {
    for (std::size_t i = 0; i < n; ++i) run_cell(i, repeat_workers);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < cell_workers; ++w) {
      pool.emplace_back([&] {
        for (auto i = next.fetch_add(1); i < n; i = next.fetch_add(1)) run_cell(i, repeat_workers);
      });
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (results.cells[i].failed) {
      outcome.exit_code = 1;
      outcome.message = "cell '" + results.cells[i].cell + "' failed: " + results.cells[i].error;
    }
  }
  outcome.baseline = config.baseline.value_or(default_baseline(results.cells));
  try {
    write_results(results, outcome.out_dir, outcome.baseline);
  } catch (const std::exception& e) {
    outcome.exit_code = 1;
    outcome.message = e.what();
  }
  return outcome;
}

BenchmarkOutcome run_benchmark(const std::filesystem::path& config_path, const BenchmarkOverrides& overrides,
                               std::ostream* log) {
  std::ifstream in(config_path, std::ios::binary);
  if (!in) {
    BenchmarkOutcome o;
    o.exit_code = 2;
    o.message = "cannot read config " + config_path.string();
    return o;
  }
  std::stringstream ss;
  ss << in.rdbuf();
  const auto text = ss.str();
  BenchmarkConfig config;
  try {
    config = parse_benchmark_config(text, config_path.parent_path());
  } catch (const std::exception& e) {
    BenchmarkOutcome o;
    o.exit_code = 2;
    o.message = e.what();
    return o;
  }
  return run_benchmark(std::move(config), text, overrides, log);
}

}  // namespace febench
