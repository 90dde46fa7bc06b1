#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "febench/cnn_head.hpp"
#include "febench/encoder.hpp"
#include "febench/metrics.hpp"
#include "febench/params.hpp"
#include "febench/profiling.hpp"
#include "febench/tape.hpp"
#include "febench/text.hpp"

namespace febench {

/// FE trains the head on a frozen encoder; FiT trains both.
enum class TrainMode { FE, FiT };
std::string_view to_string(TrainMode mode);
TrainMode parse_train_mode(std::string_view s);

inline constexpr double kDefaultLearningRate = 5e-5;

/// 50 for FE, 40 for FiT.
std::size_t default_batch_size(TrainMode mode);

/// Epoch counts used for the full-size corpora (AGNews, 20NEWS, DBpedia,
/// TREC-6, TREC-50, YELP, RCV1, BGC_EN, Ohsumed). Lookup ignores case.
std::optional<std::size_t> reference_epochs(std::string_view dataset, TrainMode mode);

struct RunConfig {
  TrainMode mode = TrainMode::FE;
  std::size_t batch_size = 0;  // 0 selects default_batch_size(mode)
  double learning_rate = kDefaultLearningRate;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  std::optional<TaskKind> task_kind;  // dataset's own kind when unset
  double threshold = 0.5;
  std::size_t max_len = kDefaultMaxLen;
  /// FE only: run the frozen encoder once per example and reuse its output in
  /// later epochs. Results are bit-identical; epoch times are not comparable.
  bool cache_frozen_features = false;

  std::size_t effective_batch_size() const { return batch_size ? batch_size : default_batch_size(mode); }
  void validate() const;
};

struct AdamHyperparameters {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moments per trainable parameter plus the shared step counter.
/// Moments are created lazily on a parameter's first update, so parameters that
/// never receive a gradient hold no state. Moment storage is reported to the
/// ledger as optimizer_state.
template <typename T>
class AdamState {
 public:
  explicit AdamState(AdamHyperparameters hp = {}, MemoryLedger* ledger = nullptr) : hp_(hp), ledger_(ledger) {}
  AdamState(const AdamState&) = delete;
  AdamState& operator=(const AdamState&) = delete;
  ~AdamState();

  const AdamHyperparameters& hyperparameters() const { return hp_; }
  std::uint64_t step_count() const { return t_; }
  bool has_state(TensorId id) const { return moments_.contains(id); }
  std::size_t tracked_parameters() const { return moments_.size(); }
  std::uint64_t state_bytes() const;

  struct Moments {
    std::vector<T> m;
    std::vector<T> v;
  };
  const Moments* moments(TensorId id) const;

 private:
  template <typename U>
  friend void adam_step(ParameterSet<U>&, const GradientMap<U>&, AdamState<U>&, double);

  AdamHyperparameters hp_;
  MemoryLedger* ledger_;
  std::uint64_t t_ = 0;
  std::map<TensorId, Moments> moments_;
};

/// One bias-corrected Adam update of every parameter present in `grads`.
/// Parameters absent from the map are left untouched and get no state.
/// Throws ShapeError when a gradient length differs from its parameter.
template <typename T>
void adam_step(ParameterSet<T>& params, const GradientMap<T>& grads, AdamState<T>& state, double lr);

/// Mean softmax cross-entropy over the batch; logits [B x C], one class per row.
template <typename T>
Tensor<T> compute_loss(Tape<T>& tape, const Tensor<T>& logits, std::span<const std::size_t> classes);

/// Mean binary cross-entropy over batch and classes; each target row has C entries in {0, 1}.
template <typename T>
Tensor<T> compute_loss(Tape<T>& tape, const Tensor<T>& logits, std::span<const std::vector<double>> multi_hot);

/// Dispatches on task kind; single-label gold sets must hold exactly one index.
template <typename T>
Tensor<T> compute_loss(Tape<T>& tape, const Tensor<T>& logits, std::span<const LabelSet> golds, TaskKind task_kind);

/// Encoder + CNN head over one vocabulary.
struct Model {
  Vocabulary vocab;
  EncoderConfig encoder;
  ParameterSet<float> encoder_weights;
  CnnHeadConfig head;
  ParameterSet<float> head_weights;

  std::size_t param_count() const { return febench::param_count(encoder) + febench::param_count(head); }
};

/// Logits [classes] for one encoded text.
template <typename T>
Tensor<T> forward_logits(Tape<T>& tape, const EncoderConfig& encoder, const ParameterSet<T>& encoder_weights,
                         const CnnHeadConfig& head, const ParameterSet<T>& head_weights, const EncodedText& input);

struct EvalMetrics {
  double accuracy = 0.0;  // exact match of predicted and gold label sets
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Forward pass over `examples` without recording; micro scores and exact-match accuracy.
EvalMetrics evaluate(const Model& model, const Dataset& dataset, std::span<const LabeledExample> examples,
                     TaskKind task_kind, double threshold, std::size_t max_len);

struct EpochRecord {
  double train_loss = 0.0;
  EvalMetrics test;
  double train_seconds = 0.0;  // shuffle + minibatch updates
  double eval_seconds = 0.0;   // test-set pass
};

struct RunResult {
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::FE;
  std::vector<EpochRecord> epochs;
  EvalMetrics final_metrics;
  TimingTrace timing;  // epoch_seconds mirror EpochRecord::train_seconds
  std::uint64_t peak_bytes = 0;
  std::array<std::uint64_t, 4> breakdown_at_peak{};
  std::array<std::uint64_t, 4> category_peaks{};
  std::size_t encoder_params = 0;
  std::size_t head_params = 0;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::size_t epoch, std::size_t batch)
      : std::runtime_error(what), epoch_(epoch), batch_(batch) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

/// Deterministic per-epoch permutation of [0, n).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

/// Trains `model` in place. FE freezes the encoder (its tensors stop requiring a
/// gradient), FiT unfreezes it. Each epoch shuffles the training set, runs
/// minibatch updates (the last batch keeps its natural size) and evaluates on
/// the test split. Memory is tracked in a ledger owned by this call.
RunResult train(const RunConfig& config, const Dataset& dataset, Model& model);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

/// Population standard deviation; a single value has std 0. Throws on empty input.
MeanStd mean_std(std::span<const double> values);

/// Everything needed to build a fresh model for each repeat.
struct ExperimentConfig {
  RunConfig run;
  EncoderConfig encoder;
  CnnHeadConfig head;
  std::uint64_t encoder_seed = 0;  // shared by all repeats, standing in for a fixed checkpoint
  std::optional<ParameterSet<float>> encoder_weights;  // used instead of init when set
  std::size_t vocab_size = 30000;
  std::size_t vocab_min_freq = 1;
  std::optional<Vocabulary> vocab;  // built from the training texts when unset
  std::size_t repeats = 3;
  std::size_t parallel = 1;
};

struct AggregateResult {
  MeanStd accuracy;
  MeanStd precision;
  MeanStd recall;
  MeanStd f1;
  MeanStd epoch_seconds;  // over runs, of each run's mean epoch time
  MeanStd total_seconds;
  std::vector<double> mean_epoch_seconds;  // per epoch index, averaged over runs
  std::uint64_t peak_bytes = 0;            // max over runs
  std::vector<std::uint64_t> seeds;
  std::vector<RunResult> runs;
};

/// Collects the final metrics of the runs (seeds are taken from the results).
AggregateResult aggregate(std::vector<RunResult> runs);

/// Runs `repeats` trainings with seeds run.seed + i. Fails with the first
/// failing run's error. Repeats may execute concurrently (up to `parallel`);
/// results do not depend on it.
AggregateResult run_experiment(const ExperimentConfig& config, const Dataset& dataset);

/// Vocabulary built from the training texts of `dataset`.
Vocabulary dataset_vocab(const Dataset& dataset, std::size_t max_size, std::size_t min_freq = 1);

}  // namespace febench
