#include "febench/training.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

namespace febench {

std::string_view to_string(TrainMode mode) { return mode == TrainMode::FE ? "FE" : "FiT"; }

TrainMode parse_train_mode(std::string_view s) {
  if (s == "FE" || s == "fe") return TrainMode::FE;
  if (s == "FiT" || s == "fit" || s == "FIT") return TrainMode::FiT;
  throw std::invalid_argument("unknown training mode '" + std::string(s) + "' (expected FE or FiT)");
}

std::size_t default_batch_size(TrainMode mode) { return mode == TrainMode::FE ? 50 : 40; }

std::optional<std::size_t> reference_epochs(std::string_view dataset, TrainMode mode) {
  struct Row {
    const char* name;
    std::size_t fe;
    std::size_t fit;
  };
  static constexpr Row kRows[] = {
      {"agnews", 20, 10}, {"20news", 300, 100}, {"dbpedia", 10, 10}, {"trec-6", 150, 50}, {"trec-50", 150, 50},
      {"yelp", 15, 5},    {"rcv1", 50, 20},     {"bgc_en", 40, 20},  {"ohsumed", 300, 80},
  };
  std::string key;
  for (char c : dataset) key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  for (const auto& r : kRows)
    if (key == r.name) return mode == TrainMode::FE ? r.fe : r.fit;
  return std::nullopt;
}

void RunConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("run config: epochs must be at least 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("run config: learning rate must be positive");
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("run config: threshold must lie in (0, 1)");
  if (max_len < 3) throw std::invalid_argument("run config: max_len must be at least 3");
  if (cache_frozen_features && mode != TrainMode::FE) {
    throw std::invalid_argument("run config: feature caching needs a frozen encoder (FE)");
  }
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
AdamState<T>::~AdamState() {
  if (ledger_) ledger_->record_free(MemoryCategory::optimizer_state, state_bytes());
}

template <typename T>
std::uint64_t AdamState<T>::state_bytes() const {
  std::uint64_t n = 0;
  for (const auto& [id, mv] : moments_) n += (mv.m.size() + mv.v.size()) * sizeof(T);
  return n;
}

template <typename T>
const typename AdamState<T>::Moments* AdamState<T>::moments(TensorId id) const {
  auto it = moments_.find(id);
  return it == moments_.end() ? nullptr : &it->second;
}

template <typename T>
void adam_step(ParameterSet<T>& params, const GradientMap<T>& grads, AdamState<T>& state, double lr) {
  const auto& hp = state.hp_;
  state.t_ += 1;
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.t_));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.t_));
  const T b1 = static_cast<T>(hp.beta1), b2 = static_cast<T>(hp.beta2);
  const T inv_bc1 = static_cast<T>(1.0 / bc1), inv_bc2 = static_cast<T>(1.0 / bc2);
  const T step = static_cast<T>(lr), eps = static_cast<T>(hp.eps);

  for (const auto& [name, p] : params.entries()) {
    auto g_it = grads.find(p.id());
    if (g_it == grads.end()) continue;
    const auto g = g_it->second;
    if (g.size() != p.numel()) {
      throw ShapeError("adam_step: gradient of '" + name + "' has " + std::to_string(g.size()) + " values for " +
                       std::to_string(p.numel()) + " parameters");
    }
    auto [it, fresh] = state.moments_.try_emplace(p.id());
    auto& mv = it->second;
    if (fresh) {
      mv.m.assign(p.numel(), T(0));
      mv.v.assign(p.numel(), T(0));
      if (state.ledger_) state.ledger_->record_alloc(MemoryCategory::optimizer_state, 2 * p.numel() * sizeof(T));
    }
    auto w = p.impl()->data.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      mv.m[i] = b1 * mv.m[i] + (T(1) - b1) * g[i];
      mv.v[i] = b2 * mv.v[i] + (T(1) - b2) * g[i] * g[i];
      const T m_hat = mv.m[i] * inv_bc1;
      const T v_hat = mv.v[i] * inv_bc2;
      w[i] -= step * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template class AdamState<float>;
template class AdamState<double>;
template void adam_step(ParameterSet<float>&, const GradientMap<float>&, AdamState<float>&, double);
template void adam_step(ParameterSet<double>&, const GradientMap<double>&, AdamState<double>&, double);

// ---------------------------------------------------------------------------
// Loss

template <typename T>
Tensor<T> compute_loss(Tape<T>& tape, const Tensor<T>& logits, std::span<const std::size_t> classes) {
  return tape.softmax_cross_entropy(logits, std::vector<std::size_t>(classes.begin(), classes.end()));
}

template <typename T>
Tensor<T> compute_loss(Tape<T>& tape, const Tensor<T>& logits, std::span<const std::vector<double>> multi_hot) {
  const auto classes = logits.shape().empty() ? 1 : logits.shape().back();
  std::vector<double> flat;
  flat.reserve(multi_hot.size() * classes);
  for (std::size_t r = 0; r < multi_hot.size(); ++r) {
    if (multi_hot[r].size() != classes) {
      throw std::invalid_argument("compute_loss: target row " + std::to_string(r) + " has " +
                                  std::to_string(multi_hot[r].size()) + " entries for " + std::to_string(classes) +
                                  " classes");
    }
    flat.insert(flat.end(), multi_hot[r].begin(), multi_hot[r].end());
  }
  return tape.sigmoid_bce(logits, std::move(flat));
}

template <typename T>
Tensor<T> compute_loss(Tape<T>& tape, const Tensor<T>& logits, std::span<const LabelSet> golds, TaskKind task_kind) {
  const auto classes = logits.shape().empty() ? 1 : logits.shape().back();
  if (task_kind == TaskKind::single_label) {
    std::vector<std::size_t> targets;
    targets.reserve(golds.size());
    for (const auto& g : golds) {
      if (g.size() != 1) throw std::invalid_argument("compute_loss: single-label target must hold exactly one class");
      targets.push_back(g.front());
    }
    return compute_loss(tape, logits, std::span<const std::size_t>(targets));
  }
  std::vector<std::vector<double>> rows(golds.size(), std::vector<double>(classes, 0.0));
  for (std::size_t r = 0; r < golds.size(); ++r) {
    for (auto c : golds[r]) {
      if (c >= classes) {
        throw std::out_of_range("compute_loss: target " + std::to_string(c) + " not below class count " +
                                std::to_string(classes));
      }
      rows[r][c] = 1.0;
    }
  }
  return compute_loss(tape, logits, std::span<const std::vector<double>>(rows));
}

template Tensor<float> compute_loss(Tape<float>&, const Tensor<float>&, std::span<const std::size_t>);
template Tensor<double> compute_loss(Tape<double>&, const Tensor<double>&, std::span<const std::size_t>);
template Tensor<float> compute_loss(Tape<float>&, const Tensor<float>&, std::span<const std::vector<double>>);
template Tensor<double> compute_loss(Tape<double>&, const Tensor<double>&, std::span<const std::vector<double>>);
template Tensor<float> compute_loss(Tape<float>&, const Tensor<float>&, std::span<const LabelSet>, TaskKind);
template Tensor<double> compute_loss(Tape<double>&, const Tensor<double>&, std::span<const LabelSet>, TaskKind);

// ---------------------------------------------------------------------------
// Forward / evaluation

namespace {

// Window count seen by the head: texts shorter than the widest kernel let
// their windows run into padding.
std::size_t head_valid_length(const CnnHeadConfig& head, const EncodedText& input) {
  return std::min(input.ids.size(), std::max(input.valid_length, head.max_kernel()));
}

struct EncodedSplit {
  std::vector<EncodedText> inputs;
  std::vector<LabelSet> golds;
};

EncodedSplit encode_split(const Dataset& ds, std::span<const LabeledExample> examples, const Vocabulary& vocab,
                          std::size_t max_len) {
  EncodedSplit out;
  out.inputs.reserve(examples.size());
  out.golds.reserve(examples.size());
  for (const auto& ex : examples) {
    out.inputs.push_back(encode(ex.text, vocab, max_len));
    out.golds.push_back(ds.label_indices(ex));
  }
  return out;
}

EvalMetrics score(const std::vector<LabelSet>& preds, const std::vector<LabelSet>& golds) {
  EvalMetrics m;
  if (golds.empty()) return m;
  std::size_t exact = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) exact += preds[i] == golds[i];
  m.accuracy = static_cast<double>(exact) / static_cast<double>(golds.size());
  const auto prf = micro_prf(std::span<const LabelSet>(preds), std::span<const LabelSet>(golds));
  m.precision = prf.precision;
  m.recall = prf.recall;
  m.f1 = prf.f1;
  return m;
}

EvalMetrics evaluate_encoded(const Model& model, const EncodedSplit& split, const std::vector<Tensor<float>>* cache,
                             TaskKind task_kind, double threshold, MemoryLedger* ledger) {
  std::vector<LabelSet> preds;
  preds.reserve(split.inputs.size());
  for (std::size_t i = 0; i < split.inputs.size(); ++i) {
    Tape<float> tape(ledger, false);
    const auto& in = split.inputs[i];
    auto hidden = cache ? (*cache)[i] : encoder_forward(tape, model.encoder, model.encoder_weights, in.ids, in.valid_length);
    auto logits = cnn_forward(tape, model.head, model.head_weights, hidden, head_valid_length(model.head, in));
    preds.push_back(predict(logits.data(), task_kind, threshold));
  }
  return score(preds, split.golds);
}

}  // namespace

template <typename T>
Tensor<T> forward_logits(Tape<T>& tape, const EncoderConfig& encoder, const ParameterSet<T>& encoder_weights,
                         const CnnHeadConfig& head, const ParameterSet<T>& head_weights, const EncodedText& input) {
  auto hidden = encoder_forward(tape, encoder, encoder_weights, input.ids, input.valid_length);
  return cnn_forward(tape, head, head_weights, hidden, head_valid_length(head, input));
}

template Tensor<float> forward_logits(Tape<float>&, const EncoderConfig&, const ParameterSet<float>&,
                                      const CnnHeadConfig&, const ParameterSet<float>&, const EncodedText&);
template Tensor<double> forward_logits(Tape<double>&, const EncoderConfig&, const ParameterSet<double>&,
                                       const CnnHeadConfig&, const ParameterSet<double>&, const EncodedText&);

EvalMetrics evaluate(const Model& model, const Dataset& dataset, std::span<const LabeledExample> examples,
                     TaskKind task_kind, double threshold, std::size_t max_len) {
  const auto split = encode_split(dataset, examples, model.vocab, max_len);
  return evaluate_encoded(model, split, nullptr, task_kind, threshold, nullptr);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

// Attaches model parameters to a ledger for the duration of a run.
class LedgerScope {
 public:
  LedgerScope(MemoryLedger& ledger, std::initializer_list<ParameterSet<float>*> sets) {
    for (auto* s : sets)
      for (const auto& [name, t] : s->entries()) tensors_.push_back(t);
    for (auto& t : tensors_) {
      t.release_grad();
      t.attach_ledger(&ledger, MemoryCategory::parameters);
    }
  }
  LedgerScope(const LedgerScope&) = delete;
  LedgerScope& operator=(const LedgerScope&) = delete;
  ~LedgerScope() {
    for (auto& t : tensors_) {
      t.release_grad();
      t.detach_ledger();
    }
  }

 private:
  std::vector<Tensor<float>> tensors_;
};

}  // namespace

RunResult train(const RunConfig& config, const Dataset& dataset, Model& model) {
  Stopwatch total;
  config.validate();
  if (dataset.train.empty()) throw std::invalid_argument("train: dataset " + dataset.name + " has no training examples");
  const auto task = config.task_kind.value_or(dataset.task_kind);
  const bool frozen = config.mode == TrainMode::FE;

  model.encoder.frozen = frozen;
  model.encoder.validate(config.max_len);
  if (model.encoder.vocab_size != model.vocab.size()) {
    throw std::invalid_argument("train: encoder vocabulary " + std::to_string(model.encoder.vocab_size) +
                                " differs from model vocabulary " + std::to_string(model.vocab.size()));
  }
  if (model.head.hidden != model.encoder.hidden) throw std::invalid_argument("train: head width differs from encoder width");
  if (model.head.classes != dataset.label_space.size()) {
    throw std::invalid_argument("train: head has " + std::to_string(model.head.classes) + " classes, dataset has " +
                                std::to_string(dataset.label_space.size()) + " labels");
  }
  model.head.validate(task, config.max_len);
  validate_encoder_weights(model.encoder, model.encoder_weights);
  validate_head_weights(model.head, model.head_weights);
  model.encoder_weights.set_requires_grad(!frozen);
  model.head_weights.set_requires_grad(true);

  RunResult result;
  result.seed = config.seed;
  result.mode = config.mode;
  result.encoder_params = param_count(model.encoder);
  result.head_params = param_count(model.head);

  const auto train_split = encode_split(dataset, dataset.train, model.vocab, config.max_len);
  const auto test_split = encode_split(dataset, dataset.test, model.vocab, config.max_len);

  MemoryLedger ledger;
  {
    LedgerScope scope(ledger, {&model.encoder_weights, &model.head_weights});
    AdamState<float> adam({}, &ledger);
    ParameterSet<float> params;
    params.merge(model.encoder_weights);
    params.merge(model.head_weights);

    std::vector<Tensor<float>> train_cache, test_cache;
    auto fill_cache = [&](const EncodedSplit& split, std::vector<Tensor<float>>& cache) {
      for (const auto& in : split.inputs) {
        Tape<float> tape(&ledger, false);
        cache.push_back(encoder_forward(tape, model.encoder, model.encoder_weights, in.ids, in.valid_length));
      }
    };
    const auto batch_size = config.effective_batch_size();
    const auto classes = model.head.classes;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
      EpochRecord rec;
      Stopwatch clock;
      if (config.cache_frozen_features && train_cache.empty()) fill_cache(train_split, train_cache);
      const auto order = epoch_order(train_split.inputs.size(), config.seed, epoch);
      double loss_sum = 0.0;
      for (std::size_t start = 0, batch = 0; start < order.size(); start += batch_size, ++batch) {
        const auto end = std::min(order.size(), start + batch_size);
        Tape<float> tape(&ledger);
        std::vector<Tensor<float>> rows;
        std::vector<LabelSet> golds;
        rows.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) {
          const auto idx = order[i];
          const auto& in = train_split.inputs[idx];
          auto hidden = config.cache_frozen_features
                            ? train_cache[idx]
                            : encoder_forward(tape, model.encoder, model.encoder_weights, in.ids, in.valid_length);
          rows.push_back(cnn_forward(tape, model.head, model.head_weights, hidden, head_valid_length(model.head, in)));
          golds.push_back(train_split.golds[idx]);
        }
        auto logits = tape.reshape(tape.concat(rows), {end - start, classes});
        auto loss = compute_loss(tape, logits, std::span<const LabelSet>(golds), task);
        const double value = loss.item();
        if (!std::isfinite(value)) {
          throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                  std::to_string(batch + 1),
                              epoch + 1, batch + 1);
        }
        loss_sum += value * static_cast<double>(end - start);
        for (const auto& [name, p] : params.entries()) {
          if (p.has_grad()) Tensor<float>(p).zero_grad();
        }
        auto grads = tape.backward(loss);
        adam_step(params, grads, adam, config.learning_rate);
      }
      rec.train_loss = loss_sum / static_cast<double>(order.size());
      rec.train_seconds = clock.elapsed_seconds();

      clock.restart();
      if (config.cache_frozen_features && test_cache.empty()) fill_cache(test_split, test_cache);
      rec.test = evaluate_encoded(model, test_split, config.cache_frozen_features ? &test_cache : nullptr, task,
                                  config.threshold, &ledger);
      rec.eval_seconds = clock.elapsed_seconds();
      result.timing.epoch_seconds.push_back(rec.train_seconds);
      result.epochs.push_back(rec);
    }
  }
  result.final_metrics = result.epochs.back().test;
  result.peak_bytes = ledger.peak();
  result.breakdown_at_peak = ledger.breakdown_at_peak();
  for (auto c : kAllMemoryCategories) result.category_peaks[static_cast<std::size_t>(c)] = ledger.peak_of(c);
  result.timing.total_seconds = total.elapsed_seconds();
  return result;
}

// ---------------------------------------------------------------------------
// Repeated runs

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean_std: no values");
  if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); }))
    return {values.front(), 0.0};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, values.size() == 1 ? 0.0 : std::sqrt(ss / n)};
}

AggregateResult aggregate(std::vector<RunResult> runs) {
  if (runs.empty()) throw std::invalid_argument("aggregate: no runs");
  AggregateResult agg;
  auto collect = [&](auto&& get) {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(get(r));
    return mean_std(v);
  };
  agg.accuracy = collect([](const RunResult& r) { return r.final_metrics.accuracy; });
  agg.precision = collect([](const RunResult& r) { return r.final_metrics.precision; });
  agg.recall = collect([](const RunResult& r) { return r.final_metrics.recall; });
  agg.f1 = collect([](const RunResult& r) { return r.final_metrics.f1; });
  agg.epoch_seconds = collect([](const RunResult& r) { return r.timing.mean_epoch_seconds(); });
  agg.total_seconds = collect([](const RunResult& r) { return r.timing.total_seconds; });

  std::size_t epochs = runs.front().timing.epoch_seconds.size();
  for (const auto& r : runs) epochs = std::min(epochs, r.timing.epoch_seconds.size());
  agg.mean_epoch_seconds.assign(epochs, 0.0);
  for (const auto& r : runs)
    for (std::size_t e = 0; e < epochs; ++e) agg.mean_epoch_seconds[e] += r.timing.epoch_seconds[e];
  for (auto& s : agg.mean_epoch_seconds) s /= static_cast<double>(runs.size());

  for (const auto& r : runs) {
    agg.peak_bytes = std::max(agg.peak_bytes, r.peak_bytes);
    agg.seeds.push_back(r.seed);
  }
  agg.runs = std::move(runs);
  return agg;
}

Vocabulary dataset_vocab(const Dataset& dataset, std::size_t max_size, std::size_t min_freq) {
  std::vector<std::string> texts;
  texts.reserve(dataset.train.size());
  for (const auto& ex : dataset.train) texts.push_back(ex.text);
  return build_vocab(texts, max_size, min_freq);
}

AggregateResult run_experiment(const ExperimentConfig& config, const Dataset& dataset) {
  if (config.repeats < 1) throw std::invalid_argument("run_experiment: repeats must be at least 1");
  const Vocabulary vocab = config.vocab ? *config.vocab : dataset_vocab(dataset, config.vocab_size, config.vocab_min_freq);
  EncoderConfig encoder = config.encoder;
  encoder.vocab_size = vocab.size();
  CnnHeadConfig head = config.head;
  head.hidden = encoder.hidden;
  head.classes = dataset.label_space.size();

  std::vector<std::optional<RunResult>> results(config.repeats);
  std::vector<std::exception_ptr> errors(config.repeats);
  auto run_one = [&](std::size_t i) {
    try {
      RunConfig run = config.run;
      run.seed = config.run.seed + i;
      Model model{vocab, encoder,
                  config.encoder_weights ? config.encoder_weights->clone() : init_encoder_weights(encoder, config.encoder_seed),
                  head, init_head_weights(head, run.seed)};
      results[i] = train(run, dataset, model);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  const auto workers = std::max<std::size_t>(1, std::min(config.parallel, config.repeats));
  if (workers == 1) {
    for (std::size_t i = 0; i < config.repeats; ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (auto i = next.fetch_add(1); i < config.repeats; i = next.fetch_add(1)) run_one(i);
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<RunResult> runs;
  for (auto& r : results) runs.push_back(std::move(*r));
  return aggregate(std::move(runs));
}

}  // namespace febench
