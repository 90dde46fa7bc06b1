#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <set>

#include "doctest.h"
#include "febench/synth.hpp"
#include "febench/training.hpp"
#include "test_util.hpp"

using namespace febench;

namespace {

Dataset small_dataset(TaskKind kind = TaskKind::single_label, std::size_t train = 12, std::uint64_t seed = 3) {
  SyntheticSpec s;
  s.label_model = kind;
  s.classes = kind == TaskKind::single_label ? 2 : 3;
  s.density = 1.5;
  s.train = train;
  s.test = 6;
  s.vocab = 20;
  s.length = 6;
  s.seed = seed;
  return make_synthetic(s);
}

Model small_model(const Dataset& ds, std::uint64_t seed = 1, std::size_t layers = 1) {
  Model m;
  m.vocab = dataset_vocab(ds, 1000);
  m.encoder.name = "small";
  m.encoder.hidden = 16;
  m.encoder.heads = 2;
  m.encoder.layers = layers;
  m.encoder.vocab_size = m.vocab.size();
  m.encoder.max_positions = 32;
  m.encoder_weights = init_encoder_weights(m.encoder, 7);
  m.head.kernel_sizes = {2, 3};
  m.head.filters = 8;
  m.head.hidden = 16;
  m.head.classes = ds.label_space.size();
  m.head_weights = init_head_weights(m.head, seed);
  return m;
}

RunConfig small_run(TrainMode mode, std::size_t epochs = 2) {
  RunConfig c;
  c.mode = mode;
  c.epochs = epochs;
  c.batch_size = 5;
  c.max_len = 16;
  c.seed = 11;
  c.learning_rate = 1e-3;
  return c;
}

double example_loss(const Model& m, const LabeledExample& ex, const Dataset& ds, TaskKind task, std::size_t max_len) {
  Tape<float> tape(nullptr, false);
  auto logits = forward_logits(tape, m.encoder, m.encoder_weights, m.head, m.head_weights, encode(ex.text, m.vocab, max_len));
  auto batch = tape.reshape(logits, {1, m.head.classes});
  std::vector<LabelSet> golds{ds.label_indices(ex)};
  return compute_loss(tape, batch, std::span<const LabelSet>(golds), task).item();
}

}  // namespace

TEST_CASE("single-label loss on uniform logits is ln C") {
  Tape<double> tape;
  auto logits = Tensor<double>::from({2, 4}, std::vector<double>(8, 0.7));
  std::vector<std::size_t> t{1, 3};
  CHECK(compute_loss(tape, logits, std::span<const std::size_t>(t)).item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("multi-label loss at logit 0 is ln 2") {
  Tape<double> tape;
  auto logits = Tensor<double>::from({1, 1}, {0.0});
  std::vector<std::vector<double>> t{{1.0}};
  CHECK(compute_loss(tape, logits, std::span<const std::vector<double>>(t)).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("losses fall monotonically towards 0 as the margin grows") {
  double prev_single = 1e9, prev_multi = 1e9;
  for (double margin : {0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0}) {
    Tape<double> tape;
    std::vector<std::size_t> t{0};
    auto single = compute_loss(tape, Tensor<double>::from({1, 3}, {margin, 0.0, 0.0}), std::span<const std::size_t>(t)).item();
    std::vector<std::vector<double>> mt{{1.0, 0.0}};
    auto multi =
        compute_loss(tape, Tensor<double>::from({1, 2}, {margin, -margin}), std::span<const std::vector<double>>(mt)).item();
    CHECK(single < prev_single);
    CHECK(multi < prev_multi);
    CHECK(std::isfinite(single));
    prev_single = single;
    prev_multi = multi;
  }
  CHECK(prev_single < 1e-15);
  CHECK(prev_multi < 1e-15);
}

TEST_CASE("loss target errors") {
  Tape<double> tape;
  auto logits = Tensor<double>::zeros({1, 3});
  std::vector<std::size_t> bad{3};
  CHECK_THROWS(compute_loss(tape, logits, std::span<const std::size_t>(bad)));
  std::vector<std::vector<double>> short_row{{1.0, 0.0}};
  CHECK_THROWS(compute_loss(tape, logits, std::span<const std::vector<double>>(short_row)));
  std::vector<LabelSet> two{{0, 1}};
  CHECK_THROWS(compute_loss(tape, logits, std::span<const LabelSet>(two), TaskKind::single_label));
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
  ParameterSet<double> p;
  auto w = Tensor<double>::from({3}, {1.0, -2.0, 0.5}, true);
  p.add("w", w);
  AdamState<double> s;
  std::vector<double> g(3, 0.0);
  GradientMap<double> grads{{w.id(), g}};
  adam_step(p, grads, s, 5e-5);
  CHECK(std::vector<double>(w.data().begin(), w.data().end()) == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("first adam step on a scalar") {
  ParameterSet<double> p;
  auto w = Tensor<double>::from({1}, {1.0}, true);
  p.add("w", w);
  AdamState<double> s;
  std::vector<double> g{1.0};
  adam_step(p, {{w.id(), g}}, s, 5e-5);
  // m_hat = 1, v_hat = 1
  CHECK(w.item() == doctest::Approx(1.0 - 5e-5 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(s.step_count() == 1);
  const double before = w.item();
  std::vector<double> g2{0.5};
  adam_step(p, {{w.id(), g2}}, s, 5e-5);
  CHECK(s.step_count() == 2);
  const double m_hat = (0.9 * 0.1 + 0.1 * 0.5) / (1 - 0.9 * 0.9);
  const double v_hat = (0.999 * 0.001 + 0.001 * 0.25) / (1 - 0.999 * 0.999);
  CHECK(before - w.item() == doctest::Approx(5e-5 * m_hat / (std::sqrt(v_hat) + 1e-8)).epsilon(1e-12));
}

TEST_CASE("parameters without gradients get no adam state and stay put") {
  ParameterSet<double> p;
  auto a = Tensor<double>::from({2}, {1.0, 2.0}, true);
  auto frozen = Tensor<double>::from({2}, {3.0, 4.0}, false);
  p.add("a", a);
  p.add("frozen", frozen);
  AdamState<double> s;
  std::vector<double> g{0.5, -0.5};
  adam_step(p, {{a.id(), g}}, s, 0.1);
  CHECK(s.has_state(a.id()));
  CHECK_FALSE(s.has_state(frozen.id()));
  CHECK(s.state_bytes() == 2 * 2 * sizeof(double));
  CHECK(frozen.data()[0] == 3.0);
  std::vector<double> wrong{1.0};
  CHECK_THROWS_AS(adam_step(p, {{a.id(), wrong}}, s, 0.1), ShapeError);
}

TEST_CASE("defaults and the reference epoch table") {
  CHECK(default_batch_size(TrainMode::FE) == 50);
  CHECK(default_batch_size(TrainMode::FiT) == 40);
  CHECK(kDefaultLearningRate == 5e-5);
  CHECK(reference_epochs("AGNews", TrainMode::FE) == 20u);
  CHECK(reference_epochs("agnews", TrainMode::FiT) == 10u);
  CHECK(reference_epochs("20NEWS", TrainMode::FE) == 300u);
  CHECK(reference_epochs("Ohsumed", TrainMode::FiT) == 80u);
  CHECK(reference_epochs("BGC_EN", TrainMode::FE) == 40u);
  CHECK_FALSE(reference_epochs("unknown", TrainMode::FE).has_value());
  RunConfig c;
  c.epochs = 0;
  CHECK_THROWS(c.validate());
  c.epochs = 1;
  c.learning_rate = 0;
  CHECK_THROWS(c.validate());
  c.learning_rate = 1e-3;
  c.mode = TrainMode::FiT;
  c.cache_frozen_features = true;
  CHECK_THROWS(c.validate());
}

TEST_CASE("shuffle order depends only on seed and epoch") {
  auto a = epoch_order(50, 9, 2);
  CHECK(a == epoch_order(50, 9, 2));
  CHECK(a != epoch_order(50, 9, 3));
  CHECK(a != epoch_order(50, 10, 2));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 50; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("mean and population std") {
  std::vector<double> v{1, 2, 3};
  auto m = mean_std(v);
  CHECK(m.mean == 2.0);
  CHECK(m.std == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-14));
  std::vector<double> one{0.7};
  CHECK(mean_std(one).std == 0.0);
  std::vector<double> same{0.4, 0.4, 0.4};
  CHECK(mean_std(same).std == 0.0);
  CHECK_THROWS(mean_std(std::vector<double>{}));
}

TEST_CASE("training is deterministic") {
  auto ds = small_dataset();
  auto m1 = small_model(ds), m2 = small_model(ds);
  auto r1 = train(small_run(TrainMode::FiT), ds, m1);
  auto r2 = train(small_run(TrainMode::FiT), ds, m2);
  for (std::size_t e = 0; e < r1.epochs.size(); ++e) {
    CHECK(r1.epochs[e].train_loss == r2.epochs[e].train_loss);
    CHECK(r1.epochs[e].test.accuracy == r2.epochs[e].test.accuracy);
  }
  CHECK(bitwise_equal(m1.encoder_weights, m2.encoder_weights));
  CHECK(bitwise_equal(m1.head_weights, m2.head_weights));
  CHECK(r1.peak_bytes == r2.peak_bytes);
  CHECK(r1.epochs.size() == 2);
  CHECK(r1.timing.total_seconds >= r1.timing.epoch_seconds[0] + r1.timing.epoch_seconds[1]);
  CHECK_NOTHROW(r1.timing.validate());
}

TEST_CASE("FE leaves encoder bytes untouched, FiT changes them") {
  auto ds = small_dataset();
  auto fe = small_model(ds);
  auto before = fe.encoder_weights.clone();
  auto head_before = fe.head_weights.clone();
  train(small_run(TrainMode::FE, 3), ds, fe);
  CHECK(bitwise_equal(fe.encoder_weights, before));
  CHECK_FALSE(bitwise_equal(fe.head_weights, head_before));
  auto fit = small_model(ds);
  train(small_run(TrainMode::FiT, 1), ds, fit);
  CHECK_FALSE(bitwise_equal(fit.encoder_weights, before));
}

TEST_CASE("ledger categories follow the trainable set") {
  auto ds = small_dataset();
  auto idx = [](MemoryCategory c) { return static_cast<std::size_t>(c); };
  auto fe_model = small_model(ds);
  auto fe = train(small_run(TrainMode::FE), ds, fe_model);
  const auto head_bytes = 4 * fe.head_params;
  const auto enc_bytes = 4 * fe.encoder_params;
  CHECK(fe.category_peaks[idx(MemoryCategory::parameters)] == head_bytes + enc_bytes);
  CHECK(fe.category_peaks[idx(MemoryCategory::gradients)] == head_bytes);
  CHECK(fe.category_peaks[idx(MemoryCategory::optimizer_state)] == 2 * head_bytes);

  auto fit_model = small_model(ds);
  auto fit = train(small_run(TrainMode::FiT), ds, fit_model);
  CHECK(fit.category_peaks[idx(MemoryCategory::parameters)] == head_bytes + enc_bytes);
  CHECK(fit.category_peaks[idx(MemoryCategory::gradients)] == head_bytes + enc_bytes);
  CHECK(fit.category_peaks[idx(MemoryCategory::optimizer_state)] == 2 * (head_bytes + enc_bytes));
  CHECK(fit.peak_bytes > fe.peak_bytes);
  std::uint64_t sum = 0;
  for (auto b : fit.breakdown_at_peak) sum += b;
  CHECK(sum == fit.peak_bytes);
}

TEST_CASE("one small step lowers the loss of its example") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    auto task = seed % 2 ? TaskKind::multi_label : TaskKind::single_label;
    auto full = small_dataset(task, 12, seed);
    Dataset one = full;
    one.train = {full.train[0]};
    auto m = small_model(full, seed);
    auto mode = seed % 4 < 2 ? TrainMode::FE : TrainMode::FiT;
    const double before = example_loss(m, one.train[0], full, task, 16);
    auto run = small_run(mode, 1);
    run.learning_rate = 1e-6;
    train(run, one, m);
    const double after = example_loss(m, one.train[0], full, task, 16);
    CHECK(after < before);
  }
}

TEST_CASE("cached frozen features give bit-identical results") {
  for (auto task : {TaskKind::single_label, TaskKind::multi_label}) {
    auto ds = small_dataset(task);
    auto a = small_model(ds), b = small_model(ds);
    auto plain = small_run(TrainMode::FE, 3);
    auto cached = plain;
    cached.cache_frozen_features = true;
    auto ra = train(plain, ds, a);
    auto rb = train(cached, ds, b);
    for (std::size_t e = 0; e < 3; ++e) {
      CHECK(ra.epochs[e].train_loss == rb.epochs[e].train_loss);
      CHECK(ra.epochs[e].test.f1 == rb.epochs[e].test.f1);
    }
    CHECK(bitwise_equal(a.head_weights, b.head_weights));
  }
}

TEST_CASE("texts shorter than the widest kernel still train") {
  Dataset ds;
  ds.name = "short";
  ds.label_space = {"a", "b"};
  ds.train = {{"x", {"a"}}, {"y", {"b"}}, {"x y", {"a"}}};
  ds.test = {{"y", {"b"}}};
  auto m = small_model(ds);
  m.head.kernel_sizes = {3, 6};
  m.head_weights = init_head_weights(m.head, 1);
  CHECK_NOTHROW(train(small_run(TrainMode::FE, 1), ds, m));
}

TEST_CASE("non-finite loss aborts with epoch and batch") {
  auto ds = small_dataset();
  auto m = small_model(ds);
  for (auto& v : Tensor<float>(m.head_weights.at("head.projection.bias")).mutable_data())
    v = std::numeric_limits<float>::quiet_NaN();
  try {
    train(small_run(TrainMode::FE), ds, m);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.epoch() == 1);
    CHECK(e.batch() == 1);
  }
}

TEST_CASE("loss is finite for all-zero weights") {
  auto ds = small_dataset(TaskKind::multi_label);
  auto m = small_model(ds);
  for (auto* set : {&m.encoder_weights, &m.head_weights})
    for (const auto& [name, t] : set->entries())
      for (auto& v : Tensor<float>(t).mutable_data()) v = 0.0f;
  auto r = train(small_run(TrainMode::FiT, 1), ds, m);
  CHECK(std::isfinite(r.epochs[0].train_loss));
}

TEST_CASE("repeats use consecutive seeds and do not depend on parallelism") {
  auto ds = small_dataset();
  ExperimentConfig ex;
  ex.run = small_run(TrainMode::FE, 2);
  ex.encoder = small_model(ds).encoder;
  ex.head.kernel_sizes = {2, 3};
  ex.head.filters = 8;
  ex.repeats = 3;
  auto serial = run_experiment(ex, ds);
  ex.parallel = 3;
  auto parallel = run_experiment(ex, ds);
  CHECK(serial.seeds == std::vector<std::uint64_t>{11, 12, 13});
  CHECK(parallel.seeds == serial.seeds);
  CHECK(serial.accuracy.mean == parallel.accuracy.mean);
  CHECK(serial.f1.std == parallel.f1.std);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(serial.runs[i].epochs.back().train_loss == parallel.runs[i].epochs.back().train_loss);
  CHECK(serial.mean_epoch_seconds.size() == 2);
}

TEST_CASE("aggregate over forced metrics") {
  std::vector<RunResult> runs(3);
  for (std::size_t i = 0; i < 3; ++i) {
    runs[i].seed = i;
    runs[i].final_metrics.accuracy = double(i + 1);
    runs[i].timing = {{1.0}, 2.0};
  }
  auto agg = aggregate(runs);
  CHECK(agg.accuracy.mean == 2.0);
  CHECK(agg.accuracy.std == doctest::Approx(0.8165).epsilon(1e-4));
  std::vector<RunResult> same(3);
  for (auto& r : same) r.final_metrics.f1 = 0.5, r.timing = {{1.0}, 2.0};
  CHECK(aggregate(same).f1.std == 0.0);
}
