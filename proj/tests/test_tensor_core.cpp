#include <cmath>
#include <cstring>
#include <random>
#include <set>

#include "doctest.h"
#include "febench/grad_check.hpp"
#include "febench/tape.hpp"
#include "grad_cases.hpp"
#include "test_util.hpp"

using namespace febench;
using testutil::random_tensor;

TEST_CASE("tensor construction checks shape against data") {
  auto t = Tensor<float>::from({2, 3}, std::vector<float>(6, 1.0f));
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS_AS(Tensor<float>::from({2, 3}, std::vector<float>(5)), ShapeError);
  CHECK_THROWS_AS(Tensor<float>::from({0, 3}, {}), ShapeError);
  CHECK(Tensor<double>::scalar(2.5).item() == 2.5);
}

TEST_CASE("conv1d_valid output length is positions - k + 1") {
  Tape<float> tape;
  auto x = Tensor<float>::zeros({200, 8});
  auto w = Tensor<float>::zeros({3, 8, 100});
  auto b = Tensor<float>::zeros({100});
  auto y = tape.conv1d_valid(x, w, b);
  CHECK(y.shape() == Shape{198, 100});
}

TEST_CASE("conv1d_valid rejects kernels longer than the sequence") {
  Tape<float> tape;
  auto x = Tensor<float>::zeros({2, 4});
  auto w = Tensor<float>::zeros({3, 4, 1});
  CHECK_THROWS_AS(tape.conv1d_valid(x, w), KernelTooLongError);
}

TEST_CASE("relu forward") {
  Tape<float> tape;
  auto y = tape.relu(Tensor<float>::from({3}, {-1.0f, 0.0f, 2.0f}));
  CHECK(std::vector<float>(y.data().begin(), y.data().end()) == std::vector<float>{0.0f, 0.0f, 2.0f});
}

TEST_CASE("max_over_time takes the per-channel maximum") {
  Tape<float> tape;
  auto y = tape.max_over_time(Tensor<float>::from({3, 2}, {1, 5, 3, 2, 4, 4}));
  CHECK(y.shape() == Shape{2});
  CHECK(y.data()[0] == 4.0f);
  CHECK(y.data()[1] == 5.0f);
}

TEST_CASE("shape mismatch names the primitive") {
  Tape<float> tape;
  try {
    tape.matmul(Tensor<float>::zeros({2, 3}), Tensor<float>::zeros({4, 2}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
    CHECK(std::string(e.what()).find("[4 x 2]") != std::string::npos);
  }
}

TEST_CASE("backward of sum(relu(x))") {
  Tape<double> tape;
  auto x = Tensor<double>::from({2}, {-1.0, 2.0}, true);
  auto grads = tape.backward(tape.sum(tape.relu(x)));
  REQUIRE(grads.contains(x.id()));
  CHECK(grads.at(x.id())[0] == 0.0);
  CHECK(grads.at(x.id())[1] == 1.0);
}

TEST_CASE("relu gradient at exactly zero is zero") {
  Tape<double> tape;
  auto x = Tensor<double>::from({1}, {0.0}, true);
  tape.backward(tape.sum(tape.relu(x)));
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("product rule on scalars") {
  Tape<double> tape;
  auto x = Tensor<double>::from({1}, {3.0}, true);
  auto y = Tensor<double>::from({1}, {4.0}, true);
  auto grads = tape.backward(tape.sum(tape.mul(x, y)));
  CHECK(grads.at(x.id())[0] == 4.0);
  CHECK(grads.at(y.id())[0] == 3.0);
}

TEST_CASE("second backward without a new forward is rejected") {
  Tape<double> tape;
  auto x = Tensor<double>::from({1}, {3.0}, true);
  auto loss = tape.sum(tape.mul(x, x));
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), StaleRecordError);
  auto again = tape.sum(tape.mul(x, x));
  CHECK_NOTHROW(tape.backward(again));
}

TEST_CASE("non-scalar loss is rejected") {
  Tape<double> tape;
  auto x = Tensor<double>::from({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(tape.backward(tape.relu(x)), NonScalarError);
}

TEST_CASE("frozen tensors and frozen-only ancestors are absent from the gradient map") {
  Tape<double> tape;
  std::mt19937_64 rng(1);
  auto frozen_w = random_tensor({3, 3}, rng, false);
  auto frozen_b = random_tensor({3}, rng, false);
  auto x = random_tensor({2, 3}, rng, false);
  auto head = random_tensor({3, 1}, rng, true);
  auto h = tape.tanh(tape.linear(x, frozen_w, frozen_b));
  CHECK(tape.size() == 0);
  CHECK_FALSE(h.requires_grad());
  auto grads = tape.backward(tape.sum(tape.matmul(h, head)));
  CHECK(grads.size() == 1);
  CHECK(grads.contains(head.id()));
  CHECK_FALSE(frozen_w.has_grad());
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("record is topologically ordered") {
  Tape<double> tape;
  std::mt19937_64 rng(2);
  auto a = random_tensor({2, 2}, rng);
  auto b = random_tensor({2, 2}, rng);
  auto c = tape.matmul(a, b);
  auto d = tape.relu(c);
  tape.sum(tape.add(d, c));
  auto rec = tape.record();
  std::set<TensorId> produced{a.id(), b.id()};
  for (const auto& e : rec) {
    for (auto in : e.inputs) CHECK(produced.contains(in));
    produced.insert(e.output);
  }
}

TEST_CASE("grad_check of the identity is exact") {
  std::mt19937_64 rng(3);
  auto x = random_tensor({5}, rng);
  auto r = grad_check([](Tape<double>& t, const auto& in) { return t.sum(in[0]); }, {x});
  CHECK(r.max_relative_error < 1e-10);
  CHECK(r.coordinates == 5);
}

TEST_CASE("grad_check rejects non-scalar programs and bad eps") {
  std::mt19937_64 rng(4);
  auto x = random_tensor({3}, rng);
  CHECK_THROWS_AS(grad_check([](Tape<double>& t, const auto& in) { return t.relu(in[0]); }, {x}), NonScalarError);
  CHECK_THROWS_AS(grad_check([](Tape<double>& t, const auto& in) { return t.sum(in[0]); }, {x}, 0.0),
                  std::invalid_argument);
}

TEST_CASE("grad_check on a linear layer with 4x3 weights") {
  std::mt19937_64 rng(5);
  auto x = random_tensor({2, 4}, rng);
  auto w = random_tensor({4, 3}, rng);
  auto b = random_tensor({3}, rng);
  auto r = grad_check(
      [](Tape<double>& t, const auto& in) { return testutil::weighted_sum(t, t.linear(in[0], in[1], in[2]), 5); },
      {x, w, b});
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("grad_check on two-head attention over five tokens") {
  std::mt19937_64 rng(6);
  std::vector<Tensor<double>> qkv{random_tensor({5, 4}, rng), random_tensor({5, 4}, rng), random_tensor({5, 4}, rng)};
  auto r = grad_check(
      [](Tape<double>& t, const auto& in) { return testutil::weighted_sum(t, t.attention(in[0], in[1], in[2], 2), 6); },
      qkv);
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("every primitive passes finite differences at 10 seeded points") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (auto& c : gradcases::primitive_cases(seed)) {
      CAPTURE(c.name);
      CAPTURE(seed);
      CHECK(grad_check(c.program, c.point).max_relative_error < 1e-4);
    }
  }
}

TEST_CASE("attention ignores masked keys") {
  std::mt19937_64 rng(7);
  auto q = random_tensor({5, 4}, rng, false);
  auto k = random_tensor({5, 4}, rng, false);
  auto v = random_tensor({5, 4}, rng, false);
  Tape<double> tape;
  auto base = tape.attention(q, k, v, 2, 3);
  auto k2 = k.clone();
  auto v2 = v.clone();
  for (std::size_t i = 3 * 4; i < 20; ++i) {
    k2.mutable_data()[i] = 100.0;
    v2.mutable_data()[i] = -50.0;
  }
  auto changed = tape.attention(q, k2, v2, 2, 3);
  CHECK(std::memcmp(base.data().data(), changed.data().data(), 20 * sizeof(double)) == 0);
}

TEST_CASE("concat then max_over_time equals the max of per-part maxima") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    auto a = random_tensor({3, 4}, rng, false);
    auto b = random_tensor({5, 4}, rng, false);
    Tape<double> tape;
    std::vector<Tensor<double>> parts{a, b};
    auto joint = tape.max_over_time(tape.concat(parts));
    auto ma = tape.max_over_time(a);
    auto mb = tape.max_over_time(b);
    for (std::size_t c = 0; c < 4; ++c) CHECK(joint.data()[c] == std::max(ma.data()[c], mb.data()[c]));
  }
}

TEST_CASE("forward results are bitwise deterministic") {
  std::mt19937_64 rng(9);
  auto x = Tensor<float>::from({17, 9}, std::vector<float>(153));
  auto w = Tensor<float>::from({9, 13}, std::vector<float>(117));
  std::normal_distribution<float> d;
  for (auto& v : x.mutable_data()) v = d(rng);
  for (auto& v : w.mutable_data()) v = d(rng);
  Tape<float> t1, t2;
  auto a = t1.gelu(t1.matmul(x, w));
  auto b = t2.gelu(t2.matmul(x, w));
  CHECK(std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0);
}

TEST_CASE("tape activations are ledgered and released after backward") {
  MemoryLedger ledger;
  {
    Tape<double> tape(&ledger);
    std::mt19937_64 rng(10);
    auto x = random_tensor({4, 4}, rng);
    auto loss = tape.sum(tape.gelu(tape.matmul(x, x)));
    CHECK(ledger.current_of(MemoryCategory::activations) > 0);
    tape.backward(loss);
  }
  CHECK(ledger.current() == 0);
  CHECK(ledger.peak() > 0);
}
