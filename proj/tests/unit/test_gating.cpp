#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "../support/test_util.hpp"
#include "gnap/gating.hpp"

using namespace gnap;
using gnap::testing::random_tensor;

namespace {

double open_frequency(double a_open, double a_closed, double tau, std::size_t n, std::uint64_t seed) {
  GateSet<double> gates(Granularity::weight, Shape{n}, 1, tau);
  for (std::size_t i = 0; i < n; ++i) gates.set_logits(i, a_open, a_closed);
  Rng rng(seed);
  Graph<double> g;
  const Var m = sample_gates<double>(g, gates, rng);
  double open = 0;
  for (double v : g.value(m).values()) open += v;
  return open / static_cast<double>(n);
}

}  // namespace

TEST_CASE("sample_gates: sampling law") {
  CHECK(open_frequency(20, -20, 1.0, 10000, 1) == 1.0);
  for (double tau : {0.5, 1.0, 2.0, 5.0}) CHECK(std::abs(open_frequency(0.3, 0.3, tau, 10000, 2) - 0.5) <= 0.02);
  CHECK(open_probability(2.1972246, 0.0) == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(std::abs(open_frequency(2.1972246, 0, 1.0, 10000, 3) - 0.9) <= 0.02);
}

TEST_CASE("sample_gates: hard value and straight-through slope follow the relaxed sample") {
  const double tau = 0.7;
  GateSet<double> gates(Granularity::weight, Shape{200}, 1, tau);
  Rng init(4);
  for (std::size_t i = 0; i < 200; ++i) gates.set_logits(i, init.uniform(-2, 2), init.uniform(-2, 2));

  Rng rng(5);
  Graph<double> g;
  const Var m = sample_gates<double>(g, gates, rng);
  g.backward(sum<double>(g, m));

  Rng replay(5);
  const auto a = gates.logits.tensor.values();
  const auto da = gates.logits.tensor.grad();
  for (std::size_t i = 0; i < 200; ++i) {
    const double go = -std::log(-std::log(replay.uniform_open()));
    const double gc = -std::log(-std::log(replay.uniform_open()));
    const double y = 1.0 / (1.0 + std::exp(-(a[2 * i] + go - a[2 * i + 1] - gc) / tau));
    CHECK(g.value(m)[i] == (y > 0.5 ? 1.0 : 0.0));
    CHECK(gates.last_sample[i] == (y > 0.5 ? 1 : 0));
    CHECK(da[2 * i] == doctest::Approx(y * (1 - y) / tau).epsilon(1e-12));
    CHECK(da[2 * i + 1] == doctest::Approx(-y * (1 - y) / tau).epsilon(1e-12));
  }
}

TEST_CASE("deterministic_mask") {
  GateSet<double> gates(Granularity::weight, Shape{3}, 1);
  gates.set_logits(0, 0.4, 0.4);
  gates.set_logits(1, 20, -20);
  gates.set_logits(2, 2.1972246, 0);
  auto m = deterministic_mask(gates, 0.5);
  CHECK(m[0] == 0.0);  // p == gamma is closed
  CHECK(deterministic_mask(gates, 0.99)[1] == 1.0);
  CHECK(deterministic_mask(gates, 0.89)[2] == 1.0);
  CHECK(deterministic_mask(gates, 0.91)[2] == 0.0);
}

TEST_CASE("apply_gates") {
  Rng rng(6);
  const auto w = random_tensor({2, 3, 3, 3}, rng);
  const auto x = random_tensor({1, 3, 5, 5}, rng);
  const auto bias = random_tensor({2}, rng);

  Graph<double> g;
  const Var wv = g.constant(w);
  const Var ones = apply_gates<double>(g, wv, g.constant(Tensor<double>(w.shape(), 1.0)), Granularity::weight);
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(g.value(ones)[i] == w[i]);

  const Var zeros = apply_gates<double>(g, wv, g.constant(Tensor<double>(w.shape())), Granularity::weight);
  for (double v : g.value(zeros).values()) CHECK(v == 0.0);
  const Var out = conv2d<double>(g, g.constant(x), zeros, g.constant(bias), 1, 1);
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t p = 0; p < 25; ++p) CHECK(g.value(out)[o * 25 + p] == bias[o]);

  // structured: zero the kernel (o=1, i=2) through its gate
  Tensor<double> kmask(Shape{2, 3}, 1.0);
  kmask[1 * 3 + 2] = 0.0;
  const Var gated = apply_gates<double>(g, wv, g.constant(kmask), Granularity::kernel);
  auto manual = w;
  for (std::size_t e = 0; e < 9; ++e) manual[(1 * 3 + 2) * 9 + e] = 0.0;
  const Var y1 = conv2d<double>(g, g.constant(x), gated, g.constant(bias), 1, 1);
  const Var y2 = conv2d<double>(g, g.constant(x), g.constant(manual), g.constant(bias), 1, 1);
  for (std::size_t i = 25; i < 50; ++i) CHECK(g.value(y1)[i] == g.value(y2)[i]);

  CHECK_THROWS_AS(apply_gates<double>(g, wv, g.constant(Tensor<double>(Shape{2, 3})), Granularity::weight), ShapeError);
  CHECK_THROWS_AS(apply_gates<double>(g, wv, g.constant(Tensor<double>(w.shape())), Granularity::kernel), ShapeError);
}

TEST_CASE("straight-through weight gradients") {
  Rng rng(8);
  auto w = random_tensor({6}, rng);
  const auto x = random_tensor({6}, rng);
  GateSet<double> gates(Granularity::weight, Shape{6}, 1);
  for (std::size_t i = 0; i < 6; ++i) gates.set_logits(i, rng.uniform(-1, 1), rng.uniform(-1, 1));
  Rng sampler(9);
  Graph<double> g;
  const Var m = sample_gates<double>(g, gates, sampler);
  const Var loss = sum<double>(g, mul<double>(g, apply_gates<double>(g, g.leaf(w), m, Granularity::weight), g.constant(x)));
  g.backward(loss);
  for (std::size_t i = 0; i < 6; ++i) CHECK(w.grad()[i] == (gates.last_sample[i] ? x[i] : 0.0));
}

TEST_CASE("sparsity_loss") {
  Graph<double> g;
  const Var closed = g.constant(Tensor<double>(Shape{50}));
  const Var none[] = {closed};
  CHECK(g.value(sparsity_loss<double>(g, none, 0.3))[0] == 0.0);

  const Var a = g.constant(Tensor<double>(Shape{600}, 1.0));
  const Var b = g.constant(Tensor<double>(Shape{20, 20}, 1.0));
  const Var open[] = {a, b};
  CHECK(g.value(sparsity_loss<double>(g, open, 0.5e-7))[0] == doctest::Approx(5e-5).epsilon(1e-12));
  CHECK_THROWS_AS(sparsity_loss<double>(g, open, -1.0), std::invalid_argument);
}

TEST_CASE("sparsity_loss: raising a_open raises the relaxed sparsity term") {
  const double alpha = 0.25, tau = 1.0;
  GateSet<double> gates(Granularity::weight, Shape{40}, 1, tau);
  Rng init(10);
  for (std::size_t i = 0; i < 40; ++i) gates.set_logits(i, init.uniform(-2, 2), init.uniform(-2, 2));
  Rng rng(11);
  Graph<double> g;
  const Var m = sample_gates<double>(g, gates, rng);
  const Var ms[] = {m};
  g.backward(sparsity_loss<double>(g, ms, alpha));
  const auto da = gates.logits.tensor.grad();

  // finite difference of the relaxed term alpha * sum(y) under the same noise
  auto relaxed = [&](std::size_t gate, double delta) {
    Rng replay(11);
    double total = 0;
    for (std::size_t i = 0; i < 40; ++i) {
      const double go = -std::log(-std::log(replay.uniform_open()));
      const double gc = -std::log(-std::log(replay.uniform_open()));
      const double ao = gates.logits.tensor[2 * i] + (i == gate ? delta : 0.0);
      total += 1.0 / (1.0 + std::exp(-(ao + go - gates.logits.tensor[2 * i + 1] - gc) / tau));
    }
    return alpha * total;
  };
  for (std::size_t i = 0; i < 40; ++i) {
    const double fd = (relaxed(i, 1e-6) - relaxed(i, -1e-6)) / 2e-6;
    CHECK(da[2 * i] >= 0.0);
    CHECK(fd >= 0.0);
    CHECK(da[2 * i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("count_links_and_weights") {
  GateSet<double> u(Granularity::weight, Shape{10000}, 1);
  for (std::size_t i = 6154; i < 10000; ++i) u.set_logits(i, -20, 20);
  const GateSet<double>* us[] = {&u};
  CHECK(count_links_and_weights<double>(us, 0.5) == LinkCount{6154, 6154});

  GateSet<double> k(Granularity::kernel, Shape{4, 5}, 9);
  for (std::size_t i = 10; i < 20; ++i) k.set_logits(i, -20, 20);
  const GateSet<double>* ks[] = {&k};
  CHECK(count_links_and_weights<double>(ks, 0.5) == LinkCount{10, 90});

  GateSet<double> k5(Granularity::kernel, Shape{5, 1}, 9);
  GateSet<double> fc(Granularity::weight, Shape{7, 1}, 1);
  const GateSet<double>* mixed[] = {&k5, &fc};
  CHECK(count_links_and_weights<double>(mixed, 0.5) == LinkCount{12, 52});
}

TEST_CASE("gate shapes per granularity") {
  CHECK(gate_shape_for({4, 3, 3, 3}, Granularity::kernel) == Shape{4, 3});
  CHECK(gate_area_for({4, 3, 3, 3}, Granularity::kernel) == 9);
  CHECK(gate_shape_for({4, 3, 3, 3}, Granularity::weight) == Shape{4, 3, 3, 3});
  CHECK(gate_shape_for({10, 20}, Granularity::kernel) == Shape{10, 20});  // fc stays per-weight
  GateSet<double> fresh(Granularity::weight, Shape{5}, 1);
  for (std::size_t i = 0; i < 5; ++i) CHECK(fresh.probability(i) == doctest::Approx(0.9).epsilon(1e-12));
  CHECK_THROWS(GateSet<double>(Granularity::weight, Shape{1}, 1, 0.0));
}
