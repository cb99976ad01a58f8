#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "../support/test_util.hpp"
#include "gnap/grow.hpp"
#include "gnap/network.hpp"

using namespace gnap;
using gnap::testing::random_tensor;
using gnap::testing::rel_error;

namespace {

NetConfig small_config(std::size_t side = 8, std::size_t channels = 1) {
  NetConfig c;
  c.in_channels = channels;
  c.height = side;
  c.width = side;
  return c;
}

Tensor<double> logits_of(Network<double>& net, const Tensor<double>& x, ForwardMode mode) {
  Graph<double> g(false);
  return g.value(net.forward(g, x, mode).logits);
}

std::vector<double> vec(const Tensor<double>& t) { return {t.values().begin(), t.values().end()}; }

void set_all_gates(Network<double>& net, double a_open, double a_closed) {
  for (auto& l : net.layers()) {
    for (auto& b : l.inputs)
      for (std::size_t i = 0; i < b.gates.count(); ++i) b.gates.set_logits(i, a_open, a_closed);
    for (std::size_t i = 0; i < l.head.gates.count(); ++i) l.head.gates.set_logits(i, a_open, a_closed);
  }
}

void randomize_gates(Network<double>& net, Rng& rng) {
  net.for_each_parameter([&](Parameter<double>& p, ParamKind kind) {
    if (kind == ParamKind::gate)
      for (auto& v : p.tensor.storage()) v = rng.uniform(-2, 2);
  });
}

// Independent count: every (destination channel, source channel) pair that
// the connectivity rule admits, times the kernel area, plus fc gates.
std::size_t reference_gate_count(const std::vector<std::vector<std::size_t>>& blocks, std::size_t in_channels,
                                 std::size_t classes, std::size_t area, bool global) {
  std::vector<std::pair<std::size_t, std::size_t>> sources{{0, in_channels}};  // (block, width)
  std::size_t total = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b)
    for (std::size_t w : blocks[b]) {
      for (auto [sb, sw] : sources)
        if (global || b - sb <= 1) total += w * sw * area;
      total += classes * w;
      sources.emplace_back(b, w);
    }
  return total;
}

}  // namespace

TEST_CASE("Architecture parsing") {
  const auto a = Architecture::parse("10|10|fc10");
  CHECK(a.blocks == std::vector<std::vector<std::size_t>>{{10}, {10}});
  CHECK(a.classes == 10);
  CHECK(Architecture::parse("64,64,64|128,128,128|fc100").to_string() == "64,64,64|128,128,128|fc100");
  for (const char* bad : {"", "fc10", "10|10", "10||fc10", "10|x|fc10", "10|0|fc10", "10|fcx", "10,|fc10"})
    CHECK_THROWS_AS(Architecture::parse(bad), std::invalid_argument);
}

TEST_CASE("build_initial: gate counts for the two-block MNIST net") {
  Rng rng(1);
  NetConfig cfg;  // 1x28x28, global, 3x3
  auto net = Network<double>::build_initial(Architecture::parse("10|10|fc10"), cfg, rng);
  // layer 1: 10*1*9 = 90; layer 2: 10*(1+10)*9 = 990; fc: 10*20 = 200
  CHECK(net.gate_count() == 1280);
  CHECK(net.closed_form_gate_count() == 1280);
  CHECK(net.gate_count() == reference_gate_count({{10}, {10}}, 1, 10, 9, true));

  cfg.granularity = Granularity::kernel;
  Rng rng2(1);
  auto structured = Network<double>::build_initial(Architecture::parse("10|10|fc10"), cfg, rng2);
  CHECK(structured.gate_count() == 10 + 110 + 200);
  CHECK(structured.closed_form_gate_count() == 320);

  // initial gates all sit at p = 0.9 and are open at gamma = 0.5
  CHECK(net.count_links(0.5) == LinkCount{1280, 1280});
  CHECK(structured.count_links(0.5) == LinkCount{320, 120 * 9 + 200});
}

TEST_CASE("build_initial: smallest network") {
  Rng rng(2);
  auto net = Network<double>::build_initial(Architecture::parse("1|fc2"), small_config(), rng);
  CHECK(net.layers().size() == 1);
  CHECK(net.layers()[0].inputs.size() == 1);
  CHECK(net.layers()[0].inputs[0].gates.count() == 9);
  CHECK(net.layers()[0].head.gates.count() == 2);
  CHECK(net.gate_count() == 11);
}

TEST_CASE("build_initial: input validation and initial statistics") {
  Rng rng(3);
  Architecture empty_block{{{4}, {}}, 10};
  CHECK_THROWS_AS(Network<double>::build_initial(empty_block, NetConfig{}, rng), std::invalid_argument);
  CHECK_THROWS_AS(Network<double>::build_initial(Architecture{{{4}}, 1}, NetConfig{}, rng), std::invalid_argument);

  auto net = Network<double>::build_initial(Architecture::parse("200|fc10"), NetConfig{}, rng);
  const auto& w = net.layers()[0].inputs[0].weights.tensor;  // fan-in 9 -> sd 1/9
  double s = 0, s2 = 0;
  for (double v : w.values()) s += v, s2 += v * v;
  const double n = static_cast<double>(w.size());
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::sqrt(s2 / n - (s / n) * (s / n)) == doctest::Approx(1.0 / 9).epsilon(0.06));
  for (double b : net.layers()[0].bias.tensor.values()) CHECK(b == 0.0);
}

TEST_CASE("within-block connectivity") {
  Rng rng(4);
  NetConfig cfg = small_config();
  cfg.connectivity = Connectivity::within_block;
  auto net = Network<double>::build_initial(Architecture::parse("2|3|4|fc5"), cfg, rng);
  CHECK(net.layers()[2].inputs.size() == 1);  // block 2 only sees block 1
  CHECK(net.closed_form_gate_count() == reference_gate_count({{2}, {3}, {4}}, 1, 5, 9, false));
  CHECK(net.gate_count() == net.closed_form_gate_count());
}

TEST_CASE("closed form matches the bundle walk under random mutation sequences") {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    Rng rng(100 + seed);
    NetConfig cfg = small_config(8, 1 + seed % 3);
    cfg.granularity = seed % 2 ? Granularity::kernel : Granularity::weight;
    cfg.connectivity = seed % 4 < 2 ? Connectivity::global : Connectivity::within_block;
    auto net = Network<double>::build_initial(Architecture::parse("2,1|3|fc4"), cfg, rng);
    for (int step = 0; step < 10; ++step) {
      const auto op = rng.integer(0, 2);
      if (op == 0) {
        const auto& ls = net.layers();
        const int id = ls[static_cast<std::size_t>(rng.integer(0, static_cast<long>(ls.size()) - 1))].id;
        net.grow_channels(id, static_cast<std::size_t>(rng.integer(1, 3)), rng,
                          [](std::span<const double>, std::size_t m, std::size_t, Rng& r) {
                            std::vector<double> w(m);
                            for (auto& v : w) v = r.normal(0, 0.1);
                            return w;
                          });
      } else if (op == 1) {
        net.add_layer(static_cast<std::size_t>(rng.integer(0, 1)), static_cast<std::size_t>(rng.integer(1, 3)), rng);
      } else {
        randomize_gates(net, rng);
        net.compact(0.3);
      }
      net.validate();
      CHECK(net.gate_count() == net.closed_form_gate_count());
      std::vector<std::vector<std::size_t>> blocks(2);
      for (const auto& l : net.layers()) blocks[l.block].push_back(l.width);
      CHECK(net.gate_count() == reference_gate_count(blocks, cfg.in_channels, 4,
                                                     cfg.granularity == Granularity::kernel ? 1 : 9,
                                                     cfg.connectivity == Connectivity::global));
      const auto y = logits_of(net, random_tensor({2, cfg.in_channels, 8, 8}, rng), ForwardMode::deterministic());
      CHECK(y.shape() == Shape{2, 4});
    }
  }
}

TEST_CASE("forward: gating equivalences") {
  Rng rng(5);
  auto net = Network<double>::build_initial(Architecture::parse("3,2|4|fc5"), small_config(8, 2), rng);
  for (auto& l : net.layers())
    for (auto& b : l.bias.tensor.storage()) b = rng.uniform(-0.2, 0.2);
  const auto x = random_tensor({3, 2, 8, 8}, rng);

  SUBCASE("all gates open equals the ungated twin") {
    set_all_gates(net, 20, -20);
    const auto ungated = logits_of(net, x, ForwardMode::ungated());
    CHECK(vec(logits_of(net, x, ForwardMode::deterministic())) == vec(ungated));
    Graph<double> g;
    Rng sampler(6);
    CHECK(vec(g.value(net.forward(g, x, ForwardMode::stochastic(), &sampler).logits)) == vec(ungated));
  }
  SUBCASE("all gates closed leaves only the fc bias") {
    for (std::size_t c = 0; c < 5; ++c) net.fc_bias().tensor[c] = 0.1 * static_cast<double>(c);
    set_all_gates(net, -20, 20);
    const auto y = logits_of(net, x, ForwardMode::deterministic());
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t c = 0; c < 5; ++c) CHECK(y[n * 5 + c] == doctest::Approx(0.1 * static_cast<double>(c)));
  }
  SUBCASE("closed gates behave like physically zeroed weights") {
    randomize_gates(net, rng);
    auto twin = net;
    for (auto& l : twin.layers()) {
      auto zero = [&](Bundle<double>& b) {
        const auto mask = deterministic_mask(b.gates, 0.5);
        const std::size_t area = b.gates.kernel_area;
        for (std::size_t i = 0; i < b.weights.size(); ++i)
          if (mask[i / area] == 0.0) b.weights.tensor[i] = 0.0;
      };
      for (auto& b : l.inputs) zero(b);
      zero(l.head);
    }
    set_all_gates(twin, 20, -20);
    CHECK(vec(logits_of(net, x, ForwardMode::deterministic())) == vec(logits_of(twin, x, ForwardMode::ungated())));
  }
}

TEST_CASE("forward: rejects incompatible batches") {
  Rng rng(7);
  auto net = Network<double>::build_initial(Architecture::parse("2|2|2|2|fc3"), small_config(), rng);
  Graph<double> g;
  CHECK_THROWS_AS(net.forward(g, Tensor<double>(Shape{1, 2, 8, 8}), ForwardMode::deterministic()), ShapeError);
  CHECK_THROWS_AS(net.forward(g, Tensor<double>(Shape{1, 1, 4, 4}), ForwardMode::deterministic()), ShapeError);
  CHECK_THROWS_AS(net.forward(g, Tensor<double>(Shape{1, 1, 8, 8}), ForwardMode::stochastic()), std::invalid_argument);
}

TEST_CASE("forward: gradients of the whole network match finite differences") {
  for (auto gran : {Granularity::weight, Granularity::kernel}) {
    Rng rng(8);
    NetConfig cfg = small_config(6, 2);
    cfg.granularity = gran;
    auto net = Network<double>::build_initial(Architecture::parse("2,2|3|fc3"), cfg, rng);
    randomize_gates(net, rng);
    net.for_each_parameter([&](Parameter<double>& p, ParamKind kind) {
      if (kind != ParamKind::gate)
        for (auto& v : p.tensor.storage()) v = rng.uniform(-0.6, 0.6);
    });
    const auto x = random_tensor({2, 2, 6, 6}, rng);
    const int labels[] = {0, 2};
    auto loss = [&](Graph<double>& g) {
      return softmax_cross_entropy<double>(g, net.forward(g, x, ForwardMode::deterministic()).logits, labels);
    };
    std::vector<Parameter<double>*> params;
    net.for_each_parameter([&](Parameter<double>& p, ParamKind kind) {
      p.tensor.clear_grad();
      if (kind != ParamKind::gate) params.push_back(&p);
    });
    {
      Graph<double> g;
      g.backward(loss(g));
    }
    double worst = 0;
    const double h = 1e-5;
    for (auto* p : params) {
      const std::vector<double> analytic(p->tensor.grad().begin(), p->tensor.grad().end());
      for (std::size_t i = 0; i < p->size(); ++i) {
        const double saved = p->tensor[i];
        auto eval = [&](double value) {
          p->tensor[i] = value;
          Graph<double> g(false);
          return g.value(loss(g))[0];
        };
        const double fu = eval(saved + h), fd = eval(saved - h);
        p->tensor[i] = saved;
        worst = std::max(worst, rel_error(analytic[i], (fu - fd) / (2 * h)));
      }
    }
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("grow_channels: shape deltas and preserved state") {
  Rng rng(9);
  auto net = Network<double>::build_initial(Architecture::parse("3|2|fc4"), small_config(), rng);
  randomize_gates(net, rng);
  auto& first = net.layers()[0];
  first.inputs[0].weights.m[0] = 0.25;
  first.inputs[0].weights.steps[0] = 7;
  const auto before_w = first.inputs[0].weights.tensor;
  const auto before_logits = net.layers()[1].inputs[1].gates.logits.tensor;
  const std::size_t gates_before = net.gate_count();

  const ColumnInit constant = [](std::span<const double>, std::size_t m, std::size_t, Rng&) {
    return std::vector<double>(m, 0.5);
  };
  net.grow_channels(1, 2, rng, constant);
  net.validate();
  const auto& l1 = net.layer(1);
  CHECK(l1.width == 5);
  // incoming 2*1*9, outgoing into layer 2: 2*2*9, fc: 4*2
  CHECK(net.gate_count() - gates_before == 18 + 36 + 8);
  CHECK(net.gate_count() == net.closed_form_gate_count());
  for (std::size_t i = 0; i < before_w.size(); ++i) CHECK(l1.inputs[0].weights.tensor[i] == before_w[i]);
  CHECK(l1.inputs[0].weights.m[0] == 0.25);
  CHECK(l1.inputs[0].weights.steps[0] == 7);
  for (std::size_t i = before_w.size(); i < l1.inputs[0].weights.size(); ++i) {
    CHECK(l1.inputs[0].weights.tensor[i] == 0.5);
    CHECK(l1.inputs[0].weights.steps[i] == 0);
  }
  // old gate logits of layer 2's bundle from layer 1 keep their values
  const auto& b21 = net.layer(2).inputs[1];
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t e = 0; e < 18; ++e) CHECK(b21.gates.logits.tensor[(o * 5 + c) * 18 + e] == before_logits[(o * 3 + c) * 18 + e]);
  // new gates start near open
  for (std::size_t i = 3 * 9; i < 5 * 9; ++i) CHECK(l1.inputs[0].gates.probability(i) == doctest::Approx(0.9));
  CHECK(l1.bias.tensor[3] == 0.0);
  CHECK_THROWS_AS(net.grow_channels(1, 0, rng, constant), std::invalid_argument);
  CHECK_THROWS_AS(net.grow_channels(42, 1, rng, constant), std::out_of_range);
}

TEST_CASE("add_layer: connections and deltas") {
  Rng rng(10);
  auto net = Network<double>::build_initial(Architecture::parse("3|2|fc4"), small_config(), rng);
  const std::size_t before = net.gate_count();
  const int id = net.add_layer(0, 5, rng);
  net.validate();
  CHECK(id == 3);
  CHECK(net.position(id) == 2);  // input, layer 1, new layer, layer 2
  // incoming from input (1) and layer 1 (3): 5*4*9; outgoing into layer 2: 2*5*9; fc: 4*5
  CHECK(net.gate_count() - before == 180 + 90 + 20);
  CHECK(net.layer(2).inputs.size() == 3);
  CHECK(net.layer(2).inputs[2].source == id);
  CHECK(net.layer(2).inputs[1].source == 1);
  CHECK(net.widths() == std::vector<std::size_t>{3, 5, 2});
  CHECK(net.architecture().to_string() == "3,5|2|fc4");
  CHECK_THROWS_AS(net.add_layer(2, 1, rng), std::out_of_range);
  CHECK_THROWS_AS(net.add_layer(0, 0, rng), std::invalid_argument);
}

TEST_CASE("compact: dead channels") {
  Rng rng(11);
  auto net = Network<double>::build_initial(Architecture::parse("3|2|fc4"), small_config(), rng);
  const auto x = random_tensor({2, 1, 8, 8}, rng);
  auto kill_incoming = [](Layer<double>& l, std::size_t ch) {
    for (auto& b : l.inputs) {
      const std::size_t per = b.gates.count() / l.width;
      for (std::size_t i = ch * per; i < (ch + 1) * per; ++i) b.gates.set_logits(i, -10, 10);
    }
  };

  SUBCASE("nothing to do when every channel has a live input") {
    CHECK(net.compact(0.01).empty());
  }
  SUBCASE("one dead channel with zero output is removed") {
    net.layer(1).bias.tensor[1] = -0.3;
    kill_incoming(net.layer(1), 1);
    const auto before = logits_of(net, x, ForwardMode::deterministic());
    const auto report = net.compact(0.01);
    REQUIRE(report.channels.size() == 1);
    CHECK(report.channels[0].layer == 1);
    CHECK(report.channels[0].channel == 1);
    CHECK(net.layer(1).width == 2);
    CHECK(net.gate_count() == net.closed_form_gate_count());
    const auto after = logits_of(net, x, ForwardMode::deterministic());
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i] == doctest::Approx(before[i]).epsilon(1e-12));
  }
  SUBCASE("constant positive output is folded into the fc bias") {
    net.layer(2).bias.tensor[0] = 0.7;
    kill_incoming(net.layer(2), 0);
    const auto before = logits_of(net, x, ForwardMode::deterministic());
    CHECK(net.compact(0.01).channels.size() == 1);
    const auto after = logits_of(net, x, ForwardMode::deterministic());
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i] == doctest::Approx(before[i]).epsilon(1e-12));
  }
  SUBCASE("constant output feeding an open conv gate is kept") {
    net.layer(1).bias.tensor[0] = 0.7;
    kill_incoming(net.layer(1), 0);
    CHECK(net.compact(0.01).empty());
  }
  SUBCASE("removals cascade to a fixpoint") {
    // layer 2 channel 0 only listens to layer 1 channel 0, which is dead
    net.layer(1).bias.tensor[0] = -1.0;
    kill_incoming(net.layer(1), 0);
    auto& l2 = net.layer(2);
    kill_incoming(l2, 0);
    for (std::size_t e = 0; e < 9; ++e) l2.inputs[1].gates.set_logits((0 * 3 + 0) * 9 + e, 10, -10);
    l2.bias.tensor[0] = 0.4;
    const auto before = logits_of(net, x, ForwardMode::deterministic());
    const auto report = net.compact(0.01);
    CHECK(report.channels.size() == 2);
    CHECK(net.widths() == std::vector<std::size_t>{2, 1});
    const auto after = logits_of(net, x, ForwardMode::deterministic());
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i] == doctest::Approx(before[i]).epsilon(1e-12));
  }
  SUBCASE("a layer that loses every channel disappears") {
    for (std::size_t ch = 0; ch < 2; ++ch) kill_incoming(net.layer(2), ch);
    const auto report = net.compact(0.01);
    CHECK(report.layers == std::vector<int>{2});
    CHECK(net.layers().size() == 1);
    CHECK(net.gate_count() == net.closed_form_gate_count());
    net.validate();
  }
}

TEST_CASE("parameter bookkeeping") {
  Rng rng(12);
  auto net = Network<double>::build_initial(Architecture::parse("2|fc3"), small_config(), rng);
  // conv 2*1*9 weights + 18*2 logits, bias 2, fc 3*2 + 6*2 logits, fc bias 3
  CHECK(net.parameter_count() == 18 + 36 + 2 + 6 + 12 + 3);
  std::size_t decayed = 0, gates = 0;
  net.for_each_parameter([&](Parameter<double>& p, ParamKind k) {
    if (k == ParamKind::gate) {
      gates += p.size();
      CHECK_FALSE(p.weight_decay);
    } else if (p.weight_decay) {
      decayed += p.size();
    }
  });
  CHECK(gates == 48);
  CHECK(decayed + gates <= net.parameter_count());
}
