#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gnap/graph.hpp"
#include "gnap/ops.hpp"
#include "gnap/rng.hpp"

namespace gnap::testing {

inline Tensor<double> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape);
  for (auto& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

/// Relative error with a small absolute floor so that near-zero gradients do
/// not dominate through rounding noise.
inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Maximum relative error between reverse-mode gradients and central finite
/// differences for every element of every leaf. `build` records a scalar
/// loss from the bound leaves.
inline double gradient_check(std::vector<Tensor<double>*> leaves,
                             const std::function<Var(Graph<double>&, const std::vector<Var>&)>& build,
                             double h = 1e-5) {
  for (auto* t : leaves) t->clear_grad();
  {
    Graph<double> g;
    std::vector<Var> vars;
    for (auto* t : leaves) vars.push_back(g.leaf(*t));
    g.backward(build(g, vars));
  }
  auto eval = [&]() {
    Graph<double> g(false);
    std::vector<Var> vars;
    for (auto* t : leaves) vars.push_back(g.leaf(*t));
    return g.value(build(g, vars))[0];
  };
  double worst = 0.0;
  for (auto* t : leaves) {
    const std::vector<double> analytic(t->grad().begin(), t->grad().end());
    for (std::size_t i = 0; i < t->size(); ++i) {
      const double saved = (*t)[i];
      (*t)[i] = saved + h;
      const double up = eval();
      (*t)[i] = saved - h;
      const double down = eval();
      (*t)[i] = saved;
      worst = std::max(worst, rel_error(analytic[i], (up - down) / (2 * h)));
    }
  }
  return worst;
}

/// sum(out * weights) with fixed random weights; gives every output element
/// a distinct upstream gradient.
inline Var weighted_sum(Graph<double>& g, Var out, Rng& rng) {
  const Var w = g.constant(random_tensor(g.shape(out), rng));
  return sum<double>(g, mul<double>(g, out, w));
}

}  // namespace gnap::testing
