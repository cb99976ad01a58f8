#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "gnap/graph.hpp"
#include "gnap/parameter.hpp"
#include "gnap/rng.hpp"

namespace gnap {

enum class Granularity { weight, kernel };

/// Open/closed logit pair giving p_open ~= 0.9 (sigmoid(2 * 1.0986) = 0.9).
inline constexpr double kInitialGateLogit = 1.0986122886681098;

/// softmax open probability of an (open, closed) logit pair.
inline double open_probability(double a_open, double a_closed) { return 1.0 / (1.0 + std::exp(a_closed - a_open)); }

/// Binary gates over one weight bundle. Logits are stored as a parameter of
/// shape mask_shape + [2] holding (a_open, a_closed) pairs.
///
/// Per-weight gates have mask_shape equal to the weight shape; per-kernel
/// gates on a conv bundle [Cout,Cin,k,k] have mask_shape [Cout,Cin] and
/// kernel_area k*k.
template <class T>
struct GateSet {
  Granularity granularity = Granularity::weight;
  Parameter<T> logits;
  double temperature = 1.0;
  std::size_t kernel_area = 1;
  std::vector<std::uint8_t> last_sample;

  GateSet() = default;
  GateSet(Granularity gran, Shape mask_shape, std::size_t area, double tau = 1.0);

  Shape mask_shape() const;
  std::size_t count() const { return logits.size() / 2; }
  double probability(std::size_t i) const {
    return open_probability(static_cast<double>(logits.tensor[2 * i]), static_cast<double>(logits.tensor[2 * i + 1]));
  }
  /// Sets every logit pair to the initial near-open state.
  void reset_logits();
  void set_logits(std::size_t i, double a_open, double a_closed) {
    logits.tensor[2 * i] = static_cast<T>(a_open);
    logits.tensor[2 * i + 1] = static_cast<T>(a_closed);
  }
};

/// Gate shape for a bundle: per-kernel gating only applies to 4-D conv
/// weights, everything else is gated per weight.
Shape gate_shape_for(const Shape& weight_shape, Granularity gran);
std::size_t gate_area_for(const Shape& weight_shape, Granularity gran);

/// Draws one hard Gumbel-Softmax sample per gate. The forward value is the
/// hard {0,1} sample; backward uses the gradient of the relaxed sigmoid
/// value (straight-through). Records the sample in `gates.last_sample`.
template <class T>
Var sample_gates(Graph<T>& g, GateSet<T>& gates, Rng& rng);

/// Deterministic mask: gate open iff p_open > gamma.
template <class T>
Tensor<T> deterministic_mask(const GateSet<T>& gates, double gamma);

/// weights * mask, broadcasting kernel-level masks over each k*k kernel.
template <class T>
Var apply_gates(Graph<T>& g, Var weights, Var mask, Granularity gran);

/// alpha * (sum of all sampled gates) as a scalar node.
template <class T>
Var sparsity_loss(Graph<T>& g, std::span<const Var> masks, double alpha);

struct LinkCount {
  std::size_t links = 0;
  std::size_t weights = 0;
  bool operator==(const LinkCount&) const = default;
};

/// links = deterministically open gates, weights = sum of their kernel areas.
template <class T>
LinkCount count_links_and_weights(std::span<const GateSet<T>* const> gates, double gamma);

}  // namespace gnap
