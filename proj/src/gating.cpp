#include "gnap/gating.hpp"

#include <stdexcept>

namespace gnap {

Shape gate_shape_for(const Shape& weight_shape, Granularity gran) {
  if (gran == Granularity::kernel && weight_shape.size() == 4) return {weight_shape[0], weight_shape[1]};
  return weight_shape;
}

std::size_t gate_area_for(const Shape& weight_shape, Granularity gran) {
  if (gran == Granularity::kernel && weight_shape.size() == 4) return weight_shape[2] * weight_shape[3];
  return 1;
}

template <class T>
GateSet<T>::GateSet(Granularity gran, Shape mask_shape, std::size_t area, double tau)
    : granularity(gran), temperature(tau), kernel_area(area) {
  if (tau <= 0.0) throw std::invalid_argument("gates: temperature must be positive");
  mask_shape.push_back(2);
  logits = Parameter<T>(Tensor<T>(mask_shape), false);
  reset_logits();
}

template <class T>
Shape GateSet<T>::mask_shape() const {
  Shape s = logits.shape();
  s.pop_back();
  return s;
}

template <class T>
void GateSet<T>::reset_logits() {
  for (std::size_t i = 0; i < count(); ++i) set_logits(i, kInitialGateLogit, -kInitialGateLogit);
}

template <class T>
Var sample_gates(Graph<T>& g, GateSet<T>& gates, Rng& rng) {
  if (gates.temperature <= 0.0) throw std::invalid_argument("sample_gates: temperature must be positive");
  const std::size_t n = gates.count();
  const double tau = gates.temperature;
  const auto a = gates.logits.tensor.values();
  Tensor<T> mask(gates.mask_shape());
  std::vector<T> slope(n);  // dy/d(a_open) of the relaxed sample
  gates.last_sample.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const double g_open = -std::log(-std::log(rng.uniform_open()));
    const double g_closed = -std::log(-std::log(rng.uniform_open()));
    const double d = (static_cast<double>(a[2 * i]) + g_open - static_cast<double>(a[2 * i + 1]) - g_closed) / tau;
    const double y = 1.0 / (1.0 + std::exp(-d));
    const bool open = y > 0.5;
    mask[i] = open ? T(1) : T(0);
    gates.last_sample[i] = open ? 1 : 0;
    slope[i] = static_cast<T>(y * (1.0 - y) / tau);
  }
  const Var logit_var = g.leaf(gates.logits.tensor);
  return g.record("sample_gates", std::move(mask), {logit_var}, [slope = std::move(slope)](Graph<T>& gr, Var self) {
    const auto dh = gr.grad(self);
    auto da = gr.grad(gr.inputs(self)[0]);
    for (std::size_t i = 0; i < dh.size(); ++i) {
      const T d = dh[i] * slope[i];
      da[2 * i] += d;
      da[2 * i + 1] -= d;
    }
  });
}

template <class T>
Tensor<T> deterministic_mask(const GateSet<T>& gates, double gamma) {
  Tensor<T> mask(gates.mask_shape());
  for (std::size_t i = 0; i < gates.count(); ++i) mask[i] = gates.probability(i) > gamma ? T(1) : T(0);
  return mask;
}

template <class T>
Var apply_gates(Graph<T>& g, Var weights, Var mask, Granularity gran) {
  const Shape& ws = g.shape(weights);
  const Shape& ms = g.shape(mask);
  if (ms != gate_shape_for(ws, gran))
    throw ShapeError("apply_gates: mask " + to_string(ms) + " does not fit weights " + to_string(ws));
  const std::size_t area = gate_area_for(ws, gran);
  const auto w = g.value(weights).values();
  const auto m = g.value(mask).values();
  Tensor<T> out(ws);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = w[i] * m[i / area];
  return g.record("apply_gates", std::move(out), {weights, mask}, [area](Graph<T>& gr, Var self) {
    const Var wv = gr.inputs(self)[0], mv = gr.inputs(self)[1];
    const auto dout = gr.grad(self);
    if (gr.requires_grad(wv)) {
      const auto m = gr.value(mv).values();
      auto dw = gr.grad(wv);
      for (std::size_t i = 0; i < dout.size(); ++i) dw[i] += dout[i] * m[i / area];
    }
    if (gr.requires_grad(mv)) {
      const auto w = gr.value(wv).values();
      auto dm = gr.grad(mv);
      for (std::size_t i = 0; i < dout.size(); ++i) dm[i / area] += dout[i] * w[i];
    }
  });
}

template <class T>
Var sparsity_loss(Graph<T>& g, std::span<const Var> masks, double alpha) {
  if (alpha < 0.0) throw std::invalid_argument("sparsity_loss: alpha must be non-negative");
  double open = 0.0;
  for (Var m : masks)
    for (T v : g.value(m).values()) open += static_cast<double>(v);
  Tensor<T> out(Shape{1}, static_cast<T>(alpha * open));
  const T a = static_cast<T>(alpha);
  return g.record("sparsity_loss", std::move(out), std::vector<Var>(masks.begin(), masks.end()),
                  [a](Graph<T>& gr, Var self) {
                    const T d = gr.grad(self)[0] * a;
                    for (Var m : gr.inputs(self)) {
                      if (!gr.requires_grad(m)) continue;
                      for (auto& x : gr.grad(m)) x += d;
                    }
                  });
}

template <class T>
LinkCount count_links_and_weights(std::span<const GateSet<T>* const> gates, double gamma) {
  LinkCount c;
  for (const GateSet<T>* gs : gates) {
    for (std::size_t i = 0; i < gs->count(); ++i) {
      if (gs->probability(i) > gamma) {
        ++c.links;
        c.weights += gs->kernel_area;
      }
    }
  }
  return c;
}

#define GNAP_INSTANTIATE_GATING(T)                                                          \
  template struct GateSet<T>;                                                               \
  template Var sample_gates<T>(Graph<T>&, GateSet<T>&, Rng&);                               \
  template Tensor<T> deterministic_mask<T>(const GateSet<T>&, double);                      \
  template Var apply_gates<T>(Graph<T>&, Var, Var, Granularity);                            \
  template Var sparsity_loss<T>(Graph<T>&, std::span<const Var>, double);                   \
  template LinkCount count_links_and_weights<T>(std::span<const GateSet<T>* const>, double);

GNAP_INSTANTIATE_GATING(float)
GNAP_INSTANTIATE_GATING(double)

}  // namespace gnap
