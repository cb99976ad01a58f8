#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gnap/tensor.hpp"

namespace gnap {

/// Handle to a node of a Graph. Only meaningful together with its graph.
struct Var {
  static constexpr std::uint32_t npos = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t id = npos;
  bool valid() const { return id != npos; }
};

/// Tape for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the tape is topologically
/// sorted by construction and `backward` walks it in exact reverse. Leaves
/// bound with `leaf()` alias an external tensor and receive accumulated
/// gradients in that tensor's grad buffer; `constant()` nodes are detached.
template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, Var self)>;

  /// With `record_backward == false` the graph only evaluates; backward
  /// closures are dropped and `backward` is rejected.
  explicit Graph(bool record_backward = true) : record_backward_(record_backward) {}
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor<T>& tensor);
  Var constant(Tensor<T> tensor);
  /// Appends an operator node. `backward` reads `grad(self)` and accumulates
  /// into `grad(input)` for inputs that require a gradient.
  Var record(std::string_view op, Tensor<T> value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor<T>& value(Var v) const;
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  /// Gradient buffer of a node; only available during or after `backward`.
  std::span<T> grad(Var v);
  std::span<const T> grad(Var v) const;
  const std::vector<Var>& inputs(Var v) const { return node(v).inputs; }
  std::string_view op(Var v) const { return node(v).op; }
  std::size_t size() const { return nodes_.size(); }
  bool records_backward() const { return record_backward_; }

  /// Populates gradients of every reachable leaf from a scalar loss. Leaf
  /// gradients accumulate across calls; node gradients are recomputed.
  void backward(Var loss);

 private:
  struct Node {
    std::string op;
    Tensor<T> own;
    Tensor<T>* external = nullptr;
    std::vector<Var> inputs;
    std::vector<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  const Node& node(Var v) const;
  Node& node(Var v);

  bool record_backward_;
  std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace gnap
