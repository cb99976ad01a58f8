#include "gnap/graph.hpp"

#include <algorithm>
#include <stdexcept>

namespace gnap {

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class T>
Graph<T>::~Graph() {
  for (auto& n : nodes_)
    if (n.external && n.external->bound_graph() == this) n.external->bind_graph(nullptr);
}

template <class T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  if (v.id >= nodes_.size()) throw std::out_of_range("graph: invalid node handle");
  return nodes_[v.id];
}

template <class T>
typename Graph<T>::Node& Graph<T>::node(Var v) {
  if (v.id >= nodes_.size()) throw std::out_of_range("graph: invalid node handle");
  return nodes_[v.id];
}

template <class T>
Var Graph<T>::leaf(Tensor<T>& tensor) {
  if (tensor.bound_graph() && tensor.bound_graph() != this)
    throw std::logic_error("graph: tensor already bound to another live graph");
  tensor.bind_graph(this);
  Node n;
  n.op = "leaf";
  n.external = &tensor;
  n.requires_grad = record_backward_;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
Var Graph<T>::constant(Tensor<T> tensor) {
  Node n;
  n.op = "constant";
  n.own = std::move(tensor);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
Var Graph<T>::record(std::string_view op, Tensor<T> value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.op = std::string(op);
  n.own = std::move(value);
  for (Var in : inputs) {
    if (in.id >= nodes_.size()) throw std::out_of_range("graph: input handle does not precede node");
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  n.inputs = std::move(inputs);
  if (record_backward_ && n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
const Tensor<T>& Graph<T>::value(Var v) const {
  const Node& n = node(v);
  return n.external ? *n.external : n.own;
}

template <class T>
std::span<T> Graph<T>::grad(Var v) {
  Node& n = node(v);
  if (n.grad.empty() && n.requires_grad) throw std::logic_error("graph: gradient requested before backward");
  return n.grad;
}

template <class T>
std::span<const T> Graph<T>::grad(Var v) const {
  return node(v).grad;
}

template <class T>
void Graph<T>::backward(Var loss) {
  if (!record_backward_) throw std::logic_error("graph: backward on an evaluation-only graph");
  if (value(loss).size() != 1) throw ShapeError("backward: loss must be a scalar, got " + to_string(shape(loss)));
  for (auto& n : nodes_) {
    if (n.requires_grad)
      n.grad.assign(n.external ? n.external->size() : n.own.size(), T(0));
    else
      n.grad.clear();
  }
  Node& root = node(loss);
  if (!root.requires_grad) return;
  root.grad[0] = T(1);
  for (std::uint32_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward) n.backward(*this, Var{i});
  }
  for (auto& n : nodes_) {
    if (!n.external || !n.requires_grad) continue;
    auto dst = n.external->ensure_grad();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace gnap
