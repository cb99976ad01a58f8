#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gnap {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape);

/// Dense row-major array with an optional gradient buffer of the same shape.
///
/// A tensor bound as a leaf of a Graph is tagged with that graph until the
/// graph is destroyed; binding it to a second live graph is rejected.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), values_(numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != numel(shape_))
      throw ShapeError("tensor: " + std::to_string(values_.size()) + " values for shape " + to_string(shape_));
  }

  Tensor(const Tensor& o) : shape_(o.shape_), values_(o.values_), grad_(o.grad_) {}
  Tensor(Tensor&& o) noexcept : shape_(std::move(o.shape_)), values_(std::move(o.values_)), grad_(std::move(o.grad_)) {}
  Tensor& operator=(const Tensor& o) {
    shape_ = o.shape_;
    values_ = o.values_;
    grad_ = o.grad_;
    return *this;
  }
  Tensor& operator=(Tensor&& o) noexcept {
    shape_ = std::move(o.shape_);
    values_ = std::move(o.values_);
    grad_ = std::move(o.grad_);
    return *this;
  }

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  std::vector<T>& storage() { return values_; }
  const std::vector<T>& storage() const { return values_; }
  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  bool has_grad() const { return !grad_.empty(); }
  std::span<T> grad() { return grad_; }
  std::span<const T> grad() const { return grad_; }
  /// Allocates a zero gradient if none is present.
  std::span<T> ensure_grad() {
    if (grad_.size() != values_.size()) grad_.assign(values_.size(), T(0));
    return grad_;
  }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), T(0)); }
  void clear_grad() { grad_.clear(); }

  /// Replaces shape and values together; the gradient is dropped.
  void reset(Shape shape, std::vector<T> values) {
    if (values.size() != numel(shape)) throw ShapeError("tensor reset: size mismatch for " + to_string(shape));
    shape_ = std::move(shape);
    values_ = std::move(values);
    grad_.clear();
  }

  const void* bound_graph() const { return bound_graph_; }
  void bind_graph(const void* g) { bound_graph_ = g; }

 private:
  Shape shape_;
  std::vector<T> values_;
  std::vector<T> grad_;
  const void* bound_graph_ = nullptr;
};

}  // namespace gnap
