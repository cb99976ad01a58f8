#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "gnap/tensor.hpp"

namespace gnap {

/// Trainable tensor together with its Adam moments. Moments and step counts
/// are kept per element so that tensors can grow or shrink between epochs
/// without disturbing the optimizer history of surviving entries.
template <class T>
struct Parameter {
  Tensor<T> tensor;
  std::vector<T> m;
  std::vector<T> v;
  std::vector<std::uint32_t> steps;
  bool weight_decay = true;

  Parameter() = default;
  explicit Parameter(Tensor<T> t, bool decay = true) : tensor(std::move(t)), weight_decay(decay) { reset_moments(); }

  void reset_moments() {
    m.assign(tensor.size(), T(0));
    v.assign(tensor.size(), T(0));
    steps.assign(tensor.size(), 0);
  }

  const Shape& shape() const { return tensor.shape(); }
  std::size_t size() const { return tensor.size(); }

  /// Rebuilds the parameter with `new_shape`. `axis_maps[a][i]` gives the old
  /// index along axis `a` feeding new index `i`, or -1 for a fresh entry.
  /// Fresh entries take `init(new_index)` and empty optimizer history.
  void remap(const Shape& new_shape, const std::vector<std::vector<long>>& axis_maps,
             const std::function<T(const std::vector<std::size_t>&)>& init);
};

/// Identity map of length n followed by `extra` fresh slots.
std::vector<long> extend_map(std::size_t n, std::size_t extra);
/// Identity map of length n with index `drop` removed.
std::vector<long> erase_map(std::size_t n, std::size_t drop);

extern template struct Parameter<float>;
extern template struct Parameter<double>;

}  // namespace gnap
