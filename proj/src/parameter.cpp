#include "gnap/parameter.hpp"

#include <stdexcept>

namespace gnap {

std::vector<long> extend_map(std::size_t n, std::size_t extra) {
  std::vector<long> map(n + extra, -1);
  for (std::size_t i = 0; i < n; ++i) map[i] = static_cast<long>(i);
  return map;
}

std::vector<long> erase_map(std::size_t n, std::size_t drop) {
  std::vector<long> map;
  map.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    if (i != drop) map.push_back(static_cast<long>(i));
  return map;
}

template <class T>
void Parameter<T>::remap(const Shape& new_shape, const std::vector<std::vector<long>>& axis_maps,
                         const std::function<T(const std::vector<std::size_t>&)>& init) {
  const Shape& old_shape = tensor.shape();
  if (axis_maps.size() != new_shape.size() || old_shape.size() != new_shape.size())
    throw ShapeError("parameter remap: rank mismatch");
  for (std::size_t a = 0; a < new_shape.size(); ++a) {
    if (axis_maps[a].size() != new_shape[a]) throw ShapeError("parameter remap: axis map length mismatch");
    for (long o : axis_maps[a])
      if (o >= static_cast<long>(old_shape[a])) throw ShapeError("parameter remap: index out of range");
  }
  const std::size_t total = numel(new_shape);
  std::vector<T> nv(total), nm(total, T(0)), nvv(total, T(0));
  std::vector<std::uint32_t> ns(total, 0);
  std::vector<std::size_t> idx(new_shape.size(), 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    bool fresh = false;
    std::size_t old_flat = 0;
    for (std::size_t a = 0; a < idx.size(); ++a) {
      const long o = axis_maps[a][idx[a]];
      if (o < 0) {
        fresh = true;
        break;
      }
      old_flat = old_flat * old_shape[a] + static_cast<std::size_t>(o);
    }
    if (fresh) {
      nv[flat] = init(idx);
    } else {
      nv[flat] = tensor[old_flat];
      nm[flat] = m[old_flat];
      nvv[flat] = v[old_flat];
      ns[flat] = steps[old_flat];
    }
    for (std::size_t a = idx.size(); a-- > 0;) {
      if (++idx[a] < new_shape[a]) break;
      idx[a] = 0;
    }
  }
  tensor.reset(new_shape, std::move(nv));
  m = std::move(nm);
  v = std::move(nvv);
  steps = std::move(ns);
}

template struct Parameter<float>;
template struct Parameter<double>;

}  // namespace gnap
