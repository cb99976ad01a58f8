#include "gnap/network.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "gnap/grow.hpp"

namespace gnap {

Architecture Architecture::parse(const std::string& text) {
  Architecture arch;
  std::stringstream ss(text);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '|')) parts.push_back(part);
  if (parts.size() < 2) throw std::invalid_argument("architecture '" + text + "': need at least one block and fcK");
  const std::string& fc = parts.back();
  if (fc.rfind("fc", 0) != 0) throw std::invalid_argument("architecture '" + text + "': last field must be fcK");
  try {
    arch.classes = std::stoul(fc.substr(2));
  } catch (const std::exception&) {
    throw std::invalid_argument("architecture '" + text + "': bad class count '" + fc + "'");
  }
  for (std::size_t b = 0; b + 1 < parts.size(); ++b) {
    std::vector<std::size_t> widths;
    if (parts[b].empty() || parts[b].back() == ',')
      throw std::invalid_argument("architecture '" + text + "': empty width in block " + std::to_string(b));
    std::stringstream bs(parts[b]);
    std::string w;
    while (std::getline(bs, w, ',')) {
      try {
        std::size_t used = 0;
        const unsigned long v = std::stoul(w, &used);
        if (used != w.size() || v == 0) throw std::invalid_argument("");
        widths.push_back(v);
      } catch (const std::exception&) {
        throw std::invalid_argument("architecture '" + text + "': bad width '" + w + "'");
      }
    }
    arch.blocks.push_back(std::move(widths));
  }
  return arch;
}

std::string Architecture::to_string() const {
  std::string s;
  for (const auto& b : blocks) {
    for (std::size_t i = 0; i < b.size(); ++i) s += (i ? "," : "") + std::to_string(b[i]);
    s += "|";
  }
  return s + "fc" + std::to_string(classes);
}

template <class T>
Bundle<T> Network<T>::make_bundle(int source, Shape weight_shape, double stddev, Rng& rng) const {
  Bundle<T> b;
  b.source = source;
  b.weights = Parameter<T>(gaussian_init<T>(weight_shape, stddev, rng));
  b.gates = GateSet<T>(config_.granularity, gate_shape_for(weight_shape, config_.granularity),
                       gate_area_for(weight_shape, config_.granularity), config_.temperature);
  return b;
}

template <class T>
Network<T> Network<T>::build_initial(const Architecture& arch, const NetConfig& config, Rng& rng) {
  if (arch.blocks.empty()) throw std::invalid_argument("build_initial: architecture has no blocks");
  for (const auto& b : arch.blocks)
    if (b.empty()) throw std::invalid_argument("build_initial: every block needs at least one layer");
  if (arch.classes < 2) throw std::invalid_argument("build_initial: need at least two classes");
  if (config.in_channels == 0) throw std::invalid_argument("build_initial: need at least one input channel");
  Network net;
  net.config_ = config;
  net.blocks_ = arch.blocks.size();
  net.classes_ = arch.classes;
  net.fc_bias_ = Parameter<T>(Tensor<T>(Shape{arch.classes}));
  // Layers first so fan-in values see the final widths.
  for (std::size_t b = 0; b < arch.blocks.size(); ++b)
    for (std::size_t w : arch.blocks[b]) {
      Layer<T> l;
      l.id = net.next_id_++;
      l.block = b;
      l.width = w;
      l.bias = Parameter<T>(Tensor<T>(Shape{w}));
      net.layers_.push_back(std::move(l));
    }
  const std::size_t k = config.kernel;
  for (std::size_t i = 0; i < net.layers_.size(); ++i) {
    Layer<T>& l = net.layers_[i];
    const double sd = gaussian_stddev(net.fan_in(l));
    if (net.connects(0, l.block))
      l.inputs.push_back(net.make_bundle(0, {l.width, config.in_channels, k, k}, sd, rng));
    for (std::size_t j = 0; j < i; ++j) {
      const Layer<T>& s = net.layers_[j];
      if (net.connects(s.block, l.block)) l.inputs.push_back(net.make_bundle(s.id, {l.width, s.width, k, k}, sd, rng));
    }
  }
  const double fc_sd = gaussian_stddev(net.fc_fan_in());
  for (auto& l : net.layers_) l.head = net.make_bundle(l.id, {net.classes_, l.width}, fc_sd, rng);
  net.validate();
  return net;
}

template <class T>
Network<T> Network<T>::assemble(NetConfig config, std::size_t blocks, std::size_t classes, std::vector<Layer<T>> layers,
                                Parameter<T> fc_bias, int next_id) {
  Network net;
  net.config_ = config;
  net.blocks_ = blocks;
  net.classes_ = classes;
  net.layers_ = std::move(layers);
  net.fc_bias_ = std::move(fc_bias);
  net.next_id_ = next_id;
  net.validate();
  return net;
}

template <class T>
void Network<T>::validate() const {
  auto fail = [](const std::string& m) { throw std::logic_error("network invariant: " + m); };
  const std::size_t k = config_.kernel;
  if (fc_bias_.shape() != Shape{classes_}) fail("fc bias shape");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer<T>& l = layers_[i];
    if (l.block >= blocks_) fail("layer block out of range");
    if (i > 0 && layers_[i - 1].block > l.block) fail("layers not in block order");
    if (l.id <= 0 || l.id >= next_id_) fail("layer id out of range");
    if (l.bias.shape() != Shape{l.width}) fail("bias shape of layer " + std::to_string(l.id));
    std::vector<int> expected;
    if (connects(0, l.block)) expected.push_back(0);
    for (std::size_t j = 0; j < i; ++j)
      if (connects(layers_[j].block, l.block)) expected.push_back(layers_[j].id);
    if (expected.size() != l.inputs.size()) fail("bundle count of layer " + std::to_string(l.id));
    for (std::size_t b = 0; b < l.inputs.size(); ++b) {
      const Bundle<T>& bu = l.inputs[b];
      if (bu.source != expected[b]) fail("bundle order of layer " + std::to_string(l.id));
      const Shape ws{l.width, source_width(bu.source), k, k};
      if (bu.weights.shape() != ws) fail("bundle weight shape of layer " + std::to_string(l.id));
      if (bu.gates.mask_shape() != gate_shape_for(ws, config_.granularity)) fail("gate shape");
    }
    if (l.head.source != l.id || l.head.weights.shape() != Shape{classes_, l.width} ||
        l.head.gates.mask_shape() != Shape{classes_, l.width})
      fail("fc bundle of layer " + std::to_string(l.id));
  }
}

template <class T>
Layer<T>& Network<T>::layer(int id) {
  for (auto& l : layers_)
    if (l.id == id) return l;
  throw std::out_of_range("network: no layer with id " + std::to_string(id));
}

template <class T>
const Layer<T>& Network<T>::layer(int id) const {
  for (const auto& l : layers_)
    if (l.id == id) return l;
  throw std::out_of_range("network: no layer with id " + std::to_string(id));
}

template <class T>
std::size_t Network<T>::position(int id) const {
  if (id == 0) return 0;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i].id == id) return i + 1;
  throw std::out_of_range("network: no layer with id " + std::to_string(id));
}

template <class T>
std::size_t Network<T>::source_width(int source) const {
  return source == 0 ? config_.in_channels : layer(source).width;
}

template <class T>
std::size_t Network<T>::source_block(int source) const {
  return source == 0 ? 0 : layer(source).block;
}

template <class T>
bool Network<T>::connects(std::size_t src_block, std::size_t dst_block) const {
  if (src_block > dst_block) return false;
  if (config_.connectivity == Connectivity::global) return true;
  return dst_block - src_block <= 1;
}

template <class T>
std::size_t Network<T>::fan_in(const Layer<T>& l) const {
  std::size_t total = connects(0, l.block) ? config_.in_channels : 0;
  for (const auto& s : layers_) {
    if (s.id == l.id) break;
    if (connects(s.block, l.block)) total += s.width;
  }
  return total * config_.kernel * config_.kernel;
}

template <class T>
std::size_t Network<T>::fc_fan_in() const {
  std::size_t total = 0;
  for (const auto& l : layers_) total += l.width;
  return total;
}

template <class T>
std::vector<std::size_t> Network<T>::widths() const {
  std::vector<std::size_t> w;
  for (const auto& l : layers_) w.push_back(l.width);
  return w;
}

template <class T>
Architecture Network<T>::architecture() const {
  Architecture a;
  a.classes = classes_;
  a.blocks.resize(blocks_);
  for (const auto& l : layers_) a.blocks[l.block].push_back(l.width);
  return a;
}

template <class T>
std::vector<const GateSet<T>*> Network<T>::gate_sets() const {
  std::vector<const GateSet<T>*> out;
  for (const auto& l : layers_) {
    for (const auto& b : l.inputs) out.push_back(&b.gates);
    out.push_back(&l.head.gates);
  }
  return out;
}

template <class T>
std::size_t Network<T>::gate_count() const {
  std::size_t n = 0;
  for (const GateSet<T>* g : gate_sets()) n += g->count();
  return n;
}

template <class T>
std::size_t Network<T>::closed_form_gate_count() const {
  const std::size_t area =
      config_.granularity == Granularity::kernel ? 1 : config_.kernel * config_.kernel;
  std::size_t total = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer<T>& l = layers_[i];
    std::size_t src = connects(0, l.block) ? config_.in_channels : 0;
    for (std::size_t j = 0; j < i; ++j)
      if (connects(layers_[j].block, l.block)) src += layers_[j].width;
    total += l.width * src * area + classes_ * l.width;
  }
  return total;
}

template <class T>
LinkCount Network<T>::count_links(double gamma) const {
  const auto sets = gate_sets();
  return count_links_and_weights<T>(std::span<const GateSet<T>* const>(sets), gamma);
}

template <class T>
void Network<T>::for_each_parameter(const std::function<void(Parameter<T>&, ParamKind)>& fn) {
  for (auto& l : layers_) {
    for (auto& b : l.inputs) {
      fn(b.weights, ParamKind::weight);
      fn(b.gates.logits, ParamKind::gate);
    }
    fn(l.bias, ParamKind::bias);
    fn(l.head.weights, ParamKind::weight);
    fn(l.head.gates.logits, ParamKind::gate);
  }
  fn(fc_bias_, ParamKind::bias);
}

template <class T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = fc_bias_.size();
  for (const auto& l : layers_) {
    n += l.bias.size() + l.head.weights.size() + l.head.gates.logits.size();
    for (const auto& b : l.inputs) n += b.weights.size() + b.gates.logits.size();
  }
  return n;
}

template <class T>
ForwardResult Network<T>::forward(Graph<T>& g, const Tensor<T>& batch, ForwardMode mode, Rng* rng) {
  const Shape& s = batch.shape();
  if (s.size() != 4 || s[1] != config_.in_channels)
    throw ShapeError("forward: batch " + to_string(s) + " incompatible with " + std::to_string(config_.in_channels) +
                     " input channels");
  const std::size_t min_side = std::size_t{1} << (blocks_ - 1);
  if (s[2] < min_side || s[3] < min_side)
    throw ShapeError("forward: image " + std::to_string(s[2]) + "x" + std::to_string(s[3]) + " too small for " +
                     std::to_string(blocks_) + " blocks");
  if (mode.kind == ForwardKind::stochastic && !rng) throw std::invalid_argument("forward: stochastic mode needs an rng");
  if (mode.kind == ForwardKind::stochastic && !g.records_backward())
    throw std::invalid_argument("forward: stochastic mode needs a differentiation graph");

  ForwardResult result;
  // outputs[id][d] = source output pooled d times
  std::map<int, std::vector<Var>> outputs;
  outputs[0].push_back(g.constant(batch));
  auto pooled = [&](int id, std::size_t levels) {
    auto& v = outputs.at(id);
    while (v.size() <= levels) v.push_back(pool2d<T>(g, v.back(), config_.pool_window, config_.pool));
    return v[levels];
  };
  auto gated = [&](Bundle<T>& b) -> Var {
    const Var w = g.leaf(b.weights.tensor);
    switch (mode.kind) {
      case ForwardKind::ungated:
        return w;
      case ForwardKind::deterministic:
        return apply_gates<T>(g, w, g.constant(deterministic_mask(b.gates, mode.gamma)), b.gates.granularity);
      case ForwardKind::stochastic: {
        const Var m = sample_gates<T>(g, b.gates, *rng);
        result.masks.push_back(m);
        return apply_gates<T>(g, w, m, b.gates.granularity);
      }
    }
    return w;
  };

  const std::size_t pad = config_.kernel / 2;
  for (auto& l : layers_) {
    std::vector<Var> srcs, kernels;
    for (auto& b : l.inputs) {
      srcs.push_back(pooled(b.source, l.block - source_block(b.source)));
      kernels.push_back(gated(b));
    }
    const Var pre = conv2d_sum<T>(g, srcs, kernels, g.leaf(l.bias.tensor), 1, pad);
    outputs[l.id].push_back(relu<T>(g, pre));
  }

  const Var fc_b = g.leaf(fc_bias_.tensor);
  std::vector<Var> parts;
  for (auto& l : layers_) {
    const Var feat = global_avg_pool<T>(g, outputs[l.id][0]);
    parts.push_back(linear<T>(g, feat, gated(l.head), parts.empty() ? std::optional<Var>(fc_b) : std::nullopt));
  }
  if (parts.empty()) {
    const Var zeros = g.constant(Tensor<T>(Shape{s[0], 1}));
    const Var zw = g.constant(Tensor<T>(Shape{classes_, 1}));
    result.logits = linear<T>(g, zeros, zw, fc_b);
  } else {
    result.logits = parts.size() == 1 ? parts[0] : add_n<T>(g, parts);
  }
  return result;
}

template <class T>
void Network<T>::grow_channels(int layer_id, std::size_t count, Rng& rng, const ColumnInit& init,
                               const std::map<int, std::size_t>* old_widths) {
  if (count == 0) throw std::invalid_argument("grow_channels: count must be >= 1");
  Layer<T>& l = layer(layer_id);
  const std::size_t k2 = config_.kernel * config_.kernel;
  const std::size_t old_w = l.width;

  auto old_src_width = [&](int src) {
    const std::size_t cur = source_width(src);
    if (!old_widths) return cur;
    auto it = old_widths->find(src);
    return it == old_widths->end() ? std::size_t{0} : std::min(it->second, cur);
  };

  // Column j = incoming vector of channel j over the old source channels.
  std::size_t m = 0;
  for (const auto& b : l.inputs) m += old_src_width(b.source) * k2;
  std::vector<double> columns;
  columns.reserve(m * (old_w + count));
  for (std::size_t o = 0; o < old_w; ++o)
    for (const auto& b : l.inputs) {
      const std::size_t sw = b.weights.shape()[1];
      for (std::size_t c = 0; c < old_src_width(b.source); ++c)
        for (std::size_t e = 0; e < k2; ++e)
          columns.push_back(static_cast<double>(b.weights.tensor[((o * sw) + c) * k2 + e]));
    }
  for (std::size_t j = 0; j < count; ++j) {
    std::vector<double> w = init(columns, m, old_w + j, rng);
    if (w.size() != m) throw std::logic_error("grow_channels: init returned a vector of the wrong length");
    columns.insert(columns.end(), w.begin(), w.end());
  }

  l.width = old_w + count;
  const double sd = gaussian_stddev(fan_in(l));
  std::size_t row_offset = 0;  // offset of a bundle's old-source block inside a column
  for (auto& b : l.inputs) {
    const Shape old_shape = b.weights.shape();
    const std::size_t sw = old_shape[1];
    const std::size_t keep = old_src_width(b.source);
    const Shape ns{l.width, sw, old_shape[2], old_shape[3]};
    const std::size_t off = row_offset;
    b.weights.remap(ns, {extend_map(old_w, count), extend_map(sw, 0), extend_map(old_shape[2], 0),
                         extend_map(old_shape[3], 0)},
                    [&](const std::vector<std::size_t>& idx) {
                      if (idx[1] < keep) {
                        const std::size_t col = idx[0];
                        return static_cast<T>(
                            columns[col * m + off + (idx[1] * old_shape[2] + idx[2]) * old_shape[3] + idx[3]]);
                      }
                      return static_cast<T>(rng.normal(0.0, sd));
                    });
    row_offset += keep * k2;
    const Shape gs = b.gates.logits.shape();
    std::vector<std::vector<long>> gmaps;
    gmaps.push_back(extend_map(old_w, count));
    for (std::size_t a = 1; a < gs.size(); ++a) gmaps.push_back(extend_map(gs[a], 0));
    Shape ngs = gs;
    ngs[0] = l.width;
    b.gates.logits.remap(ngs, gmaps, [](const std::vector<std::size_t>& idx) {
      return static_cast<T>(idx.back() == 0 ? kInitialGateLogit : -kInitialGateLogit);
    });
  }
  l.bias.remap({l.width}, {extend_map(old_w, count)}, [](const std::vector<std::size_t>&) { return T(0); });

  // new -> old: every consumer bundle gains `count` Gaussian source channels.
  for (auto& d : layers_) {
    for (auto& b : d.inputs) {
      if (b.source != layer_id) continue;
      const double dsd = gaussian_stddev(fan_in(d));
      const Shape os = b.weights.shape();
      b.weights.remap({os[0], l.width, os[2], os[3]},
                      {extend_map(os[0], 0), extend_map(old_w, count), extend_map(os[2], 0), extend_map(os[3], 0)},
                      [&](const std::vector<std::size_t>&) { return static_cast<T>(rng.normal(0.0, dsd)); });
      const Shape gs = b.gates.logits.shape();
      std::vector<std::vector<long>> gmaps{extend_map(gs[0], 0), extend_map(old_w, count)};
      for (std::size_t a = 2; a < gs.size(); ++a) gmaps.push_back(extend_map(gs[a], 0));
      Shape ngs = gs;
      ngs[1] = l.width;
      b.gates.logits.remap(ngs, gmaps, [](const std::vector<std::size_t>& idx) {
        return static_cast<T>(idx.back() == 0 ? kInitialGateLogit : -kInitialGateLogit);
      });
    }
  }
  const double fsd = gaussian_stddev(fc_fan_in());
  l.head.weights.remap({classes_, l.width}, {extend_map(classes_, 0), extend_map(old_w, count)},
                       [&](const std::vector<std::size_t>&) { return static_cast<T>(rng.normal(0.0, fsd)); });
  l.head.gates.logits.remap({classes_, l.width, 2}, {extend_map(classes_, 0), extend_map(old_w, count), extend_map(2, 0)},
                            [](const std::vector<std::size_t>& idx) {
                              return static_cast<T>(idx.back() == 0 ? kInitialGateLogit : -kInitialGateLogit);
                            });
}

template <class T>
int Network<T>::add_layer(std::size_t block, std::size_t width, Rng& rng) {
  if (block >= blocks_) throw std::out_of_range("add_layer: no block " + std::to_string(block));
  if (width == 0) throw std::invalid_argument("add_layer: width must be >= 1");
  const std::size_t k = config_.kernel;
  std::size_t pos = 0;
  while (pos < layers_.size() && layers_[pos].block <= block) ++pos;

  Layer<T> nl;
  nl.id = next_id_++;
  nl.block = block;
  nl.width = width;
  nl.bias = Parameter<T>(Tensor<T>(Shape{width}));
  layers_.insert(layers_.begin() + static_cast<long>(pos), std::move(nl));
  Layer<T>& l = layers_[pos];
  const int id = l.id;

  const double sd = gaussian_stddev(fan_in(l));
  if (connects(0, block)) l.inputs.push_back(make_bundle(0, {width, config_.in_channels, k, k}, sd, rng));
  for (std::size_t j = 0; j < pos; ++j)
    if (connects(layers_[j].block, block))
      l.inputs.push_back(make_bundle(layers_[j].id, {width, layers_[j].width, k, k}, sd, rng));

  for (std::size_t j = pos + 1; j < layers_.size(); ++j) {
    Layer<T>& d = layers_[j];
    if (!connects(block, d.block)) continue;
    const double dsd = gaussian_stddev(fan_in(d));
    auto it = std::find_if(d.inputs.begin(), d.inputs.end(),
                           [&](const Bundle<T>& b) { return position(b.source) > pos + 1; });
    d.inputs.insert(it, make_bundle(id, {d.width, width, k, k}, dsd, rng));
  }
  const double fsd = gaussian_stddev(fc_fan_in());
  Layer<T>& added = layers_[pos];
  added.head = make_bundle(id, {classes_, width}, fsd, rng);
  return id;
}

template <class T>
void Network<T>::remove_channel(Layer<T>& l, std::size_t ch) {
  auto drop_axis = [](Parameter<T>& p, std::size_t axis, std::size_t idx) {
    Shape ns = p.shape();
    std::vector<std::vector<long>> maps;
    for (std::size_t a = 0; a < ns.size(); ++a) maps.push_back(a == axis ? erase_map(ns[a], idx) : extend_map(ns[a], 0));
    ns[axis] -= 1;
    p.remap(ns, maps, [](const std::vector<std::size_t>&) { return T(0); });
  };
  for (auto& b : l.inputs) {
    drop_axis(b.weights, 0, ch);
    drop_axis(b.gates.logits, 0, ch);
  }
  drop_axis(l.bias, 0, ch);
  drop_axis(l.head.weights, 1, ch);
  drop_axis(l.head.gates.logits, 1, ch);
  for (auto& d : layers_)
    for (auto& b : d.inputs)
      if (b.source == l.id) {
        drop_axis(b.weights, 1, ch);
        drop_axis(b.gates.logits, 1, ch);
      }
  l.width -= 1;
}

template <class T>
void Network<T>::remove_layer(int id) {
  for (auto& d : layers_)
    std::erase_if(d.inputs, [id](const Bundle<T>& b) { return b.source == id; });
  std::erase_if(layers_, [id](const Layer<T>& l) { return l.id == id; });
}

template <class T>
CompactionReport Network<T>::compact(double p_dead, double gamma) {
  CompactionReport report;
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t li = 0; li < layers_.size() && !changed; ++li) {
      Layer<T>& l = layers_[li];
      for (std::size_t ch = 0; ch < l.width; ++ch) {
        bool dead = true;
        for (const auto& b : l.inputs) {
          const std::size_t per_row = b.gates.count() / l.width;
          for (std::size_t i = ch * per_row; i < (ch + 1) * per_row && dead; ++i)
            dead = b.gates.probability(i) < p_dead;
          if (!dead) break;
        }
        if (!dead) continue;
        // Output of this channel is the constant relu(bias) under deterministic inference.
        const T level = std::max(l.bias.tensor[ch], T(0));
        if (level != T(0)) {
          bool feeds_conv = false;
          for (const auto& d : layers_)
            for (const auto& b : d.inputs) {
              if (b.source != l.id || feeds_conv) continue;
              const std::size_t per_src = b.gates.count() / (d.width * l.width);
              for (std::size_t o = 0; o < d.width && !feeds_conv; ++o)
                for (std::size_t e = 0; e < per_src && !feeds_conv; ++e)
                  feeds_conv = b.gates.probability((o * l.width + ch) * per_src + e) > gamma;
            }
          if (feeds_conv) continue;
          for (std::size_t c = 0; c < classes_; ++c)
            if (l.head.gates.probability(c * l.width + ch) > gamma)
              fc_bias_.tensor[c] += level * l.head.weights.tensor[c * l.width + ch];
        }
        report.channels.push_back({l.id, ch});
        remove_channel(l, ch);
        if (l.width == 0) {
          report.layers.push_back(l.id);
          remove_layer(l.id);
        }
        changed = true;
        break;
      }
    }
  }
  return report;
}

template class Network<float>;
template class Network<double>;

}  // namespace gnap
