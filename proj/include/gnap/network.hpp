#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gnap/gating.hpp"
#include "gnap/graph.hpp"
#include "gnap/ops.hpp"
#include "gnap/parameter.hpp"
#include "gnap/rng.hpp"

namespace gnap {

/// Per-block layer widths plus the class count, e.g. "10|10|fc10" or
/// "64,64,64|128,128,128|fc10".
struct Architecture {
  std::vector<std::vector<std::size_t>> blocks;
  std::size_t classes = 0;

  static Architecture parse(const std::string& text);
  std::string to_string() const;
};

enum class Connectivity {
  global,       // every preceding source, across blocks through cascaded pooling
  within_block  // own block plus the previous block (DenseNet-style)
};

struct NetConfig {
  std::size_t in_channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t kernel = 3;
  std::size_t pool_window = 2;
  PoolMode pool = PoolMode::max;
  Granularity granularity = Granularity::weight;
  Connectivity connectivity = Connectivity::global;
  double temperature = 1.0;
};

/// Weights and gates connecting one source to one destination.
/// Conv bundles are [dst_width, src_width, k, k]; fc bundles are [classes, src_width].
template <class T>
struct Bundle {
  int source = 0;
  Parameter<T> weights;
  GateSet<T> gates;
};

/// Source id 0 is the input image; layers carry ids >= 1 that never change.
template <class T>
struct Layer {
  int id = 0;
  std::size_t block = 0;
  std::size_t width = 0;
  Parameter<T> bias;
  std::vector<Bundle<T>> inputs;  // ordered by source topology position
  Bundle<T> head;                 // this layer's pooled features -> fc
};

enum class ForwardKind { stochastic, deterministic, ungated };

struct ForwardMode {
  ForwardKind kind = ForwardKind::deterministic;
  double gamma = 0.5;

  static ForwardMode stochastic() { return {ForwardKind::stochastic, 0.5}; }
  static ForwardMode deterministic(double gamma = 0.5) { return {ForwardKind::deterministic, gamma}; }
  static ForwardMode ungated() { return {ForwardKind::ungated, 0.5}; }
};

struct ForwardResult {
  Var logits;
  std::vector<Var> masks;  // sampled gate masks, stochastic mode only
};

enum class ParamKind { weight, bias, gate };

/// Builds the incoming weight vector of a new channel from the matrix of
/// existing channels' incoming vectors (column-major, m rows by n columns).
using ColumnInit = std::function<std::vector<double>(std::span<const double> columns, std::size_t m, std::size_t n, Rng&)>;

struct CompactionReport {
  struct Removed {
    int layer;
    std::size_t channel;  // index at the moment of removal
  };
  std::vector<Removed> channels;
  std::vector<int> layers;
  bool empty() const { return channels.empty(); }
};

/// Densely connected gated CNN: blocks of conv layers, each layer fed by the
/// per-source gated convolutions of every preceding source, and a single fc
/// over the globally pooled outputs of all layers.
template <class T>
class Network {
 public:
  Network() = default;

  static Network build_initial(const Architecture& arch, const NetConfig& config, Rng& rng);

  ForwardResult forward(Graph<T>& g, const Tensor<T>& batch, ForwardMode mode, Rng* rng = nullptr);

  const NetConfig& config() const { return config_; }
  std::size_t block_count() const { return blocks_; }
  std::size_t classes() const { return classes_; }
  const std::vector<Layer<T>>& layers() const { return layers_; }
  std::vector<Layer<T>>& layers() { return layers_; }
  Parameter<T>& fc_bias() { return fc_bias_; }
  const Parameter<T>& fc_bias() const { return fc_bias_; }
  int next_id() const { return next_id_; }

  Layer<T>& layer(int id);
  const Layer<T>& layer(int id) const;
  std::size_t position(int id) const;  // topology index; the input sorts before every layer
  std::size_t source_width(int source) const;
  std::size_t source_block(int source) const;
  bool connects(std::size_t source_block, std::size_t dest_block) const;
  /// Number of scalar inputs feeding each channel of a layer (Σ widths · k²).
  std::size_t fan_in(const Layer<T>& layer) const;
  std::size_t fc_fan_in() const;
  std::vector<std::size_t> widths() const;
  /// Unchanged architecture view (widths per block).
  Architecture architecture() const;

  std::vector<const GateSet<T>*> gate_sets() const;
  /// Walks every bundle and sums gate counts.
  std::size_t gate_count() const;
  /// Gate count from widths and connectivity alone.
  std::size_t closed_form_gate_count() const;
  LinkCount count_links(double gamma) const;

  void for_each_parameter(const std::function<void(Parameter<T>&, ParamKind)>& fn);
  std::size_t parameter_count() const;

  /// Adds C channels to a layer. Incoming weights for each new channel come
  /// from `init` applied to the existing channels' vectors restricted to the
  /// source channels listed in `old_widths` (default: all current ones);
  /// incoming weights from channels beyond those and all new outgoing weights
  /// are Gaussian with std 1/n_i.
  void grow_channels(int layer_id, std::size_t count, Rng& rng, const ColumnInit& init,
                     const std::map<int, std::size_t>* old_widths = nullptr);
  /// Appends a layer to a block, fully connected to every allowed preceding
  /// source and to every allowed succeeding layer and the fc. Returns its id.
  int add_layer(std::size_t block, std::size_t width, Rng& rng);
  /// Removes channels whose incoming gates all have p_open < p_dead and whose
  /// constant output can be dropped or folded into the fc bias without
  /// changing deterministic(gamma) logits. Iterates to a fixpoint.
  CompactionReport compact(double p_dead, double gamma = 0.5);

  /// Reassembles a network from explicit parts (checkpoint loading).
  static Network assemble(NetConfig config, std::size_t blocks, std::size_t classes, std::vector<Layer<T>> layers,
                          Parameter<T> fc_bias, int next_id);
  void validate() const;

 private:
  Bundle<T> make_bundle(int source, Shape weight_shape, double stddev, Rng& rng) const;
  void remove_channel(Layer<T>& layer, std::size_t channel);
  void remove_layer(int id);

  NetConfig config_;
  std::size_t blocks_ = 0;
  std::size_t classes_ = 0;
  std::vector<Layer<T>> layers_;
  Parameter<T> fc_bias_;
  int next_id_ = 1;
};

extern template class Network<float>;
extern template class Network<double>;

}  // namespace gnap
