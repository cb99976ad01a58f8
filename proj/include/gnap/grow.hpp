#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <deque>
#include <vector>

#include "gnap/network.hpp"
#include "gnap/rng.hpp"
#include "gnap/tensor.hpp"

namespace gnap {

/// std = 1/n_i, n_i being the number of inputs of the receiving neuron.
double gaussian_stddev(std::size_t fan_in);

template <class T>
Tensor<T> gaussian_init(const Shape& shape, double stddev, Rng& rng);

/// N(0, 1/n_i) draws; n_i == 0 is rejected.
template <class T>
Tensor<T> gaussian_init(std::size_t fan_in, const Shape& shape, Rng& rng);

/// Tracks the open-gate count over the last M epochs and decides when a
/// growing phase fires.
struct GrowthMonitor {
  std::size_t window = 10;
  double threshold = 0.05;
  std::size_t max_phases = 12;
  std::size_t cutoff_epoch = 0;  // growth allowed while epoch < cutoff_epoch
  std::size_t phases_done = 0;
  std::deque<std::size_t> history;

  /// Mean of the buffered counts; 0 when empty.
  double mean() const;
  bool warm() const { return history.size() >= window; }
  void observe(std::size_t n_gates);
  void reset() { history.clear(); }
};

/// (n_mean - n_gates) / n_mean < threshold, where n_mean averages the
/// previous `window` epochs. Requires a full window, epoch < cutoff and
/// phases_done < max_phases. An all-pruned history (n_mean == 0) never grows.
bool should_grow(const GrowthMonitor& monitor, std::size_t n_gates, std::size_t epoch);

/// Outcome of the orthogonal initializer; intermediate values are exposed
/// for verification.
struct OrthogonalResult {
  Eigen::VectorXd weight;   // final vector (signed, uncentered)
  Eigen::VectorXd direction;  // least-squares solution before the sign step
  Eigen::MatrixXd basis;      // truncated left singular vectors of the centered matrix
  bool gaussian_fallback = false;
};

/// Least-squares solution of w^T [basis | r] = (0, ..., 0, 1), minimum norm
/// when underdetermined.
Eigen::VectorXd orthogonal_direction(const Eigen::MatrixXd& basis, const Eigen::VectorXd& r);

/// Orthonormal basis of the column space of `centered`: left singular
/// vectors whose singular value exceeds rank_tolerance * s_max.
Eigen::MatrixXd truncated_basis(const Eigen::MatrixXd& centered, double rank_tolerance);

/// Weight vector for a new neuron given the m x n matrix of existing
/// neurons' weight columns. With fewer columns than rows this falls back
/// to N(0, 1/m); otherwise it centers the columns, draws a vector orthogonal
/// to their span, applies random signs to its magnitudes and adds back the
/// column mean.
OrthogonalResult orthogonal_new_weight(const Eigen::MatrixXd& existing, Rng& rng, double rank_tolerance = 1e-6);

struct GrowthMutation {
  enum class Kind { grow_channels, add_layer } kind;
  int layer_id = 0;       // grow_channels
  std::size_t block = 0;  // add_layer
  std::size_t width = 0;
  bool operator==(const GrowthMutation&) const = default;
};

struct GrowthEvent {
  std::size_t width = 0;
  std::size_t layers_added = 0;
};

/// C channels for every existing layer (topology order), then one new
/// layer of width C at the end of every block.
template <class T>
std::vector<GrowthMutation> plan_growth(const Network<T>& net, std::size_t width);

/// Applies a plan. Incoming weights of grown channels from pre-existing
/// source channels use the orthogonal initializer; everything else is Gaussian.
template <class T>
GrowthEvent execute_growth(Network<T>& net, const std::vector<GrowthMutation>& plan, Rng& rng,
                           double rank_tolerance = 1e-6);

}  // namespace gnap
