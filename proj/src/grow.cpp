#include "gnap/grow.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>
#include <numeric>
#include <stdexcept>

namespace gnap {

double gaussian_stddev(std::size_t fan_in) {
  if (fan_in == 0) throw std::invalid_argument("gaussian_init: neuron has no inputs");
  return 1.0 / static_cast<double>(fan_in);
}

template <class T>
Tensor<T> gaussian_init(const Shape& shape, double stddev, Rng& rng) {
  Tensor<T> t(shape);
  for (auto& v : t.storage()) v = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

template <class T>
Tensor<T> gaussian_init(std::size_t fan_in, const Shape& shape, Rng& rng) {
  return gaussian_init<T>(shape, gaussian_stddev(fan_in), rng);
}

double GrowthMonitor::mean() const {
  if (history.empty()) return 0.0;
  const double total = std::accumulate(history.begin(), history.end(), 0.0,
                                       [](double a, std::size_t b) { return a + static_cast<double>(b); });
  return total / static_cast<double>(history.size());
}

void GrowthMonitor::observe(std::size_t n_gates) {
  history.push_back(n_gates);
  while (history.size() > window) history.pop_front();
}

bool should_grow(const GrowthMonitor& monitor, std::size_t n_gates, std::size_t epoch) {
  if (!monitor.warm() || epoch >= monitor.cutoff_epoch || monitor.phases_done >= monitor.max_phases) return false;
  const double n_mean = monitor.mean();
  if (n_mean <= 0.0) return false;
  return (n_mean - static_cast<double>(n_gates)) / n_mean < monitor.threshold;
}

Eigen::MatrixXd truncated_basis(const Eigen::MatrixXd& centered, double rank_tolerance) {
  const Eigen::Index m = centered.rows();
  if (centered.cols() == 0 || m == 0) return Eigen::MatrixXd(m, 0);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU);
  const auto& s = svd.singularValues();
  const double s_max = s.size() ? s(0) : 0.0;
  Eigen::Index r = 0;
  if (s_max > 0.0)
    while (r < s.size() && s(r) > rank_tolerance * s_max) ++r;
  return svd.matrixU().leftCols(r);
}

Eigen::VectorXd orthogonal_direction(const Eigen::MatrixXd& basis, const Eigen::VectorXd& r) {
  if (basis.rows() != r.size()) throw std::invalid_argument("orthogonal_direction: dimension mismatch");
  Eigen::MatrixXd vp(basis.rows(), basis.cols() + 1);
  vp << basis, r;
  Eigen::VectorXd c = Eigen::VectorXd::Zero(vp.cols());
  c(c.size() - 1) = 1.0;
  // w^T V' = c  <=>  V'^T w = c
  return vp.transpose().completeOrthogonalDecomposition().solve(c);
}

OrthogonalResult orthogonal_new_weight(const Eigen::MatrixXd& existing, Rng& rng, double rank_tolerance) {
  const Eigen::Index m = existing.rows(), n = existing.cols();
  if (m < 1) throw std::invalid_argument("orthogonal_new_weight: empty weight vectors");
  OrthogonalResult out;
  if (n < m) {
    out.gaussian_fallback = true;
    const double sd = gaussian_stddev(static_cast<std::size_t>(m));
    out.weight.resize(m);
    for (Eigen::Index i = 0; i < m; ++i) out.weight(i) = rng.normal(0.0, sd);
    out.direction = out.weight;
    out.basis = Eigen::MatrixXd(m, 0);
    return out;
  }
  const Eigen::VectorXd mu = existing.rowwise().mean();
  const Eigen::MatrixXd centered = existing.colwise() - mu;
  out.basis = truncated_basis(centered, rank_tolerance);
  Eigen::VectorXd r(m);
  for (Eigen::Index i = 0; i < m; ++i) r(i) = rng.normal(0.0, 1.0);
  out.direction = orthogonal_direction(out.basis, r);
  out.weight.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) out.weight(i) = (rng.bernoulli(0.5) ? 1.0 : -1.0) * std::abs(out.direction(i));
  out.weight += mu;
  return out;
}

template <class T>
std::vector<GrowthMutation> plan_growth(const Network<T>& net, std::size_t width) {
  if (width == 0) throw std::invalid_argument("plan_growth: width must be >= 1");
  std::vector<GrowthMutation> plan;
  for (const auto& l : net.layers()) plan.push_back({GrowthMutation::Kind::grow_channels, l.id, l.block, width});
  for (std::size_t b = 0; b < net.block_count(); ++b) plan.push_back({GrowthMutation::Kind::add_layer, 0, b, width});
  return plan;
}

template <class T>
GrowthEvent execute_growth(Network<T>& net, const std::vector<GrowthMutation>& plan, Rng& rng, double rank_tolerance) {
  std::map<int, std::size_t> old_widths{{0, net.config().in_channels}};
  for (const auto& l : net.layers()) old_widths[l.id] = l.width;
  const ColumnInit orthogonal = [rank_tolerance](std::span<const double> cols, std::size_t m, std::size_t n,
                                                  Rng& r) {
    const Eigen::Map<const Eigen::MatrixXd> w(cols.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    const OrthogonalResult res = orthogonal_new_weight(w, r, rank_tolerance);
    return std::vector<double>(res.weight.data(), res.weight.data() + res.weight.size());
  };
  GrowthEvent ev;
  for (const auto& mu : plan) {
    if (mu.kind == GrowthMutation::Kind::grow_channels) {
      net.grow_channels(mu.layer_id, mu.width, rng, orthogonal, &old_widths);
      ev.width = mu.width;
    } else {
      net.add_layer(mu.block, mu.width, rng);
      ev.width = mu.width;
      ++ev.layers_added;
    }
  }
  return ev;
}

template Tensor<float> gaussian_init<float>(const Shape&, double, Rng&);
template Tensor<double> gaussian_init<double>(const Shape&, double, Rng&);
template Tensor<float> gaussian_init<float>(std::size_t, const Shape&, Rng&);
template Tensor<double> gaussian_init<double>(std::size_t, const Shape&, Rng&);
template std::vector<GrowthMutation> plan_growth<float>(const Network<float>&, std::size_t);
template std::vector<GrowthMutation> plan_growth<double>(const Network<double>&, std::size_t);
template GrowthEvent execute_growth<float>(Network<float>&, const std::vector<GrowthMutation>&, Rng&, double);
template GrowthEvent execute_growth<double>(Network<double>&, const std::vector<GrowthMutation>&, Rng&, double);

}  // namespace gnap
