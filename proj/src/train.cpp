#include "gnap/train.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace gnap {

namespace {

// Stream keys under the run seed.
constexpr std::uint64_t kInitKey = 1;
constexpr std::uint64_t kGateKey = 0x1000000;
constexpr std::uint64_t kAugmentKey = 0x2000000;
constexpr std::uint64_t kGrowKey = 0x3000000;

std::size_t argmax_row(std::span<const float> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c)
    if (row[c] > row[best]) best = c;
  return best;
}

std::size_t count_correct(const Tensor<float>& logits, const std::vector<int>& labels) {
  const std::size_t k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t n = 0; n < labels.size(); ++n)
    correct += argmax_row(logits.values().subspan(n * k, k)) == static_cast<std::size_t>(labels[n]);
  return correct;
}

}  // namespace

std::size_t TrainConfig::cutoff() const {
  return grow_cutoff ? *grow_cutoff : static_cast<std::size_t>(std::floor(0.3 * static_cast<double>(epochs)));
}

void TrainConfig::validate() const {
  if (cutoff() > epochs) throw std::invalid_argument("train config: grow cutoff must not exceed epochs");
  if (theta_acc < 0.0) throw std::invalid_argument("train config: theta_acc must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("train config: batch size must be >= 1");
  if (alpha < 0.0 || alpha_refine < 0.0) throw std::invalid_argument("train config: sparsity weights must be >= 0");
  if (grow_width == 0) throw std::invalid_argument("train config: grow width must be >= 1");
  if (window == 0) throw std::invalid_argument("train config: window must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("train config: learning rate must be > 0");
  if (!(temperature > 0.0)) throw std::invalid_argument("train config: temperature must be > 0");
  if (gamma < 0.0 || gamma >= 1.0) throw std::invalid_argument("train config: gamma must be in [0,1)");
  if (augmentation) augmentation->validate();
}

template <class T>
bool adam_step(Parameter<T>& p, double lr, double weight_decay, const AdamConfig& adam) {
  if (!p.tensor.has_grad()) return true;
  const auto g = p.tensor.grad();
  for (T v : g)
    if (!std::isfinite(static_cast<double>(v))) return false;
  const double decay = p.weight_decay ? weight_decay : 0.0;
  auto w = p.tensor.values();
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double gi = static_cast<double>(g[i]) + decay * static_cast<double>(w[i]);
    const std::uint32_t t = ++p.steps[i];
    const double m = adam.beta1 * static_cast<double>(p.m[i]) + (1.0 - adam.beta1) * gi;
    const double v = adam.beta2 * static_cast<double>(p.v[i]) + (1.0 - adam.beta2) * gi * gi;
    p.m[i] = static_cast<T>(m);
    p.v[i] = static_cast<T>(v);
    const double mhat = m / (1.0 - std::pow(adam.beta1, t));
    const double vhat = v / (1.0 - std::pow(adam.beta2, t));
    w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * mhat / (std::sqrt(vhat) + adam.eps));
  }
  return true;
}

template bool adam_step<float>(Parameter<float>&, double, double, const AdamConfig&);
template bool adam_step<double>(Parameter<double>&, double, double, const AdamConfig&);

EpochMetrics run_epoch(Network<float>& net, const Dataset& data, const TrainConfig& config, double alpha,
                       std::size_t epoch, std::vector<BatchTrace>* trace) {
  const auto order = batch_order(data.size(), config.batch_size, config.seed, epoch);
  Rng gate_rng = Rng(config.seed).split(kGateKey + epoch);
  const Rng augment_stream = Rng(config.seed).split(kAugmentKey + epoch);
  EpochMetrics out;
  std::size_t correct = 0;
  for (const auto& idx : order) {
    const Batch batch = make_batch(data, idx, Pipeline::train, config.augmentation ? &*config.augmentation : nullptr,
                                   &augment_stream);
    net.for_each_parameter([](Parameter<float>& p, ParamKind) { p.tensor.clear_grad(); });
    Graph<float> g;
    const ForwardResult fwd = net.forward(g, batch.images, ForwardMode::stochastic(), &gate_rng);
    const Var pred = softmax_cross_entropy<float>(g, fwd.logits, batch.labels);
    const Var sparse = sparsity_loss<float>(g, fwd.masks, alpha);
    const Var total = add<float>(g, pred, sparse);
    g.backward(total);
    net.for_each_parameter([&](Parameter<float>& p, ParamKind) {
      if (!adam_step(p, config.lr, config.weight_decay, config.adam)) ++out.skipped_updates;
    });
    out.train_loss += g.value(pred)[0];
    out.sparsity_term += g.value(sparse)[0];
    correct += count_correct(g.value(fwd.logits), batch.labels);
    if (trace) {
      std::size_t open = 0;
      for (Var m : fwd.masks)
        for (float v : g.value(m).values()) open += v != 0.0f;
      trace->push_back({g.value(total)[0], g.value(pred)[0], open});
    }
  }
  if (out.skipped_updates) std::cerr << "epoch " << epoch << ": skipped " << out.skipped_updates << " non-finite updates\n";
  const double batches = static_cast<double>(order.size());
  out.train_loss /= batches;
  out.sparsity_term /= batches;
  out.train_acc = static_cast<double>(correct) / static_cast<double>(data.size());
  return out;
}

double evaluate_accuracy(Network<float>& net, const Dataset& data, double gamma, std::size_t batch_size) {
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const Batch b = make_batch(data, idx, Pipeline::eval);
    Graph<float> g(false);
    correct += count_correct(g.value(net.forward(g, b.images, ForwardMode::deterministic(gamma)).logits), b.labels);
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

bool early_stop_replaces(double best_acc, std::size_t best_links, double val_acc, std::size_t links, double theta_acc) {
  return val_acc > best_acc || (std::abs(best_acc - val_acc) < theta_acc && links < best_links);
}

bool BestModelTracker::update(double val_acc, std::size_t links, double theta_acc, const Network<float>& net,
                              std::size_t at_epoch) {
  if (model && !early_stop_replaces(best_acc, best_links, val_acc, links, theta_acc)) return false;
  best_acc = val_acc;
  best_links = links;
  epoch = at_epoch;
  model = net;
  return true;
}

namespace {

struct EpochTimer {
  bool enabled;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return enabled ? std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() : 0.0;
  }
};

// Trains one epoch and fills the common record fields. Returns false when
// the loss went non-finite.
bool epoch_step(Network<float>& net, const TrainConfig& config, const Dataset& train_data, const Dataset& val_data,
                double alpha, std::size_t epoch, BestModelTracker& tracker, RunRecord& rec) {
  const EpochMetrics m = run_epoch(net, train_data, config, alpha, epoch);
  rec.epoch = epoch;
  rec.train_loss = m.train_loss;
  rec.sparsity_term = m.sparsity_term;
  rec.train_acc = m.train_acc;
  if (!std::isfinite(m.train_loss) || !std::isfinite(m.sparsity_term)) return false;
  rec.val_acc = evaluate_accuracy(net, val_data, config.gamma);
  const LinkCount lc = net.count_links(config.gamma);
  rec.links = lc.links;
  rec.weights = lc.weights;
  tracker.update(rec.val_acc, rec.links, config.theta_acc, net, epoch);
  return true;
}

}  // namespace

void refine(Network<float>& net, const TrainConfig& config, const Dataset& train_data, const Dataset& val_data,
            BestModelTracker& tracker, std::vector<RunRecord>& records, std::size_t first_epoch,
            const TrainObserver& observer) {
  for (std::size_t r = 0; r < config.refine_epochs; ++r) {
    EpochTimer timer{config.record_time};
    RunRecord rec;
    rec.phase = "refine";
    if (!epoch_step(net, config, train_data, val_data, config.alpha_refine, first_epoch + r, tracker, rec))
      throw TrainingDiverged("non-finite loss at refinement epoch " + std::to_string(first_epoch + r));
    rec.seconds = timer.seconds();
    records.push_back(rec);
    if (observer.on_epoch) observer.on_epoch(rec, net);
  }
}

TrainResult train(const Architecture& arch, NetConfig net_config, const TrainConfig& config, const Dataset& train_data,
                  const Dataset& val_data, const TrainObserver& observer) {
  config.validate();
  train_data.validate();
  val_data.validate();
  if (arch.classes != train_data.classes)
    throw std::invalid_argument("train: architecture has " + std::to_string(arch.classes) + " classes, data has " +
                                std::to_string(train_data.classes));
  net_config.granularity = config.granularity;
  net_config.temperature = config.temperature;
  net_config.in_channels = train_data.channels();
  net_config.height = train_data.height();
  net_config.width = train_data.width();

  Rng init_rng = Rng(config.seed).split(kInitKey);
  Network<float> net = Network<float>::build_initial(arch, net_config, init_rng);
  GrowthMonitor monitor;
  monitor.window = config.window;
  monitor.threshold = config.theta;
  monitor.max_phases = config.max_phases;
  monitor.cutoff_epoch = config.cutoff();

  BestModelTracker tracker;
  std::vector<RunRecord> records;
  TrainResult result;
  auto finish = [&](Network<float>& live) {
    result.final_net = live;
    result.best = tracker.model ? *tracker.model : live;
    result.tracker = tracker;
    result.records = records;
    result.phases = monitor.phases_done;
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochTimer timer{config.record_time};
    RunRecord rec;
    if (!epoch_step(net, config, train_data, val_data, config.alpha, epoch, tracker, rec)) {
      finish(net);
      result.aborted = true;
      result.abort_reason = "non-finite loss at epoch " + std::to_string(epoch);
      return result;
    }
    if (should_grow(monitor, rec.links, epoch)) {
      net.compact(config.p_dead, config.gamma);
      Rng grow_rng = Rng(config.seed).split(kGrowKey + monitor.phases_done);
      rec.grow_event = execute_growth(net, plan_growth(net, config.grow_width), grow_rng);
      ++monitor.phases_done;
      monitor.reset();
      if (observer.on_growth) observer.on_growth(monitor.phases_done, net);
    } else {
      monitor.observe(rec.links);
    }
    rec.seconds = timer.seconds();
    records.push_back(rec);
    if (observer.on_epoch) observer.on_epoch(rec, net);
  }

  try {
    refine(net, config, train_data, val_data, tracker, records, config.epochs + 1, observer);
  } catch (const TrainingDiverged& e) {
    finish(net);
    result.aborted = true;
    result.abort_reason = e.what();
    return result;
  }
  net.compact(config.p_dead, config.gamma);
  finish(net);
  return result;
}

}  // namespace gnap
