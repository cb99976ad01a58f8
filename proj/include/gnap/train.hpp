#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnap/data.hpp"
#include "gnap/grow.hpp"
#include "gnap/network.hpp"

namespace gnap {

/// The objective became non-finite; training stops.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  std::size_t epochs = 60;                  // E
  std::optional<std::size_t> grow_cutoff;   // E'; defaults to 30% of E
  std::size_t grow_width = 8;               // C
  double alpha = 0.5e-7;
  double alpha_refine = 0.25e-5;
  std::size_t refine_epochs = 200;
  double theta = 0.05;
  std::size_t window = 10;                  // M
  double theta_acc = 0.0025;
  double gamma = 0.5;
  double temperature = 1.0;
  Granularity granularity = Granularity::weight;
  double lr = 0.01;
  std::size_t batch_size = 256;
  double weight_decay = 1e-6;
  std::size_t max_phases = 12;
  double p_dead = 0.01;
  std::uint64_t seed = 0;
  std::optional<AugmentConfig> augmentation;
  AdamConfig adam;
  bool record_time = true;

  std::size_t cutoff() const;
  void validate() const;
};

/// One Adam update from the gradient stored on the parameter's tensor.
/// Decay is coupled (added to the gradient) and only applies when the
/// parameter is flagged for it. A non-finite gradient skips the whole
/// parameter and returns false. Parameters without a gradient are left alone.
template <class T>
bool adam_step(Parameter<T>& p, double lr, double weight_decay, const AdamConfig& adam = {});

struct EpochMetrics {
  double train_loss = 0.0;     // mean prediction loss over batches
  double sparsity_term = 0.0;  // mean alpha * open gates over batches
  double train_acc = 0.0;
  std::size_t skipped_updates = 0;
};

/// Per-batch decomposition of the objective.
struct BatchTrace {
  double total = 0.0;
  double prediction = 0.0;
  std::size_t sampled_open = 0;
};

/// One pass over `data` minimizing prediction loss + alpha * sampled gates.
/// Batch order, gate noise and augmentation are keyed by (seed, epoch).
EpochMetrics run_epoch(Network<float>& net, const Dataset& data, const TrainConfig& config, double alpha,
                       std::size_t epoch, std::vector<BatchTrace>* trace = nullptr);

/// Deterministic-mode accuracy.
double evaluate_accuracy(Network<float>& net, const Dataset& data, double gamma, std::size_t batch_size = 500);

/// Replace iff strictly more accurate, or accuracy within theta_acc and
/// strictly fewer links.
bool early_stop_replaces(double best_acc, std::size_t best_links, double val_acc, std::size_t links, double theta_acc);

struct BestModelTracker {
  double best_acc = -1.0;
  std::size_t best_links = 0;
  std::size_t epoch = 0;
  std::optional<Network<float>> model;

  /// Applies the early-stop rule; copies `net` on replacement.
  bool update(double val_acc, std::size_t links, double theta_acc, const Network<float>& net, std::size_t at_epoch);
};

struct RunRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double sparsity_term = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  std::size_t links = 0;
  std::size_t weights = 0;
  std::optional<GrowthEvent> grow_event;
  std::string phase = "main";
  double seconds = 0.0;
};

struct TrainObserver {
  std::function<void(const RunRecord&, const Network<float>&)> on_epoch;
  /// Called after each growing phase with the phase number (1-based).
  std::function<void(std::size_t, const Network<float>&)> on_growth;
};

struct TrainResult {
  Network<float> best;
  Network<float> final_net;
  BestModelTracker tracker;
  std::vector<RunRecord> records;
  std::size_t phases = 0;
  bool aborted = false;
  std::string abort_reason;
};

/// Full schedule: E main epochs with growth checks, refinement epochs with
/// the increased sparsity weight, then compaction of the final network.
TrainResult train(const Architecture& arch, NetConfig net_config, const TrainConfig& config, const Dataset& train_data,
                  const Dataset& val_data, const TrainObserver& observer = {});

/// Continues training `net` for refine_epochs with alpha_refine and no growth,
/// appending records and offering each epoch to the tracker.
void refine(Network<float>& net, const TrainConfig& config, const Dataset& train_data, const Dataset& val_data,
            BestModelTracker& tracker, std::vector<RunRecord>& records, std::size_t first_epoch,
            const TrainObserver& observer = {});

}  // namespace gnap
