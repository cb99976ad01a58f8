#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gnap/data.hpp"
#include "gnap/network.hpp"
#include "gnap/train.hpp"

namespace gnap {

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// printf "%.9g".
std::string format_g9(double v);

inline constexpr const char* kRunRecordHeader = "epoch,train_loss,sparsity_term,train_acc,val_acc,links,weights,grow_event,phase,seconds";

/// grow_event is "0" for ordinary epochs and "C:layers" after a growing phase.
std::string runrecord_csv(const std::vector<RunRecord>& rows);
/// Array of row objects; grow_event is null or {"width": C, "layers_added": n}.
std::string runrecord_json(const std::vector<RunRecord>& rows);
void write_runrecord(const std::vector<RunRecord>& rows, const std::filesystem::path& csv,
                     const std::filesystem::path& json);

/// Flat key/value echo of a training configuration, for checkpoints.
std::map<std::string, std::string> describe(const TrainConfig& config);

struct SweepPoint {
  double gamma = 0.0;
  double accuracy = 0.0;
  std::size_t links = 0;
  std::size_t weights = 0;
};

/// 0.01, 0.02, ..., 0.99.
std::vector<double> default_gamma_grid();
/// Deterministic evaluation at every threshold of a strictly increasing grid.
std::vector<SweepPoint> sweep(Network<float>& net, const Dataset& data, const std::vector<double>& gammas);
std::string sweep_csv(const std::vector<SweepPoint>& points);

/// Square open-proportion matrix. Units are ordered input channels, then
/// layer channels in topology order, then fc outputs; pixel (i, j) is the
/// rounded 255 * open fraction of the gates linking source unit j to
/// destination unit i, and 0 where the two are not connected.
struct GateMatrix {
  std::size_t units = 0;
  std::vector<std::uint8_t> pixels;  // row-major, units x units
  std::uint8_t at(std::size_t row, std::size_t col) const { return pixels[row * units + col]; }
};

GateMatrix gate_matrix(const Network<float>& net, double gamma);
/// Binary P5 with maxval 255.
std::vector<std::uint8_t> encode_pgm(const GateMatrix& m);
void export_gate_matrix(const Network<float>& net, double gamma, const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace gnap
