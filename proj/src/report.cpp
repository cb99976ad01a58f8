#include "gnap/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>

namespace gnap {

namespace {

// Round-trips through the 9-digit text so CSV and JSON carry the same value.
double g9(double v) { return std::stod(format_g9(v)); }

std::string grow_text(const std::optional<GrowthEvent>& e) {
  return e ? std::to_string(e->width) + ":" + std::to_string(e->layers_added) : "0";
}

}  // namespace

std::string format_g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string runrecord_csv(const std::vector<RunRecord>& rows) {
  std::string out = std::string(kRunRecordHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + format_g9(r.train_loss) + "," + format_g9(r.sparsity_term) + "," +
           format_g9(r.train_acc) + "," + format_g9(r.val_acc) + "," + std::to_string(r.links) + "," +
           std::to_string(r.weights) + "," + grow_text(r.grow_event) + "," + r.phase + "," + format_g9(r.seconds) + "\n";
  }
  return out;
}

std::string runrecord_json(const std::vector<RunRecord>& rows) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json o;
    o["epoch"] = r.epoch;
    o["train_loss"] = g9(r.train_loss);
    o["sparsity_term"] = g9(r.sparsity_term);
    o["train_acc"] = g9(r.train_acc);
    o["val_acc"] = g9(r.val_acc);
    o["links"] = r.links;
    o["weights"] = r.weights;
    if (r.grow_event)
      o["grow_event"] = {{"width", r.grow_event->width}, {"layers_added", r.grow_event->layers_added}};
    else
      o["grow_event"] = nullptr;
    o["phase"] = r.phase;
    o["seconds"] = g9(r.seconds);
    arr.push_back(std::move(o));
  }
  return arr.dump(1) + "\n";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ReportError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw ReportError("short write to '" + path.string() + "'");
}

void write_runrecord(const std::vector<RunRecord>& rows, const std::filesystem::path& csv,
                     const std::filesystem::path& json) {
  write_text(csv, runrecord_csv(rows));
  write_text(json, runrecord_json(rows));
}

std::map<std::string, std::string> describe(const TrainConfig& c) {
  std::map<std::string, std::string> m;
  m["epochs"] = std::to_string(c.epochs);
  m["grow_cutoff"] = std::to_string(c.cutoff());
  m["grow_width"] = std::to_string(c.grow_width);
  m["alpha"] = format_g9(c.alpha);
  m["alpha_refine"] = format_g9(c.alpha_refine);
  m["refine_epochs"] = std::to_string(c.refine_epochs);
  m["theta"] = format_g9(c.theta);
  m["window"] = std::to_string(c.window);
  m["theta_acc"] = format_g9(c.theta_acc);
  m["gamma"] = format_g9(c.gamma);
  m["temperature"] = format_g9(c.temperature);
  m["granularity"] = c.granularity == Granularity::weight ? "weight" : "kernel";
  m["lr"] = format_g9(c.lr);
  m["batch"] = std::to_string(c.batch_size);
  m["weight_decay"] = format_g9(c.weight_decay);
  m["max_phases"] = std::to_string(c.max_phases);
  m["p_dead"] = format_g9(c.p_dead);
  m["seed"] = std::to_string(c.seed);
  m["augment"] = c.augmentation ? "1" : "0";
  return m;
}

std::vector<double> default_gamma_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 99; ++i) g.push_back(i / 100.0);
  return g;
}

std::vector<SweepPoint> sweep(Network<float>& net, const Dataset& data, const std::vector<double>& gammas) {
  for (std::size_t i = 0; i < gammas.size(); ++i) {
    if (!(gammas[i] >= 0.0 && gammas[i] < 1.0)) throw std::invalid_argument("sweep: gamma must be in [0,1)");
    if (i && !(gammas[i] > gammas[i - 1])) throw std::invalid_argument("sweep: gammas must be strictly increasing");
  }
  std::vector<SweepPoint> out;
  for (double g : gammas) {
    const LinkCount lc = net.count_links(g);
    out.push_back({g, evaluate_accuracy(net, data, g), lc.links, lc.weights});
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::string out = "gamma,accuracy,links,weights\n";
  for (const auto& p : points)
    out += format_g9(p.gamma) + "," + format_g9(p.accuracy) + "," + std::to_string(p.links) + "," +
           std::to_string(p.weights) + "\n";
  return out;
}

GateMatrix gate_matrix(const Network<float>& net, double gamma) {
  // First unit index of every source, inputs at 0.
  std::map<int, std::size_t> first{{0, 0}};
  std::size_t units = net.config().in_channels;
  for (const auto& l : net.layers()) {
    first[l.id] = units;
    units += l.width;
  }
  const std::size_t fc0 = units;
  units += net.classes();
  GateMatrix m;
  m.units = units;
  m.pixels.assign(units * units, 0);

  // Open fraction of gates [begin, begin + count) in one gate set.
  auto fraction = [gamma](const GateSet<float>& g, std::size_t begin, std::size_t count) {
    std::size_t open = 0;
    for (std::size_t i = begin; i < begin + count; ++i) open += g.probability(i) > gamma;
    return static_cast<std::uint8_t>(std::lround(255.0 * static_cast<double>(open) / static_cast<double>(count)));
  };
  for (const auto& l : net.layers()) {
    for (const auto& b : l.inputs) {
      const Shape ws = b.weights.shape();  // [dst, src, k, k]
      const std::size_t per_pair = b.gates.granularity == Granularity::kernel ? 1 : ws[2] * ws[3];
      for (std::size_t d = 0; d < ws[0]; ++d)
        for (std::size_t s = 0; s < ws[1]; ++s)
          m.pixels[(first[l.id] + d) * units + first[b.source] + s] =
              fraction(b.gates, (d * ws[1] + s) * per_pair, per_pair);
    }
    for (std::size_t k = 0; k < net.classes(); ++k)
      for (std::size_t c = 0; c < l.width; ++c)
        m.pixels[(fc0 + k) * units + first[l.id] + c] = fraction(l.head.gates, k * l.width + c, 1);
  }
  return m;
}

std::vector<std::uint8_t> encode_pgm(const GateMatrix& m) {
  const std::string header = "P5\n" + std::to_string(m.units) + " " + std::to_string(m.units) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), m.pixels.begin(), m.pixels.end());
  return out;
}

void export_gate_matrix(const Network<float>& net, double gamma, const std::filesystem::path& path) {
  const auto bytes = encode_pgm(gate_matrix(net, gamma));
  write_text(path, std::string(bytes.begin(), bytes.end()));
}

}  // namespace gnap
