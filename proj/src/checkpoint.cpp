#include "gnap/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace gnap {

namespace {

enum class DType { f32, u32 };

struct Section {
  std::string name;
  DType dtype;
  Shape shape;
};

std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out.empty() ? "scalar" : out;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{p[i]} << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{p[i]} << (8 * i);
  return v;
}

// Visits every parameter in manifest order with its section prefix.
template <class Net, class Fn>
void visit_parameters(Net& net, Fn&& fn) {
  fn(std::string("fc.bias"), net.fc_bias());
  for (auto& l : net.layers()) {
    const std::string p = "L" + std::to_string(l.id);
    fn(p + ".bias", l.bias);
    for (auto& b : l.inputs) {
      const std::string q = p + ".in" + std::to_string(b.source);
      fn(q + ".w", b.weights);
      fn(q + ".g", b.gates.logits);
    }
    fn(p + ".head.w", l.head.weights);
    fn(p + ".head.g", l.head.gates.logits);
  }
}

std::map<std::string, std::string> parse_fields(std::istringstream& line) {
  std::map<std::string, std::string> f;
  std::string tok;
  while (line >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw CheckpointError("checkpoint manifest: expected key=value, got '" + tok + "'");
    f[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return f;
}

const std::string& field(const std::map<std::string, std::string>& f, const std::string& key) {
  const auto it = f.find(key);
  if (it == f.end()) throw CheckpointError("checkpoint manifest: missing field '" + key + "'");
  return it->second;
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) throw CheckpointError("checkpoint manifest: bad integer '" + s + "'");
  return v;
}

double to_double(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw CheckpointError("checkpoint manifest: bad number '" + s + "'");
}

Shape parse_shape(const std::string& s) {
  Shape out;
  if (s == "scalar") return out;
  std::stringstream ss(s);
  std::string d;
  while (std::getline(ss, d, 'x')) out.push_back(to_u64(d));
  return out;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Network<float>& net,
                                               const std::map<std::string, std::string>& config, const RngCursor& cursor,
                                               bool with_optimizer) {
  const NetConfig& c = net.config();
  std::ostringstream m;
  m << "gnap-checkpoint\nversion " << kCheckpointVersion << "\n";
  m << "net blocks=" << net.block_count() << " classes=" << net.classes() << " in_channels=" << c.in_channels
    << " height=" << c.height << " width=" << c.width << " kernel=" << c.kernel << " pool_window=" << c.pool_window
    << " pool=" << (c.pool == PoolMode::max ? "max" : "avg")
    << " granularity=" << (c.granularity == Granularity::weight ? "weight" : "kernel")
    << " connectivity=" << (c.connectivity == Connectivity::global ? "global" : "within_block")
    << " temperature=" << fmt_double(c.temperature) << " next_id=" << net.next_id() << "\n";
  for (const auto& l : net.layers()) {
    m << "layer " << l.id << " block=" << l.block << " width=" << l.width << " sources=";
    for (std::size_t i = 0; i < l.inputs.size(); ++i) m << (i ? "," : "") << l.inputs[i].source;
    m << "\n";
  }
  for (const auto& [k, v] : config) {
    if (k.empty() || k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos)
      throw CheckpointError("checkpoint: config key/value '" + k + "' cannot be stored");
    m << "config " << k << " " << v << "\n";
  }
  m << "cursor seed=" << cursor.seed << " epoch=" << cursor.epoch << " phases=" << cursor.phases << "\n";
  m << "optimizer " << (with_optimizer ? 1 : 0) << "\n";

  std::vector<std::uint8_t> payload;
  auto section = [&](const std::string& name, const char* dtype, const Shape& shape, std::size_t bytes) {
    m << "section " << name << " " << dtype << " " << shape_text(shape) << "\n";
    put_u64(payload, bytes);
  };
  visit_parameters(net, [&](const std::string& name, const Parameter<float>& p) {
    section(name, "f32", p.shape(), 4 * p.size());
    for (float v : p.tensor.values()) put_u32(payload, std::bit_cast<std::uint32_t>(v));
    if (!with_optimizer) return;
    section(name + ".m", "f32", p.shape(), 4 * p.size());
    for (float v : p.m) put_u32(payload, std::bit_cast<std::uint32_t>(v));
    section(name + ".v", "f32", p.shape(), 4 * p.size());
    for (float v : p.v) put_u32(payload, std::bit_cast<std::uint32_t>(v));
    section(name + ".steps", "u32", p.shape(), 4 * p.size());
    for (std::uint32_t v : p.steps) put_u32(payload, v);
  });
  m << "end\n";
  const std::string text = m.str();
  std::vector<std::uint8_t> out(text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  // Manifest lines up to "end".
  std::size_t pos = 0;
  std::vector<std::string> lines;
  for (;;) {
    const auto nl = std::find(bytes.begin() + static_cast<long>(pos), bytes.end(), std::uint8_t{'\n'});
    if (nl == bytes.end()) throw CheckpointError("checkpoint: manifest is not terminated by 'end'");
    const std::string line(bytes.begin() + static_cast<long>(pos), nl);
    pos = static_cast<std::size_t>(nl - bytes.begin()) + 1;
    if (line == "end") break;
    lines.push_back(line);
  }
  if (lines.size() < 2 || lines[0] != "gnap-checkpoint") throw CheckpointError("checkpoint: missing magic line");

  Checkpoint ck;
  {
    std::istringstream v(lines[1]);
    std::string tag;
    v >> tag >> ck.version;
    if (tag != "version" || !v) throw CheckpointError("checkpoint: missing version line");
    if (ck.version != kCheckpointVersion)
      throw CheckpointError("checkpoint: format version " + std::to_string(ck.version) + " is not supported (expected " +
                            std::to_string(kCheckpointVersion) + ")");
  }

  NetConfig nc;
  std::size_t blocks = 0, classes = 0;
  int next_id = 0;
  bool have_net = false, have_cursor = false, have_opt = false;
  std::vector<Layer<float>> layers;
  std::vector<Section> sections;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    std::istringstream ls(lines[i]);
    std::string tag;
    ls >> tag;
    if (tag == "net") {
      const auto f = parse_fields(ls);
      blocks = to_u64(field(f, "blocks"));
      classes = to_u64(field(f, "classes"));
      nc.in_channels = to_u64(field(f, "in_channels"));
      nc.height = to_u64(field(f, "height"));
      nc.width = to_u64(field(f, "width"));
      nc.kernel = to_u64(field(f, "kernel"));
      nc.pool_window = to_u64(field(f, "pool_window"));
      const auto& pool = field(f, "pool");
      if (pool != "max" && pool != "avg") throw CheckpointError("checkpoint: unknown pool '" + pool + "'");
      nc.pool = pool == "max" ? PoolMode::max : PoolMode::avg;
      const auto& gran = field(f, "granularity");
      if (gran != "weight" && gran != "kernel") throw CheckpointError("checkpoint: unknown granularity '" + gran + "'");
      nc.granularity = gran == "weight" ? Granularity::weight : Granularity::kernel;
      const auto& conn = field(f, "connectivity");
      if (conn != "global" && conn != "within_block")
        throw CheckpointError("checkpoint: unknown connectivity '" + conn + "'");
      nc.connectivity = conn == "global" ? Connectivity::global : Connectivity::within_block;
      nc.temperature = to_double(field(f, "temperature"));
      next_id = static_cast<int>(to_u64(field(f, "next_id")));
      have_net = true;
    } else if (tag == "layer") {
      Layer<float> l;
      ls >> l.id;
      const auto f = parse_fields(ls);
      l.block = to_u64(field(f, "block"));
      l.width = to_u64(field(f, "width"));
      std::stringstream src(field(f, "sources"));
      std::string s;
      while (std::getline(src, s, ',')) {
        Bundle<float> b;
        b.source = static_cast<int>(to_u64(s));
        l.inputs.push_back(std::move(b));
      }
      l.head.source = l.id;
      layers.push_back(std::move(l));
    } else if (tag == "config") {
      std::string key, value;
      ls >> key;
      std::getline(ls, value);
      if (!value.empty() && value[0] == ' ') value.erase(0, 1);
      ck.config[key] = value;
    } else if (tag == "cursor") {
      const auto f = parse_fields(ls);
      ck.cursor = {to_u64(field(f, "seed")), to_u64(field(f, "epoch")), to_u64(field(f, "phases"))};
      have_cursor = true;
    } else if (tag == "optimizer") {
      int v = -1;
      ls >> v;
      if (v != 0 && v != 1) throw CheckpointError("checkpoint: bad optimizer flag");
      ck.has_optimizer = v == 1;
      have_opt = true;
    } else if (tag == "section") {
      Section s;
      std::string dtype, shape;
      ls >> s.name >> dtype >> shape;
      if (dtype != "f32" && dtype != "u32") throw CheckpointError("checkpoint: unknown dtype '" + dtype + "'");
      s.dtype = dtype == "f32" ? DType::f32 : DType::u32;
      s.shape = parse_shape(shape);
      sections.push_back(std::move(s));
    } else {
      throw CheckpointError("checkpoint manifest: unknown line '" + lines[i] + "'");
    }
  }
  if (!have_net || !have_cursor || !have_opt) throw CheckpointError("checkpoint manifest: incomplete header");

  // Payload sections in manifest order.
  std::map<std::string, std::pair<const Section*, const std::uint8_t*>> data;
  for (const auto& s : sections) {
    if (pos + 8 > bytes.size()) throw CheckpointError("checkpoint: truncated before section '" + s.name + "'");
    const std::uint64_t len = get_u64(bytes.data() + pos);
    pos += 8;
    if (len != 4 * numel(s.shape))
      throw CheckpointError("checkpoint: section '" + s.name + "' declares " + std::to_string(4 * numel(s.shape)) +
                            " bytes but stores " + std::to_string(len));
    if (pos + len > bytes.size()) throw CheckpointError("checkpoint: section '" + s.name + "' is truncated");
    if (!data.emplace(s.name, std::make_pair(&s, bytes.data() + pos)).second)
      throw CheckpointError("checkpoint: duplicate section '" + s.name + "'");
    pos += len;
  }
  if (pos != bytes.size()) throw CheckpointError("checkpoint: trailing bytes after the last section");

  std::size_t used = 0;
  auto take = [&](const std::string& name, DType dtype) -> std::pair<Shape, const std::uint8_t*> {
    const auto it = data.find(name);
    if (it == data.end()) throw CheckpointError("checkpoint: missing section '" + name + "'");
    ++used;
    if (it->second.first->dtype != dtype) throw CheckpointError("checkpoint: section '" + name + "' has the wrong dtype");
    return {it->second.first->shape, it->second.second};
  };
  auto load_param = [&](const std::string& name, bool decay) {
    auto [shape, p] = take(name, DType::f32);
    std::vector<float> vals(numel(shape));
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = std::bit_cast<float>(get_u32(p + 4 * i));
    Parameter<float> param(Tensor<float>(shape, std::move(vals)), decay);
    if (ck.has_optimizer) {
      auto read = [&](const std::string& suffix, DType dt) {
        auto [s2, q] = take(name + suffix, dt);
        if (s2 != shape) throw CheckpointError("checkpoint: section '" + name + suffix + "' shape differs from its parameter");
        return q;
      };
      const auto* mp = read(".m", DType::f32);
      const auto* vp = read(".v", DType::f32);
      const auto* sp = read(".steps", DType::u32);
      for (std::size_t i = 0; i < param.size(); ++i) {
        param.m[i] = std::bit_cast<float>(get_u32(mp + 4 * i));
        param.v[i] = std::bit_cast<float>(get_u32(vp + 4 * i));
        param.steps[i] = get_u32(sp + 4 * i);
      }
    }
    return param;
  };
  auto load_gates = [&](const std::string& name, const Shape& weight_shape) {
    GateSet<float> g;
    g.granularity = nc.granularity;
    g.temperature = nc.temperature;
    g.kernel_area = gate_area_for(weight_shape, nc.granularity);
    g.logits = load_param(name, false);
    return g;
  };

  // Widths are needed to rebuild shapes; the section shapes are checked by validate().
  std::map<int, std::size_t> widths{{0, nc.in_channels}};
  for (const auto& l : layers) widths[l.id] = l.width;
  Parameter<float> fc_bias = load_param("fc.bias", true);
  for (auto& l : layers) {
    const std::string p = "L" + std::to_string(l.id);
    l.bias = load_param(p + ".bias", true);
    for (auto& b : l.inputs) {
      if (!widths.count(b.source)) throw CheckpointError("checkpoint: unknown source " + std::to_string(b.source));
      const std::string q = p + ".in" + std::to_string(b.source);
      b.weights = load_param(q + ".w", true);
      b.gates = load_gates(q + ".g", b.weights.shape());
    }
    l.head.weights = load_param(p + ".head.w", true);
    l.head.gates = load_gates(p + ".head.g", l.head.weights.shape());
  }
  if (used != data.size()) throw CheckpointError("checkpoint: manifest lists sections that belong to no parameter");
  try {
    ck.net = Network<float>::assemble(nc, blocks, classes, std::move(layers), std::move(fc_bias), next_id);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint: inconsistent topology: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Network<float>& net,
                     const std::map<std::string, std::string>& config, const RngCursor& cursor, bool with_optimizer) {
  const auto bytes = serialize_checkpoint(net, config, cursor, with_optimizer);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("short write to '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(in.tellg()));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw CheckpointError("cannot read checkpoint '" + path.string() + "'");
  return deserialize_checkpoint(bytes);
}

}  // namespace gnap
