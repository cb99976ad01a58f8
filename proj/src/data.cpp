#include "gnap/data.hpp"

#include <Eigen/Core>
#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace gnap {

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(in.tellg()));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  return bytes;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to '" + path.string() + "'");
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t offset, const std::filesystem::path& path) {
  if (offset + 4 > b.size())
    throw DataError("'" + path.string() + "': truncated header at byte offset " + std::to_string(offset));
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) | (std::uint32_t{b[offset + 2]} << 8) |
         std::uint32_t{b[offset + 3]};
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(rng.integer(0, static_cast<long>(i) - 1))]);
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

void Dataset::validate() const {
  if (images.rank() != 4) throw DataError("dataset images must be [N,C,H,W]");
  if (images.dim(0) != labels.size()) throw DataError("dataset image/label count mismatch");
  if (labels.empty()) throw DataError("dataset is empty");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= classes) throw DataError("label " + std::to_string(l) + " out of range");
}

Dataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto ib = read_file(images);
  const auto lb = read_file(labels);
  if (const auto magic = read_be32(ib, 0, images); magic != 0x00000803)
    throw DataError("'" + images.string() + "': bad image magic at byte offset 0");
  if (const auto magic = read_be32(lb, 0, labels); magic != 0x00000801)
    throw DataError("'" + labels.string() + "': bad label magic at byte offset 0");
  const std::size_t n = read_be32(ib, 4, images), rows = read_be32(ib, 8, images), cols = read_be32(ib, 12, images);
  const std::size_t nl = read_be32(lb, 4, labels);
  if (n != nl)
    throw DataError("'" + labels.string() + "': label count " + std::to_string(nl) + " at byte offset 4 does not match " +
                    std::to_string(n) + " images");
  if (n == 0 || rows == 0 || cols == 0) throw DataError("'" + images.string() + "': empty image set at byte offset 4");
  const std::size_t px = rows * cols;
  if (ib.size() < 16 + n * px)
    throw DataError("'" + images.string() + "': truncated pixel data at byte offset " + std::to_string(ib.size()));
  if (lb.size() < 8 + n) throw DataError("'" + labels.string() + "': truncated labels at byte offset " + std::to_string(lb.size()));

  Dataset d;
  d.classes = 10;
  d.source = "mnist:" + images.filename().string();
  d.images = Tensor<float>(Shape{n, 1, rows, cols});
  auto& v = d.images.storage();
  for (std::size_t i = 0; i < n * px; ++i) v[i] = static_cast<float>(ib[16 + i]) / 255.0f;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (lb[8 + i] >= 10)
      throw DataError("'" + labels.string() + "': label " + std::to_string(lb[8 + i]) + " at byte offset " +
                      std::to_string(8 + i) + " exceeds 9");
    d.labels[i] = lb[8 + i];
  }
  return d;
}

void write_mnist(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels) {
  data.validate();
  if (data.channels() != 1) throw DataError("write_mnist: single-channel images only");
  std::vector<std::uint8_t> ib, lb;
  put_be32(ib, 0x00000803);
  put_be32(ib, static_cast<std::uint32_t>(data.size()));
  put_be32(ib, static_cast<std::uint32_t>(data.height()));
  put_be32(ib, static_cast<std::uint32_t>(data.width()));
  for (float v : data.images.values()) ib.push_back(to_byte(v));
  put_be32(lb, 0x00000801);
  put_be32(lb, static_cast<std::uint32_t>(data.size()));
  for (int l : data.labels) lb.push_back(static_cast<std::uint8_t>(l));
  write_file(images, ib);
  write_file(labels, lb);
}

Dataset load_cifar(const std::vector<std::filesystem::path>& paths, CifarVariant variant) {
  constexpr std::size_t kPixels = 3 * 32 * 32;
  const std::size_t label_bytes = variant == CifarVariant::cifar100 ? 2 : 1;
  const std::size_t record = label_bytes + kPixels;
  const std::size_t classes = static_cast<std::size_t>(variant);
  std::vector<std::vector<std::uint8_t>> files;
  std::size_t n = 0;
  for (const auto& p : paths) {
    auto b = read_file(p);
    if (b.empty()) throw DataError("'" + p.string() + "': empty file");
    if (b.size() % record != 0)
      throw DataError("'" + p.string() + "': record size mismatch, " + std::to_string(b.size()) +
                      " bytes is not a multiple of " + std::to_string(record) + " (partial record at byte offset " +
                      std::to_string(b.size() - b.size() % record) + ")");
    n += b.size() / record;
    files.push_back(std::move(b));
  }
  if (n == 0) throw DataError("load_cifar: no files given");
  Dataset d;
  d.classes = classes;
  d.source = (variant == CifarVariant::cifar100 ? "cifar100:" : "cifar10:") + paths.front().filename().string();
  d.images = Tensor<float>(Shape{n, 3, 32, 32});
  d.labels.reserve(n);
  auto& v = d.images.storage();
  std::size_t at = 0;
  for (std::size_t f = 0; f < files.size(); ++f) {
    const auto& b = files[f];
    for (std::size_t r = 0; r < b.size() / record; ++r, ++at) {
      const std::size_t off = r * record;
      const std::uint8_t label = b[off + label_bytes - 1];  // fine label is the second byte in CIFAR-100
      if (label >= classes)
        throw DataError("'" + paths[f].string() + "': label " + std::to_string(label) + " at byte offset " +
                        std::to_string(off + label_bytes - 1) + " out of range");
      d.labels.push_back(label);
      for (std::size_t i = 0; i < kPixels; ++i) v[at * kPixels + i] = static_cast<float>(b[off + label_bytes + i]) / 255.0f;
    }
  }
  return d;
}

Dataset load_cifar(const std::filesystem::path& path, CifarVariant variant) {
  return load_cifar(std::vector<std::filesystem::path>{path}, variant);
}

void write_cifar(const Dataset& data, const std::filesystem::path& path, CifarVariant variant,
                 const std::vector<int>& coarse) {
  data.validate();
  if (data.channels() != 3 || data.height() != 32 || data.width() != 32)
    throw DataError("write_cifar: images must be [3,32,32]");
  if (!coarse.empty() && coarse.size() != data.size()) throw DataError("write_cifar: coarse label count mismatch");
  const std::size_t px = data.image_size();
  std::vector<std::uint8_t> b;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (variant == CifarVariant::cifar100) b.push_back(static_cast<std::uint8_t>(coarse.empty() ? 0 : coarse[i]));
    b.push_back(static_cast<std::uint8_t>(data.labels[i]));
    for (std::size_t j = 0; j < px; ++j) b.push_back(to_byte(data.images[i * px + j]));
  }
  write_file(path, b);
}

Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices) {
  const std::size_t px = data.image_size();
  Dataset d;
  d.classes = data.classes;
  d.source = data.source;
  d.images = Tensor<float>(Shape{indices.size(), data.channels(), data.height(), data.width()});
  d.labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices.at(k);
    if (i >= data.size()) throw std::out_of_range("subset: index " + std::to_string(i) + " out of range");
    std::copy_n(data.images.values().begin() + static_cast<long>(i * px), px,
                d.images.storage().begin() + static_cast<long>(k * px));
    d.labels.push_back(data.labels[i]);
  }
  return d;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double val_fraction,
                                                                            std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw std::invalid_argument("split: val_fraction must be in (0,1)");
  auto perm = iota(n);
  Rng rng = Rng(seed).split(0x73706c6974ULL);
  shuffle(perm, rng);
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * (1.0 - val_fraction)));
  std::vector<std::size_t> train(perm.begin(), perm.begin() + static_cast<long>(n_train));
  std::vector<std::size_t> val(perm.begin() + static_cast<long>(n_train), perm.end());
  return {std::move(train), std::move(val)};
}

std::pair<Dataset, Dataset> split(const Dataset& data, double val_fraction, std::uint64_t seed) {
  const auto [train, val] = split_indices(data.size(), val_fraction, seed);
  return {subset(data, train), subset(data, val)};
}

std::vector<std::vector<std::size_t>> batch_order(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                  std::uint64_t epoch) {
  if (batch_size == 0) throw std::invalid_argument("batches: batch_size must be >= 1");
  auto perm = iota(n);
  Rng rng = Rng(seed).split(epoch);
  shuffle(perm, rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size)
    out.emplace_back(perm.begin() + static_cast<long>(i), perm.begin() + static_cast<long>(std::min(n, i + batch_size)));
  return out;
}

void AugmentConfig::validate() const {
  if (hflip_prob < 0.0 || hflip_prob > 1.0) throw std::invalid_argument("augment: hflip_prob must be in [0,1]");
  if (!(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0))
    throw std::invalid_argument("augment: crop scale must satisfy 0 < min <= max <= 1");
  if (max_rotation_deg < 0 || max_shear_deg < 0 || translate_frac < 0)
    throw std::invalid_argument("augment: ranges must be non-negative");
}

AugmentParams sample_augment(const AugmentConfig& c, std::size_t height, std::size_t width, Rng& rng) {
  c.validate();
  AugmentParams p;
  p.flip = rng.bernoulli(c.hflip_prob);
  p.rotation_deg = rng.uniform(-c.max_rotation_deg, c.max_rotation_deg);
  p.shear_deg = rng.uniform(-c.max_shear_deg, c.max_shear_deg);
  p.translate_x = rng.uniform(-c.translate_frac, c.translate_frac) * static_cast<double>(width);
  p.translate_y = rng.uniform(-c.translate_frac, c.translate_frac) * static_cast<double>(height);
  p.crop_scale = rng.uniform(c.crop_scale_min, c.crop_scale_max);
  const double side = std::sqrt(p.crop_scale);
  p.crop_x = rng.uniform(-1.0, 1.0) * (1.0 - side) * static_cast<double>(width) / 2.0;
  p.crop_y = rng.uniform(-1.0, 1.0) * (1.0 - side) * static_cast<double>(height) / 2.0;
  if (c.cutout && c.cutout_size > 0) {
    const long half = static_cast<long>(c.cutout_size / 2);
    p.cutout = true;
    p.cutout_size = c.cutout_size;
    p.cutout_x = rng.integer(-half, static_cast<long>(width) - 1 - half);
    p.cutout_y = rng.integer(-half, static_cast<long>(height) - 1 - half);
  }
  return p;
}

std::vector<float> apply_augment(std::span<const float> image, std::size_t channels, std::size_t height,
                                 std::size_t width, const AugmentParams& p) {
  if (image.size() != channels * height * width) throw ShapeError("augment: image size does not match [C,H,W]");
  using M3 = Eigen::Matrix3d;
  constexpr double kDeg = std::numbers::pi / 180.0;
  M3 flip = M3::Identity();
  if (p.flip) flip(0, 0) = -1.0;
  const double th = p.rotation_deg * kDeg;
  M3 rot;
  rot << std::cos(th), -std::sin(th), 0, std::sin(th), std::cos(th), 0, 0, 0, 1;
  M3 affine;
  affine << 1, std::tan(p.shear_deg * kDeg), p.translate_x, 0, 1, p.translate_y, 0, 0, 1;
  const double zoom = 1.0 / std::sqrt(p.crop_scale);
  M3 crop;
  crop << zoom, 0, -zoom * p.crop_x, 0, zoom, -zoom * p.crop_y, 0, 0, 1;
  // forward map in centred pixel coordinates; sampling uses its inverse
  const M3 inv = (crop * affine * rot * flip).inverse();

  const double cx = (static_cast<double>(width) - 1.0) / 2.0, cy = (static_cast<double>(height) - 1.0) / 2.0;
  const long w = static_cast<long>(width), h = static_cast<long>(height);
  std::vector<float> out(image.size(), 0.0f);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      const Eigen::Vector3d src = inv * Eigen::Vector3d(static_cast<double>(x) - cx, static_cast<double>(y) - cy, 1.0);
      const double sx = src(0) + cx, sy = src(1) + cy;
      const double fx0 = std::floor(sx), fy0 = std::floor(sy);
      const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
      const double ax = sx - fx0, ay = sy - fy0;
      const double wts[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
      const long xs[4] = {x0, x0 + 1, x0, x0 + 1}, ys[4] = {y0, y0, y0 + 1, y0 + 1};
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t base = c * height * width;
        double acc = 0.0;
        for (int k = 0; k < 4; ++k)
          if (wts[k] != 0.0 && xs[k] >= 0 && xs[k] < w && ys[k] >= 0 && ys[k] < h)
            acc += wts[k] * image[base + static_cast<std::size_t>(ys[k] * w + xs[k])];
        out[base + static_cast<std::size_t>(y * w + x)] = static_cast<float>(acc);
      }
    }
  if (p.cutout)
    for (std::size_t c = 0; c < channels; ++c)
      for (long y = std::max(0L, p.cutout_y); y < std::min(h, p.cutout_y + static_cast<long>(p.cutout_size)); ++y)
        for (long x = std::max(0L, p.cutout_x); x < std::min(w, p.cutout_x + static_cast<long>(p.cutout_size)); ++x)
          out[c * height * width + static_cast<std::size_t>(y * w + x)] = 0.0f;
  return out;
}

std::vector<float> augment(std::span<const float> image, std::size_t channels, std::size_t height, std::size_t width,
                           const AugmentConfig& config, Rng& rng) {
  return apply_augment(image, channels, height, width, sample_augment(config, height, width, rng));
}

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices, Pipeline mode,
                 const AugmentConfig* augmentation, const Rng* stream) {
  if (mode == Pipeline::eval && augmentation) throw std::logic_error("make_batch: evaluation pipelines never augment");
  if (augmentation && !stream) throw std::invalid_argument("make_batch: augmentation needs a random stream");
  Batch b;
  const Dataset sub = subset(data, indices);
  b.labels = sub.labels;
  b.images = sub.images;
  if (augmentation) {
    const std::size_t px = data.image_size();
    for (std::size_t k = 0; k < indices.size(); ++k) {
      Rng r = stream->split(indices[k]);
      const auto img = augment(std::span<const float>(sub.images.values()).subspan(k * px, px), data.channels(),
                               data.height(), data.width(), *augmentation, r);
      std::copy(img.begin(), img.end(), b.images.storage().begin() + static_cast<long>(k * px));
    }
  }
  return b;
}

Dataset synthetic(SyntheticKind kind, std::size_t n, std::size_t classes, std::size_t size, std::uint64_t seed,
                  std::size_t channels) {
  if (classes < 2) throw std::invalid_argument("synthetic: need at least two classes");
  if (n == 0 || size == 0 || channels == 0) throw std::invalid_argument("synthetic: empty dataset requested");
  Rng rng(seed);
  std::vector<std::size_t> order = iota(n);
  shuffle(order, rng);
  Dataset d;
  d.classes = classes;
  d.source = kind == SyntheticKind::stripes ? "synthetic:stripes" : "synthetic:blobs";
  d.images = Tensor<float>(Shape{n, channels, size, size});
  d.labels.resize(n);
  const double pi = std::numbers::pi, s = static_cast<double>(size);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = order[i] % classes;
    d.labels[i] = static_cast<int>(c);
    const double angle = pi * static_cast<double>(c) / static_cast<double>(classes);
    const double phase = rng.uniform(0.0, 2.0 * pi);
    const double ring = 2.0 * pi * static_cast<double>(c) / static_cast<double>(classes);
    const double bx = s / 2 + s / 4 * std::cos(ring) + rng.uniform(-1, 1);
    const double by = s / 2 + s / 4 * std::sin(ring) + rng.uniform(-1, 1);
    for (std::size_t ch = 0; ch < channels; ++ch)
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          const double fx = static_cast<double>(x), fy = static_cast<double>(y);
          double v;
          if (kind == SyntheticKind::stripes) {
            v = 0.5 + 0.5 * std::sin(pi / 2 * (fx * std::cos(angle) + fy * std::sin(angle)) + phase);
          } else {
            const double r2 = (fx - bx) * (fx - bx) + (fy - by) * (fy - by);
            v = std::exp(-r2 / (2 * (s / 8) * (s / 8)));
          }
          v += rng.normal(0.0, 0.05);
          d.images[((i * channels + ch) * size + y) * size + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
  }
  return d;
}

}  // namespace gnap
