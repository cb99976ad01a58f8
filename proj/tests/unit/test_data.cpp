#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>

#include "gnap/data.hpp"

using namespace gnap;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("gnap_data_" + std::to_string(Rng::mix(reinterpret_cast<std::uintptr_t>(this))));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path operator/(const std::string& name) const { return path / name; }
};

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// IDX layout: 4-byte big-endian magic, counts/dims, then payload bytes
std::vector<std::uint8_t> idx_images(const std::vector<std::vector<std::uint8_t>>& imgs) {
  std::vector<std::uint8_t> b{0, 0, 8, 3, 0, 0, 0, static_cast<std::uint8_t>(imgs.size()), 0, 0, 0, 28, 0, 0, 0, 28};
  for (const auto& img : imgs) b.insert(b.end(), img.begin(), img.end());
  return b;
}

std::vector<std::uint8_t> idx_labels(const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> b{0, 0, 8, 1, 0, 0, 0, static_cast<std::uint8_t>(labels.size())};
  b.insert(b.end(), labels.begin(), labels.end());
  return b;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("load_mnist: hand-built fixture") {
  TempDir dir;
  std::vector<std::uint8_t> a(784, 0), b(784, 7);
  a[0] = 255;
  a[28 * 3 + 5] = 51;
  write_bytes(dir / "img", idx_images({a, b}));
  write_bytes(dir / "lbl", idx_labels({3, 9}));
  const auto d = load_mnist(dir / "img", dir / "lbl");
  CHECK(d.images.shape() == Shape{2, 1, 28, 28});
  CHECK(d.labels == std::vector<int>{3, 9});
  CHECK(d.classes == 10);
  CHECK(d.images[0] == 1.0f);
  CHECK(d.images[28 * 3 + 5] == doctest::Approx(0.2));
  CHECK(d.images[784 + 17] == doctest::Approx(7.0 / 255));
}

TEST_CASE("load_mnist: malformed files name the offset") {
  TempDir dir;
  const std::vector<std::uint8_t> img(784, 1);
  write_bytes(dir / "lbl", idx_labels({1}));

  write_bytes(dir / "short", {0, 0, 8, 3, 0, 0});
  CHECK(error_of([&] { load_mnist(dir / "short", dir / "lbl"); }).find("byte offset 4") != std::string::npos);

  auto bad = idx_images({img});
  bad[3] = 1;
  write_bytes(dir / "magic", bad);
  CHECK(error_of([&] { load_mnist(dir / "magic", dir / "lbl"); }).find("byte offset 0") != std::string::npos);

  auto trunc = idx_images({img});
  trunc.resize(trunc.size() - 10);
  write_bytes(dir / "trunc", trunc);
  CHECK(error_of([&] { load_mnist(dir / "trunc", dir / "lbl"); }).find("byte offset") != std::string::npos);

  write_bytes(dir / "two", idx_images({img, img}));
  CHECK(error_of([&] { load_mnist(dir / "two", dir / "lbl"); }).find("does not match") != std::string::npos);

  write_bytes(dir / "one", idx_images({img}));
  write_bytes(dir / "badlbl", idx_labels({12}));
  CHECK(error_of([&] { load_mnist(dir / "one", dir / "badlbl"); }).find("byte offset 8") != std::string::npos);
  CHECK_THROWS_AS(load_mnist(dir / "missing", dir / "lbl"), DataError);
}

TEST_CASE("mnist round trip is bit-identical") {
  TempDir dir;
  Rng rng(1);
  std::vector<std::vector<std::uint8_t>> imgs(5, std::vector<std::uint8_t>(784));
  for (auto& im : imgs)
    for (auto& p : im) p = static_cast<std::uint8_t>(rng.integer(0, 255));
  write_bytes(dir / "img", idx_images(imgs));
  write_bytes(dir / "lbl", idx_labels({0, 1, 2, 3, 4}));
  const auto d = load_mnist(dir / "img", dir / "lbl");
  write_mnist(d, dir / "img2", dir / "lbl2");
  CHECK(read_bytes(dir / "img2") == read_bytes(dir / "img"));
  CHECK(read_bytes(dir / "lbl2") == read_bytes(dir / "lbl"));
  const auto e = load_mnist(dir / "img2", dir / "lbl2");
  CHECK(std::equal(d.images.values().begin(), d.images.values().end(), e.images.values().begin()));
}

TEST_CASE("load_cifar: record layout") {
  TempDir dir;
  std::vector<std::uint8_t> rec(1 + 3072);
  rec[0] = 6;
  for (std::size_t i = 0; i < 3072; ++i) rec[1 + i] = static_cast<std::uint8_t>(i % 251);
  write_bytes(dir / "c10", rec);
  const auto d = load_cifar(dir / "c10", CifarVariant::cifar10);
  CHECK(d.images.shape() == Shape{1, 3, 32, 32});
  CHECK(d.labels == std::vector<int>{6});
  // channel-major: green plane starts at 1024
  CHECK(d.images[1024 + 33] == doctest::Approx(static_cast<float>((1024 + 33) % 251) / 255.0f));
  write_cifar(d, dir / "c10b", CifarVariant::cifar10);
  CHECK(read_bytes(dir / "c10b") == rec);

  std::vector<std::uint8_t> rec100(2 + 3072, 9);
  rec100[0] = 4;   // coarse
  rec100[1] = 87;  // fine
  write_bytes(dir / "c100", rec100);
  const auto f = load_cifar(dir / "c100", CifarVariant::cifar100);
  CHECK(f.labels == std::vector<int>{87});
  CHECK(f.classes == 100);
  write_cifar(f, dir / "c100b", CifarVariant::cifar100, {4});
  CHECK(read_bytes(dir / "c100b") == rec100);

  write_bytes(dir / "empty", {});
  CHECK_THROWS_AS(load_cifar(dir / "empty", CifarVariant::cifar10), DataError);
  rec.push_back(0);
  write_bytes(dir / "odd", rec);
  CHECK(error_of([&] { load_cifar(dir / "odd", CifarVariant::cifar10); }).find("byte offset 3073") != std::string::npos);
  rec100[1] = 100;
  write_bytes(dir / "badfine", rec100);
  CHECK_THROWS_AS(load_cifar(dir / "badfine", CifarVariant::cifar100), DataError);

  const auto two = load_cifar(std::vector<fs::path>{dir / "c10", dir / "c10b"}, CifarVariant::cifar10);
  CHECK(two.size() == 2);
}

TEST_CASE("split") {
  const auto [tr, va] = split_indices(100, 0.1, 7);
  CHECK(tr.size() == 90);
  CHECK(va.size() == 10);
  CHECK(split_indices(100, 0.1, 7) == std::make_pair(tr, va));
  CHECK(split_indices(100, 0.1, 8).first != tr);
  CHECK_THROWS_AS(split_indices(10, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(split_indices(10, 1.0, 1), std::invalid_argument);

  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = static_cast<std::size_t>(rng.integer(1, 500));
    const double f = rng.uniform(0.01, 0.99);
    auto [a, b] = split_indices(n, f, static_cast<std::uint64_t>(trial));
    CHECK(a.size() == static_cast<std::size_t>(std::floor(static_cast<double>(n) * (1 - f))));
    a.insert(a.end(), b.begin(), b.end());
    std::sort(a.begin(), a.end());
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    CHECK(a == all);
  }

  const auto data = synthetic(SyntheticKind::blobs, 30, 3, 8, 1);
  const auto [train, val] = split(data, 1.0 / 6, 3);
  CHECK(train.size() == 25);
  CHECK(val.size() == 5);
  const auto idx = split_indices(30, 1.0 / 6, 3).second;
  CHECK(val.labels[0] == data.labels[idx[0]]);
}

TEST_CASE("batch_order") {
  const auto b = batch_order(10, 4, 1, 0);
  REQUIRE(b.size() == 3);
  CHECK(b[0].size() == 4);
  CHECK(b[1].size() == 4);
  CHECK(b[2].size() == 2);
  CHECK(batch_order(10, 4, 1, 0) == b);
  CHECK(batch_order(10, 4, 1, 1) != b);
  CHECK_THROWS_AS(batch_order(10, 0, 1, 0), std::invalid_argument);

  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const auto n = static_cast<std::size_t>(rng.integer(1, 300));
    std::vector<std::size_t> seen;
    for (const auto& batch : batch_order(n, static_cast<std::size_t>(rng.integer(1, 64)), 5, 9)) seen.insert(seen.end(), batch.begin(), batch.end());
    std::sort(seen.begin(), seen.end());
    CHECK(seen.size() == n);
    CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
    CHECK(seen.back() == n - 1);
  }
}

TEST_CASE("augment: identity and flips") {
  Rng rng(4);
  std::vector<float> img(2 * 7 * 9);
  for (auto& v : img) v = static_cast<float>(rng.uniform(0, 1));
  const auto same = apply_augment(img, 2, 7, 9, AugmentParams{});
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(same[i] - img[i]) <= 1e-6f);

  AugmentParams flip;
  flip.flip = true;
  const auto once = apply_augment(img, 2, 7, 9, flip);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 7; ++y)
      for (std::size_t x = 0; x < 9; ++x) CHECK(once[(c * 7 + y) * 9 + x] == img[(c * 7 + y) * 9 + (8 - x)]);
  CHECK(apply_augment(once, 2, 7, 9, flip) == img);

  AugmentConfig cfg;
  cfg.hflip_prob = 0.5;
  std::size_t flips = 0;
  for (int i = 0; i < 10000; ++i) flips += sample_augment(cfg, 28, 28, rng).flip;
  CHECK(std::abs(static_cast<double>(flips) / 10000 - 0.5) <= 0.02);
  CHECK_FALSE(sample_augment(AugmentConfig::mnist(), 28, 28, rng).flip);
}

TEST_CASE("augment: quarter-turn rotation matches index arithmetic") {
  Rng rng(5);
  std::vector<float> img(6 * 6);
  for (auto& v : img) v = static_cast<float>(rng.uniform(0, 1));
  AugmentParams p;
  p.rotation_deg = 90;
  const auto out = apply_augment(img, 1, 6, 6, p);
  // out(x, y) = in(y, 5 - x) in (column, row) order
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 6; ++x) CHECK(out[y * 6 + x] == doctest::Approx(img[(5 - x) * 6 + y]).epsilon(1e-6));
}

TEST_CASE("augment: translation, crop and cutout") {
  std::vector<float> img(8 * 8);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i + 1);
  AugmentParams shift;
  shift.translate_x = 2;
  const auto moved = apply_augment(img, 1, 8, 8, shift);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) CHECK(moved[y * 8 + x] == (x < 2 ? 0.0f : img[y * 8 + x - 2]));

  AugmentParams zoom;
  zoom.crop_scale = 0.25;  // half side, centred: output x samples source 3.5 + (x - 3.5) / 2
  const auto z = apply_augment(img, 1, 8, 8, zoom);
  // pixel (0,0) reads source (1.75, 1.75)
  CHECK(z[0] == doctest::Approx(img[1 * 8 + 1] * 0.0625 + img[1 * 8 + 2] * 0.1875 + img[2 * 8 + 1] * 0.1875 +
                                img[2 * 8 + 2] * 0.5625));

  AugmentParams cut;
  cut.cutout = true;
  cut.cutout_size = 3;
  cut.cutout_x = 6;
  cut.cutout_y = -1;
  const auto holed = apply_augment(img, 1, 8, 8, cut);
  std::size_t zeros = 0;
  for (float v : holed) zeros += v == 0.0f;
  CHECK(zeros == 4);  // 2 columns x 2 rows remain inside the image
  CHECK(holed[0 * 8 + 6] == 0.0f);
  CHECK(holed[2 * 8 + 6] == img[2 * 8 + 6]);
}

TEST_CASE("make_batch: labels and shapes survive augmentation; eval never augments") {
  const auto data = synthetic(SyntheticKind::stripes, 20, 4, 12, 6);
  const std::vector<std::size_t> idx{3, 1, 4, 15};
  const Rng stream(11);
  const auto cfg = AugmentConfig::cifar();
  const auto b = make_batch(data, idx, Pipeline::train, &cfg, &stream);
  CHECK(b.images.shape() == Shape{4, 1, 12, 12});
  for (std::size_t k = 0; k < 4; ++k) CHECK(b.labels[k] == data.labels[idx[k]]);
  // per-example streams make the result independent of batch composition
  const auto single = make_batch(data, {4}, Pipeline::train, &cfg, &stream);
  for (std::size_t i = 0; i < 144; ++i) CHECK(single.images[i] == b.images[2 * 144 + i]);
  const auto plain = make_batch(data, idx, Pipeline::eval);
  for (std::size_t i = 0; i < 144; ++i) CHECK(plain.images[i] == data.images[3 * 144 + i]);
  CHECK_THROWS_AS(make_batch(data, idx, Pipeline::eval, &cfg, &stream), std::logic_error);
}

TEST_CASE("synthetic datasets") {
  for (auto kind : {SyntheticKind::stripes, SyntheticKind::blobs}) {
    const auto a = synthetic(kind, 203, 5, 10, 9);
    const auto b = synthetic(kind, 203, 5, 10, 9);
    CHECK(a.images.shape() == Shape{203, 1, 10, 10});
    CHECK(a.labels == b.labels);
    CHECK(std::equal(a.images.values().begin(), a.images.values().end(), b.images.values().begin()));
    std::map<int, int> counts;
    for (int l : a.labels) ++counts[l];
    CHECK(counts.size() == 5);
    for (auto [l, c] : counts) CHECK(std::abs(c - 203 / 5) <= 1);
    for (float v : a.images.values()) CHECK((v >= 0.0f && v <= 1.0f));
    a.validate();
  }
  CHECK_THROWS_AS(synthetic(SyntheticKind::blobs, 10, 1, 8, 0), std::invalid_argument);
}
