#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gnap/rng.hpp"
#include "gnap/tensor.hpp"

namespace gnap {

/// Malformed or unreadable dataset file. The message names the byte offset
/// where parsing failed when one applies.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Images [N,C,H,W] scaled to [0,1] plus class indices.
struct Dataset {
  Tensor<float> images;
  std::vector<int> labels;
  std::size_t classes = 0;
  std::string source;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  std::size_t image_size() const { return channels() * height() * width(); }
  void validate() const;
};

Dataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels);
void write_mnist(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels);

enum class CifarVariant { cifar10 = 10, cifar100 = 100 };

/// One binary batch file; CIFAR-100 keeps the fine label.
Dataset load_cifar(const std::filesystem::path& path, CifarVariant variant);
Dataset load_cifar(const std::vector<std::filesystem::path>& paths, CifarVariant variant);
/// CIFAR-100 records need a coarse label; `coarse` defaults to zeros.
void write_cifar(const Dataset& data, const std::filesystem::path& path, CifarVariant variant,
                 const std::vector<int>& coarse = {});

Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices);

/// Seeded permutation split into floor(N*(1-f)) training and remaining
/// validation indices.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double val_fraction,
                                                                            std::uint64_t seed);
std::pair<Dataset, Dataset> split(const Dataset& data, double val_fraction, std::uint64_t seed);

/// Shuffled batch index lists for one epoch; the last batch may be short.
std::vector<std::vector<std::size_t>> batch_order(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                  std::uint64_t epoch);

struct AugmentConfig {
  double hflip_prob = 0.0;
  double max_rotation_deg = 15.0;
  double max_shear_deg = 10.0;
  double translate_frac = 0.1;
  double crop_scale_min = 0.8;
  double crop_scale_max = 1.0;
  bool cutout = true;
  std::size_t cutout_size = 8;

  static AugmentConfig mnist() { return {}; }
  static AugmentConfig cifar() {
    AugmentConfig c;
    c.hflip_prob = 0.5;
    return c;
  }
  void validate() const;
};

/// One draw of augmentation parameters. The default value is the identity.
struct AugmentParams {
  bool flip = false;
  double rotation_deg = 0.0;
  double shear_deg = 0.0;
  double translate_x = 0.0;  // pixels
  double translate_y = 0.0;
  double crop_scale = 1.0;   // area fraction kept before resizing back
  double crop_x = 0.0;       // crop centre offset from the image centre, pixels
  double crop_y = 0.0;
  bool cutout = false;
  long cutout_x = 0;  // top-left corner, may hang off the image
  long cutout_y = 0;
  std::size_t cutout_size = 0;
};

AugmentParams sample_augment(const AugmentConfig& config, std::size_t height, std::size_t width, Rng& rng);

/// Applies flip, rotation, shear+translate and resized crop as one affine
/// map with bilinear sampling and zero fill, then the cutout patch.
/// `image` is one [C,H,W] sample.
std::vector<float> apply_augment(std::span<const float> image, std::size_t channels, std::size_t height,
                                 std::size_t width, const AugmentParams& params);

std::vector<float> augment(std::span<const float> image, std::size_t channels, std::size_t height, std::size_t width,
                           const AugmentConfig& config, Rng& rng);

enum class Pipeline { train, eval };

struct Batch {
  Tensor<float> images;
  std::vector<int> labels;
};

/// Gathers a batch. Training batches are augmented when `augmentation` is
/// given, each example drawing from `stream.split(index)`; evaluation
/// pipelines refuse an augmentation config.
Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices, Pipeline mode,
                 const AugmentConfig* augmentation = nullptr, const Rng* stream = nullptr);

enum class SyntheticKind { stripes, blobs };

/// Toy images whose class is visible from local texture (stripes: angle
/// and frequency) or position (blobs). Labels are balanced.
Dataset synthetic(SyntheticKind kind, std::size_t n, std::size_t classes, std::size_t size, std::uint64_t seed,
                  std::size_t channels = 1);

}  // namespace gnap
