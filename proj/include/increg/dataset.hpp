// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "increg/network.hpp"
#include "increg/rng.hpp"
#include "increg/tensor.hpp"

namespace increg {

/// Labelled images stored sample-major as float C×H×W planes.
struct Dataset {
  Shape3 image;
  std::size_t num_classes = 0;
  std::vector<float> pixels;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const float> sample(std::size_t i) const {
    return std::span<const float>(pixels).subspan(i * image.count(), image.count());
  }
};

struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t samples_per_class = 200;
  Shape3 image{3, 8, 8};
  /// Std-dev of the additive per-pixel Gaussian noise.
  double noise = 0.5;
  /// Max blob displacement in pixels (uniform, per axis).
  double jitter = 1.0;
};

/// Class-conditional Gaussian-blob images. Each class has its own blob
/// centre, width and channel colouring; samples add positional jitter and
/// pixel noise. Fully determined by (spec, seed).
Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// Size in bytes of one CIFAR-10 binary record: 1 label + 3·32·32 pixels.
inline constexpr std::size_t kCifarRecordBytes = 3073;

/// Parses one CIFAR-10 binary batch file. Pixels are scaled to [0, 1].
/// Throws FormatError if the size is not a positive multiple of 3073 or a
/// label exceeds 9.
Dataset load_cifar10_file(const std::filesystem::path& path);
/// Parses an in-memory batch (same rules as load_cifar10_file).
Dataset parse_cifar10(std::span<const std::uint8_t> bytes);

struct CifarSplit {
  Dataset train;
  Dataset test;
};
/// Loads data_batch_*.bin as train and test_batch.bin as test from `dir`.
/// Throws FormatError when no batch file is present.
CifarSplit load_cifar10(const std::filesystem::path& dir);

/// Per-channel means of a dataset.
std::vector<double> channel_means(const Dataset& d);
void subtract_channel_means(Dataset& d, std::span<const double> means);

/// Deterministic train/test split: a seeded permutation, the first
/// `test_fraction` of which becomes the test set.
CifarSplit split_dataset(const Dataset& d, double test_fraction, std::uint64_t seed);

/// Copies the given samples into a B×C×H×W tensor plus label vector.
template <typename T>
void gather_batch(const Dataset& d, std::span<const std::size_t> indices, Tensor<T>& images,
                  std::vector<int>& labels);

/// Fixed-size batches over a seeded reshuffle per epoch. The last partial
/// batch of an epoch is dropped.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed);
  std::span<const std::size_t> next();
  std::size_t epoch() const { return epoch_; }

 private:
  void reshuffle();

  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
};

}  // namespace increg
