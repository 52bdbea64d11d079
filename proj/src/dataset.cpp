// SPDX-License-Identifier: Apache-2.0
#include "increg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

namespace increg {

Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.classes == 0 || spec.samples_per_class == 0 || spec.image.count() == 0) {
    throw ConfigError("synthetic: classes, samples_per_class and image dims must be positive");
  }
  Rng rng(seed);
  const Shape3 img = spec.image;
  struct Blob {
    double cy, cx, sigma;
    std::vector<double> colour;
  };
  std::vector<Blob> blobs(spec.classes);
  for (auto& b : blobs) {
    b.cy = rng.uniform(0.2, 0.8) * static_cast<double>(img.h - 1);
    b.cx = rng.uniform(0.2, 0.8) * static_cast<double>(img.w - 1);
    b.sigma = rng.uniform(0.8, 1.6) * std::max<double>(1.0, static_cast<double>(img.h) / 8.0);
    b.colour.resize(img.c);
    for (auto& v : b.colour) v = rng.uniform(-1.0, 1.0);
  }

  Dataset d;
  d.image = img;
  d.num_classes = spec.classes;
  const std::size_t n = spec.classes * spec.samples_per_class;
  d.pixels.resize(n * img.count());
  d.labels.resize(n);
  std::size_t s = 0;
  // Samples are interleaved by class so any prefix is roughly balanced.
  for (std::size_t k = 0; k < spec.samples_per_class; ++k) {
    for (std::size_t c = 0; c < spec.classes; ++c, ++s) {
      const Blob& b = blobs[c];
      const double cy = b.cy + rng.uniform(-spec.jitter, spec.jitter);
      const double cx = b.cx + rng.uniform(-spec.jitter, spec.jitter);
      const double amp = rng.uniform(0.7, 1.3);
      float* out = d.pixels.data() + s * img.count();
      for (std::size_t ch = 0; ch < img.c; ++ch) {
        for (std::size_t y = 0; y < img.h; ++y) {
          for (std::size_t x = 0; x < img.w; ++x) {
            const double dy = static_cast<double>(y) - cy;
            const double dx = static_cast<double>(x) - cx;
            const double blob = std::exp(-(dy * dy + dx * dx) / (2.0 * b.sigma * b.sigma));
            const double v = amp * b.colour[ch] * blob + spec.noise * rng.normal();
            out[(ch * img.h + y) * img.w + x] = static_cast<float>(v);
          }
        }
      }
      d.labels[s] = static_cast<int>(c);
    }
  }
  return d;
}

Dataset parse_cifar10(std::span<const std::uint8_t> bytes) {
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    throw FormatError("CIFAR-10 batch of " + std::to_string(bytes.size()) +
                      " bytes is not a positive multiple of " +
                      std::to_string(kCifarRecordBytes));
  }
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  Dataset d;
  d.image = Shape3{3, 32, 32};
  d.num_classes = 10;
  d.labels.resize(n);
  d.pixels.resize(n * 3072);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw FormatError("CIFAR-10 record " + std::to_string(i) + " has label " +
                        std::to_string(rec[0]));
    }
    d.labels[i] = rec[0];
    float* out = d.pixels.data() + i * 3072;
    for (std::size_t j = 0; j < 3072; ++j) out[j] = static_cast<float>(rec[1 + j]) / 255.0f;
  }
  return d;
}

Dataset load_cifar10_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open CIFAR-10 batch " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return parse_cifar10(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

namespace {

void append(Dataset& into, const Dataset& from) {
  if (into.labels.empty()) {
    into = from;
    return;
  }
  into.pixels.insert(into.pixels.end(), from.pixels.begin(), from.pixels.end());
  into.labels.insert(into.labels.end(), from.labels.begin(), from.labels.end());
}

}  // namespace

CifarSplit load_cifar10(const std::filesystem::path& dir) {
  CifarSplit out;
  for (int i = 1; i <= 5; ++i) {
    const auto p = dir / ("data_batch_" + std::to_string(i) + ".bin");
    if (std::filesystem::exists(p)) append(out.train, load_cifar10_file(p));
  }
  const auto test = dir / "test_batch.bin";
  if (std::filesystem::exists(test)) out.test = load_cifar10_file(test);
  if (out.train.labels.empty()) {
    throw FormatError("no data_batch_*.bin files found in " + dir.string());
  }
  return out;
}

std::vector<double> channel_means(const Dataset& d) {
  std::vector<double> means(d.image.c, 0.0);
  const std::size_t plane = d.image.h * d.image.w;
  for (std::size_t s = 0; s < d.size(); ++s) {
    auto px = d.sample(s);
    for (std::size_t c = 0; c < d.image.c; ++c)
      for (std::size_t j = 0; j < plane; ++j) means[c] += px[c * plane + j];
  }
  const double denom = static_cast<double>(std::max<std::size_t>(1, d.size() * plane));
  for (auto& m : means) m /= denom;
  return means;
}

void subtract_channel_means(Dataset& d, std::span<const double> means) {
  if (means.size() != d.image.c) throw ShapeError("channel mean count mismatch");
  const std::size_t plane = d.image.h * d.image.w;
  for (std::size_t s = 0; s < d.size(); ++s) {
    float* px = d.pixels.data() + s * d.image.count();
    for (std::size_t c = 0; c < d.image.c; ++c)
      for (std::size_t j = 0; j < plane; ++j)
        px[c * plane + j] = static_cast<float>(px[c * plane + j] - means[c]);
  }
}

CifarSplit split_dataset(const Dataset& d, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test_fraction: must be in [0, 1)");
  }
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(d.size())));
  CifarSplit out;
  for (Dataset* part : {&out.train, &out.test}) {
    part->image = d.image;
    part->num_classes = d.num_classes;
  }
  for (std::size_t k = 0; k < order.size(); ++k) {
    Dataset& part = k < n_test ? out.test : out.train;
    auto px = d.sample(order[k]);
    part.pixels.insert(part.pixels.end(), px.begin(), px.end());
    part.labels.push_back(d.labels[order[k]]);
  }
  return out;
}

template <typename T>
void gather_batch(const Dataset& d, std::span<const std::size_t> indices, Tensor<T>& images,
                  std::vector<int>& labels) {
  const Shape4 shape{indices.size(), d.image.c, d.image.h, d.image.w};
  if (images.shape() != shape) images = Tensor<T>(shape);
  labels.resize(indices.size());
  const std::size_t count = d.image.count();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    auto px = d.sample(indices[b]);
    std::copy(px.begin(), px.end(), images.data() + b * count);
    labels[b] = d.labels[indices[b]];
  }
}

template void gather_batch<float>(const Dataset&, std::span<const std::size_t>, Tensor<float>&,
                                  std::vector<int>&);
template void gather_batch<double>(const Dataset&, std::span<const std::size_t>, Tensor<double>&,
                                   std::vector<int>&);

BatchSampler::BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
    : batch_size_(batch_size), rng_(seed), order_(dataset_size) {
  if (batch_size == 0 || batch_size > dataset_size) {
    throw ConfigError("batch_size: must be in [1, " + std::to_string(dataset_size) + "]");
  }
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  reshuffle();
}

void BatchSampler::reshuffle() {
  rng_.shuffle(std::span<std::size_t>(order_));
  cursor_ = 0;
}

std::span<const std::size_t> BatchSampler::next() {
  if (cursor_ + batch_size_ > order_.size()) {
    ++epoch_;
    reshuffle();
  }
  auto out = std::span<const std::size_t>(order_).subspan(cursor_, batch_size_);
  cursor_ += batch_size_;
  return out;
}

}  // namespace increg
