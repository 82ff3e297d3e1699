#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "okdd/rng.hpp"
#include "okdd/tensor.hpp"

namespace okdd {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BadMagicError : DataError {
  using DataError::DataError;
};
struct TruncatedError : DataError {
  using DataError::DataError;
};
struct CountMismatchError : DataError {
  using DataError::DataError;
};
struct RecordSizeError : DataError {
  using DataError::DataError;
};

struct Dataset {
  Tensor inputs;            // [n, ...sample_shape], no gradient
  std::vector<int> labels;  // in [0, num_classes)
  int num_classes = 0;
  Shape sample_shape;
  bool is_image = false;                     // channel-major [C, H, W] samples
  std::vector<double> channel_mean, channel_std;  // set once normalization stats exist

  int size() const { return static_cast<int>(labels.size()); }
  std::int64_t sample_numel() const { return shape_numel(sample_shape); }
};

// Isotropic Gaussian blobs around seeded random unit directions scaled by
// class_separation; deterministic 80/20 per-class train/test split.
inline std::pair<Dataset, Dataset> synth_gaussian_mixture(int num_classes, int samples_per_class,
                                                          int input_dim, double class_separation,
                                                          std::uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("mixture needs num_classes >= 2");
  if (!(class_separation > 0.0)) throw std::invalid_argument("class_separation must be positive");
  if (samples_per_class < 5) throw std::invalid_argument("need at least 5 samples per class");
  Rng rng(sub_seed(seed, 0xda7a));
  std::vector<std::vector<double>> centers(num_classes, std::vector<double>(input_dim));
  for (auto& c : centers) {
    double norm = 0.0;
    for (double& v : c) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : c) v = v / norm * class_separation;
  }
  const int train_per_class = samples_per_class * 4 / 5;
  const int test_per_class = samples_per_class - train_per_class;
  auto make = [&](int per_class) {
    Dataset d;
    d.num_classes = num_classes;
    d.sample_shape = {input_dim};
    d.labels.reserve(static_cast<std::size_t>(per_class) * num_classes);
    std::vector<double> vals;
    vals.reserve(static_cast<std::size_t>(per_class) * num_classes * input_dim);
    return std::pair<Dataset, std::vector<double>>(std::move(d), std::move(vals));
  };
  auto [train, train_vals] = make(train_per_class);
  auto [test, test_vals] = make(test_per_class);
  for (int c = 0; c < num_classes; ++c)
    for (int s = 0; s < samples_per_class; ++s) {
      const bool is_train = s < train_per_class;
      auto& vals = is_train ? train_vals : test_vals;
      auto& ds = is_train ? train : test;
      for (int j = 0; j < input_dim; ++j) vals.push_back(centers[c][j] + rng.normal());
      ds.labels.push_back(c);
    }
  train.inputs = Tensor::of({train_per_class * num_classes, input_dim}, std::move(train_vals));
  test.inputs = Tensor::of({test_per_class * num_classes, input_dim}, std::move(test_vals));
  return {std::move(train), std::move(test)};
}

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

inline std::uint32_t read_be32(std::span<const unsigned char> bytes, std::size_t offset,
                               const std::string& path) {
  if (offset + 4 > bytes.size()) throw TruncatedError("truncated IDX header in " + path);
  return (std::uint32_t(bytes[offset]) << 24) | (std::uint32_t(bytes[offset + 1]) << 16) |
         (std::uint32_t(bytes[offset + 2]) << 8) | std::uint32_t(bytes[offset + 3]);
}

}  // namespace detail

// IDX image/label pair (big-endian magics 0x00000803 / 0x00000801). Pixels
// come out scaled to [0,1]; normalization stats are applied separately.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::read_file_bytes(images_path);
  const auto lab = detail::read_file_bytes(labels_path);

  const std::uint32_t img_magic = detail::read_be32(img, 0, images_path);
  if (img_magic != 0x00000803u)
    throw BadMagicError("bad IDX image magic in " + images_path);
  const std::uint32_t n_img = detail::read_be32(img, 4, images_path);
  const std::uint32_t rows = detail::read_be32(img, 8, images_path);
  const std::uint32_t cols = detail::read_be32(img, 12, images_path);
  const std::size_t need_img = 16 + static_cast<std::size_t>(n_img) * rows * cols;
  if (img.size() < need_img)
    throw TruncatedError("IDX image payload short by " + std::to_string(need_img - img.size()) +
                         " bytes in " + images_path);

  const std::uint32_t lab_magic = detail::read_be32(lab, 0, labels_path);
  if (lab_magic != 0x00000801u)
    throw BadMagicError("bad IDX label magic in " + labels_path);
  const std::uint32_t n_lab = detail::read_be32(lab, 4, labels_path);
  if (lab.size() < 8 + n_lab)
    throw TruncatedError("IDX label payload short in " + labels_path);
  if (n_img != n_lab)
    throw CountMismatchError("IDX count mismatch: " + std::to_string(n_img) + " images vs " +
                             std::to_string(n_lab) + " labels");

  Dataset d;
  d.sample_shape = {1, static_cast<int>(rows), static_cast<int>(cols)};
  d.is_image = true;
  std::vector<double> vals(static_cast<std::size_t>(n_img) * rows * cols);
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = img[16 + i] / 255.0;
  d.inputs = Tensor::of({static_cast<int>(n_img), 1, static_cast<int>(rows),
                         static_cast<int>(cols)},
                        std::move(vals));
  d.labels.resize(n_lab);
  int max_label = 0;
  for (std::uint32_t i = 0; i < n_lab; ++i) {
    d.labels[i] = lab[8 + i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.num_classes = max_label + 1;
  return d;
}

// CIFAR-10 binary records: 1 label byte + 3072 pixel bytes in channel-major
// R,G,B planes of 32x32. Pixels scaled to [0,1].
inline Dataset load_cifar_binary(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  constexpr std::size_t kRecord = 3073;
  if (bytes.size() % kRecord != 0)
    throw RecordSizeError("CIFAR file length " + std::to_string(bytes.size()) +
                          " is not a multiple of 3073: " + path);
  const std::size_t n = bytes.size() / kRecord;
  Dataset d;
  d.sample_shape = {3, 32, 32};
  d.is_image = true;
  d.labels.resize(n);
  std::vector<double> vals(n * 3072);
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = bytes[i * kRecord];
    for (std::size_t j = 0; j < 3072; ++j)
      vals[i * 3072 + j] = bytes[i * kRecord + 1 + j] / 255.0;
  }
  d.inputs = Tensor::of({static_cast<int>(n), 3, 32, 32}, std::move(vals));
  int max_label = 0;
  for (int l : d.labels) max_label = std::max(max_label, l);
  d.num_classes = n == 0 ? 0 : max_label + 1;
  return d;
}

// Per-channel mean/std over an image dataset (channel = dim 1).
inline std::pair<std::vector<double>, std::vector<double>> channel_stats(const Dataset& d) {
  if (!d.is_image || d.sample_shape.size() != 3)
    throw std::invalid_argument("channel stats need image samples [C, H, W]");
  const int channels = d.sample_shape[0];
  const std::int64_t per_channel = d.sample_numel() / channels;
  std::vector<double> mean(channels, 0.0), sq(channels, 0.0);
  const auto v = d.inputs.values();
  const std::int64_t stride = d.sample_numel();
  for (int i = 0; i < d.size(); ++i)
    for (int c = 0; c < channels; ++c)
      for (std::int64_t k = 0; k < per_channel; ++k) {
        const double x = v[i * stride + c * per_channel + k];
        mean[c] += x;
        sq[c] += x * x;
      }
  const double count = static_cast<double>(d.size()) * per_channel;
  std::vector<double> std_dev(channels);
  for (int c = 0; c < channels; ++c) {
    mean[c] /= count;
    std_dev[c] = std::sqrt(std::max(sq[c] / count - mean[c] * mean[c], 1e-12));
  }
  return {mean, std_dev};
}

inline void apply_channel_normalization(Dataset& d, const std::vector<double>& mean,
                                        const std::vector<double>& std_dev) {
  const int channels = d.sample_shape[0];
  const std::int64_t per_channel = d.sample_numel() / channels;
  const std::int64_t stride = d.sample_numel();
  auto v = d.inputs.values();
  for (int i = 0; i < d.size(); ++i)
    for (int c = 0; c < channels; ++c)
      for (std::int64_t k = 0; k < per_channel; ++k) {
        double& x = v[i * stride + c * per_channel + k];
        x = (x - mean[c]) / std_dev[c];
      }
  d.channel_mean = mean;
  d.channel_std = std_dev;
}

// Train-split stats applied to both splits.
inline void normalize_channels(Dataset& train, Dataset& test) {
  auto [mean, std_dev] = channel_stats(train);
  apply_channel_normalization(train, mean, std_dev);
  apply_channel_normalization(test, mean, std_dev);
}

// Records train-split stats on both datasets without transforming the pixels;
// used by pipelines that normalize per batch after augmentation.
inline void attach_channel_stats(Dataset& train, Dataset& test) {
  auto [mean, std_dev] = channel_stats(train);
  train.channel_mean = test.channel_mean = mean;
  train.channel_std = test.channel_std = std_dev;
}

// In-place per-channel normalization of a gathered [b, C, H, W] batch.
inline void normalize_batch(Tensor& batch, const std::vector<double>& mean,
                            const std::vector<double>& std_dev) {
  if (batch.shape().size() != 4)
    throw ShapeError("normalize_batch: expected [b, c, h, w], got " + shape_str(batch.shape()));
  const int b = batch.shape()[0], c = batch.shape()[1];
  const std::int64_t per_channel = batch.size() / (static_cast<std::int64_t>(b) * c);
  auto v = batch.values();
  for (int i = 0; i < b; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (std::int64_t k = 0; k < per_channel; ++k) {
        double& x = v[(static_cast<std::int64_t>(i) * c + ch) * per_channel + k];
        x = (x - mean[ch]) / std_dev[ch];
      }
}

namespace detail {

// zero-pad by `pad` on each side, then crop back to the original size at (oy, ox)
inline void pad_crop(std::span<const double> src, std::span<double> dst, int channels, int h,
                     int w, int pad, int oy, int ox) {
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int sy = y + oy - pad, sx = x + ox - pad;
        const bool inside = sy >= 0 && sy < h && sx >= 0 && sx < w;
        dst[(static_cast<std::size_t>(c) * h + y) * w + x] =
            inside ? src[(static_cast<std::size_t>(c) * h + sy) * w + sx] : 0.0;
      }
}

inline void hflip(std::span<double> img, int channels, int h, int w) {
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w / 2; ++x)
        std::swap(img[(static_cast<std::size_t>(c) * h + y) * w + x],
                  img[(static_cast<std::size_t>(c) * h + y) * w + (w - 1 - x)]);
}

}  // namespace detail

// Standard small-image augmentation: zero-pad 4, random crop back, horizontal
// flip with probability 1/2. Deterministic per (seed, epoch, image index).
inline Tensor augment_batch(const Tensor& images, std::uint64_t seed, int epoch,
                            std::span<const int> image_indices) {
  if (images.shape().size() != 4)
    throw ShapeError("augment_batch: expected [b, c, h, w], got " + shape_str(images.shape()));
  const int b = images.shape()[0], c = images.shape()[1], h = images.shape()[2],
            w = images.shape()[3];
  if (h < 8 || w < 8) throw std::invalid_argument("augment_batch: images smaller than 8x8");
  if (static_cast<int>(image_indices.size()) != b)
    throw std::invalid_argument("augment_batch: one source index per image required");
  constexpr int kPad = 4;
  std::vector<double> out(images.values().begin(), images.values().end());
  const std::size_t stride = static_cast<std::size_t>(c) * h * w;
  for (int i = 0; i < b; ++i) {
    Rng rng(sub_seed(sub_seed(seed, static_cast<std::uint64_t>(epoch)),
                     static_cast<std::uint64_t>(image_indices[i])));
    const int oy = static_cast<int>(rng.below(2 * kPad + 1));
    const int ox = static_cast<int>(rng.below(2 * kPad + 1));
    const bool flip = rng.uniform01() < 0.5;
    std::span<double> dst(out.data() + i * stride, stride);
    detail::pad_crop(images.values().subspan(i * stride, stride), dst, c, h, w, kPad, oy, ox);
    if (flip) detail::hflip(dst, c, h, w);
  }
  return Tensor::of(images.shape(), std::move(out));
}

// Seeded permutation split into batches; the final short batch is kept.
inline std::vector<std::vector<int>> batch_indices(int n, int batch_size,
                                                   std::uint64_t shuffle_seed, int epoch) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(sub_seed(shuffle_seed, static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

// Gather rows of a dataset into a batch tensor plus labels.
inline std::pair<Tensor, std::vector<int>> gather_batch(const Dataset& d,
                                                        std::span<const int> indices) {
  const std::int64_t stride = d.sample_numel();
  std::vector<double> vals(indices.size() * static_cast<std::size_t>(stride));
  std::vector<int> labels(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = d.inputs.values().subspan(indices[i] * stride, stride);
    std::copy(src.begin(), src.end(), vals.begin() + i * stride);
    labels[i] = d.labels[indices[i]];
  }
  Shape shape = d.sample_shape;
  shape.insert(shape.begin(), static_cast<int>(indices.size()));
  return {Tensor::of(std::move(shape), std::move(vals)), std::move(labels)};
}

}  // namespace okdd
