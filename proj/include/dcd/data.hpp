// Copyright 2026 The DCD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Dataset ingestion (CIFAR-10/100 binary, MNIST IDX, synthetic Gaussian blobs)
// and deterministic mini-batching. Pixels are stored as 32-bit floats and
// widened to double when a batch is assembled.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dcd/error.hpp"
#include "dcd/random.hpp"
#include "dcd/tensor.hpp"

namespace dcd {

using Bytes = std::vector<std::uint8_t>;

struct Dataset {
  std::string name;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;  // [M, C, H, W]
  std::vector<int> labels;
  int class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return channels * height * width; }

  /// Label range always; the [0, 1] pixel range only for image datasets.
  void validate(bool check_pixel_range = true) const {
    if (pixels.size() != size() * image_size()) throw DimensionError("dataset pixel count does not match labels");
    for (int l : labels)
      if (l < 0 || l >= class_count) throw IndexError("dataset label " + std::to_string(l) + " out of range");
    if (check_pixel_range)
      for (float p : pixels)
        if (!(p >= 0.0f && p <= 1.0f)) throw DomainError("pixel value outside [0, 1]");
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset d{name, channels, height, width, {}, {}, class_count};
    const std::size_t is = image_size();
    d.pixels.reserve(idx.size() * is);
    d.labels.reserve(idx.size());
    for (std::size_t i : idx) {
      if (i >= size()) throw IndexError("subset index out of range");
      d.pixels.insert(d.pixels.end(), pixels.begin() + static_cast<std::ptrdiff_t>(i * is),
                      pixels.begin() + static_cast<std::ptrdiff_t>((i + 1) * is));
      d.labels.push_back(labels[i]);
    }
    return d;
  }

  Dataset head(std::size_t n) const {
    std::vector<std::size_t> idx(std::min(n, size()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return subset(idx);
  }

  /// Single image as a [1, C, H, W] double tensor.
  Tensor image(std::size_t i) const {
    Tensor t({1, channels, height, width});
    for (std::size_t k = 0; k < image_size(); ++k) t[k] = pixels[i * image_size() + k];
    return t;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.channels != b.channels || a.height != b.height || a.width != b.width)
    throw DimensionError("concat of datasets with different image shapes");
  Dataset d = a;
  d.pixels.insert(d.pixels.end(), b.pixels.begin(), b.pixels.end());
  d.labels.insert(d.labels.end(), b.labels.begin(), b.labels.end());
  d.class_count = std::max(a.class_count, b.class_count);
  return d;
}

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------
// CIFAR binary: per record [label bytes][R plane 1024][G plane 1024][B plane 1024].

namespace detail {

inline constexpr std::size_t kCifarPixels = 3 * 32 * 32;

inline Dataset parse_cifar(std::span<const std::uint8_t> bytes, std::size_t label_bytes, int classes, const char* name) {
  const std::size_t rec = label_bytes + kCifarPixels;
  if (bytes.size() % rec != 0)
    throw FormatError(std::string(name) + ": length " + std::to_string(bytes.size()) + " is not a multiple of " +
                          std::to_string(rec),
                      bytes.size() - bytes.size() % rec);
  const std::size_t m = bytes.size() / rec;
  Dataset d{name, 3, 32, 32, {}, {}, classes};
  d.pixels.resize(m * kCifarPixels);
  d.labels.resize(m);
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t off = r * rec;
    const std::size_t label_off = off + label_bytes - 1;  // fine label is the last label byte
    const int label = bytes[label_off];
    if (label >= classes)
      throw FormatError(std::string(name) + ": label " + std::to_string(label) + " exceeds " + std::to_string(classes - 1),
                        label_off);
    d.labels[r] = label;
    for (std::size_t k = 0; k < kCifarPixels; ++k)
      d.pixels[r * kCifarPixels + k] = static_cast<float>(bytes[off + label_bytes + k]) / 255.0f;
  }
  return d;
}

inline std::uint8_t to_byte(float p) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(p, 0.0f, 1.0f) * 255.0f));
}

inline Bytes serialize_cifar(const Dataset& d, std::size_t label_bytes) {
  if (d.channels != 3 || d.height != 32 || d.width != 32) throw DimensionError("CIFAR records are 3x32x32");
  Bytes out;
  out.reserve(d.size() * (label_bytes + kCifarPixels));
  for (std::size_t r = 0; r < d.size(); ++r) {
    if (label_bytes == 2) out.push_back(0);  // coarse label is not tracked
    out.push_back(static_cast<std::uint8_t>(d.labels[r]));
    for (std::size_t k = 0; k < kCifarPixels; ++k) out.push_back(to_byte(d.pixels[r * kCifarPixels + k]));
  }
  return out;
}

inline std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

inline void write_be32(Bytes& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

}  // namespace detail

/// 3073-byte records: 1 label byte (0-9) + 3072 pixels.
inline Dataset parse_cifar10(std::span<const std::uint8_t> bytes) { return detail::parse_cifar(bytes, 1, 10, "cifar10"); }

/// 3074-byte records: coarse label byte (ignored) + fine label byte (0-99) + 3072 pixels.
inline Dataset parse_cifar100(std::span<const std::uint8_t> bytes) { return detail::parse_cifar(bytes, 2, 100, "cifar100"); }

inline Bytes serialize_cifar10(const Dataset& d) { return detail::serialize_cifar(d, 1); }
inline Bytes serialize_cifar100(const Dataset& d) { return detail::serialize_cifar(d, 2); }

// ---------------------------------------------------------------------------
// MNIST IDX: big-endian headers, images magic 0x00000803, labels magic 0x00000801.

inline Dataset parse_mnist_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
  if (images.size() < 16) throw FormatError("mnist images: truncated header", images.size());
  if (labels.size() < 8) throw FormatError("mnist labels: truncated header", labels.size());
  if (detail::read_be32(images, 0) != 0x00000803) throw FormatError("mnist images: bad magic", 0);
  if (detail::read_be32(labels, 0) != 0x00000801) throw FormatError("mnist labels: bad magic", 0);
  const std::size_t count = detail::read_be32(images, 4);
  const std::size_t rows = detail::read_be32(images, 8);
  const std::size_t cols = detail::read_be32(images, 12);
  const std::size_t label_count = detail::read_be32(labels, 4);
  if (count != label_count)
    throw FormatError("mnist: image count " + std::to_string(count) + " != label count " + std::to_string(label_count), 4);
  const std::size_t expect_img = 16 + count * rows * cols;
  if (images.size() != expect_img)
    throw FormatError("mnist images: payload length " + std::to_string(images.size()) + ", expected " + std::to_string(expect_img),
                      std::min(images.size(), expect_img));
  if (labels.size() != 8 + count)
    throw FormatError("mnist labels: payload length " + std::to_string(labels.size()) + ", expected " + std::to_string(8 + count),
                      std::min(labels.size(), 8 + count));
  Dataset d{"mnist", 1, rows, cols, {}, {}, 10};
  d.pixels.resize(count * rows * cols);
  d.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int l = labels[8 + i];
    if (l > 9) throw FormatError("mnist labels: label " + std::to_string(l) + " exceeds 9", 8 + i);
    d.labels[i] = l;
  }
  for (std::size_t k = 0; k < d.pixels.size(); ++k) d.pixels[k] = static_cast<float>(images[16 + k]) / 255.0f;
  return d;
}

inline std::pair<Bytes, Bytes> serialize_mnist_idx(const Dataset& d) {
  if (d.channels != 1) throw DimensionError("MNIST images are single-channel");
  Bytes img, lab;
  detail::write_be32(img, 0x00000803);
  detail::write_be32(img, static_cast<std::uint32_t>(d.size()));
  detail::write_be32(img, static_cast<std::uint32_t>(d.height));
  detail::write_be32(img, static_cast<std::uint32_t>(d.width));
  for (float p : d.pixels) img.push_back(detail::to_byte(p));
  detail::write_be32(lab, 0x00000801);
  detail::write_be32(lab, static_cast<std::uint32_t>(d.size()));
  for (int l : d.labels) lab.push_back(static_cast<std::uint8_t>(l));
  return {std::move(img), std::move(lab)};
}

// ---------------------------------------------------------------------------
// Synthetic Gaussian blobs.

struct BlobSpec {
  std::size_t classes = 2;
  std::size_t per_class = 100;
  std::size_t dim = 2;
  double separation = 1.0;  // pairwise distance between class means when classes <= dim
  double sigma = 1.0;
  std::size_t modes = 1;        // sub-clusters per class
  std::uint64_t mean_seed = 0;  // fixes the family (class means)
  std::uint64_t seed = 0;       // fixes the samples
};

/// Cluster centres, `modes` consecutive rows per class: rows of a random
/// orthonormal frame scaled so every pair sits `separation` apart. With more
/// centres than dimensions the frame is replaced by random unit directions.
inline std::vector<std::vector<double>> blob_means(const BlobSpec& s) {
  Rng rng(derive_seed(s.mean_seed, {0x6d65616e73ULL}));
  std::vector<std::vector<double>> basis;
  for (std::size_t c = 0; c < s.classes * s.modes; ++c) {
    std::vector<double> v(s.dim);
    double norm = 0.0;
    do {
      for (double& x : v) x = rng.normal();
      if (c < s.dim)
        for (const auto& b : basis) {
          double dot = 0.0;
          for (std::size_t k = 0; k < s.dim; ++k) dot += v[k] * b[k];
          for (std::size_t k = 0; k < s.dim; ++k) v[k] -= dot * b[k];
        }
      norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
    } while (norm < 1e-6);
    for (double& x : v) x /= norm;
    basis.push_back(v);
  }
  const double radius = s.separation / std::sqrt(2.0);
  for (auto& v : basis)
    for (double& x : v) x *= radius;
  return basis;
}

inline Dataset synth_blobs(const BlobSpec& s) {
  if (s.classes < 1 || s.per_class < 1 || s.dim < 1 || s.modes < 1) throw ConfigError("blob counts must be >= 1");
  const auto means = blob_means(s);
  Rng rng(derive_seed(s.seed, {0x626c6f6273ULL, s.mean_seed}));
  Dataset d{"blobs", 1, 1, s.dim, {}, {}, static_cast<int>(s.classes)};
  d.pixels.reserve(s.classes * s.per_class * s.dim);
  for (std::size_t i = 0; i < s.per_class; ++i)
    for (std::size_t c = 0; c < s.classes; ++c) {
      const auto& mu = means[c * s.modes + i % s.modes];
      for (std::size_t k = 0; k < s.dim; ++k) d.pixels.push_back(static_cast<float>(mu[k] + s.sigma * rng.normal()));
      d.labels.push_back(static_cast<int>(c));
    }
  return d;
}

// ---------------------------------------------------------------------------
// Standardization and batching.

/// Per-channel mean and standard deviation, computed on a training split.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  static Standardizer fit(const Dataset& d) {
    Standardizer s;
    s.mean.assign(d.channels, 0.0);
    s.stddev.assign(d.channels, 1.0);
    const std::size_t hw = d.height * d.width;
    for (std::size_t c = 0; c < d.channels; ++c) {
      double sum = 0.0, sq = 0.0;
      std::size_t n = 0;
      for (std::size_t i = 0; i < d.size(); ++i) {
        const float* p = d.pixels.data() + (i * d.channels + c) * hw;
        for (std::size_t k = 0; k < hw; ++k) {
          sum += p[k];
          sq += static_cast<double>(p[k]) * p[k];
        }
        n += hw;
      }
      if (n == 0) continue;
      const double m = sum / static_cast<double>(n);
      const double var = std::max(0.0, sq / static_cast<double>(n) - m * m);
      s.mean[c] = m;
      s.stddev[c] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    return s;
  }

  static Standardizer identity(std::size_t channels) { return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)}; }

  friend bool operator==(const Standardizer&, const Standardizer&) = default;
};

enum class Augment { none, flip, flip_crop };

inline std::string to_string(Augment a) {
  switch (a) {
    case Augment::none: return "none";
    case Augment::flip: return "flip";
    default: return "flip+crop";
  }
}

inline Augment parse_augment(const std::string& s) {
  if (s == "none") return Augment::none;
  if (s == "flip") return Augment::flip;
  if (s == "flip+crop" || s == "flip_crop") return Augment::flip_crop;
  throw ConfigError("unknown augmentation '" + s + "'");
}

struct BatchPlan {
  std::size_t batch_size = 256;
  std::uint64_t shuffle_seed = 0;
  Augment augment = Augment::none;
  bool shuffle = true;
};

struct Batch {
  Tensor images;  // [B, C, H, W], standardized
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

/// Mirror along the width axis of an [N, C, H, W] tensor, in place for image n.
inline void flip_horizontal(Tensor& t, std::size_t n) {
  const std::size_t c = t.dim(1), h = t.dim(2), w = t.dim(3);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y) {
      double* row = t.ptr() + ((n * c + ch) * h + y) * w;
      std::reverse(row, row + w);
    }
}

/// Zero-pad by `pad` on every side and take the HxW window at (dy, dx) in the padded frame.
inline void pad_crop(Tensor& t, std::size_t n, std::size_t pad, std::size_t dy, std::size_t dx) {
  const std::size_t c = t.dim(1), h = t.dim(2), w = t.dim(3);
  std::vector<double> src(t.ptr() + n * c * h * w, t.ptr() + (n + 1) * c * h * w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const long sy = static_cast<long>(y + dy) - static_cast<long>(pad);
        const long sx = static_cast<long>(x + dx) - static_cast<long>(pad);
        const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<long>(h) && sx < static_cast<long>(w);
        t.at(n, ch, y, x) = inside ? src[(ch * h + sy) * w + sx] : 0.0;
      }
}

/// Visiting order for one epoch, a pure function of (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, const BatchPlan& plan, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (plan.shuffle) {
    Rng rng(derive_seed(plan.shuffle_seed, {0x73687566ULL, epoch}));
    rng.shuffle(order);
  }
  return order;
}

/// Builds one standardized batch. Augmentation draws come from a stream keyed by
/// (seed, epoch, batch index) so any batch can be rebuilt independently.
inline Batch assemble_batch(const Dataset& d, std::span<const std::size_t> indices, const Standardizer& st,
                            const BatchPlan& plan, std::size_t epoch, std::size_t batch_index) {
  Batch b;
  const std::size_t is = d.image_size(), hw = d.height * d.width;
  b.images = Tensor({indices.size(), d.channels, d.height, d.width});
  b.indices.assign(indices.begin(), indices.end());
  b.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t i = indices[r];
    const float* src = d.pixels.data() + i * is;
    double* dst = b.images.ptr() + r * is;
    for (std::size_t c = 0; c < d.channels; ++c)
      for (std::size_t k = 0; k < hw; ++k) dst[c * hw + k] = (src[c * hw + k] - st.mean[c]) / st.stddev[c];
    b.labels.push_back(d.labels[i]);
  }
  if (plan.augment != Augment::none) {
    Rng rng(derive_seed(plan.shuffle_seed, {0x61756700ULL, epoch, batch_index}));
    for (std::size_t r = 0; r < indices.size(); ++r) {
      if (rng.coin()) flip_horizontal(b.images, r);
      if (plan.augment == Augment::flip_crop) {
        const std::size_t dy = rng.below(9), dx = rng.below(9);
        pad_crop(b.images, r, 4, dy, dx);
      }
    }
  }
  return b;
}

/// Lazily assembled batches of one epoch. The last partial batch is kept.
class BatchStream {
 public:
  BatchStream(const Dataset& d, BatchPlan plan, const Standardizer& st, std::size_t epoch)
      : data_(d), plan_(plan), st_(st), epoch_(epoch), order_(epoch_order(d.size(), plan, epoch)) {
    if (plan_.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  }

  std::size_t size() const { return (order_.size() + plan_.batch_size - 1) / plan_.batch_size; }

  Batch operator[](std::size_t k) const {
    const std::size_t lo = k * plan_.batch_size;
    const std::size_t hi = std::min(order_.size(), lo + plan_.batch_size);
    return assemble_batch(data_, std::span(order_).subspan(lo, hi - lo), st_, plan_, epoch_, k);
  }

 private:
  const Dataset& data_;
  BatchPlan plan_;
  const Standardizer& st_;
  std::size_t epoch_;
  std::vector<std::size_t> order_;
};

inline std::vector<Batch> batches(const Dataset& d, const BatchPlan& plan, const Standardizer& st, std::size_t epoch) {
  BatchStream s(d, plan, st, epoch);
  std::vector<Batch> out;
  out.reserve(s.size());
  for (std::size_t k = 0; k < s.size(); ++k) out.push_back(s[k]);
  return out;
}

// ---------------------------------------------------------------------------
// Directory loaders for the on-disk distributions.

struct Split {
  Dataset train;
  Dataset test;
};

inline Split load_cifar10_dir(const std::filesystem::path& dir) {
  Split s;
  for (int k = 1; k <= 5; ++k) {
    const Dataset part = parse_cifar10(read_file(dir / ("data_batch_" + std::to_string(k) + ".bin")));
    s.train = k == 1 ? part : concat(s.train, part);
  }
  s.test = parse_cifar10(read_file(dir / "test_batch.bin"));
  return s;
}

inline Split load_cifar100_dir(const std::filesystem::path& dir) {
  return {parse_cifar100(read_file(dir / "train.bin")), parse_cifar100(read_file(dir / "test.bin"))};
}

inline Split load_mnist_dir(const std::filesystem::path& dir) {
  return {parse_mnist_idx(read_file(dir / "train-images-idx3-ubyte"), read_file(dir / "train-labels-idx1-ubyte")),
          parse_mnist_idx(read_file(dir / "t10k-images-idx3-ubyte"), read_file(dir / "t10k-labels-idx1-ubyte"))};
}

}  // namespace dcd
