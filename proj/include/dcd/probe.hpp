// Copyright 2026 The DCD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Transfer evaluation on frozen features and embedding export.

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <vector>

#include "dcd/metrics.hpp"
#include "dcd/trainer.hpp"

namespace dcd {

struct ProbeOptions {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  double train_acc = 0.0;
  double test_acc = 0.0;
};

namespace detail {

inline Tensor take_rows(const Tensor& x, std::span<const std::size_t> idx) {
  const std::size_t d = x.dim(1);
  Tensor out({idx.size(), d});
  for (std::size_t r = 0; r < idx.size(); ++r) std::copy_n(x.ptr() + idx[r] * d, d, out.ptr() + r * d);
  return out;
}

}  // namespace detail

/// Trains a linear classifier on frozen penultimate features. Features are
/// standardized per dimension with statistics of the probe's training split.
inline ProbeResult linear_probe(const Model& frozen, const Standardizer& st, const Dataset& train, const Dataset& test,
                                const ProbeOptions& opt) {
  if (train.size() == 0) throw ConfigError("linear_probe: empty training set");
  Tensor ftr = predict_features(frozen, train, st);
  Tensor fte = test.size() ? predict_features(frozen, test, st) : Tensor({0, ftr.dim(1)});
  const std::size_t f = ftr.dim(1);
  const auto classes = static_cast<std::size_t>(std::max(train.class_count, test.class_count));
  for (std::size_t j = 0; j < f; ++j) {
    double m = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i) m += ftr[i * f + j];
    m /= static_cast<double>(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) sq += (ftr[i * f + j] - m) * (ftr[i * f + j] - m);
    const double sd = std::sqrt(sq / static_cast<double>(train.size()));
    const double inv = sd > 1e-12 ? 1.0 / sd : 1.0;
    for (std::size_t i = 0; i < train.size(); ++i) ftr[i * f + j] = (ftr[i * f + j] - m) * inv;
    for (std::size_t i = 0; i < test.size(); ++i) fte[i * f + j] = (fte[i * f + j] - m) * inv;
  }

  Parameter w("probe.weight", Tensor({f, classes}));
  Parameter b("probe.bias", Tensor({classes}));
  Sgd sgd(opt.momentum, opt.weight_decay);
  sgd.add(w);
  sgd.add(b, false);
  const BatchPlan plan{opt.batch_size, derive_seed(opt.seed, {0x70726f6265ULL}), Augment::none, true};
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    const auto order = epoch_order(train.size(), plan, epoch);
    for (std::size_t lo = 0; lo < order.size(); lo += opt.batch_size, ++step) {
      const std::size_t hi = std::min(order.size(), lo + opt.batch_size);
      const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(train.labels[i]);
      Tape tape;
      const Var logits = add_row_vector(matmul(tape.constant(detail::take_rows(ftr, idx)), tape.param(w)), tape.param(b));
      const Var loss = cross_entropy_loss(logits, labels);
      detail::check_finite(loss.item(), step);
      sgd.zero_grad();
      tape.backward(loss);
      sgd.step(opt.lr);
    }
  }
  auto accuracy = [&](const Tensor& feats, const Dataset& d) {
    if (d.size() == 0) return 0.0;
    Tensor logits = matmul_values(feats, w.value);
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t c = 0; c < classes; ++c) logits[i * classes + c] += b.value[c];
    return top1_accuracy(logits, d.labels);
  };
  return {accuracy(ftr, train), accuracy(fte, test)};
}

/// Normalized projections of every sample, one [M, proj_dim] tensor.
inline Tensor embed(const Model& m, const ProjectionHead& head, const Dataset& d, const Standardizer& st) {
  const Tensor feats = predict_features(m, d, st);
  Tape tape;
  return project_frozen(head, tape.constant(feats)).value();
}

/// Writes label plus normalized embedding per sample. Returns the row count.
inline std::size_t export_embeddings(const Model& m, const ProjectionHead& head, const Dataset& d, const Standardizer& st,
                                     const std::filesystem::path& path) {
  const Tensor z = embed(m, head, d, st);
  write_embeddings_csv(path, d.labels, z);
  return d.size();
}

}  // namespace dcd
