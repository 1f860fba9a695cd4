// Copyright 2026 The DCD Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "dcd/data.hpp"
#include "dcd/losses.hpp"
#include "dcd/optim.hpp"
#include "test_util.hpp"

namespace dcd {
namespace {

Dataset random_images(std::size_t m, std::size_t c, std::size_t h, std::size_t w, int classes, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d{"random", c, h, w, {}, {}, classes};
  for (std::size_t i = 0; i < m * c * h * w; ++i) d.pixels.push_back(static_cast<float>(rng.below(256)) / 255.0f);
  for (std::size_t i = 0; i < m; ++i) d.labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))));
  return d;
}

template <typename F>
std::size_t format_error_offset(F&& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.offset;
  }
  ADD_FAILURE() << "expected FormatError";
  return SIZE_MAX;
}

TEST(Cifar10, ConstructedRecord) {
  Bytes rec(3073, 255);
  rec[0] = 7;
  const Dataset d = parse_cifar10(rec);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.labels[0], 7);
  EXPECT_EQ(d.channels, 3u);
  EXPECT_TRUE(std::all_of(d.pixels.begin(), d.pixels.end(), [](float p) { return p == 1.0f; }));
  EXPECT_NO_THROW(d.validate());
}

TEST(Cifar10, PlaneOrderIsChannelMajor) {
  Bytes rec(3073, 0);
  rec[1 + 1024 + 32 * 2 + 5] = 51;  // G plane, row 2, col 5
  const Dataset d = parse_cifar10(rec);
  EXPECT_EQ(d.image(0).at(0, 1, 2, 5), 51.0f / 255.0f);
}

TEST(Cifar10, EmptyInputGivesEmptyDataset) {
  const Dataset d = parse_cifar10(Bytes{});
  EXPECT_EQ(d.size(), 0u);
  EXPECT_EQ(d.class_count, 10);
}

TEST(Cifar10, RoundTripIsBitwise) {
  const Dataset d = random_images(5, 3, 32, 32, 10, 1);
  const Dataset back = parse_cifar10(serialize_cifar10(d));
  EXPECT_EQ(back.pixels, d.pixels);
  EXPECT_EQ(back.labels, d.labels);
}

TEST(Cifar10, BadLengthAndLabelReportOffset) {
  Bytes two(2 * 3073 + 10, 0);
  EXPECT_EQ(format_error_offset([&] { parse_cifar10(two); }), 2u * 3073);
  Bytes bad(2 * 3073, 0);
  bad[3073] = 10;
  EXPECT_EQ(format_error_offset([&] { parse_cifar10(bad); }), 3073u);
}

TEST(Cifar100, FineLabelKeptCoarseIgnored) {
  Bytes a(3074, 17), b(3074, 17);
  a[0] = 3;
  b[0] = 19;
  a[1] = b[1] = 42;
  const Dataset da = parse_cifar100(a), db = parse_cifar100(b);
  EXPECT_EQ(da.labels, std::vector<int>{42});
  EXPECT_EQ(da, db);
  Bytes bad = a;
  bad[1] = 100;
  EXPECT_EQ(format_error_offset([&] { parse_cifar100(bad); }), 1u);
  EXPECT_EQ(format_error_offset([&] { parse_cifar100(Bytes(3073, 0)); }), 0u);
}

TEST(Cifar100, RoundTripIsBitwise) {
  const Dataset d = random_images(4, 3, 32, 32, 100, 2);
  const Dataset back = parse_cifar100(serialize_cifar100(d));
  EXPECT_EQ(back.pixels, d.pixels);
  EXPECT_EQ(back.labels, d.labels);
}

TEST(Mnist, HeaderOnlyIsEmpty) {
  Bytes img, lab;
  for (std::uint32_t v : {0x803u, 0u, 28u, 28u}) detail::write_be32(img, v);
  for (std::uint32_t v : {0x801u, 0u}) detail::write_be32(lab, v);
  const Dataset d = parse_mnist_idx(img, lab);
  EXPECT_EQ(d.size(), 0u);
  EXPECT_EQ(d.height, 28u);
}

TEST(Mnist, RoundTripOfTwoImages) {
  const Dataset d = random_images(2, 1, 28, 28, 10, 3);
  const auto [img, lab] = serialize_mnist_idx(d);
  EXPECT_EQ(img.size(), 16u + 2 * 784);
  EXPECT_EQ(img[3], 0x03);
  EXPECT_EQ(lab[3], 0x01);
  const Dataset back = parse_mnist_idx(img, lab);
  EXPECT_EQ(back.pixels, d.pixels);
  EXPECT_EQ(back.labels, d.labels);
}

TEST(Mnist, Errors) {
  const auto [img, lab] = serialize_mnist_idx(random_images(2, 1, 28, 28, 10, 4));
  Bytes bad_magic = img;
  bad_magic[3] = 0x01;
  EXPECT_EQ(format_error_offset([&] { parse_mnist_idx(bad_magic, lab); }), 0u);
  EXPECT_EQ(format_error_offset([&] { parse_mnist_idx(img, img); }), 0u);
  Bytes truncated(img.begin(), img.end() - 5);
  EXPECT_EQ(format_error_offset([&] { parse_mnist_idx(truncated, lab); }), truncated.size());
  Bytes fewer_labels = lab;
  fewer_labels[7] = 1;
  fewer_labels.pop_back();
  EXPECT_EQ(format_error_offset([&] { parse_mnist_idx(img, fewer_labels); }), 4u);
  EXPECT_THROW(parse_mnist_idx(Bytes(10, 0), lab), FormatError);
}

TEST(Blobs, DeterministicPerSeed) {
  const BlobSpec s{3, 20, 4, 2.0, 1.0, 1, 5, 9};
  EXPECT_EQ(synth_blobs(s), synth_blobs(s));
  BlobSpec other = s;
  other.seed = 10;
  EXPECT_NE(synth_blobs(s).pixels, synth_blobs(other).pixels);
  EXPECT_THROW(synth_blobs(BlobSpec{0, 1, 1}), ConfigError);
}

TEST(Blobs, MeansArePairwiseSeparated) {
  const BlobSpec s{4, 1, 6, 3.0, 1.0, 1, 2, 0};
  const auto m = blob_means(s);
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = a + 1; b < 4; ++b) {
      double d = 0.0;
      for (std::size_t k = 0; k < 6; ++k) d += (m[a][k] - m[b][k]) * (m[a][k] - m[b][k]);
      EXPECT_NEAR(std::sqrt(d), 3.0, 1e-12);
    }
}

TEST(Blobs, EmpiricalMeansNearConfigured) {
  const BlobSpec s{3, 400, 5, 2.0, 1.5, 1, 11, 12};
  const Dataset d = synth_blobs(s);
  const auto means = blob_means(s);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t k = 0; k < 5; ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < d.size(); ++i)
        if (d.labels[i] == static_cast<int>(c)) acc += d.pixels[i * 5 + k];
      EXPECT_LT(std::abs(acc / 400.0 - means[c][k]), 5.0 * s.sigma / std::sqrt(400.0));
    }
}

TEST(Blobs, WellSeparatedPairIsLinearlySeparable) {
  const BlobSpec s{2, 100, 8, 10.0, 1.0, 1, 3, 4};
  const Dataset d = synth_blobs(s);
  const Standardizer st = Standardizer::fit(d);
  const Batch all = assemble_batch(d, epoch_order(d.size(), BatchPlan{d.size(), 0, Augment::none, false}, 0), st, BatchPlan{}, 0, 0);
  Parameter w("w", Tensor({8, 2})), b("b", Tensor({2}));
  Sgd sgd(0.9, 0.0);
  sgd.add(w);
  sgd.add(b);
  for (int step = 0; step < 100; ++step) {
    sgd.zero_grad();
    Tape t;
    const Var x = reshape(t.constant(all.images), {d.size(), 8});
    t.backward(cross_entropy_loss(add_row_vector(matmul(x, t.param(w)), t.param(b)), all.labels));
    sgd.step(0.1);
  }
  Tape t;
  const Tensor logits = add_row_vector(matmul(reshape(t.constant(all.images), {d.size(), 8}), t.constant(w.value)), t.constant(b.value)).value();
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(logits.at(i, 1) > logits.at(i, 0), all.labels[i] == 1) << i;
}

TEST(Dataset, ValidationAndSubsets) {
  Dataset d = random_images(6, 1, 2, 2, 3, 5);
  EXPECT_NO_THROW(d.validate());
  const std::vector<std::size_t> idx{4, 1};
  const Dataset s = d.subset(idx);
  EXPECT_EQ(s.labels, (std::vector<int>{d.labels[4], d.labels[1]}));
  EXPECT_EQ(s.image(0), d.image(4));
  EXPECT_EQ(concat(d.head(2), d.subset(std::vector<std::size_t>{2, 3, 4, 5})), d);
  d.labels[0] = 3;
  EXPECT_THROW(d.validate(), IndexError);
  d.labels[0] = 0;
  d.pixels[0] = 1.5f;
  EXPECT_THROW(d.validate(), DomainError);
  EXPECT_NO_THROW(d.validate(false));
}

TEST(Standardizer, PerChannelStatisticsFromTrainSplit) {
  Dataset d{"t", 2, 1, 2, {0, 0, 1, 1, 1, 1, 3, 3}, {0, 1}, 2};
  const Standardizer st = Standardizer::fit(d);
  EXPECT_DOUBLE_EQ(st.mean[0], 0.5);
  EXPECT_DOUBLE_EQ(st.mean[1], 2.0);
  EXPECT_DOUBLE_EQ(st.stddev[0], 0.5);
  EXPECT_DOUBLE_EQ(st.stddev[1], 1.0);
  const Batch b = assemble_batch(d, std::vector<std::size_t>{1}, st, BatchPlan{}, 0, 0);
  EXPECT_EQ(b.images.at(0, 0, 0, 0), 1.0);
  EXPECT_EQ(b.images.at(0, 1, 0, 1), 1.0);
}

TEST(Batches, ExhaustiveNonOverlappingWithPartialLastBatch) {
  const Dataset d = random_images(23, 3, 4, 4, 5, 6);
  const Standardizer st = Standardizer::fit(d);
  const BatchPlan plan{5, 77, Augment::flip_crop, true};
  for (std::size_t epoch : {0u, 1u, 2u}) {
    const auto bs = batches(d, plan, st, epoch);
    ASSERT_EQ(bs.size(), 5u);
    EXPECT_EQ(bs.back().labels.size(), 3u);
    std::multiset<std::size_t> seen;
    for (const auto& b : bs) seen.insert(b.indices.begin(), b.indices.end());
    EXPECT_EQ(seen.size(), 23u);
    for (std::size_t i = 0; i < 23; ++i) EXPECT_EQ(seen.count(i), 1u);
  }
  EXPECT_NE(epoch_order(23, plan, 0), epoch_order(23, plan, 1));
  EXPECT_THROW(BatchStream(d, BatchPlan{0}, st, 0), ConfigError);
}

TEST(Batches, SameSeedAndEpochGiveIdenticalStreams) {
  const Dataset d = random_images(17, 3, 4, 4, 5, 7);
  const Standardizer st = Standardizer::fit(d);
  for (Augment a : {Augment::none, Augment::flip_crop}) {
    const BatchPlan plan{4, 5, a, true};
    const auto x = batches(d, plan, st, 3), y = batches(d, plan, st, 3);
    ASSERT_EQ(x.size(), y.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
      EXPECT_EQ(x[k].images, y[k].images);
      EXPECT_EQ(x[k].indices, y[k].indices);
    }
  }
}

TEST(Augment, FlipIsAnInvolutionAndCropShifts) {
  Rng rng(8);
  Tensor t = testing::random_tensor(rng, {2, 3, 5, 6});
  const Tensor orig = t;
  flip_horizontal(t, 1);
  EXPECT_NE(t, orig);
  EXPECT_EQ(t.at(1, 2, 3, 0), orig.at(1, 2, 3, 5));
  flip_horizontal(t, 1);
  EXPECT_EQ(t, orig);

  Tensor c = orig;
  pad_crop(c, 0, 4, 4, 4);
  EXPECT_EQ(c, orig);
  pad_crop(c, 0, 4, 5, 3);
  EXPECT_EQ(c.at(0, 0, 0, 1), orig.at(0, 0, 1, 0));
  EXPECT_EQ(c.at(0, 0, 0, 0), 0.0);
  EXPECT_EQ(parse_augment("flip+crop"), Augment::flip_crop);
  EXPECT_THROW(parse_augment("mixup"), ConfigError);
}

}  // namespace
}  // namespace dcd
