// Copyright 2026 The DCD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Self-checks shared by `dcd verify` and the acceptance binary. Each check is
// cheap (seconds) and reports a named pass/fail with a one-line detail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "dcd/checkpoint.hpp"
#include "dcd/data.hpp"
#include "dcd/losses.hpp"
#include "dcd/metrics.hpp"
#include "dcd/oracle.hpp"
#include "dcd/trainer.hpp"

namespace dcd::verify {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

/// Oracle agreement is measured relative to max(1, |reference|): at tau near
/// its ceiling logits reach ~2e4 and an absolute 1e-12 would sit below one ulp.
inline constexpr double kOracleTolerance = 1e-12;
inline constexpr double kGradientTolerance = 1e-4;
inline constexpr double kFiniteDifferenceStep = 1e-5;
/// Denominator floor for the relative error. The gradient with respect to b is
/// identically zero (a shared shift of every logit cancels in the softmax), so
/// tensors whose gradient norm is below the floor are compared absolutely.
inline constexpr double kGradientFloor = 1e-8;

namespace detail {

inline Tensor uniform_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor unit_rows(Rng& rng, std::size_t n, std::size_t d) {
  Tensor t({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      t[i * d + j] = rng.normal();
      s += t[i * d + j] * t[i * d + j];
    }
    s = std::sqrt(s);
    for (std::size_t j = 0; j < d; ++j) t[i * d + j] /= s;
  }
  return t;
}

inline double rel_dev(double got, double ref) { return std::abs(got - ref) / std::max(1.0, std::abs(ref)); }

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << v;
  return os.str();
}

struct LossValues {
  double contrast, consist, kd, ce;
};

inline LossValues vectorized(const Tensor& zs, const Tensor& zt, double tau, double b, const Tensor& ls, const Tensor& lt,
                             double temperature, const std::vector<int>& labels) {
  Tape tape;
  const EmbeddingPair pair{tape.constant(zs), tape.constant(zt)};
  const LogitScale scale{tape.constant(Tensor::scalar(tau)), tape.constant(Tensor::scalar(b))};
  return {contrastive_loss(pair, scale).item(), consistency_loss(pair, scale).item(),
          kd_kl_loss(tape.constant(ls), tape.constant(lt), temperature).item(), cross_entropy_loss(tape.constant(ls), labels).item()};
}

inline CheckResult timed(const std::string& name, const std::function<CheckResult()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  try {
    r = body();
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline Dataset tiny_blobs(std::uint64_t seed) { return synth_blobs(BlobSpec{3, 12, 5, 4.0, 1.0, 1, 3, seed}); }

inline DistillResult tiny_distill(const Model& teacher, const Standardizer& st, const Dataset& train) {
  TrainOptions o;
  o.optim.epochs = 2;
  o.optim.lr = 0.05;
  o.optim.schedule = {};
  o.optim.seed = 9;
  o.batch_size = 12;
  DistillConfig cfg;
  cfg.proj_dim = 8;
  return distill(teacher, st, ModelSpec{Family::mlp, {16}, 3, 1, 1, 5}, train, Dataset{}, cfg, o);
}

}  // namespace detail

/// Vectorized losses against the loop oracles on random instances with
/// N <= 8, D <= 16, tau in [0, 10], b in [-1, 1].
inline CheckResult oracle_equivalence(std::size_t cases = 100, std::uint64_t seed = 2026) {
  return detail::timed("oracle_equivalence", [&] {
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t k = 0; k < cases; ++k) {
      const std::size_t n = 1 + rng.below(8), d = 1 + rng.below(16), c = 2 + rng.below(9);
      const double tau = rng.uniform(0.0, 10.0), b = rng.uniform(-1.0, 1.0), temp = rng.uniform(0.5, 8.0);
      const Tensor zs = detail::unit_rows(rng, n, d), zt = detail::unit_rows(rng, n, d);
      const Tensor ls = detail::uniform_tensor(rng, {n, c}, -5, 5), lt = detail::uniform_tensor(rng, {n, c}, -5, 5);
      std::vector<int> labels(n);
      for (int& y : labels) y = static_cast<int>(rng.below(c));
      const auto v = detail::vectorized(zs, zt, tau, b, ls, lt, temp, labels);
      worst = std::max({worst, detail::rel_dev(v.contrast, oracle::contrastive(zs, zt, tau, b).value),
                        detail::rel_dev(v.consist, oracle::consistency(zs, zt, tau, b).value),
                        detail::rel_dev(v.kd, oracle::kd_kl(ls, lt, temp).value),
                        detail::rel_dev(v.ce, oracle::cross_entropy(ls, labels).value)});
    }
    return CheckResult{{}, worst <= kOracleTolerance,
                       std::to_string(cases) + " cases, max relative deviation " + detail::fmt(worst), 0.0};
  });
}

/// d(total loss)/d(every trainable tensor) for a two-layer MLP student, both
/// projection heads, tau and b, against central differences. The error is
/// norm-wise relative, taken per tensor; the worst tensor is reported.
inline CheckResult gradient_check(std::uint64_t seed = 7) {
  return detail::timed("gradient_check", [&] {
    const std::size_t n = 4, in = 5, hidden = 6, classes = 3, proj = 4;
    Rng rng(seed);
    Model student = init_weights(ModelSpec{Family::mlp, {hidden}, classes, 1, 1, in}, seed);
    const Model teacher = init_weights(ModelSpec{Family::mlp, {8}, classes, 1, 1, in}, seed + 1);
    ProjectionHead hs = init_projection_head(hidden, proj, Owner::student, seed);
    ProjectionHead ht = init_projection_head(8, proj, Owner::teacher, seed);
    Parameter tau("tau", Tensor::scalar(rng.uniform(0.5, 3.0)), std::make_pair(0.0, 10.0));
    Parameter bias("bias", Tensor::scalar(rng.uniform(-0.5, 0.5)));
    for (auto& p : student.params())
      if (p.name.ends_with("bias")) p.value = detail::uniform_tensor(rng, p.value.shape(), 0.1, 0.5);
    const Tensor x = detail::uniform_tensor(rng, {n, 1, 1, in}, -1, 1);
    const std::vector<int> y{0, 2, 1, 2};
    const DistillConfig cfg;

    std::vector<Parameter*> params;
    for (auto& p : student.params()) params.push_back(&p);
    params.insert(params.end(), {&hs.weight, &ht.weight, &tau, &bias});

    auto objective = [&](bool record) {
      Tape tape;
      const Var xv = tape.constant(x);
      const ForwardResult so = record ? student.forward(tape, xv) : student.forward_frozen(tape, xv);
      const ForwardResult to = teacher.forward_frozen(tape, xv);
      const EmbeddingPair pair{record ? project(hs, so.features) : project_frozen(hs, so.features),
                               record ? project(ht, to.features) : project_frozen(ht, to.features)};
      const LogitScale scale{record ? tape.param(tau) : tape.constant(tau.value),
                             record ? tape.param(bias) : tape.constant(bias.value)};
      const Var total = total_loss(so.logits, to.logits, y, pair, scale, cfg).total;
      if (record) {
        for (auto* p : params) p->zero_grad();
        tape.backward(total);
      }
      return total.item();
    };

    objective(true);
    double worst = 0.0;
    std::string worst_name;
    std::size_t entries = 0;
    for (auto* p : params) {
      const Tensor analytic = p->grad ? *p->grad : Tensor(p->value.shape());
      double diff = 0.0, na = 0.0, nn = 0.0;
      for (std::size_t i = 0; i < p->value.size(); ++i, ++entries) {
        const double orig = p->value[i];
        p->value[i] = orig + kFiniteDifferenceStep;
        const double up = objective(false);
        p->value[i] = orig - kFiniteDifferenceStep;
        const double down = objective(false);
        p->value[i] = orig;
        const double num = (up - down) / (2.0 * kFiniteDifferenceStep);
        diff += (analytic[i] - num) * (analytic[i] - num);
        na += analytic[i] * analytic[i];
        nn += num * num;
      }
      const double err = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), kGradientFloor});
      if (err >= worst) {
        worst = err;
        worst_name = p->name;
      }
    }
    return CheckResult{{}, worst < kGradientTolerance,
                       std::to_string(entries) + " entries in " + std::to_string(params.size()) +
                           " tensors, worst relative error " + detail::fmt(worst) + " (" + worst_name + ")",
                       0.0};
  });
}

struct FixtureNumbers {
  double dcd = 0.0;
  double dcd_kd = 0.0;
};

inline FixtureNumbers fixture_numbers(const std::filesystem::path& table) {
  const AccuracyTable t = load_accuracy_table(table);
  return {relative_improvement(t, "DCD").percent, relative_improvement(t, "DCD+KD").percent};
}

/// Relative improvement over the shipped CIFAR-100 accuracy grid.
inline CheckResult fixture_reproduction(const std::filesystem::path& table) {
  return detail::timed("fixture_reproduction", [&] {
    const FixtureNumbers f = fixture_numbers(table);
    const bool ok = std::abs(f.dcd - 20.31) <= 0.2 && std::abs(f.dcd_kd - 73.87) <= 0.2;
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << "DCD " << f.dcd << "%, DCD+KD " << f.dcd_kd << "%";
    return CheckResult{{}, ok, os.str(), 0.0};
  });
}

inline CheckResult memory_arithmetic() {
  return detail::timed("memory_arithmetic", [] {
    const std::uint64_t bytes = negative_buffer_bytes(256, 128);
    std::ostringstream os;
    os << "negative_buffer_bytes(256, 128) = " << bytes << " (" << std::fixed << std::setprecision(2)
       << static_cast<double>(bytes) / 1e6 << " MB)";
    return CheckResult{{}, bytes == 131072, os.str(), 0.0};
  });
}

/// Structural properties of the losses, the optimizer clamp and full training runs.
inline CheckResult invariant_suite(std::uint64_t seed = 11) {
  return detail::timed("invariant_suite", [&] {
    std::vector<std::string> failed;
    Rng rng(seed);
    for (std::size_t k = 0; k < 50; ++k) {
      const std::size_t n = 1 + rng.below(8), d = 2 + rng.below(15);
      const double tau = rng.uniform(0.0, 10.0), b = rng.uniform(-1.0, 1.0);
      const Tensor zs = detail::unit_rows(rng, n, d), zt = detail::unit_rows(rng, n, d);
      Tape tape;
      const EmbeddingPair pair{tape.constant(zs), tape.constant(zt)};
      const LogitScale scale{tape.constant(Tensor::scalar(tau)), tape.constant(Tensor::scalar(b))};
      for (const Var& p : {student_distribution(pair, scale), teacher_distribution(pair, scale)}) {
        const Tensor& v = p.value();
        for (std::size_t i = 0; i < n; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            s += v[i * n + j];
            // Off-diagonal mass underflows to zero once the logit spread exceeds the double range.
            if (2.0 * std::exp(tau) + 2.0 < 700.0 && !(v[i * n + j] > 0.0)) failed.push_back("positivity");
          }
          if (std::abs(s - 1.0) > 1e-12) failed.push_back("row_stochastic");
        }
      }
      const double contrast = contrastive_loss(pair, scale).item(), consist = consistency_loss(pair, scale).item();
      if (contrast < 0.0 || consist < -1e-12) failed.push_back("non_negative");
      const Tensor ls = detail::uniform_tensor(rng, {n, 4}, -3, 3), lt = detail::uniform_tensor(rng, {n, 4}, -3, 3);
      if (kd_kl_loss(tape.constant(ls), tape.constant(lt), 4.0).item() < -1e-12) failed.push_back("kd_non_negative");

      std::vector<std::size_t> perm(n);
      for (std::size_t i = 0; i < n; ++i) perm[i] = i;
      rng.shuffle(perm);
      const EmbeddingPair permuted{gather_rows(pair.zs, perm), gather_rows(pair.zt, perm)};
      if (std::abs(contrastive_loss(permuted, scale).item() - contrast) > 1e-10 ||
          std::abs(consistency_loss(permuted, scale).item() - consist) > 1e-10)
        failed.push_back("permutation_equivariance");

      const EmbeddingPair same{pair.zs, pair.zs};
      if (std::abs(consistency_loss(same, scale).item()) > 1e-12) failed.push_back("identical_consistency_zero");
      const EmbeddingPair single{tape.constant(detail::unit_rows(rng, 1, d)), tape.constant(detail::unit_rows(rng, 1, d))};
      if (contrastive_loss(single, scale).item() != 0.0) failed.push_back("single_sample_contrast_zero");
    }

    for (double push : {-1e6, 1e6}) {
      Parameter tau("tau", Tensor::scalar(5.0), std::make_pair(0.0, 10.0));
      Sgd sgd(0.9, 0.0);
      sgd.add(tau, false);
      for (int s = 0; s < 3; ++s) {
        tau.grad = Tensor::scalar(push);
        sgd.step(1.0);
        if (!(tau.value.item() >= 0.0 && tau.value.item() <= 10.0)) failed.push_back("tau_clamp");
      }
    }

    const Dataset train = detail::tiny_blobs(1);
    TrainOptions o;
    o.optim.epochs = 2;
    o.optim.schedule = {};
    o.batch_size = 12;
    const TeacherResult t = train_teacher(ModelSpec{Family::mlp, {24}, 3, 1, 1, 5}, train, Dataset{}, o);
    const Bytes teacher_before = encode_checkpoint(t.checkpoint());
    const DistillResult a = detail::tiny_distill(t.model, t.standardizer, train);
    if (encode_checkpoint(t.checkpoint()) != teacher_before) failed.push_back("frozen_teacher");
    const DistillResult b = detail::tiny_distill(t.model, t.standardizer, train);
    if (encode_checkpoint(a.checkpoint()) != encode_checkpoint(b.checkpoint())) failed.push_back("run_determinism");
    const TeacherResult t2 = train_teacher(ModelSpec{Family::mlp, {24}, 3, 1, 1, 5}, train, Dataset{}, o);
    if (encode_checkpoint(t2.checkpoint()) != teacher_before) failed.push_back("teacher_determinism");

    std::sort(failed.begin(), failed.end());
    failed.erase(std::unique(failed.begin(), failed.end()), failed.end());
    std::string detail = "10 properties";
    if (!failed.empty()) {
      detail += ", failed:";
      for (const auto& f : failed) detail += " " + f;
    }
    return CheckResult{{}, failed.empty(), detail, 0.0};
  });
}

/// Checkpoint, CIFAR, MNIST and embedding CSV round-trips on constructed data.
inline CheckResult format_round_trips(const std::filesystem::path& scratch = std::filesystem::temp_directory_path()) {
  return detail::timed("format_round_trips", [&] {
    std::vector<std::string> failed;
    Rng rng(5);

    Checkpoint c;
    c.metadata["kind"] = "probe";
    c.metadata["odd"] = std::string("nul\0inside", 10);
    c.put("w", Tensor({2, 3}, {std::numeric_limits<double>::quiet_NaN(), -0.0, std::numeric_limits<double>::denorm_min(),
                               std::numeric_limits<double>::infinity(), 1e308, -1.0 / 3.0}));
    c.put("h", Tensor({4}, {0.5, 1.25, -2.0, 3.0}), DType::f32);
    c.put("empty", Tensor({0, 3}));
    const Bytes enc = encode_checkpoint(c);
    if (encode_checkpoint(decode_checkpoint(enc)) != enc) failed.push_back("checkpoint_bytes");
    const std::filesystem::path ck = scratch / ("dcd_verify_" + std::to_string(::getpid()) + ".ckpt");
    save_checkpoint(c, ck);
    if (encode_checkpoint(load_checkpoint(ck)) != enc) failed.push_back("checkpoint_file");
    std::filesystem::remove(ck);

    auto raw_cifar = [&](std::size_t label_bytes, std::size_t records) {
      Bytes b;
      for (std::size_t r = 0; r < records; ++r) {
        if (label_bytes == 2) b.push_back(static_cast<std::uint8_t>(rng.below(20)));
        b.push_back(static_cast<std::uint8_t>(rng.below(label_bytes == 2 ? 100 : 10)));
        for (std::size_t k = 0; k < 3072; ++k) b.push_back(static_cast<std::uint8_t>(rng.below(256)));
      }
      return b;
    };
    const Bytes c10 = raw_cifar(1, 3);
    if (serialize_cifar10(parse_cifar10(c10)) != c10) failed.push_back("cifar10");
    const Bytes c100 = raw_cifar(2, 3);
    const Dataset d100 = parse_cifar100(c100);
    if (parse_cifar100(serialize_cifar100(d100)) != d100) failed.push_back("cifar100");

    Bytes img, lab;
    for (std::uint32_t v : {0x00000803u, 2u, 3u, 4u})
      for (int s = 24; s >= 0; s -= 8) img.push_back(static_cast<std::uint8_t>(v >> s));
    for (std::uint32_t v : {0x00000801u, 2u})
      for (int s = 24; s >= 0; s -= 8) lab.push_back(static_cast<std::uint8_t>(v >> s));
    for (int k = 0; k < 24; ++k) img.push_back(static_cast<std::uint8_t>(rng.below(256)));
    lab.push_back(7);
    lab.push_back(2);
    const auto [img2, lab2] = serialize_mnist_idx(parse_mnist_idx(img, lab));
    if (img2 != img || lab2 != lab) failed.push_back("mnist");

    const Tensor z = detail::unit_rows(rng, 12, 9);
    std::vector<int> labels(12);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 3);
    const std::filesystem::path csv = scratch / ("dcd_verify_" + std::to_string(::getpid()) + ".csv");
    write_embeddings_csv(csv, labels, z);
    const EmbeddingTable back = read_embeddings_csv(csv);
    std::filesystem::remove(csv);
    if (back.labels != labels || max_abs_diff(back.embeddings, z) > 1e-8) failed.push_back("embedding_csv");

    std::string detail = "checkpoint, cifar10, cifar100, mnist, embedding csv";
    if (!failed.empty()) {
      detail = "failed:";
      for (const auto& f : failed) detail += " " + f;
    }
    return CheckResult{{}, failed.empty(), detail, 0.0};
  });
}

/// Every fast check in a fixed order.
inline std::vector<CheckResult> run_all(const std::filesystem::path& fixture_table) {
  return {oracle_equivalence(), gradient_check(), fixture_reproduction(fixture_table), memory_arithmetic(), invariant_suite(),
          format_round_trips()};
}

}  // namespace dcd::verify
