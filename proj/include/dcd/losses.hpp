// Copyright 2026 The DCD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Distillation objectives. Student and teacher embeddings are compared through
// a cosine similarity matrix scaled by a learnable exp(tau) and shifted by a
// learnable bias b:
//
//   logit_ij = cos(z_i^S, z_j^T) * exp(tau) + b
//
// The contrastive term classifies each student row against its own teacher row
// among the in-batch candidates; the consistency term is the KL divergence
// between the student-anchored and teacher-anchored row distributions.

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dcd/autodiff.hpp"
#include "dcd/error.hpp"

namespace dcd {

inline constexpr double kUnitNormTolerance = 1e-9;

struct DistillConfig {
  double alpha = 0.5;      // consistency weight inside the DCD term
  double beta = 1.0;       // weight of the DCD term in the total
  double lambda_kl = 1.0;  // weight of the logit KL term in the total
  double tau_init = std::log(1.0 / 0.07);
  double b_init = 0.0;
  double tau_max = 10.0;
  double kd_temperature = 4.0;
  std::size_t proj_dim = 128;
  /// Treat the teacher-anchored distribution as a fixed target in the consistency KL.
  bool detach_teacher_distribution = false;
  /// When false, tau and b stay at their initial values.
  bool learn_temperature = true;

  void validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0) || !(lambda_kl >= 0.0))
      throw ConfigError("alpha, beta and lambda must be non-negative");
    if (!(tau_max > 0.0)) throw ConfigError("tau_max must be positive");
    if (!(kd_temperature > 0.0)) throw ConfigError("kd_temperature must be positive");
    if (proj_dim < 1) throw ConfigError("proj_dim must be at least 1");
    if (!(tau_init >= 0.0 && tau_init <= tau_max))
      throw ConfigError("tau_init " + std::to_string(tau_init) + " outside [0, tau_max]");
  }
};

/// Row-normalized student and teacher projections of the same batch.
struct EmbeddingPair {
  Var zs;
  Var zt;

  std::size_t size() const { return zs.shape().at(0); }

  void validate() const {
    const Tensor& s = zs.value();
    const Tensor& t = zt.value();
    if (s.rank() != 2 || s.shape() != t.shape())
      throw DimensionError("embedding pair shapes " + shape_str(s.shape()) + " and " + shape_str(t.shape()));
    if (s.dim(0) < 1) throw DimensionError("embedding pair has no rows");
    for (const Tensor* m : {&s, &t}) {
      const std::size_t n = m->dim(0), d = m->dim(1);
      for (std::size_t i = 0; i < n; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) sq += (*m)[i * d + j] * (*m)[i * d + j];
        if (std::abs(std::sqrt(sq) - 1.0) > kUnitNormTolerance)
          throw DegenerateInputError("embedding row " + std::to_string(i) + " is not unit-norm");
      }
    }
  }
};

/// Learnable temperature (log-scale) and bias, with the clamp ceiling they must respect.
struct LogitScale {
  Var tau;
  Var bias;
  double tau_max = 10.0;

  double temperature_scale() const { return std::exp(tau.item()); }
};

enum class Anchor { student, teacher };

struct LossBreakdown {
  double sup = 0.0;
  double distill_kl = 0.0;
  double contrast = 0.0;
  double consist = 0.0;
  double kd = 0.0;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    sup += o.sup;
    distill_kl += o.distill_kl;
    contrast += o.contrast;
    consist += o.consist;
    kd += o.kd;
    total += o.total;
    return *this;
  }

  LossBreakdown scaled(double s) const { return {sup * s, distill_kl * s, contrast * s, consist * s, kd * s, total * s}; }
};

namespace detail {

inline std::vector<std::size_t> diagonal_labels(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

inline Var neg_mean(const Var& x) { return dcd::scale(mean(x), -1.0); }

}  // namespace detail

/// logit_ij = <anchor_i, other_j> * exp(tau) + b. Rows are unit-norm, so the
/// inner product is the cosine similarity.
inline Var similarity_logits(const EmbeddingPair& pair, const LogitScale& scale, Anchor anchor) {
  pair.validate();
  const double t = scale.tau.item();
  if (!(t >= 0.0 && t <= scale.tau_max))
    throw ConfigError("tau " + std::to_string(t) + " outside clamp interval [0, " + std::to_string(scale.tau_max) + "]");
  const Var& a = anchor == Anchor::student ? pair.zs : pair.zt;
  const Var& o = anchor == Anchor::student ? pair.zt : pair.zs;
  const Var cosine = matmul(a, transpose(o));
  return add(mul(cosine, exp(scale.tau)), scale.bias);
}

inline Var contrastive_loss(const EmbeddingPair& pair, const LogitScale& scale) {
  const Var logp = log_softmax_rows(similarity_logits(pair, scale, Anchor::student));
  return detail::neg_mean(select_per_row(logp, detail::diagonal_labels(pair.size())));
}

inline Var student_distribution(const EmbeddingPair& pair, const LogitScale& scale) {
  return softmax_rows(similarity_logits(pair, scale, Anchor::student));
}

/// Row i is the softmax over j of cos(z_i^T, z_j^S) * exp(tau) + b.
inline Var teacher_distribution(const EmbeddingPair& pair, const LogitScale& scale) {
  return softmax_rows(similarity_logits(pair, scale, Anchor::teacher));
}

/// mean_i KL(p_i^S || p_i^T).
inline Var consistency_loss(const EmbeddingPair& pair, const LogitScale& scale, bool detach_teacher = false) {
  const Var log_ps = log_softmax_rows(similarity_logits(pair, scale, Anchor::student));
  Var log_pt = log_softmax_rows(similarity_logits(pair, scale, Anchor::teacher));
  if (detach_teacher) log_pt = log_pt.tape().constant(log_pt.value());
  const Var kl = sum(mul(exp(log_ps), sub(log_ps, log_pt)));
  return dcd::scale(kl, 1.0 / static_cast<double>(pair.size()));
}

inline Var dcd_loss(const EmbeddingPair& pair, const LogitScale& scale, const DistillConfig& cfg) {
  const Var contrast = contrastive_loss(pair, scale);
  if (cfg.alpha == 0.0) return contrast;
  return add(contrast, dcd::scale(consistency_loss(pair, scale, cfg.detach_teacher_distribution), cfg.alpha));
}

/// T^2 * mean_i KL(softmax(teacher_i / T) || softmax(student_i / T)). Teacher logits carry no gradient.
inline Var kd_kl_loss(const Var& student_logits, const Var& teacher_logits, double temperature) {
  if (student_logits.shape() != teacher_logits.shape() || student_logits.shape().size() != 2)
    throw DimensionError("kd_kl_loss: " + shape_str(student_logits.shape()) + " vs " + shape_str(teacher_logits.shape()));
  if (!(temperature > 0.0)) throw ConfigError("kd temperature must be positive");
  Tensor t = teacher_logits.value();
  for (double& v : t.data()) v /= temperature;
  const Tensor log_pt = log_softmax_rows_values(t);
  Tensor pt = log_pt;
  for (double& v : pt.data()) v = std::exp(v);
  Tape& tape = student_logits.tape();
  const Var log_ps = log_softmax_rows(dcd::scale(student_logits, 1.0 / temperature));
  const Var kl = sum(mul(tape.constant(std::move(pt)), sub(tape.constant(log_pt), log_ps)));
  const double n = static_cast<double>(student_logits.shape()[0]);
  return dcd::scale(kl, temperature * temperature / n);
}

inline Var cross_entropy_loss(const Var& logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size())
    throw DimensionError("cross_entropy_loss: logits " + shape_str(s) + " with " + std::to_string(labels.size()) + " labels");
  std::vector<std::size_t> idx(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= s[1])
      throw IndexError("label " + std::to_string(labels[i]) + " out of range [0, " + std::to_string(s[1]) + ")");
    idx[i] = static_cast<std::size_t>(labels[i]);
  }
  return detail::neg_mean(select_per_row(log_softmax_rows(logits), std::move(idx)));
}

struct TotalLoss {
  Var total;
  LossBreakdown terms;
};

/// sup + lambda * distill_kl + beta * (contrast + alpha * consist). Terms with
/// zero weight are still evaluated for logging but kept off the gradient path.
inline TotalLoss total_loss(const Var& student_logits, const Var& teacher_logits, std::span<const int> labels,
                            const EmbeddingPair& pair, const LogitScale& scale, const DistillConfig& cfg) {
  TotalLoss out;
  const Var sup = cross_entropy_loss(student_logits, labels);
  const Var kl = kd_kl_loss(student_logits, teacher_logits, cfg.kd_temperature);
  const Var contrast = contrastive_loss(pair, scale);
  const Var consist = consistency_loss(pair, scale, cfg.detach_teacher_distribution);

  out.terms.sup = sup.item();
  out.terms.distill_kl = kl.item();
  out.terms.contrast = contrast.item();
  out.terms.consist = consist.item();
  out.terms.kd = out.terms.contrast + cfg.alpha * out.terms.consist;
  out.terms.total = out.terms.sup + cfg.lambda_kl * out.terms.distill_kl + cfg.beta * out.terms.kd;

  Var total = sup;
  if (cfg.lambda_kl != 0.0) total = add(total, dcd::scale(kl, cfg.lambda_kl));
  if (cfg.beta != 0.0) {
    Var kd = contrast;
    if (cfg.alpha != 0.0) kd = add(kd, dcd::scale(consist, cfg.alpha));
    total = add(total, dcd::scale(kd, cfg.beta));
  }
  out.total = total;
  return out;
}

}  // namespace dcd
