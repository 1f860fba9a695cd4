// Copyright 2026 The DCD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Reference implementations written as explicit loops over (i, j, k). They read
// raw tensor storage and share no arithmetic with losses.hpp. Intended for
// small N only; cost is O(N^2 D) or worse.

#include <cmath>
#include <cstddef>
#include <vector>

#include "dcd/tensor.hpp"

namespace dcd::oracle {

struct OracleResult {
  double value = 0.0;
  std::vector<double> per_instance;
};

namespace detail {

inline double cosine(const Tensor& u, std::size_t i, const Tensor& v, std::size_t j) {
  const std::size_t d = u.dim(1);
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double a = u[i * d + k];
    const double b = v[j * d + k];
    dot += a * b;
    nu += a * a;
    nv += b * b;
  }
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

inline OracleResult finish(std::vector<double> per) {
  OracleResult r;
  double s = 0.0;
  for (double v : per) s += v;
  r.value = per.empty() ? 0.0 : s / static_cast<double>(per.size());
  r.per_instance = std::move(per);
  return r;
}

}  // namespace detail

/// logits[i][j] = cos(a_i, o_j) * exp(tau) + b
inline std::vector<std::vector<double>> logits(const Tensor& anchor, const Tensor& other, double tau, double b) {
  const std::size_t n = anchor.dim(0);
  std::vector<std::vector<double>> out(n, std::vector<double>(other.dim(0)));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < other.dim(0); ++j) out[i][j] = detail::cosine(anchor, i, other, j) * std::exp(tau) + b;
  return out;
}

/// log p[i][j] = l_ij - log sum_k exp(l_ik), with the row maximum factored out
/// so that exp(tau) up to e^10 does not overflow.
inline std::vector<std::vector<double>> log_distribution(const Tensor& anchor, const Tensor& other, double tau, double b) {
  const auto l = logits(anchor, other, tau, b);
  const std::size_t n = l.size();
  std::vector<std::vector<double>> lp(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    double mx = l[i][0];
    for (std::size_t k = 1; k < n; ++k)
      if (l[i][k] > mx) mx = l[i][k];
    double denom = 0.0;
    for (std::size_t k = 0; k < n; ++k) denom += std::exp(l[i][k] - mx);
    for (std::size_t j = 0; j < n; ++j) lp[i][j] = l[i][j] - mx - std::log(denom);
  }
  return lp;
}

inline std::vector<std::vector<double>> distribution(const Tensor& anchor, const Tensor& other, double tau, double b) {
  auto p = log_distribution(anchor, other, tau, b);
  for (auto& row : p)
    for (double& v : row) v = std::exp(v);
  return p;
}

inline std::vector<std::vector<double>> student_distribution(const Tensor& zs, const Tensor& zt, double tau, double b) {
  return distribution(zs, zt, tau, b);
}

inline std::vector<std::vector<double>> teacher_distribution(const Tensor& zs, const Tensor& zt, double tau, double b) {
  return distribution(zt, zs, tau, b);
}

/// per_instance[i] = -log( exp(l_ii) / sum_j exp(l_ij) )
inline OracleResult contrastive(const Tensor& zs, const Tensor& zt, double tau, double b) {
  const std::size_t n = zs.dim(0);
  std::vector<double> per(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> l(n);
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      l[j] = detail::cosine(zs, i, zt, j) * std::exp(tau) + b;
      if (l[j] > mx) mx = l[j];
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) denom += std::exp(l[j] - mx);
    per[i] = -(l[i] - mx - std::log(denom));
  }
  return detail::finish(std::move(per));
}

/// per_instance[i] = sum_j p_i^S(j) log(p_i^S(j) / p_i^T(j))
inline OracleResult consistency(const Tensor& zs, const Tensor& zt, double tau, double b) {
  const auto lps = log_distribution(zs, zt, tau, b);
  const auto lpt = log_distribution(zt, zs, tau, b);
  const std::size_t n = lps.size();
  std::vector<double> per(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) per[i] += std::exp(lps[i][j]) * (lps[i][j] - lpt[i][j]);
  return detail::finish(std::move(per));
}

/// per_instance[i] = T^2 * sum_c q_c log(q_c / p_c), q = softmax(teacher_i / T), p = softmax(student_i / T)
inline OracleResult kd_kl(const Tensor& student, const Tensor& teacher, double temperature) {
  const std::size_t n = student.dim(0), c = student.dim(1);
  std::vector<double> per(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double zs = 0.0, zt = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      zs += std::exp(student[i * c + k] / temperature);
      zt += std::exp(teacher[i * c + k] / temperature);
    }
    for (std::size_t k = 0; k < c; ++k) {
      const double q = std::exp(teacher[i * c + k] / temperature) / zt;
      const double p = std::exp(student[i * c + k] / temperature) / zs;
      per[i] += q * std::log(q / p);
    }
    per[i] *= temperature * temperature;
  }
  return detail::finish(std::move(per));
}

/// per_instance[i] = -log softmax(logits_i)[label_i]
inline OracleResult cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<double> per(n);
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t k = 0; k < c; ++k) denom += std::exp(logits[i * c + k]);
    per[i] = -std::log(std::exp(logits[i * c + static_cast<std::size_t>(labels[i])]) / denom);
  }
  return detail::finish(std::move(per));
}

}  // namespace dcd::oracle
