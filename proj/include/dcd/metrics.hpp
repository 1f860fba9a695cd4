// Copyright 2026 The DCD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dcd/error.hpp"
#include "dcd/tensor.hpp"

namespace dcd {

/// Percentage of rows whose argmax equals the label. Ties go to the lowest class index.
inline double top1_accuracy(const Tensor& logits, std::span<const int> labels) {
  if (labels.empty()) throw DimensionError("top1_accuracy on empty input");
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw DimensionError("top1_accuracy: logits " + shape_str(logits.shape()) + " with " + std::to_string(labels.size()) + " labels");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (logits[i * c + k] > logits[i * c + best]) best = k;
    if (static_cast<int>(best) == labels[i]) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(n);
}

/// Bytes of an in-batch float32 negative buffer: batch_size * proj_dim * 4.
inline std::uint64_t negative_buffer_bytes(std::uint64_t batch_size, std::uint64_t proj_dim) {
  if (batch_size == 0 || proj_dim == 0) throw ConfigError("negative_buffer_bytes expects positive sizes");
  return batch_size * proj_dim * 4;
}

// ---------------------------------------------------------------------------
// Accuracy tables and the relative-improvement aggregate.

struct AccuracyTable {
  std::vector<std::string> columns;
  struct Row {
    std::string method;
    std::vector<std::optional<double>> values;  // nullopt for "n/a"
  };
  std::vector<Row> rows;

  const Row& row(const std::string& method) const {
    for (const auto& r : rows)
      if (r.method == method) return r;
    throw ConfigError("accuracy table has no row '" + method + "'");
  }

  void validate() const {
    for (const auto& r : rows) {
      if (r.values.size() != columns.size())
        throw ConfigError("row '" + r.method + "' has " + std::to_string(r.values.size()) + " values for " +
                          std::to_string(columns.size()) + " columns");
      for (const auto& v : r.values)
        if (v && !(*v >= 0.0 && *v <= 100.0)) throw ConfigError("accuracy outside [0, 100] in row '" + r.method + "'");
    }
  }
};

/// Whitespace-separated grid. Lines starting with '#' are comments. The first
/// remaining line is `method <col>...`; each later line is `<method> <value|n/a>...`.
inline AccuracyTable parse_accuracy_table(const std::string& text) {
  AccuracyTable t;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string s; ls >> s;) tok.push_back(s);
    if (header) {
      t.columns.assign(tok.begin() + 1, tok.end());
      header = false;
      continue;
    }
    AccuracyTable::Row r{tok[0], {}};
    for (std::size_t i = 1; i < tok.size(); ++i) {
      if (tok[i] == "n/a") {
        r.values.emplace_back(std::nullopt);
        continue;
      }
      try {
        std::size_t used = 0;
        const double v = std::stod(tok[i], &used);
        if (used != tok[i].size()) throw std::invalid_argument("");
        r.values.emplace_back(v);
      } catch (const std::exception&) {
        throw ConfigError("bad accuracy token '" + tok[i] + "' in row '" + tok[0] + "'");
      }
    }
    t.rows.push_back(std::move(r));
  }
  t.validate();
  return t;
}

inline AccuracyTable load_accuracy_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_accuracy_table(ss.str());
}

inline std::string format_accuracy_table(const AccuracyTable& t) {
  std::ostringstream os;
  os << "method";
  for (const auto& c : t.columns) os << ' ' << c;
  os << '\n';
  for (const auto& r : t.rows) {
    os << r.method;
    for (const auto& v : r.values) {
      os << ' ';
      if (v) os << std::fixed << std::setprecision(2) << *v;
      else os << "n/a";
    }
    os << '\n';
  }
  return os.str();
}

struct RelativeImprovement {
  double percent = 0.0;
  std::size_t used = 0;
  std::vector<std::size_t> excluded;  // columns with zero or missing denominator
  std::vector<std::string> warnings;
};

/// mean_i (dcd_i - kd_i) / (kd_i - van_i) * 100 over columns with a non-zero denominator.
inline RelativeImprovement relative_improvement(std::span<const std::optional<double>> dcd,
                                                std::span<const std::optional<double>> kd,
                                                std::span<const std::optional<double>> van) {
  if (dcd.size() != kd.size() || kd.size() != van.size() || dcd.empty())
    throw DimensionError("relative_improvement expects equal non-empty inputs");
  RelativeImprovement r;
  double sum = 0.0;
  for (std::size_t i = 0; i < dcd.size(); ++i) {
    if (!dcd[i] || !kd[i] || !van[i]) {
      r.excluded.push_back(i);
      r.warnings.push_back("column " + std::to_string(i) + ": missing value, excluded");
      continue;
    }
    const double denom = *kd[i] - *van[i];
    if (denom == 0.0) {
      r.excluded.push_back(i);
      r.warnings.push_back("column " + std::to_string(i) + ": undefined (kd == vanilla), excluded");
      continue;
    }
    sum += (*dcd[i] - *kd[i]) / denom;
    ++r.used;
  }
  if (r.used == 0) throw DomainError("relative_improvement: every column has an undefined denominator");
  r.percent = 100.0 * sum / static_cast<double>(r.used);
  return r;
}

inline RelativeImprovement relative_improvement(std::span<const double> dcd, std::span<const double> kd,
                                                std::span<const double> van) {
  auto wrap = [](std::span<const double> v) { return std::vector<std::optional<double>>(v.begin(), v.end()); };
  const auto a = wrap(dcd), b = wrap(kd), c = wrap(van);
  return relative_improvement(std::span<const std::optional<double>>(a), std::span<const std::optional<double>>(b),
                              std::span<const std::optional<double>>(c));
}

inline RelativeImprovement relative_improvement(const AccuracyTable& t, const std::string& method,
                                                const std::string& kd = "KD", const std::string& vanilla = "Student") {
  return relative_improvement(std::span<const std::optional<double>>(t.row(method).values),
                              std::span<const std::optional<double>>(t.row(kd).values),
                              std::span<const std::optional<double>>(t.row(vanilla).values));
}

// ---------------------------------------------------------------------------
// Logit correlation diagnostic: Pearson correlation between per-class mean
// logit vectors, compared between teacher and student.

struct CorrelationReport {
  Tensor matrix;  // |C^T - C^S|, [C, C]
  double mean_abs = 0.0;
  double max_abs = 0.0;
  std::vector<std::size_t> excluded;  // classes with a zero-variance mean vector
  std::vector<std::string> warnings;
};

/// Row c is the mean logit vector over samples labelled c. Classes with no samples stay zero.
inline Tensor class_mean_logits(const Tensor& logits, std::span<const int> labels, std::size_t classes) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) throw DimensionError("class_mean_logits: shape mismatch");
  const std::size_t k = logits.dim(1);
  Tensor out({classes, k});
  std::vector<std::size_t> count(classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    if (c >= classes) throw IndexError("class_mean_logits: label out of range");
    ++count[c];
    for (std::size_t j = 0; j < k; ++j) out[c * k + j] += logits[i * k + j];
  }
  for (std::size_t c = 0; c < classes; ++c)
    if (count[c])
      for (std::size_t j = 0; j < k; ++j) out[c * k + j] /= static_cast<double>(count[c]);
  return out;
}

namespace detail {

// Pearson correlation between rows of m; nullopt marks zero-variance rows.
inline std::vector<std::optional<std::vector<double>>> centered_rows(const Tensor& m) {
  const std::size_t c = m.dim(0), k = m.dim(1);
  std::vector<std::optional<std::vector<double>>> out(c);
  for (std::size_t i = 0; i < c; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < k; ++j) mu += m[i * k + j];
    mu /= static_cast<double>(k);
    std::vector<double> v(k);
    double ss = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      v[j] = m[i * k + j] - mu;
      ss += v[j] * v[j];
    }
    if (ss <= 1e-24) continue;
    const double inv = 1.0 / std::sqrt(ss);
    for (double& x : v) x *= inv;
    out[i] = std::move(v);
  }
  return out;
}

}  // namespace detail

/// Element-wise |C^T - C^S| of the class-by-class Pearson matrices built from
/// per-class mean logits. mean_abs and max_abs run over off-diagonal pairs of
/// non-excluded classes.
inline CorrelationReport logit_correlation_diff(const Tensor& teacher_class_means, const Tensor& student_class_means) {
  if (teacher_class_means.rank() != 2 || teacher_class_means.shape() != student_class_means.shape())
    throw DimensionError("logit_correlation_diff: " + shape_str(teacher_class_means.shape()) + " vs " +
                         shape_str(student_class_means.shape()));
  const std::size_t c = teacher_class_means.dim(0);
  const auto t = detail::centered_rows(teacher_class_means);
  const auto s = detail::centered_rows(student_class_means);
  CorrelationReport r;
  r.matrix = Tensor({c, c});
  std::vector<bool> ok(c);
  for (std::size_t i = 0; i < c; ++i) {
    ok[i] = t[i] && s[i];
    if (!ok[i]) {
      r.excluded.push_back(i);
      r.warnings.push_back("class " + std::to_string(i) + ": zero-variance mean logit vector, excluded");
    }
  }
  std::size_t pairs = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      if (!ok[i] || !ok[j]) continue;
      double ct = 0.0, cs = 0.0;
      for (std::size_t k = 0; k < t[i]->size(); ++k) {
        ct += (*t[i])[k] * (*t[j])[k];
        cs += (*s[i])[k] * (*s[j])[k];
      }
      const double d = std::abs(ct - cs);
      r.matrix[i * c + j] = d;
      if (i != j) {
        total += d;
        ++pairs;
        r.max_abs = std::max(r.max_abs, d);
      }
    }
  r.mean_abs = pairs ? total / static_cast<double>(pairs) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Embedding CSV: header "label,z0,...,z{D-1}", one row per sample.

struct EmbeddingTable {
  std::vector<int> labels;
  Tensor embeddings;  // [M, D]
};

inline void write_embeddings_csv(const std::filesystem::path& path, std::span<const int> labels, const Tensor& z) {
  if (z.rank() != 2 || z.dim(0) != labels.size()) throw DimensionError("write_embeddings_csv: shape mismatch");
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  const std::size_t d = z.dim(1);
  out << "label";
  for (std::size_t j = 0; j < d; ++j) out << ",z" << j;
  out << '\n' << std::setprecision(12);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out << labels[i];
    for (std::size_t j = 0; j < d; ++j) out << ',' << z[i * d + j];
    out << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

inline EmbeddingTable read_embeddings_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error("empty embedding file " + path.string());
  const std::size_t d = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  EmbeddingTable t;
  std::vector<double> data;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok;
    std::getline(ls, tok, ',');
    t.labels.push_back(std::stoi(tok));
    std::size_t cols = 0;
    while (std::getline(ls, tok, ',')) {
      data.push_back(std::stod(tok));
      ++cols;
    }
    if (cols != d) throw Error("embedding row with " + std::to_string(cols) + " values, header declares " + std::to_string(d));
  }
  t.embeddings = Tensor({t.labels.size(), d}, std::move(data));
  return t;
}

}  // namespace dcd
