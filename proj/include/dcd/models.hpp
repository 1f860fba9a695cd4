// Copyright 2026 The DCD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "dcd/autodiff.hpp"
#include "dcd/conv.hpp"
#include "dcd/random.hpp"

namespace dcd {

enum class Family { mlp, convnet };

inline std::string to_string(Family f) { return f == Family::mlp ? "mlp" : "convnet"; }

inline Family parse_family(const std::string& s) {
  if (s == "mlp") return Family::mlp;
  if (s == "convnet") return Family::convnet;
  throw ConfigError("unknown model family '" + s + "'");
}

/// Architecture description. For convnet, each width is a 3x3 conv + ReLU + 2x2
/// max-pool block and features are the global average of the last block. For
/// mlp, each width is a linear + ReLU layer on the flattened input.
struct ModelSpec {
  Family family = Family::mlp;
  std::vector<std::size_t> widths;
  std::size_t num_classes = 2;
  std::size_t in_channels = 1;
  std::size_t in_height = 1;
  std::size_t in_width = 1;

  std::size_t feature_dim() const { return widths.empty() ? 0 : widths.back(); }
  std::size_t input_size() const { return in_channels * in_height * in_width; }

  void validate() const {
    if (widths.empty()) throw ConfigError("model widths must be non-empty");
    for (std::size_t w : widths)
      if (w < 1) throw ConfigError("model widths must be >= 1");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (input_size() == 0) throw ConfigError("model input shape has a zero extent");
  }

  std::string widths_str() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < widths.size(); ++i) os << (i ? "," : "") << widths[i];
    return os.str();
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

inline std::vector<std::size_t> parse_widths(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      const long v = std::stol(tok, &used);
      if (used != tok.size() || v < 1) throw ConfigError("");
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("bad width list '" + s + "'");
    }
  }
  return out;
}

/// Fills a tensor with Kaiming-uniform values, bound sqrt(6 / fan_in).
inline void kaiming_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
}

struct ForwardResult {
  Var features;
  Var logits;
};

class Model {
 public:
  Model() = default;
  explicit Model(ModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    std::size_t prev = spec_.family == Family::mlp ? spec_.input_size() : spec_.in_channels;
    for (std::size_t i = 0; i < spec_.widths.size(); ++i) {
      const std::size_t w = spec_.widths[i];
      const std::string prefix = "layer" + std::to_string(i);
      if (spec_.family == Family::mlp) params_.emplace_back(prefix + ".weight", Tensor({prev, w}));
      else params_.emplace_back(prefix + ".weight", Tensor({w, prev, 3, 3}));
      params_.emplace_back(prefix + ".bias", Tensor({w}));
      prev = w;
    }
    params_.emplace_back("fc.weight", Tensor({prev, spec_.num_classes}));
    params_.emplace_back("fc.bias", Tensor({spec_.num_classes}));
  }

  const ModelSpec& spec() const { return spec_; }
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  Parameter& param(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p;
    throw ConfigError("model has no parameter '" + name + "'");
  }

  /// Forward pass recording parameters as trainable leaves.
  ForwardResult forward(Tape& tape, const Var& input) {
    std::vector<Var> w;
    w.reserve(params_.size());
    for (auto& p : params_) w.push_back(tape.param(p));
    return run(input, w);
  }

  /// Forward pass with weights recorded as constants (no gradient reaches them).
  ForwardResult forward_frozen(Tape& tape, const Var& input) const {
    std::vector<Var> w;
    w.reserve(params_.size());
    for (const auto& p : params_) w.push_back(tape.constant(p.value));
    return run(input, w);
  }

 private:
  ForwardResult run(const Var& input, const std::vector<Var>& w) const {
    const Shape& s = input.shape();
    if (s.size() != 4 || s[1] != spec_.in_channels || s[2] != spec_.in_height || s[3] != spec_.in_width)
      throw DimensionError("model expects input [N," + std::to_string(spec_.in_channels) + "," +
                           std::to_string(spec_.in_height) + "," + std::to_string(spec_.in_width) + "], got " + shape_str(s));
    const std::size_t n = s[0];
    Var h = input;
    if (spec_.family == Family::mlp) {
      h = reshape(h, {n, spec_.input_size()});
      for (std::size_t i = 0; i < spec_.widths.size(); ++i) h = relu(add_row_vector(matmul(h, w[2 * i]), w[2 * i + 1]));
    } else {
      for (std::size_t i = 0; i < spec_.widths.size(); ++i) {
        h = relu(add_channel_bias(conv2d(h, w[2 * i], 1, 1), w[2 * i + 1]));
        if (h.shape()[2] >= 2 && h.shape()[3] >= 2) h = maxpool2d(h, 2, 2);
      }
      const Shape& hs = h.shape();
      h = hs[2] == 1 && hs[3] == 1 ? reshape(h, {hs[0], hs[1]}) : global_avg_pool(h);
    }
    const std::size_t k = spec_.widths.size();
    Var logits = add_row_vector(matmul(h, w[2 * k]), w[2 * k + 1]);
    return {h, logits};
  }

  ModelSpec spec_;
  std::vector<Parameter> params_;
};

/// Kaiming-uniform fan-in initialization for weights, zeros for biases.
inline Model init_weights(const ModelSpec& spec, std::uint64_t seed) {
  Model m(spec);
  Rng rng(derive_seed(seed, {0x6d6f64656cULL}));
  for (auto& p : m.params()) {
    if (p.name.ends_with(".bias")) continue;
    const Shape& s = p.value.shape();
    const std::size_t fan_in = s.size() == 4 ? s[1] * s[2] * s[3] : s[0];
    kaiming_uniform(p.value, fan_in, rng);
  }
  return m;
}

enum class Owner { student, teacher };

inline std::string to_string(Owner o) { return o == Owner::student ? "student" : "teacher"; }

/// Bias-free linear map into the shared embedding space; rows are l2-normalized after it.
struct ProjectionHead {
  Parameter weight;
  Owner owner = Owner::student;

  std::size_t in_dim() const { return weight.value.dim(0); }
  std::size_t out_dim() const { return weight.value.dim(1); }
};

inline ProjectionHead init_projection_head(std::size_t feature_dim, std::size_t proj_dim, Owner owner, std::uint64_t seed) {
  ProjectionHead h{Parameter(to_string(owner) + "_proj.weight", Tensor({feature_dim, proj_dim})), owner};
  Rng rng(derive_seed(seed, {0x70726f6aULL, owner == Owner::student ? 1ULL : 2ULL}));
  kaiming_uniform(h.weight.value, feature_dim, rng);
  return h;
}

inline Var project(ProjectionHead& head, const Var& features) {
  if (features.shape().size() != 2 || features.shape()[1] != head.in_dim())
    throw DimensionError("projection head expects features [N," + std::to_string(head.in_dim()) + "], got " +
                         shape_str(features.shape()));
  return l2_normalize_rows(matmul(features, features.tape().param(head.weight)));
}

inline Var project_frozen(const ProjectionHead& head, const Var& features) {
  if (features.shape().size() != 2 || features.shape()[1] != head.in_dim())
    throw DimensionError("projection head expects features [N," + std::to_string(head.in_dim()) + "], got " +
                         shape_str(features.shape()));
  return l2_normalize_rows(matmul(features, features.tape().constant(head.weight.value)));
}

/// Shipped teacher/student pairs. Students halve (convnet) or quarter (mlp) every width.
struct Recipe {
  ModelSpec teacher;
  ModelSpec student;
};

inline Recipe convnet_recipe(std::size_t channels, std::size_t height, std::size_t width, std::size_t classes) {
  Recipe r;
  r.teacher = ModelSpec{Family::convnet, {32, 64, 128}, classes, channels, height, width};
  r.student = ModelSpec{Family::convnet, {16, 32, 64}, classes, channels, height, width};
  return r;
}

inline Recipe mlp_recipe(std::size_t input_dim, std::size_t classes) {
  Recipe r;
  r.teacher = ModelSpec{Family::mlp, {512, 512}, classes, 1, 1, input_dim};
  r.student = ModelSpec{Family::mlp, {128, 128}, classes, 1, 1, input_dim};
  return r;
}

}  // namespace dcd
