// Copyright 2026 The DCD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Define-by-run reverse-mode differentiation. A Tape owns every value produced
// during one forward pass; Var is a cheap handle into it. Nodes are appended in
// evaluation order, so reverse iteration is a valid topological order.

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <deque>
#include <vector>

#include "dcd/error.hpp"
#include "dcd/tensor.hpp"

namespace dcd {

/// Trainable tensor. When bounds are set, project() clamps every entry into them.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value, std::optional<std::pair<double, double>> bounds = std::nullopt)
      : name(std::move(name)), value(std::move(value)), bounds(bounds) {}

  std::string name;
  Tensor value;
  std::optional<Tensor> grad;
  std::optional<std::pair<double, double>> bounds;

  void zero_grad() { grad.reset(); }

  void project() {
    if (!bounds) return;
    for (double& v : value.data()) v = std::clamp(v, bounds->first, bounds->second);
  }

  bool within_bounds() const {
    if (!bounds) return true;
    for (double v : value.data())
      if (v < bounds->first || v > bounds->second) return false;
    return true;
  }
};

class Tape;

class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double item() const { return value().item(); }
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// View handed to an op's backward rule.
class BackwardContext {
 public:
  const Tensor& grad_out() const { return *grad_out_; }
  const Tensor& output() const;
  const Tensor& input(std::size_t k) const;
  bool needs(std::size_t k) const;
  /// Accumulator for the k-th input's gradient, zero-initialized on first use.
  Tensor& grad(std::size_t k);

 private:
  friend class Tape;
  BackwardContext(Tape& tape, std::size_t node, const Tensor& gout) : tape_(tape), node_(node), grad_out_(&gout) {}
  Tape& tape_;
  std::size_t node_;
  const Tensor* grad_out_;
};

using BackwardFn = std::function<void(BackwardContext&)>;
using Gradients = std::map<std::size_t, Tensor>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), {}, {}, false, nullptr); }
  Var leaf(Tensor value) { return push(std::move(value), {}, {}, true, nullptr); }
  /// Tracks a parameter; backward() accumulates into param.grad.
  Var param(Parameter& p) { return push(p.value, {}, {}, true, &p); }

  Var record(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
    bool rg = false;
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const Var& v : inputs) {
      if (v.tape_ != this) throw Error("op mixes vars from different tapes");
      rg = rg || nodes_[v.id_].requires_grad;
      ids.push_back(v.id_);
    }
    return push(std::move(value), std::move(ids), rg ? std::move(fn) : BackwardFn{}, rg, nullptr);
  }

  /// Reverse sweep from a scalar root. Returns gradients for every
  /// grad-requiring leaf (zeros when unreachable).
  Gradients backward(Var root) {
    if (root.tape_ != this) throw Error("backward root belongs to another tape");
    if (!nodes_[root.id_].value.is_scalar())
      throw DimensionError("backward root must be scalar, got " + shape_str(nodes_[root.id_].value.shape()));
    grads_.assign(nodes_.size(), std::nullopt);
    grads_[root.id_] = Tensor(nodes_[root.id_].value.shape(), 1.0);
    for (std::size_t id = root.id_ + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.backward || !grads_[id]) continue;
      BackwardContext ctx(*this, id, *grads_[id]);
      n.backward(ctx);
    }
    Gradients out;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || !n.inputs.empty()) continue;
      if (!grads_[id]) grads_[id] = Tensor(n.value.shape());
      const Tensor& g = *grads_[id];
      if (n.param) {
        if (n.param->grad) *n.param->grad += g;
        else n.param->grad = g;
      }
      out.emplace(id, g);
    }
    return out;
  }

  /// Gradient of a node from the most recent backward(). Grad-requiring leaves
  /// always have one; interior nodes only when the sweep reached them.
  const Tensor* grad(Var v) const {
    if (v.id_ >= grads_.size() || !grads_[v.id_]) return nullptr;
    return &*grads_[v.id_];
  }

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  friend class BackwardContext;
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad;
    Parameter* param;
  };

  Var push(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn, bool rg, Parameter* p) {
    nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(fn), rg, p});
    return Var(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
  std::vector<std::optional<Tensor>> grads_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

inline const Tensor& BackwardContext::output() const { return tape_.nodes_[node_].value; }
inline const Tensor& BackwardContext::input(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs[k]].value;
}
inline bool BackwardContext::needs(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs[k]].requires_grad;
}
inline Tensor& BackwardContext::grad(std::size_t k) {
  const std::size_t id = tape_.nodes_[node_].inputs[k];
  auto& slot = tape_.grads_[id];
  if (!slot) slot = Tensor(tape_.nodes_[id].value.shape());
  return *slot;
}

// ---------------------------------------------------------------------------
// Elementwise ops. Binary ops accept equal shapes or a single-element operand.

namespace detail {

inline void check_binary(const Var& a, const Var& b, const char* op) {
  const std::size_t na = a.value().size(), nb = b.value().size();
  if (a.shape() == b.shape() || na == 1 || nb == 1) return;
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

inline Shape binary_shape(const Var& a, const Var& b) {
  if (a.value().size() == 1 && b.value().size() != 1) return b.shape();
  return a.shape();
}

inline double bval(const Tensor& t, std::size_t i) { return t.size() == 1 ? t[0] : t[i]; }

// Accumulate g into the k-th input, reducing when that input was broadcast.
inline void accumulate(BackwardContext& ctx, std::size_t k, std::size_t i, double g) {
  Tensor& acc = ctx.grad(k);
  if (acc.size() == 1) acc[0] += g;
  else acc[i] += g;
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  detail::check_binary(a, b, "add");
  Tensor out(detail::binary_shape(a, b));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::bval(a.value(), i) + detail::bval(b.value(), i);
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    for (std::size_t k = 0; k < 2; ++k)
      if (ctx.needs(k))
        for (std::size_t i = 0; i < g.size(); ++i) detail::accumulate(ctx, k, i, g[i]);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::check_binary(a, b, "sub");
  Tensor out(detail::binary_shape(a, b));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::bval(a.value(), i) - detail::bval(b.value(), i);
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    if (ctx.needs(0))
      for (std::size_t i = 0; i < g.size(); ++i) detail::accumulate(ctx, 0, i, g[i]);
    if (ctx.needs(1))
      for (std::size_t i = 0; i < g.size(); ++i) detail::accumulate(ctx, 1, i, -g[i]);
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::check_binary(a, b, "mul");
  Tensor out(detail::binary_shape(a, b));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::bval(a.value(), i) * detail::bval(b.value(), i);
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    const Tensor& x = ctx.input(0);
    const Tensor& y = ctx.input(1);
    if (ctx.needs(0))
      for (std::size_t i = 0; i < g.size(); ++i) detail::accumulate(ctx, 0, i, g[i] * detail::bval(y, i));
    if (ctx.needs(1))
      for (std::size_t i = 0; i < g.size(); ++i) detail::accumulate(ctx, 1, i, g[i] * detail::bval(x, i));
  });
}

inline Var div(const Var& a, const Var& b) {
  detail::check_binary(a, b, "div");
  for (double v : b.value().data())
    if (v == 0.0) throw DomainError("div: division by zero");
  Tensor out(detail::binary_shape(a, b));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::bval(a.value(), i) / detail::bval(b.value(), i);
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    const Tensor& x = ctx.input(0);
    const Tensor& y = ctx.input(1);
    if (ctx.needs(0))
      for (std::size_t i = 0; i < g.size(); ++i) detail::accumulate(ctx, 0, i, g[i] / detail::bval(y, i));
    if (ctx.needs(1))
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double yv = detail::bval(y, i);
        detail::accumulate(ctx, 1, i, -g[i] * detail::bval(x, i) / (yv * yv));
      }
  });
}

inline Var scale(const Var& x, double s) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= s;
  return x.tape().record(std::move(out), {x}, [s](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& gx = ctx.grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
  });
}

inline Var add_scalar(const Var& x, double s) {
  Tensor out = x.value();
  for (double& v : out.data()) v += s;
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) { ctx.grad(0) += ctx.grad_out(); });
}

inline Var exp(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = std::exp(v);
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    const Tensor& y = ctx.output();
    Tensor& gx = ctx.grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
  });
}

inline Var log(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive argument " + std::to_string(v));
    v = std::log(v);
  }
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    const Tensor& xv = ctx.input(0);
    Tensor& gx = ctx.grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / xv[i];
  });
}

inline Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    const Tensor& xv = ctx.input(0);
    Tensor& gx = ctx.grad(0);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

inline Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) { ctx.grad(0) += ctx.grad_out(); });
}

// ---------------------------------------------------------------------------
// Linear algebra and reductions.

inline Var matmul(const Var& a, const Var& b) {
  Tensor out = matmul_values(a.value(), b.value());
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    const Tensor& av = ctx.input(0);
    const Tensor& bv = ctx.input(1);
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    if (ctx.needs(0)) kernels::gemm_nt(m, n, k, g.ptr(), bv.ptr(), ctx.grad(0).ptr());  // dA = dC * B^T
    if (ctx.needs(1)) kernels::gemm_tn(k, m, n, av.ptr(), g.ptr(), ctx.grad(1).ptr());  // dB = A^T * dC
  });
}

inline Var transpose(const Var& x) {
  Tensor out = transposed(x.value());
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) { ctx.grad(0) += transposed(ctx.grad_out()); });
}

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape().record(Tensor::scalar(s), {x}, [](BackwardContext& ctx) {
    const double g = ctx.grad_out()[0];
    for (double& v : ctx.grad(0).data()) v += g;
  });
}

inline Var mean(const Var& x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw DimensionError("mean of empty tensor");
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape().record(Tensor::scalar(s / static_cast<double>(n)), {x}, [n](BackwardContext& ctx) {
    const double g = ctx.grad_out()[0] / static_cast<double>(n);
    for (double& v : ctx.grad(0).data()) v += g;
  });
}

/// out[r, :] = x[idx[r], :]. Backward scatters (repeated indices accumulate).
inline Var gather_rows(const Var& x, std::vector<std::size_t> idx) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw DimensionError("gather_rows expects rank 2, got " + shape_str(xv.shape()));
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  Tensor out({idx.size(), d});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) throw IndexError("gather_rows: index " + std::to_string(idx[r]) + " out of range " + std::to_string(n));
    std::copy_n(xv.ptr() + idx[r] * d, d, out.ptr() + r * d);
  }
  return x.tape().record(std::move(out), {x}, [idx = std::move(idx), d](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& gx = ctx.grad(0);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) gx[idx[r] * d + j] += g[r * d + j];
  });
}

/// out[i] = x[i, cols[i]].
inline Var select_per_row(const Var& x, std::vector<std::size_t> cols) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || cols.size() != xv.dim(0))
    throw DimensionError("select_per_row: " + shape_str(xv.shape()) + " with " + std::to_string(cols.size()) + " indices");
  const std::size_t m = xv.dim(1);
  Tensor out({cols.size()});
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] >= m) throw IndexError("select_per_row: column " + std::to_string(cols[i]) + " out of range " + std::to_string(m));
    out[i] = xv[i * m + cols[i]];
  }
  return x.tape().record(std::move(out), {x}, [cols = std::move(cols), m](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& gx = ctx.grad(0);
    for (std::size_t i = 0; i < cols.size(); ++i) gx[i * m + cols[i]] += g[i];
  });
}

/// x[N,M] + bias[M] broadcast over rows.
inline Var add_row_vector(const Var& x, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 2 || bv.size() != xv.dim(1))
    throw DimensionError("add_row_vector: " + shape_str(xv.shape()) + " + " + shape_str(bv.shape()));
  const std::size_t n = xv.dim(0), m = xv.dim(1);
  Tensor out = xv;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += bv[j];
  return x.tape().record(std::move(out), {x, bias}, [n, m](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    if (ctx.needs(0)) ctx.grad(0) += g;
    if (ctx.needs(1)) {
      Tensor& gb = ctx.grad(1);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Row-wise normalization and softmax.

inline constexpr double kNormEpsilon = 1e-12;

/// Scales every row to unit Euclidean norm. Rows with norm below 1e-12 are rejected.
inline Var l2_normalize_rows(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw DimensionError("l2_normalize_rows expects rank 2, got " + shape_str(xv.shape()));
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  std::vector<double> norms(n);
  Tensor out = xv;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += xv[i * d + j] * xv[i * d + j];
    norms[i] = std::sqrt(s);
    if (norms[i] < kNormEpsilon) throw DegenerateInputError("l2_normalize_rows: row " + std::to_string(i) + " has zero norm");
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] /= norms[i];
  }
  return x.tape().record(std::move(out), {x}, [norms = std::move(norms), n, d](BackwardContext& ctx) {
    // dx = (g - y <y, g>) / |x|
    const Tensor& g = ctx.grad_out();
    const Tensor& y = ctx.output();
    Tensor& gx = ctx.grad(0);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += y[i * d + j] * g[i * d + j];
      for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += (g[i * d + j] - y[i * d + j] * dot) / norms[i];
    }
  });
}

inline Tensor log_softmax_rows_values(const Tensor& xv) {
  if (xv.rank() != 2) throw DimensionError("log_softmax_rows expects rank 2, got " + shape_str(xv.shape()));
  if (!xv.all_finite()) throw DomainError("log_softmax_rows: non-finite input");
  const std::size_t n = xv.dim(0), m = xv.dim(1);
  Tensor out = xv;
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.ptr() + i * m;
    const std::size_t top = static_cast<std::size_t>(std::max_element(row, row + m) - row);
    const double mx = row[top];
    // the maximum contributes exactly 1 to the shifted sum
    double rest = 0.0;
    for (std::size_t j = 0; j < m; ++j)
      if (j != top) rest += std::exp(row[j] - mx);
    const double l = std::log1p(rest);
    for (std::size_t j = 0; j < m; ++j) row[j] = (row[j] - mx) - l;
  }
  return out;
}

inline Var log_softmax_rows(const Var& x) {
  Tensor out = log_softmax_rows_values(x.value());
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    // dx_j = g_j - softmax_j * sum_k g_k
    const Tensor& g = ctx.grad_out();
    const Tensor& y = ctx.output();
    Tensor& gx = ctx.grad(0);
    const std::size_t n = y.dim(0), m = y.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < m; ++j) gs += g[i * m + j];
      for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[i * m + j] - std::exp(y[i * m + j]) * gs;
    }
  });
}

inline Var softmax_rows(const Var& x) {
  Tensor out = log_softmax_rows_values(x.value());
  for (double& v : out.data()) v = std::exp(v);
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    // dx_j = p_j (g_j - <p, g>)
    const Tensor& g = ctx.grad_out();
    const Tensor& p = ctx.output();
    Tensor& gx = ctx.grad(0);
    const std::size_t n = p.dim(0), m = p.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += p[i * m + j] * g[i * m + j];
      for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += p[i * m + j] * (g[i * m + j] - dot);
    }
  });
}

}  // namespace dcd
