// Copyright 2026 The DCD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "dcd/autodiff.hpp"

namespace dcd {

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t filters, kh, kw;
  std::size_t stride, pad;
  std::size_t out_h, out_w;

  std::size_t patch() const { return channels * kh * kw; }
  std::size_t positions() const { return out_h * out_w; }
};

namespace detail {

inline std::size_t out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad, const char* op) {
  if (stride == 0) throw DimensionError(std::string(op) + ": stride must be positive");
  if (in + 2 * pad < k)
    throw DimensionError(std::string(op) + ": kernel " + std::to_string(k) + " larger than padded input " +
                         std::to_string(in + 2 * pad));
  return (in + 2 * pad - k) / stride + 1;
}

// cols[C*kh*kw, out_h*out_w] for image n.
inline void im2col(const ConvGeometry& g, const double* img, double* cols) {
  const std::size_t pos = g.positions();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = cols + ((c * g.kh + ky) * g.kw + kx) * pos;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) && ix < static_cast<long>(g.width);
            row[oy * g.out_w + ox] = inside ? img[(c * g.height + iy) * g.width + ix] : 0.0;
          }
        }
      }
}

inline void col2im(const ConvGeometry& g, const double* cols, double* img) {
  const std::size_t pos = g.positions();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = cols + ((c * g.kh + ky) * g.kw + kx) * pos;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
            img[(c * g.height + iy) * g.width + ix] += row[oy * g.out_w + ox];
          }
        }
      }
}

}  // namespace detail

inline ConvGeometry conv_geometry(const Shape& x, const Shape& k, std::size_t stride, std::size_t pad) {
  if (x.size() != 4 || k.size() != 4)
    throw DimensionError("conv2d expects x[N,C,H,W] and k[F,C,kh,kw], got " + shape_str(x) + " and " + shape_str(k));
  if (x[1] != k[1]) throw DimensionError("conv2d: input channels " + std::to_string(x[1]) + " vs kernel channels " + std::to_string(k[1]));
  ConvGeometry g{x[0], x[1], x[2], x[3], k[0], k[2], k[3], stride, pad, 0, 0};
  g.out_h = detail::out_extent(g.height, g.kh, stride, pad, "conv2d");
  g.out_w = detail::out_extent(g.width, g.kw, stride, pad, "conv2d");
  return g;
}

/// 2-D cross-correlation (no kernel flip) with zero padding.
inline Var conv2d(const Var& x, const Var& kernel, std::size_t stride = 1, std::size_t pad = 0) {
  const ConvGeometry g = conv_geometry(x.shape(), kernel.shape(), stride, pad);
  const std::size_t patch = g.patch(), pos = g.positions();
  const std::size_t in_img = g.channels * g.height * g.width, out_img = g.filters * pos;
  Tensor out({g.batch, g.filters, g.out_h, g.out_w});
  std::vector<double> cols(patch * pos);
  for (std::size_t n = 0; n < g.batch; ++n) {
    detail::im2col(g, x.value().ptr() + n * in_img, cols.data());
    kernels::gemm_nn(g.filters, patch, pos, kernel.value().ptr(), cols.data(), out.ptr() + n * out_img);
  }
  return x.tape().record(std::move(out), {x, kernel}, [g](BackwardContext& ctx) {
    const std::size_t patch = g.patch(), pos = g.positions();
    const std::size_t in_img = g.channels * g.height * g.width, out_img = g.filters * pos;
    const Tensor& gout = ctx.grad_out();
    const Tensor& xv = ctx.input(0);
    const Tensor& kv = ctx.input(1);
    std::vector<double> cols(patch * pos);
    std::vector<double> dcols(patch * pos);
    for (std::size_t n = 0; n < g.batch; ++n) {
      const double* go = gout.ptr() + n * out_img;
      if (ctx.needs(1)) {
        detail::im2col(g, xv.ptr() + n * in_img, cols.data());
        kernels::gemm_nt(g.filters, pos, patch, go, cols.data(), ctx.grad(1).ptr());  // dK += dY * cols^T
      }
      if (ctx.needs(0)) {
        std::fill(dcols.begin(), dcols.end(), 0.0);
        kernels::gemm_tn(patch, g.filters, pos, kv.ptr(), go, dcols.data());  // dcols = K^T * dY
        detail::col2im(g, dcols.data(), ctx.grad(0).ptr() + n * in_img);
      }
    }
  });
}

/// x[N,C,H,W] + bias[C] per channel.
inline Var add_channel_bias(const Var& x, const Var& bias) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || bias.value().size() != xv.dim(1))
    throw DimensionError("add_channel_bias: " + shape_str(xv.shape()) + " + " + shape_str(bias.shape()));
  const std::size_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor out = xv;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double v = bias.value()[ch];
      double* p = out.ptr() + (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) p[i] += v;
    }
  return x.tape().record(std::move(out), {x, bias}, [n, c, hw](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    if (ctx.needs(0)) ctx.grad(0) += g;
    if (ctx.needs(1)) {
      Tensor& gb = ctx.grad(1);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double* p = g.ptr() + (b * c + ch) * hw;
          double s = 0.0;
          for (std::size_t i = 0; i < hw; ++i) s += p[i];
          gb[ch] += s;
        }
    }
  });
}

/// Max pooling without padding. Ties resolve to the first (row-major) position in the window.
inline Var maxpool2d(const Var& x, std::size_t k, std::size_t stride) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4) throw DimensionError("maxpool2d expects rank 4, got " + shape_str(xv.shape()));
  const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t oh = detail::out_extent(h, k, stride, 0, "maxpool2d");
  const std::size_t ow = detail::out_extent(w, k, stride, 0, "maxpool2d");
  Tensor out({n, c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = xv.ptr() + p * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t bi = 0;
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::size_t idx = (oy * stride + ky) * w + ox * stride + kx;
            if (src[idx] > best) {
              best = src[idx];
              bi = idx;
            }
          }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = best;
        argmax[o] = p * h * w + bi;
      }
  }
  return x.tape().record(std::move(out), {x}, [argmax = std::move(argmax)](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& gx = ctx.grad(0);
    for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
  });
}

inline Var avgpool2d(const Var& x, std::size_t k, std::size_t stride) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4) throw DimensionError("avgpool2d expects rank 4, got " + shape_str(xv.shape()));
  const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t oh = detail::out_extent(h, k, stride, 0, "avgpool2d");
  const std::size_t ow = detail::out_extent(w, k, stride, 0, "avgpool2d");
  const double inv = 1.0 / static_cast<double>(k * k);
  Tensor out({n, c, oh, ow});
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = xv.ptr() + p * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double s = 0.0;
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) s += src[(oy * stride + ky) * w + ox * stride + kx];
        out[(p * oh + oy) * ow + ox] = s * inv;
      }
  }
  return x.tape().record(std::move(out), {x}, [=](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& gx = ctx.grad(0);
    for (std::size_t p = 0; p < n * c; ++p) {
      double* dst = gx.ptr() + p * h * w;
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double v = g[(p * oh + oy) * ow + ox] * inv;
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) dst[(oy * stride + ky) * w + ox * stride + kx] += v;
        }
    }
  });
}

/// [N,C,H,W] -> [N,C] spatial mean.
inline Var global_avg_pool(const Var& x) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[2] * s[3] == 0) throw DimensionError("global_avg_pool expects [N,C,H,W], got " + shape_str(s));
  const std::size_t planes = s[0] * s[1], hw = s[2] * s[3];
  Tensor out({s[0], s[1]});
  const Tensor& xv = x.value();
  for (std::size_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::size_t k = 0; k < hw; ++k) acc += xv[p * hw + k];
    out[p] = acc / static_cast<double>(hw);
  }
  return x.tape().record(std::move(out), {x}, [planes, hw](BackwardContext& ctx) {
    if (!ctx.needs(0)) return;
    Tensor& g = ctx.grad(0);
    const Tensor& go = ctx.grad_out();
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t k = 0; k < hw; ++k) g[p * hw + k] += go[p] * inv;
  });
}

}  // namespace dcd
