// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "microlab/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "microlab/error.hpp"

namespace microlab {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_4d(const Tensor& t, const char* op) {
  require(t.rank() == 4, std::string(op) + ": expected a 4-D tensor, got " + t.shape_string());
}

bool is_pointwise(std::size_t kh, std::size_t kw, const ConvSpec& spec) {
  return kh == 1 && kw == 1 && spec.stride == 1;
}

// cols is (Cin*kh*kw, N*P) where P = out_h*out_w; column n*P + p holds the
// receptive field of output pixel p of image n.
void im2col(const Tensor& in, std::size_t kh, std::size_t kw, const ConvSpec& spec,
            const ConvGeometry& g, RowMat& cols) {
  const std::size_t n_img = in.dim(0), cin = in.dim(1), h = in.dim(2), w = in.dim(3);
  const std::size_t p = g.out_h * g.out_w;
  cols.resize(static_cast<Eigen::Index>(cin * kh * kw), static_cast<Eigen::Index>(n_img * p));
  const auto stride = static_cast<std::ptrdiff_t>(spec.stride);
  const auto dil = static_cast<std::ptrdiff_t>(spec.dilation);
  for (std::size_t ci = 0; ci < cin; ++ci) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        double* row = cols.data() + ((ci * kh + ki) * kw + kj) * n_img * p;
        for (std::size_t n = 0; n < n_img; ++n) {
          const double* src = in.raw() + (n * cin + ci) * h * w;
          double* dst = row + n * p;
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * stride -
                                      static_cast<std::ptrdiff_t>(g.pad_top) +
                                      static_cast<std::ptrdiff_t>(ki) * dil;
            double* drow = dst + oh * g.out_w;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) {
              std::fill(drow, drow + g.out_w, 0.0);
              continue;
            }
            const double* srow = src + static_cast<std::size_t>(ih) * w;
            for (std::size_t ow = 0; ow < g.out_w; ++ow) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * stride -
                                        static_cast<std::ptrdiff_t>(g.pad_left) +
                                        static_cast<std::ptrdiff_t>(kj) * dil;
              drow[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w))
                             ? 0.0
                             : srow[static_cast<std::size_t>(iw)];
            }
          }
        }
      }
    }
  }
}

void col2im(const RowMat& cols, std::size_t kh, std::size_t kw, const ConvSpec& spec,
            const ConvGeometry& g, Tensor& din) {
  const std::size_t n_img = din.dim(0), cin = din.dim(1), h = din.dim(2), w = din.dim(3);
  const std::size_t p = g.out_h * g.out_w;
  const auto stride = static_cast<std::ptrdiff_t>(spec.stride);
  const auto dil = static_cast<std::ptrdiff_t>(spec.dilation);
  for (std::size_t ci = 0; ci < cin; ++ci) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const double* row = cols.data() + ((ci * kh + ki) * kw + kj) * n_img * p;
        for (std::size_t n = 0; n < n_img; ++n) {
          double* dst = din.raw() + (n * cin + ci) * h * w;
          const double* src = row + n * p;
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * stride -
                                      static_cast<std::ptrdiff_t>(g.pad_top) +
                                      static_cast<std::ptrdiff_t>(ki) * dil;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
            double* drow = dst + static_cast<std::size_t>(ih) * w;
            const double* srow = src + oh * g.out_w;
            for (std::size_t ow = 0; ow < g.out_w; ++ow) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow) * stride -
                                        static_cast<std::ptrdiff_t>(g.pad_left) +
                                        static_cast<std::ptrdiff_t>(kj) * dil;
              if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(w))
                drow[static_cast<std::size_t>(iw)] += srow[ow];
            }
          }
        }
      }
    }
  }
}

// (N, C, P) tensor layout <-> (C, N*P) matrix layout.
void batch_to_matrix(const double* src, std::size_t n_img, std::size_t c, std::size_t p,
                     RowMat& m) {
  m.resize(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(n_img * p));
  for (std::size_t n = 0; n < n_img; ++n)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy(src + (n * c + ch) * p, src + (n * c + ch + 1) * p,
                m.data() + ch * n_img * p + n * p);
}

void matrix_to_batch(const RowMat& m, std::size_t n_img, std::size_t c, std::size_t p,
                     double* dst) {
  for (std::size_t n = 0; n < n_img; ++n)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy(m.data() + ch * n_img * p + n * p, m.data() + ch * n_img * p + (n + 1) * p,
                dst + (n * c + ch) * p);
}

void check_conv_shapes(const Tensor& input, const Tensor& kernel, const ConvSpec& spec) {
  require_4d(input, "conv2d input");
  require(kernel.rank() == 4, "conv2d: kernel must be 4-D (out, in, kh, kw), got " +
                                  kernel.shape_string());
  require(kernel.dim(1) == input.dim(1),
          "conv2d: kernel in-channel dimension " + std::to_string(kernel.dim(1)) +
              " does not match input channel dimension " + std::to_string(input.dim(1)));
  require(spec.stride >= 1, "conv2d: stride must be >= 1");
  require(spec.dilation >= 1, "conv2d: dilation must be >= 1");
}

}  // namespace

ConvGeometry conv_geometry(std::size_t in_h, std::size_t in_w, std::size_t k_h, std::size_t k_w,
                           const ConvSpec& spec) {
  ConvGeometry g;
  const auto s = static_cast<std::size_t>(spec.stride);
  const auto d = static_cast<std::size_t>(spec.dilation);
  const std::size_t eff_h = d * (k_h - 1) + 1, eff_w = d * (k_w - 1) + 1;
  if (spec.padding == Padding::same) {
    g.out_h = (in_h + s - 1) / s;
    g.out_w = (in_w + s - 1) / s;
    const std::size_t need_h = (g.out_h - 1) * s + eff_h;
    const std::size_t need_w = (g.out_w - 1) * s + eff_w;
    g.pad_top = need_h > in_h ? (need_h - in_h) / 2 : 0;
    g.pad_left = need_w > in_w ? (need_w - in_w) / 2 : 0;
  } else {
    require(in_h >= eff_h, "conv2d: height " + std::to_string(in_h) +
                               " smaller than dilated kernel extent " + std::to_string(eff_h));
    require(in_w >= eff_w, "conv2d: width " + std::to_string(in_w) +
                               " smaller than dilated kernel extent " + std::to_string(eff_w));
    g.out_h = (in_h - eff_h) / s + 1;
    g.out_w = (in_w - eff_w) / s + 1;
  }
  return g;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              const ConvSpec& spec) {
  check_conv_shapes(input, kernel, spec);
  const std::size_t n_img = input.dim(0), cout = kernel.dim(0);
  const std::size_t kh = kernel.dim(2), kw = kernel.dim(3);
  require(bias.size() == cout, "conv2d: bias length " + std::to_string(bias.size()) +
                                   " does not match out channels " + std::to_string(cout));
  const ConvGeometry g = conv_geometry(input.dim(2), input.dim(3), kh, kw, spec);
  const std::size_t p = g.out_h * g.out_w;

  RowMat cols;
  if (is_pointwise(kh, kw, spec))
    batch_to_matrix(input.raw(), n_img, input.dim(1), p, cols);
  else
    im2col(input, kh, kw, spec, g, cols);

  const Eigen::Map<const RowMat> wmat(kernel.raw(), static_cast<Eigen::Index>(cout),
                                      static_cast<Eigen::Index>(kernel.size() / cout));
  RowMat out_mat = wmat * cols;
  for (std::size_t co = 0; co < cout; ++co) out_mat.row(static_cast<Eigen::Index>(co)).array() += bias[co];

  Tensor out({n_img, cout, g.out_h, g.out_w});
  matrix_to_batch(out_mat, n_img, cout, p, out.raw());
  return out;
}

LayerGradients conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out,
                               const ConvSpec& spec) {
  check_conv_shapes(input, kernel, spec);
  const std::size_t n_img = input.dim(0), cin = input.dim(1), cout = kernel.dim(0);
  const std::size_t kh = kernel.dim(2), kw = kernel.dim(3);
  const ConvGeometry g = conv_geometry(input.dim(2), input.dim(3), kh, kw, spec);
  require(grad_out.rank() == 4 && grad_out.dim(0) == n_img && grad_out.dim(1) == cout &&
              grad_out.dim(2) == g.out_h && grad_out.dim(3) == g.out_w,
          "conv2d_backward: grad_out shape " + grad_out.shape_string() +
              " does not match forward output");
  const std::size_t p = g.out_h * g.out_w;
  const bool pointwise = is_pointwise(kh, kw, spec);

  RowMat cols;
  if (pointwise)
    batch_to_matrix(input.raw(), n_img, cin, p, cols);
  else
    im2col(input, kh, kw, spec, g, cols);

  RowMat dout;
  batch_to_matrix(grad_out.raw(), n_img, cout, p, dout);

  LayerGradients grads;
  Tensor dkernel(kernel.shape());
  Eigen::Map<RowMat> dw(dkernel.raw(), static_cast<Eigen::Index>(cout),
                        static_cast<Eigen::Index>(kernel.size() / cout));
  dw.noalias() = dout * cols.transpose();
  Tensor dbias({cout});
  for (std::size_t co = 0; co < cout; ++co) dbias[co] = dout.row(static_cast<Eigen::Index>(co)).sum();

  const Eigen::Map<const RowMat> wmat(kernel.raw(), static_cast<Eigen::Index>(cout),
                                      static_cast<Eigen::Index>(kernel.size() / cout));
  RowMat dcols = wmat.transpose() * dout;
  Tensor dinput(input.shape());
  if (pointwise)
    matrix_to_batch(dcols, n_img, cin, p, dinput.raw());
  else
    col2im(dcols, kh, kw, spec, g, dinput);

  grads.grad_input = std::move(dinput);
  grads.grad_params.emplace("kernel", std::move(dkernel));
  grads.grad_params.emplace("bias", std::move(dbias));
  return grads;
}

Tensor batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                 Tensor& running_mean, Tensor& running_var, Mode mode,
                 const BatchNormConfig& cfg, BatchNormCache* cache) {
  require_4d(input, "batchnorm");
  const std::size_t n_img = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  require(gamma.size() == c && beta.size() == c && running_mean.size() == c &&
              running_var.size() == c,
          "batchnorm: per-channel parameters must have " + std::to_string(c) + " entries");
  const std::size_t count = n_img * hw;
  if (mode == Mode::train)
    require(count >= 2, "batchnorm: train mode needs batch*height*width >= 2");

  Tensor out(input.shape());
  Tensor normalized(input.shape());
  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (mode == Mode::train) {
      double s = 0.0;
      for (std::size_t n = 0; n < n_img; ++n) {
        const double* x = input.raw() + (n * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += x[i];
      }
      mean = s / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < n_img; ++n) {
        const double* x = input.raw() + (n * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) sq += (x[i] - mean) * (x[i] - mean);
      }
      var = sq / static_cast<double>(count);
      running_mean[ch] = (1.0 - cfg.momentum) * running_mean[ch] + cfg.momentum * mean;
      running_var[ch] = (1.0 - cfg.momentum) * running_var[ch] +
                        cfg.momentum * sq / static_cast<double>(count - 1);
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
    }
    const double is = 1.0 / std::sqrt(var + cfg.eps);
    inv_std[ch] = is;
    for (std::size_t n = 0; n < n_img; ++n) {
      const std::size_t off = (n * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double xh = (input[off + i] - mean) * is;
        normalized[off + i] = xh;
        out[off + i] = gamma[ch] * xh + beta[ch];
      }
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

LayerGradients batchnorm_backward(const BatchNormCache& cache, const Tensor& gamma,
                                  const Tensor& grad_out) {
  const Tensor& xh = cache.normalized;
  require(grad_out.shape() == xh.shape(), "batchnorm_backward: grad_out shape mismatch");
  const std::size_t n_img = xh.dim(0), c = xh.dim(1), hw = xh.dim(2) * xh.dim(3);
  const auto count = static_cast<double>(n_img * hw);
  Tensor dgamma({c}), dbeta({c});
  Tensor dx(xh.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sg = 0.0, sb = 0.0;
    for (std::size_t n = 0; n < n_img; ++n) {
      const std::size_t off = (n * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        sg += grad_out[off + i] * xh[off + i];
        sb += grad_out[off + i];
      }
    }
    dgamma[ch] = sg;
    dbeta[ch] = sb;
    const double scale = gamma[ch] * cache.inv_std[ch];
    for (std::size_t n = 0; n < n_img; ++n) {
      const std::size_t off = (n * c + ch) * hw;
      if (cache.mode == Mode::train) {
        for (std::size_t i = 0; i < hw; ++i)
          dx[off + i] = scale * (grad_out[off + i] - (sb + xh[off + i] * sg) / count);
      } else {
        for (std::size_t i = 0; i < hw; ++i) dx[off + i] = scale * grad_out[off + i];
      }
    }
  }
  LayerGradients grads;
  grads.grad_input = std::move(dx);
  grads.grad_params.emplace("gamma", std::move(dgamma));
  grads.grad_params.emplace("beta", std::move(dbeta));
  return grads;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  require(input.shape() == grad_out.shape(), "relu_backward: shape mismatch");
  Tensor dx(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) dx[i] = input[i] > 0.0 ? grad_out[i] : 0.0;
  return dx;
}

Tensor global_avgpool(const Tensor& input) {
  require_4d(input, "global_avgpool");
  const std::size_t n_img = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  Tensor out({n_img, c, 1, 1});
  for (std::size_t i = 0; i < n_img * c; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < hw; ++j) s += input[i * hw + j];
    out[i] = s / static_cast<double>(hw);
  }
  return out;
}

Tensor global_avgpool_backward(const Tensor& grad_out, std::size_t h, std::size_t w) {
  require_4d(grad_out, "global_avgpool_backward");
  Tensor dx = broadcast_spatial(grad_out, h, w);
  dx *= 1.0 / static_cast<double>(h * w);
  return dx;
}

Tensor broadcast_spatial(const Tensor& pooled, std::size_t h, std::size_t w) {
  require(pooled.rank() == 4 && pooled.dim(2) == 1 && pooled.dim(3) == 1,
          "broadcast_spatial: expected (N, C, 1, 1), got " + pooled.shape_string());
  const std::size_t nc = pooled.dim(0) * pooled.dim(1);
  Tensor out({pooled.dim(0), pooled.dim(1), h, w});
  for (std::size_t i = 0; i < nc; ++i)
    std::fill(out.raw() + i * h * w, out.raw() + (i + 1) * h * w, pooled[i]);
  return out;
}

Tensor broadcast_spatial_backward(const Tensor& grad_out) {
  require_4d(grad_out, "broadcast_spatial_backward");
  const std::size_t nc = grad_out.dim(0) * grad_out.dim(1), hw = grad_out.dim(2) * grad_out.dim(3);
  Tensor out({grad_out.dim(0), grad_out.dim(1), 1, 1});
  for (std::size_t i = 0; i < nc; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < hw; ++j) s += grad_out[i * hw + j];
    out[i] = s;
  }
  return out;
}

namespace {

struct AxisTaps {
  std::vector<std::size_t> i0, i1;
  std::vector<double> w0, w1;
};

AxisTaps bilinear_taps(std::size_t in_len, int factor) {
  const std::size_t out_len = in_len * static_cast<std::size_t>(factor);
  AxisTaps t;
  t.i0.resize(out_len);
  t.i1.resize(out_len);
  t.w0.resize(out_len);
  t.w1.resize(out_len);
  for (std::size_t o = 0; o < out_len; ++o) {
    double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in_len - 1) lo = in_len - 1;
    const std::size_t hi = std::min(lo + 1, in_len - 1);
    const double frac = src - static_cast<double>(lo);
    t.i0[o] = lo;
    t.i1[o] = hi;
    t.w0[o] = 1.0 - frac;
    t.w1[o] = frac;
  }
  return t;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& input, int factor) {
  require_4d(input, "bilinear_upsample");
  require(factor >= 1, "bilinear_upsample: factor must be >= 1");
  if (factor == 1) return input;
  const std::size_t nc = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  const AxisTaps th = bilinear_taps(h, factor), tw = bilinear_taps(w, factor);
  const std::size_t oh = th.i0.size(), ow = tw.i0.size();
  Tensor out({input.dim(0), input.dim(1), oh, ow});
  for (std::size_t plane = 0; plane < nc; ++plane) {
    const double* src = input.raw() + plane * h * w;
    double* dst = out.raw() + plane * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const double* r0 = src + th.i0[y] * w;
      const double* r1 = src + th.i1[y] * w;
      for (std::size_t x = 0; x < ow; ++x) {
        const double top = tw.w0[x] * r0[tw.i0[x]] + tw.w1[x] * r0[tw.i1[x]];
        const double bot = tw.w0[x] * r1[tw.i0[x]] + tw.w1[x] * r1[tw.i1[x]];
        dst[y * ow + x] = th.w0[y] * top + th.w1[y] * bot;
      }
    }
  }
  return out;
}

Tensor bilinear_upsample_backward(const Tensor& grad_out, int factor) {
  require_4d(grad_out, "bilinear_upsample_backward");
  require(factor >= 1, "bilinear_upsample_backward: factor must be >= 1");
  if (factor == 1) return grad_out;
  const auto f = static_cast<std::size_t>(factor);
  require(grad_out.dim(2) % f == 0 && grad_out.dim(3) % f == 0,
          "bilinear_upsample_backward: extent not divisible by factor");
  const std::size_t nc = grad_out.dim(0) * grad_out.dim(1);
  const std::size_t h = grad_out.dim(2) / f, w = grad_out.dim(3) / f;
  const AxisTaps th = bilinear_taps(h, factor), tw = bilinear_taps(w, factor);
  const std::size_t oh = th.i0.size(), ow = tw.i0.size();
  Tensor dx({grad_out.dim(0), grad_out.dim(1), h, w});
  for (std::size_t plane = 0; plane < nc; ++plane) {
    const double* g = grad_out.raw() + plane * oh * ow;
    double* d = dx.raw() + plane * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      double* r0 = d + th.i0[y] * w;
      double* r1 = d + th.i1[y] * w;
      for (std::size_t x = 0; x < ow; ++x) {
        const double gv = g[y * ow + x];
        const double top = th.w0[y] * gv, bot = th.w1[y] * gv;
        r0[tw.i0[x]] += tw.w0[x] * top;
        r0[tw.i1[x]] += tw.w1[x] * top;
        r1[tw.i0[x]] += tw.w0[x] * bot;
        r1[tw.i1[x]] += tw.w1[x] * bot;
      }
    }
  }
  return dx;
}

Tensor dropout(const Tensor& input, double rate, Mode mode, Rng& rng, Tensor* mask) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must lie in [0, 1)");
  if (mode == Mode::inference || rate == 0.0) {
    if (mask) *mask = Tensor(input.shape(), 1.0);
    return input;
  }
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor m(input.shape());
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    m[i] = uniform01(rng) < rate ? 0.0 : keep_scale;
    out[i] = input[i] * m[i];
  }
  if (mask) *mask = std::move(m);
  return out;
}

Tensor dropout_backward(const Tensor& mask, const Tensor& grad_out) {
  require(mask.shape() == grad_out.shape(), "dropout_backward: shape mismatch");
  Tensor dx(grad_out.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = grad_out[i] * mask[i];
  return dx;
}

Tensor concat_channels(std::span<const Tensor* const> parts) {
  require(!parts.empty(), "concat_channels: nothing to concatenate");
  const Tensor& first = *parts[0];
  require_4d(first, "concat_channels");
  const std::size_t n_img = first.dim(0), h = first.dim(2), w = first.dim(3);
  std::size_t total_c = 0;
  for (const Tensor* t : parts) {
    require_4d(*t, "concat_channels");
    require(t->dim(0) == n_img, "concat_channels: batch extent mismatch " + first.shape_string() +
                                    " vs " + t->shape_string());
    require(t->dim(2) == h && t->dim(3) == w, "concat_channels: spatial extent mismatch " +
                                                  first.shape_string() + " vs " +
                                                  t->shape_string());
    total_c += t->dim(1);
  }
  Tensor out({n_img, total_c, h, w});
  const std::size_t hw = h * w;
  for (std::size_t n = 0; n < n_img; ++n) {
    double* dst = out.raw() + n * total_c * hw;
    for (const Tensor* t : parts) {
      const std::size_t block = t->dim(1) * hw;
      std::copy(t->raw() + n * block, t->raw() + (n + 1) * block, dst);
      dst += block;
    }
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Tensor* parts[] = {&a, &b};
  return concat_channels(parts);
}

std::vector<Tensor> split_channels(const Tensor& joined, std::span<const std::size_t> channels) {
  require_4d(joined, "split_channels");
  std::size_t total = 0;
  for (auto c : channels) total += c;
  require(total == joined.dim(1), "split_channels: channel counts do not sum to " +
                                      std::to_string(joined.dim(1)));
  const std::size_t n_img = joined.dim(0), hw = joined.dim(2) * joined.dim(3);
  std::vector<Tensor> out;
  out.reserve(channels.size());
  for (auto c : channels) out.emplace_back(std::vector<std::size_t>{n_img, c, joined.dim(2), joined.dim(3)});
  for (std::size_t n = 0; n < n_img; ++n) {
    const double* src = joined.raw() + n * total * hw;
    for (std::size_t k = 0; k < channels.size(); ++k) {
      const std::size_t block = channels[k] * hw;
      std::copy(src, src + block, out[k].raw() + n * block);
      src += block;
    }
  }
  return out;
}

Tensor softmax_channels(const Tensor& logits) {
  require_4d(logits, "softmax_channels");
  const std::size_t n_img = logits.dim(0), c = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  Tensor out(logits.shape());
  for (std::size_t n = 0; n < n_img; ++n) {
    const double* z = logits.raw() + n * c * hw;
    double* p = out.raw() + n * c * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      double mx = z[i];
      for (std::size_t ch = 1; ch < c; ++ch) mx = std::max(mx, z[ch * hw + i]);
      double s = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double e = std::exp(z[ch * hw + i] - mx);
        p[ch * hw + i] = e;
        s += e;
      }
      for (std::size_t ch = 0; ch < c; ++ch) p[ch * hw + i] /= s;
    }
  }
  return out;
}

Tensor softmax_channels_backward(const Tensor& probs, const Tensor& grad_probs) {
  require(probs.shape() == grad_probs.shape(), "softmax_channels_backward: shape mismatch");
  const std::size_t n_img = probs.dim(0), c = probs.dim(1), hw = probs.dim(2) * probs.dim(3);
  Tensor dz(probs.shape());
  for (std::size_t n = 0; n < n_img; ++n) {
    const double* p = probs.raw() + n * c * hw;
    const double* g = grad_probs.raw() + n * c * hw;
    double* d = dz.raw() + n * c * hw;
    for (std::size_t i = 0; i < hw; ++i) {
      double dot = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) dot += p[ch * hw + i] * g[ch * hw + i];
      for (std::size_t ch = 0; ch < c; ++ch) d[ch * hw + i] = p[ch * hw + i] * (g[ch * hw + i] - dot);
    }
  }
  return dz;
}

}  // namespace microlab
