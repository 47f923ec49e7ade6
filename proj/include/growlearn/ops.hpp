// Copyright (c) 2026 growlearn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "growlearn/error.hpp"
#include "growlearn/tape.hpp"
#include "growlearn/tensor.hpp"

namespace growlearn {

/// Running statistics of a batch-norm layer.
struct BatchNormStats {
    std::vector<float> mean;
    std::vector<float> var;
};

inline constexpr float kBatchNormEps = 1e-5f;
inline constexpr float kBatchNormMomentum = 0.1f;

namespace kernels {

// Matmul and convolution accumulate in double and round once per output so
// the result does not depend on summation blocking.

inline Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.dim(1) != w.dim(1) || b.dim(0) != w.dim(0)) {
        throw ShapeError("dense: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()) +
                         " and bias " + shape_str(b.shape()));
    }
    const std::size_t batch = x.dim(0), in = x.dim(1), out = w.dim(0);
    Tensor y(Shape{batch, out});
    const float* xp = x.data().data();
    const float* wp = w.data().data();
    for (std::size_t n = 0; n < batch; ++n) {
        const float* xr = xp + n * in;
        for (std::size_t o = 0; o < out; ++o) {
            const float* wr = wp + o * in;
            double acc = 0.0;
            for (std::size_t i = 0; i < in; ++i) acc += static_cast<double>(xr[i]) * wr[i];
            y[n * out + o] = static_cast<float>(acc + b[o]);
        }
    }
    return y;
}

struct ConvGeometry {
    std::size_t batch, in_ch, height, width, out_ch, kernel, stride, pad, out_h, out_w;
};

inline ConvGeometry conv_geometry(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
                                  std::size_t pad) {
    if (x.rank() != 4 || w.rank() != 4 || b.rank() != 1) {
        throw ShapeError("conv2d: expected NCHW input and OIkk weight, got " + shape_str(x.shape()) + " and " +
                         shape_str(w.shape()));
    }
    if (x.dim(1) != w.dim(1) || b.dim(0) != w.dim(0) || w.dim(2) != w.dim(3)) {
        throw ShapeError("conv2d: channel mismatch between input " + shape_str(x.shape()) + " and weight " +
                         shape_str(w.shape()));
    }
    if (stride == 0) throw InputError("conv2d: stride must be positive");
    const std::size_t k = w.dim(2);
    if (k > x.dim(2) + 2 * pad || k > x.dim(3) + 2 * pad) {
        throw ShapeError("conv2d: kernel " + std::to_string(k) + " larger than padded input " + shape_str(x.shape()));
    }
    return ConvGeometry{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), k, stride, pad,
                        (x.dim(2) + 2 * pad - k) / stride + 1, (x.dim(3) + 2 * pad - k) / stride + 1};
}

inline Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad) {
    const auto g = conv_geometry(x, w, b, stride, pad);
    Tensor y(Shape{g.batch, g.out_ch, g.out_h, g.out_w});
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t o = 0; o < g.out_ch; ++o)
            for (std::size_t oy = 0; oy < g.out_h; ++oy)
                for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < g.in_ch; ++c)
                        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
                            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                            static_cast<std::ptrdiff_t>(g.pad);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                                const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                                static_cast<std::ptrdiff_t>(g.pad);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                                acc += static_cast<double>(
                                           x[((n * g.in_ch + c) * g.height + iy) * g.width + ix]) *
                                       w[((o * g.in_ch + c) * g.kernel + ky) * g.kernel + kx];
                            }
                        }
                    y[((n * g.out_ch + o) * g.out_h + oy) * g.out_w + ox] = static_cast<float>(acc + b[o]);
                }
    return y;
}

inline std::size_t channels_of(const Tensor& x) {
    if (x.rank() != 2 && x.rank() != 4) throw ShapeError("batchnorm: expected rank 2 or 4 input, got " + shape_str(x.shape()));
    return x.dim(1);
}

inline std::size_t spatial_of(const Tensor& x) { return x.rank() == 4 ? x.dim(2) * x.dim(3) : 1; }

/// Eval-mode batch norm: affine transform with the running statistics.
inline Tensor batchnorm_eval(const Tensor& x, std::span<const float> gamma, std::span<const float> beta,
                             const BatchNormStats& stats, float eps = kBatchNormEps) {
    const std::size_t ch = channels_of(x);
    if (gamma.size() != ch || beta.size() != ch || stats.mean.size() != ch || stats.var.size() != ch) {
        throw ShapeError("batchnorm: " + std::to_string(ch) + " input channels but parameters have length " +
                         std::to_string(gamma.size()));
    }
    const std::size_t sp = spatial_of(x), batch = x.dim(0);
    Tensor y(x.shape());
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < ch; ++c) {
            const double inv = 1.0 / std::sqrt(static_cast<double>(stats.var[c]) + eps);
            for (std::size_t s = 0; s < sp; ++s) {
                const std::size_t idx = (n * ch + c) * sp + s;
                y[idx] = static_cast<float>((x[idx] - static_cast<double>(stats.mean[c])) * inv * gamma[c] + beta[c]);
            }
        }
    return y;
}

} // namespace kernels

namespace ops {

/// x[B x Cin] * W[Cout x Cin]^T + b.
inline Var dense(GradTape& tape, Var x, Var w, Var b) {
    Tensor y = kernels::dense_forward(tape.value(x), tape.value(w), tape.value(b));
    const bool rg = tape.requires_grad(x) || tape.requires_grad(w) || tape.requires_grad(b);
    return tape.push(std::move(y), rg, [x, w, b](GradTape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(Var{self});
        const Tensor& xv = t.value(x);
        const Tensor& wv = t.value(w);
        const std::size_t batch = xv.dim(0), in = xv.dim(1), out = wv.dim(0);
        if (t.requires_grad(w)) {
            std::vector<double> acc(out * in, 0.0);
            for (std::size_t n = 0; n < batch; ++n) {
                const float* xr = xv.data().data() + n * in;
                for (std::size_t o = 0; o < out; ++o) {
                    const double go = g[n * out + o];
                    if (go == 0.0) continue;
                    double* ar = acc.data() + o * in;
                    for (std::size_t i = 0; i < in; ++i) ar[i] += go * xr[i];
                }
            }
            Tensor& gw = t.grad_buffer(w);
            for (std::size_t i = 0; i < acc.size(); ++i) gw[i] += static_cast<float>(acc[i]);
        }
        if (t.requires_grad(b)) {
            Tensor& gb = t.grad_buffer(b);
            for (std::size_t o = 0; o < out; ++o) {
                double acc = 0.0;
                for (std::size_t n = 0; n < batch; ++n) acc += g[n * out + o];
                gb[o] += static_cast<float>(acc);
            }
        }
        if (t.requires_grad(x)) {
            Tensor& gx = t.grad_buffer(x);
            std::vector<double> row(in);
            for (std::size_t n = 0; n < batch; ++n) {
                std::fill(row.begin(), row.end(), 0.0);
                for (std::size_t o = 0; o < out; ++o) {
                    const double go = g[n * out + o];
                    if (go == 0.0) continue;
                    const float* wr = wv.data().data() + o * in;
                    for (std::size_t i = 0; i < in; ++i) row[i] += go * wr[i];
                }
                for (std::size_t i = 0; i < in; ++i) gx[n * in + i] += static_cast<float>(row[i]);
            }
        }
    });
}

inline Var conv2d(GradTape& tape, Var x, Var w, Var b, std::size_t stride = 1, std::size_t pad = 0) {
    Tensor y = kernels::conv2d_forward(tape.value(x), tape.value(w), tape.value(b), stride, pad);
    const bool rg = tape.requires_grad(x) || tape.requires_grad(w) || tape.requires_grad(b);
    return tape.push(std::move(y), rg, [x, w, b, stride, pad](GradTape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(Var{self});
        const Tensor& xv = t.value(x);
        const Tensor& wv = t.value(w);
        const auto geo = kernels::conv_geometry(xv, wv, t.value(b), stride, pad);
        const bool need_w = t.requires_grad(w), need_x = t.requires_grad(x);
        std::vector<double> gw(need_w ? wv.size() : 0, 0.0);
        std::vector<double> gx(need_x ? xv.size() : 0, 0.0);
        std::vector<double> gb(geo.out_ch, 0.0);
        for (std::size_t n = 0; n < geo.batch; ++n)
            for (std::size_t o = 0; o < geo.out_ch; ++o)
                for (std::size_t oy = 0; oy < geo.out_h; ++oy)
                    for (std::size_t ox = 0; ox < geo.out_w; ++ox) {
                        const double go = g[((n * geo.out_ch + o) * geo.out_h + oy) * geo.out_w + ox];
                        gb[o] += go;
                        if (go == 0.0) continue;
                        for (std::size_t c = 0; c < geo.in_ch; ++c)
                            for (std::size_t ky = 0; ky < geo.kernel; ++ky) {
                                const auto iy = static_cast<std::ptrdiff_t>(oy * geo.stride + ky) -
                                                static_cast<std::ptrdiff_t>(geo.pad);
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(geo.height)) continue;
                                for (std::size_t kx = 0; kx < geo.kernel; ++kx) {
                                    const auto ix = static_cast<std::ptrdiff_t>(ox * geo.stride + kx) -
                                                    static_cast<std::ptrdiff_t>(geo.pad);
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(geo.width)) continue;
                                    const std::size_t xi = ((n * geo.in_ch + c) * geo.height + iy) * geo.width + ix;
                                    const std::size_t wi = ((o * geo.in_ch + c) * geo.kernel + ky) * geo.kernel + kx;
                                    if (need_w) gw[wi] += go * xv[xi];
                                    if (need_x) gx[xi] += go * wv[wi];
                                }
                            }
                    }
        if (need_w) {
            Tensor& dst = t.grad_buffer(w);
            for (std::size_t i = 0; i < gw.size(); ++i) dst[i] += static_cast<float>(gw[i]);
        }
        if (need_x) {
            Tensor& dst = t.grad_buffer(x);
            for (std::size_t i = 0; i < gx.size(); ++i) dst[i] += static_cast<float>(gx[i]);
        }
        if (t.requires_grad(b)) {
            Tensor& dst = t.grad_buffer(b);
            for (std::size_t o = 0; o < gb.size(); ++o) dst[o] += static_cast<float>(gb[o]);
        }
    });
}

/// Batch normalization over the channel axis of a [B x C] or [B x C x H x W]
/// input. Training mode normalizes with batch statistics and folds them into
/// `stats` with the given momentum; eval mode uses `stats` as is.
inline Var batchnorm(GradTape& tape, Var x, Var gamma, Var beta, BatchNormStats& stats, bool training,
                     float eps = kBatchNormEps, float momentum = kBatchNormMomentum) {
    const Tensor& xv = tape.value(x);
    const std::size_t ch = kernels::channels_of(xv);
    const Tensor& gv = tape.value(gamma);
    const Tensor& bv = tape.value(beta);
    if (gv.size() != ch || bv.size() != ch || stats.mean.size() != ch || stats.var.size() != ch) {
        throw ShapeError("batchnorm: " + std::to_string(ch) + " input channels but parameters have length " +
                         std::to_string(gv.size()));
    }
    const std::size_t sp = kernels::spatial_of(xv), batch = xv.dim(0), count = batch * sp;
    std::vector<double> mean(ch), inv_std(ch);
    if (training) {
        for (std::size_t c = 0; c < ch; ++c) {
            double s = 0.0;
            for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t k = 0; k < sp; ++k) s += xv[(n * ch + c) * sp + k];
            const double mu = s / static_cast<double>(count);
            double v = 0.0;
            for (std::size_t n = 0; n < batch; ++n)
                for (std::size_t k = 0; k < sp; ++k) {
                    const double d = xv[(n * ch + c) * sp + k] - mu;
                    v += d * d;
                }
            const double biased = v / static_cast<double>(count);
            const double unbiased = count > 1 ? v / static_cast<double>(count - 1) : biased;
            mean[c] = mu;
            inv_std[c] = 1.0 / std::sqrt(biased + eps);
            stats.mean[c] = static_cast<float>((1.0 - momentum) * stats.mean[c] + momentum * mu);
            stats.var[c] = static_cast<float>((1.0 - momentum) * stats.var[c] + momentum * unbiased);
        }
    } else {
        for (std::size_t c = 0; c < ch; ++c) {
            mean[c] = stats.mean[c];
            inv_std[c] = 1.0 / std::sqrt(static_cast<double>(stats.var[c]) + eps);
        }
    }
    Tensor xhat(xv.shape());
    Tensor y(xv.shape());
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t k = 0; k < sp; ++k) {
                const std::size_t i = (n * ch + c) * sp + k;
                const double h = (xv[i] - mean[c]) * inv_std[c];
                xhat[i] = static_cast<float>(h);
                y[i] = static_cast<float>(h * gv[c] + bv[c]);
            }
    const bool rg = tape.requires_grad(x) || tape.requires_grad(gamma) || tape.requires_grad(beta);
    return tape.push(std::move(y), rg,
                     [x, gamma, beta, training, xhat = std::move(xhat), inv_std, ch, sp, batch,
                      count](GradTape& t, std::size_t self) {
                         const Tensor& g = t.grad_buffer(Var{self});
                         const Tensor& gv = t.value(gamma);
                         std::vector<double> sum_g(ch, 0.0), sum_gx(ch, 0.0);
                         for (std::size_t n = 0; n < batch; ++n)
                             for (std::size_t c = 0; c < ch; ++c)
                                 for (std::size_t k = 0; k < sp; ++k) {
                                     const std::size_t i = (n * ch + c) * sp + k;
                                     sum_g[c] += g[i];
                                     sum_gx[c] += static_cast<double>(g[i]) * xhat[i];
                                 }
                         if (t.requires_grad(gamma)) {
                             Tensor& dg = t.grad_buffer(gamma);
                             for (std::size_t c = 0; c < ch; ++c) dg[c] += static_cast<float>(sum_gx[c]);
                         }
                         if (t.requires_grad(beta)) {
                             Tensor& db = t.grad_buffer(beta);
                             for (std::size_t c = 0; c < ch; ++c) db[c] += static_cast<float>(sum_g[c]);
                         }
                         if (!t.requires_grad(x)) return;
                         Tensor& dx = t.grad_buffer(x);
                         const double m = static_cast<double>(count);
                         for (std::size_t n = 0; n < batch; ++n)
                             for (std::size_t c = 0; c < ch; ++c)
                                 for (std::size_t k = 0; k < sp; ++k) {
                                     const std::size_t i = (n * ch + c) * sp + k;
                                     const double gi = static_cast<double>(g[i]) * gv[c];
                                     double v;
                                     if (training) {
                                         v = inv_std[c] / m *
                                             (m * gi - sum_g[c] * gv[c] - xhat[i] * sum_gx[c] * gv[c]);
                                     } else {
                                         v = gi * inv_std[c];
                                     }
                                     dx[i] += static_cast<float>(v);
                                 }
                     });
}

inline Var relu(GradTape& tape, Var x) {
    const Tensor& xv = tape.value(x);
    Tensor y(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
    return tape.push(std::move(y), tape.requires_grad(x), [x](GradTape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(Var{self});
        const Tensor& xv = t.value(x);
        Tensor& dx = t.grad_buffer(x);
        for (std::size_t i = 0; i < xv.size(); ++i)
            if (xv[i] > 0.0f) dx[i] += g[i];
    });
}

enum class PoolKind { max, average };

/// Non-overlapping k x k pooling (stride k, floor on ragged edges).
inline Var pool2d(GradTape& tape, Var x, std::size_t k, PoolKind kind) {
    const Tensor& xv = tape.value(x);
    if (xv.rank() != 4) throw ShapeError("pool2d: expected NCHW input, got " + shape_str(xv.shape()));
    if (k == 0 || k > xv.dim(2) || k > xv.dim(3)) throw ShapeError("pool2d: window larger than input");
    const std::size_t nb = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3), oh = h / k, ow = w / k;
    Tensor y(Shape{nb, ch, oh, ow});
    std::vector<std::size_t> argmax(kind == PoolKind::max ? y.size() : 0);
    for (std::size_t n = 0; n < nb; ++n)
        for (std::size_t c = 0; c < ch; ++c)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const std::size_t o = ((n * ch + c) * oh + oy) * ow + ox;
                    double acc = 0.0;
                    float best = -std::numeric_limits<float>::infinity();
                    std::size_t best_i = 0;
                    for (std::size_t dy = 0; dy < k; ++dy)
                        for (std::size_t dx = 0; dx < k; ++dx) {
                            const std::size_t i = ((n * ch + c) * h + oy * k + dy) * w + ox * k + dx;
                            acc += xv[i];
                            if (xv[i] > best) {
                                best = xv[i];
                                best_i = i;
                            }
                        }
                    if (kind == PoolKind::max) {
                        y[o] = best;
                        argmax[o] = best_i;
                    } else {
                        y[o] = static_cast<float>(acc / static_cast<double>(k * k));
                    }
                }
    return tape.push(std::move(y), tape.requires_grad(x),
                     [x, k, kind, argmax = std::move(argmax), nb, ch, h, w, oh, ow](GradTape& t, std::size_t self) {
                         const Tensor& g = t.grad_buffer(Var{self});
                         Tensor& dx = t.grad_buffer(x);
                         const float scale = 1.0f / static_cast<float>(k * k);
                         for (std::size_t n = 0; n < nb; ++n)
                             for (std::size_t c = 0; c < ch; ++c)
                                 for (std::size_t oy = 0; oy < oh; ++oy)
                                     for (std::size_t ox = 0; ox < ow; ++ox) {
                                         const std::size_t o = ((n * ch + c) * oh + oy) * ow + ox;
                                         if (kind == PoolKind::max) {
                                             dx[argmax[o]] += g[o];
                                             continue;
                                         }
                                         for (std::size_t dy = 0; dy < k; ++dy)
                                             for (std::size_t ddx = 0; ddx < k; ++ddx)
                                                 dx[((n * ch + c) * h + oy * k + dy) * w + ox * k + ddx] += g[o] * scale;
                                     }
                     });
}

inline Var reshape(GradTape& tape, Var x, Shape shape) {
    Tensor y = tape.value(x).reshaped(std::move(shape));
    return tape.push(std::move(y), tape.requires_grad(x), [x](GradTape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(Var{self});
        Tensor& dx = t.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    });
}

/// Collapses every axis after the first.
inline Var flatten(GradTape& tape, Var x) {
    const auto& s = tape.value(x).shape();
    return reshape(tape, x, Shape{s.at(0), shape_numel(s) / s.at(0)});
}

inline Var add(GradTape& tape, Var a, Var b) {
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    require_same_shape(av, bv, "add");
    Tensor y(av.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
    return tape.push(std::move(y), tape.requires_grad(a) || tape.requires_grad(b), [a, b](GradTape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(Var{self});
        for (Var v : {a, b}) {
            if (!t.requires_grad(v)) continue;
            Tensor& d = t.grad_buffer(v);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
        }
    });
}

/// Elementwise product.
inline Var mul(GradTape& tape, Var a, Var b) {
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    require_same_shape(av, bv, "mul");
    Tensor y(av.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
    return tape.push(std::move(y), tape.requires_grad(a) || tape.requires_grad(b), [a, b](GradTape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(Var{self});
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        if (t.requires_grad(a)) {
            Tensor& d = t.grad_buffer(a);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv[i];
        }
        if (t.requires_grad(b)) {
            Tensor& d = t.grad_buffer(b);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
        }
    });
}

inline Var scale(GradTape& tape, Var a, float s) {
    const Tensor& av = tape.value(a);
    Tensor y(av.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * s;
    return tape.push(std::move(y), tape.requires_grad(a), [a, s](GradTape& t, std::size_t self) {
        const Tensor& g = t.grad_buffer(Var{self});
        Tensor& d = t.grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * s;
    });
}

inline Var sum(GradTape& tape, Var a) {
    const Tensor& av = tape.value(a);
    double acc = 0.0;
    for (float v : av.data()) acc += v;
    return tape.push(Tensor::scalar(static_cast<float>(acc)), tape.requires_grad(a), [a](GradTape& t, std::size_t self) {
        const float g = t.grad_buffer(Var{self})[0];
        Tensor& d = t.grad_buffer(a);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g;
    });
}

/// Sum of exp(-t) over all entries.
inline Var sum_exp_neg(GradTape& tape, Var a) {
    const Tensor& av = tape.value(a);
    double acc = 0.0;
    for (float v : av.data()) acc += std::exp(-static_cast<double>(v));
    return tape.push(Tensor::scalar(static_cast<float>(acc)), tape.requires_grad(a), [a](GradTape& t, std::size_t self) {
        const double g = t.grad_buffer(Var{self})[0];
        const Tensor& av = t.value(a);
        Tensor& d = t.grad_buffer(a);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += static_cast<float>(-g * std::exp(-static_cast<double>(av[i])));
    });
}

/// Mean negative log-likelihood of `labels` under softmax(logits).
inline Var softmax_cross_entropy(GradTape& tape, Var logits, std::span<const int> labels) {
    const Tensor& lv = tape.value(logits);
    if (lv.rank() != 2) throw ShapeError("cross entropy: logits must be [B x K], got " + shape_str(lv.shape()));
    const std::size_t batch = lv.dim(0), classes = lv.dim(1);
    if (labels.size() != batch) {
        throw ShapeError("cross entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(batch));
    }
    Tensor probs(lv.shape());
    double total = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
        const int label = labels[n];
        if (label < 0 || static_cast<std::size_t>(label) >= classes) {
            throw InputError("cross entropy: label " + std::to_string(label) + " outside [0, " +
                             std::to_string(classes) + ")");
        }
        const float* row = lv.data().data() + n * classes;
        const double mx = *std::max_element(row, row + classes);
        double z = 0.0;
        for (std::size_t k = 0; k < classes; ++k) z += std::exp(row[k] - mx);
        for (std::size_t k = 0; k < classes; ++k) probs[n * classes + k] = static_cast<float>(std::exp(row[k] - mx) / z);
        total += std::log(z) + mx - row[label];
    }
    std::vector<int> lab(labels.begin(), labels.end());
    return tape.push(Tensor::scalar(static_cast<float>(total / static_cast<double>(batch))), tape.requires_grad(logits),
                     [logits, probs = std::move(probs), lab = std::move(lab), batch, classes](GradTape& t, std::size_t self) {
                         const float g = t.grad_buffer(Var{self})[0] / static_cast<float>(batch);
                         Tensor& d = t.grad_buffer(logits);
                         for (std::size_t n = 0; n < batch; ++n)
                             for (std::size_t k = 0; k < classes; ++k) {
                                 const float target = static_cast<std::size_t>(lab[n]) == k ? 1.0f : 0.0f;
                                 d[n * classes + k] += g * (probs[n * classes + k] - target);
                             }
                     });
}

} // namespace ops
} // namespace growlearn
