// Copyright (c) 2026 growlearn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "growlearn/error.hpp"
#include "growlearn/ops.hpp"
#include "growlearn/tensor.hpp"

namespace growlearn {

/// Fully connected layer that can be widened in place.
///
/// Rows of `weight` are output units. Each row owns one pruning threshold;
/// `prune_mask` and `freeze_mask` are shaped like `weight`. Biases are never
/// pruned but can be frozen through `bias_freeze`.
struct GrowableDense {
    Tensor weight;    // [out x in]
    Tensor bias;      // [out]
    Tensor threshold; // [out]
    Mask prune_mask;
    Mask freeze_mask;
    Mask bias_freeze;

    static GrowableDense zeros(std::size_t in, std::size_t out) {
        return GrowableDense{Tensor(Shape{out, in}),  Tensor(Shape{out}),  Tensor(Shape{out}),
                             Mask(out * in, 1),       Mask(out * in, 0),   Mask(out, 0)};
    }

    [[nodiscard]] std::size_t in_features() const { return weight.dim(1); }
    [[nodiscard]] std::size_t out_features() const { return weight.dim(0); }
    [[nodiscard]] std::size_t row_size() const { return weight.dim(1); }
};

/// 2-D convolution with one pruning threshold per output filter.
struct GrowableConv2d {
    Tensor weight;    // [out x in x k x k]
    Tensor bias;      // [out]
    Tensor threshold; // [out]
    Mask prune_mask;
    Mask freeze_mask;
    Mask bias_freeze;
    std::size_t stride = 1;
    std::size_t pad = 0;

    static GrowableConv2d zeros(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
                                std::size_t pad = 0) {
        const std::size_t n = out * in * kernel * kernel;
        return GrowableConv2d{Tensor(Shape{out, in, kernel, kernel}),
                              Tensor(Shape{out}),
                              Tensor(Shape{out}),
                              Mask(n, 1),
                              Mask(n, 0),
                              Mask(out, 0),
                              stride,
                              pad};
    }

    [[nodiscard]] std::size_t in_channels() const { return weight.dim(1); }
    [[nodiscard]] std::size_t out_channels() const { return weight.dim(0); }
    [[nodiscard]] std::size_t out_features() const { return weight.dim(0); }
    [[nodiscard]] std::size_t kernel() const { return weight.dim(2); }
    [[nodiscard]] std::size_t row_size() const { return weight.size() / weight.dim(0); }
};

struct GrowableBatchNorm {
    Tensor gamma;
    Tensor beta;
    BatchNormStats stats;
    Mask freeze;

    static GrowableBatchNorm identity(std::size_t channels) {
        return GrowableBatchNorm{Tensor(Shape{channels}, 1.0f), Tensor(Shape{channels}, 0.0f),
                                 BatchNormStats{std::vector<float>(channels, 0.0f), std::vector<float>(channels, 1.0f)},
                                 Mask(channels, 0)};
    }

    [[nodiscard]] std::size_t channels() const { return gamma.size(); }
};

/// Layers carrying a pruned, freezable weight tensor with per-row thresholds.
template <typename L>
concept MaskedLayer = requires(L& l, const L& cl) {
    { l.weight } -> std::same_as<Tensor&>;
    { l.bias } -> std::same_as<Tensor&>;
    { l.threshold } -> std::same_as<Tensor&>;
    { l.prune_mask } -> std::same_as<Mask&>;
    { l.freeze_mask } -> std::same_as<Mask&>;
    { l.bias_freeze } -> std::same_as<Mask&>;
    { cl.out_features() } -> std::convertible_to<std::size_t>;
    { cl.row_size() } -> std::convertible_to<std::size_t>;
};

namespace detail {

inline std::size_t checked_growth(std::int64_t v, const char* what) {
    if (v < 0) throw InputError(std::string(what) + " must be non-negative, got " + std::to_string(v));
    return static_cast<std::size_t>(v);
}

/// Copies a row-major [rows x cols x inner] block into a larger zero
/// [rows' x cols' x inner] buffer at the origin.
template <typename T>
std::vector<T> grow_block(const std::vector<T>& src, std::size_t rows, std::size_t cols, std::size_t inner,
                          std::size_t new_rows, std::size_t new_cols, T fill) {
    std::vector<T> dst(new_rows * new_cols * inner, fill);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(r * cols * inner), cols * inner,
                    dst.begin() + static_cast<std::ptrdiff_t>(r * new_cols * inner));
    return dst;
}

template <typename T>
std::vector<T> grow_vector(const std::vector<T>& src, std::size_t extra, T fill) {
    std::vector<T> dst(src);
    dst.resize(src.size() + extra, fill);
    return dst;
}

} // namespace detail

/// Widens a dense layer by `added_in` input and `added_out` output units.
/// Old weights keep their [row, col] positions; the new region and the new
/// bias/threshold entries start at zero, unpruned and trainable.
inline GrowableDense expand_layer(const GrowableDense& layer, std::int64_t added_in, std::int64_t added_out) {
    const std::size_t m = detail::checked_growth(added_in, "added input channels");
    const std::size_t n = detail::checked_growth(added_out, "added output channels");
    const std::size_t in = layer.in_features(), out = layer.out_features();
    const std::size_t ni = in + m, no = out + n;
    GrowableDense g;
    g.weight = Tensor(Shape{no, ni}, detail::grow_block(layer.weight.storage(), out, in, 1, no, ni, 0.0f));
    g.bias = Tensor(Shape{no}, detail::grow_vector(layer.bias.storage(), n, 0.0f));
    g.threshold = Tensor(Shape{no}, detail::grow_vector(layer.threshold.storage(), n, 0.0f));
    g.prune_mask = detail::grow_block<std::uint8_t>(layer.prune_mask, out, in, 1, no, ni, 1);
    g.freeze_mask = detail::grow_block<std::uint8_t>(layer.freeze_mask, out, in, 1, no, ni, 0);
    g.bias_freeze = detail::grow_vector<std::uint8_t>(layer.bias_freeze, n, 0);
    return g;
}

inline GrowableConv2d expand_layer(const GrowableConv2d& layer, std::int64_t added_in, std::int64_t added_out) {
    const std::size_t m = detail::checked_growth(added_in, "added input channels");
    const std::size_t n = detail::checked_growth(added_out, "added output channels");
    const std::size_t in = layer.in_channels(), out = layer.out_channels(), k = layer.kernel();
    const std::size_t ni = in + m, no = out + n, kk = k * k;
    GrowableConv2d g;
    g.weight = Tensor(Shape{no, ni, k, k}, detail::grow_block(layer.weight.storage(), out, in, kk, no, ni, 0.0f));
    g.bias = Tensor(Shape{no}, detail::grow_vector(layer.bias.storage(), n, 0.0f));
    g.threshold = Tensor(Shape{no}, detail::grow_vector(layer.threshold.storage(), n, 0.0f));
    g.prune_mask = detail::grow_block<std::uint8_t>(layer.prune_mask, out, in, kk, no, ni, 1);
    g.freeze_mask = detail::grow_block<std::uint8_t>(layer.freeze_mask, out, in, kk, no, ni, 0);
    g.bias_freeze = detail::grow_vector<std::uint8_t>(layer.bias_freeze, n, 0);
    g.stride = layer.stride;
    g.pad = layer.pad;
    return g;
}

/// Adds `added` channels that act as identity maps in eval mode.
inline GrowableBatchNorm expand_batchnorm(const GrowableBatchNorm& layer, std::int64_t added) {
    const std::size_t n = detail::checked_growth(added, "added channels");
    const std::size_t c = layer.channels() + n;
    GrowableBatchNorm g;
    g.gamma = Tensor(Shape{c}, detail::grow_vector(layer.gamma.storage(), n, 1.0f));
    g.beta = Tensor(Shape{c}, detail::grow_vector(layer.beta.storage(), n, 0.0f));
    g.stats.mean = detail::grow_vector(layer.stats.mean, n, 0.0f);
    g.stats.var = detail::grow_vector(layer.stats.var, n, 1.0f);
    g.freeze = detail::grow_vector<std::uint8_t>(layer.freeze, n, 0);
    return g;
}

} // namespace growlearn
