// Copyright (c) 2026 growlearn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "growlearn/error.hpp"
#include "growlearn/layers.hpp"
#include "growlearn/tape.hpp"
#include "growlearn/tensor.hpp"

namespace growlearn {

// Dynamic sparse training primitives. A weight W[i,j] is active when
// |W[i,j]| - t[i] > 0; a weight sitting exactly on its threshold is pruned.

/// Unit step with S(0) = 0.
constexpr float unit_step(float x) noexcept { return x > 0.0f ? 1.0f : 0.0f; }

/// Long-tailed surrogate for the derivative of the unit step.
constexpr float step_surrogate(float x) noexcept {
    const float a = x < 0.0f ? -x : x;
    if (a <= 0.4f) return 2.0f - 4.0f * a;
    if (a <= 1.0f) return 0.4f;
    return 0.0f;
}

inline std::size_t rows_of(const Tensor& w) { return w.rank() == 0 ? 1 : w.dim(0); }

inline void check_thresholds(const Tensor& w, const Tensor& t) {
    if (t.size() != rows_of(w)) {
        throw ShapeError("threshold vector of length " + std::to_string(t.size()) + " does not match " +
                         std::to_string(rows_of(w)) + " output rows of weight " + shape_str(w.shape()));
    }
}

/// M[i,j] = S(|W[i,j]| - t[i]).
inline Mask compute_prune_mask(const Tensor& w, const Tensor& t) {
    check_thresholds(w, t);
    const std::size_t rows = rows_of(w), row = w.size() / rows;
    Mask m(w.size());
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < row; ++j) {
            const std::size_t k = i * row + j;
            m[k] = std::fabs(w[k]) - t[i] > 0.0f ? 1 : 0;
        }
    return m;
}

/// Sum over layers and rows of exp(-t).
inline double sparse_regularizer(std::span<const Tensor* const> thresholds) {
    double acc = 0.0;
    for (const Tensor* t : thresholds)
        for (float v : t->data()) acc += std::exp(-static_cast<double>(v));
    return acc;
}

inline double sparse_regularizer(const std::vector<Tensor>& thresholds) {
    std::vector<const Tensor*> p;
    p.reserve(thresholds.size());
    for (const auto& t : thresholds) p.push_back(&t);
    return sparse_regularizer(std::span<const Tensor* const>(p));
}

struct SteGradients {
    Tensor weight;
    Tensor threshold;
};

/// Straight-through backward of the masked weight W * S(|W| - t).
///
/// `upstream` is dL/d(W * M). The step's derivative is replaced by
/// step_surrogate, and the mask itself is passed straight through for W, so
///   dW[i,j] = g[i,j] * (1 + |W[i,j]| * H(|W[i,j]| - t[i]))
///   dt[i]   = -sum_j g[i,j] * W[i,j] * H(|W[i,j]| - t[i])
/// `alpha` adds the regularizer term -alpha * exp(-t[i]).
inline SteGradients ste_backward(const Tensor& upstream, const Tensor& w, const Tensor& t, float alpha = 0.0f) {
    require_same_shape(upstream, w, "ste_backward");
    check_thresholds(w, t);
    const std::size_t rows = rows_of(w), row = w.size() / rows;
    SteGradients out{Tensor(w.shape()), Tensor(t.shape())};
    for (std::size_t i = 0; i < rows; ++i) {
        double dt = 0.0;
        for (std::size_t j = 0; j < row; ++j) {
            const std::size_t k = i * row + j;
            const float h = step_surrogate(std::fabs(w[k]) - t[i]);
            out.weight[k] = upstream[k] * (1.0f + std::fabs(w[k]) * h);
            dt -= static_cast<double>(upstream[k]) * w[k] * h;
        }
        dt -= static_cast<double>(alpha) * std::exp(-static_cast<double>(t[i]));
        out.threshold[i] = static_cast<float>(dt);
    }
    return out;
}

/// (1 - M^f) * grad, elementwise.
inline Tensor apply_freeze(const Tensor& grad, std::span<const std::uint8_t> freeze) {
    if (freeze.size() != grad.size()) {
        throw ShapeError("apply_freeze: mask of " + std::to_string(freeze.size()) + " entries for gradient " +
                         shape_str(grad.shape()));
    }
    Tensor out = grad;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (freeze[i]) out[i] = 0.0f;
    return out;
}

/// M^f' = S(|M^f + M^p|): once frozen, always frozen.
inline Mask update_freeze_mask(std::span<const std::uint8_t> freeze, std::span<const std::uint8_t> prune) {
    if (freeze.size() != prune.size()) throw ShapeError("update_freeze_mask: mask sizes differ");
    Mask out(freeze.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (freeze[i] > 1 || prune[i] > 1) throw InputError("update_freeze_mask: masks must be binary");
        out[i] = (freeze[i] + prune[i]) > 0 ? 1 : 0;
    }
    return out;
}

/// Recomputes a layer's pruning mask from its current weights and thresholds.
/// Frozen entries stay active so the function they encode is preserved.
template <MaskedLayer L>
void refresh_prune_mask(L& layer) {
    layer.prune_mask = compute_prune_mask(layer.weight, layer.threshold);
    for (std::size_t k = 0; k < layer.prune_mask.size(); ++k)
        if (layer.freeze_mask[k]) layer.prune_mask[k] = 1;
}

/// W <- W * M^p.
template <MaskedLayer L>
void materialize_mask(L& layer) {
    for (std::size_t k = 0; k < layer.weight.size(); ++k)
        if (!layer.prune_mask[k]) layer.weight[k] = 0.0f;
}

/// Effective weight W * M with `mask` fixed for this step.
inline Tensor masked_weight_value(const Tensor& w, std::span<const std::uint8_t> mask) {
    if (mask.size() != w.size()) throw ShapeError("mask does not match weight " + shape_str(w.shape()));
    Tensor out(w.shape());
    for (std::size_t k = 0; k < w.size(); ++k) out[k] = mask[k] ? w[k] : 0.0f;
    return out;
}

namespace ops {

/// Records W * M on the tape with straight-through gradients to W and t.
inline Var masked_weight(GradTape& tape, Var w, Var t, std::span<const std::uint8_t> mask) {
    Tensor y = masked_weight_value(tape.value(w), mask);
    return tape.push(std::move(y), tape.requires_grad(w) || tape.requires_grad(t),
                     [w, t](GradTape& tp, std::size_t self) {
                         auto g = ste_backward(tp.grad_buffer(Var{self}), tp.value(w), tp.value(t));
                         if (tp.requires_grad(w)) {
                             Tensor& dw = tp.grad_buffer(w);
                             for (std::size_t k = 0; k < dw.size(); ++k) dw[k] += g.weight[k];
                         }
                         if (tp.requires_grad(t)) {
                             Tensor& dt = tp.grad_buffer(t);
                             for (std::size_t k = 0; k < dt.size(); ++k) dt[k] += g.threshold[k];
                         }
                     });
}

} // namespace ops
} // namespace growlearn
