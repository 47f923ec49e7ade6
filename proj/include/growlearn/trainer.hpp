// Copyright (c) 2026 growlearn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "growlearn/error.hpp"
#include "growlearn/network.hpp"
#include "growlearn/ops.hpp"
#include "growlearn/sparse.hpp"
#include "growlearn/tape.hpp"

namespace growlearn {

/// Loss breakdown of one training step: total = task + alpha * reg.
struct SparseLoss {
    double task_loss = 0.0;
    double reg_loss = 0.0;
    double alpha = 0.0;
    double total = 0.0;
};

/// Freeze masks live inside the layers; this tracks how many datasets have
/// been folded into them and whether they are enforced for the next step.
struct FreezeState {
    std::size_t generation = 0;
    bool active = false;
};

struct TrainOptions {
    float lr = 0.01f;
    float momentum = 0.0f;
    float alpha = 1e-5f;
    bool sparse = true;
    float bn_eps = kBatchNormEps;
    float bn_momentum = kBatchNormMomentum;
};

/// Momentum buffers, one per parameter tensor in binding order. Buffers are
/// dropped whenever the parameter layout changes (e.g. after growth).
class SgdState {
public:
    void reset() { velocity_.clear(); }

    std::vector<float>& buffer(std::size_t slot, std::size_t size) {
        if (slot >= velocity_.size()) velocity_.resize(slot + 1);
        if (velocity_[slot].size() != size) velocity_[slot].assign(size, 0.0f);
        return velocity_[slot];
    }

private:
    std::vector<std::vector<float>> velocity_;
};

namespace detail {

/// p -= lr * v with v = momentum * v + g, skipping frozen entries entirely.
inline void sgd_update(std::span<float> param, const Tensor& grad, std::span<const std::uint8_t> frozen, float lr,
                       float momentum, std::vector<float>& velocity) {
    for (std::size_t k = 0; k < param.size(); ++k) {
        if (!frozen.empty() && frozen[k]) continue;
        float step = grad[k];
        if (momentum != 0.0f) {
            velocity[k] = momentum * velocity[k] + grad[k];
            step = velocity[k];
        }
        param[k] -= lr * step;
    }
}

inline void require_finite(const Tensor& g, const char* what) {
    if (!g.all_finite()) throw NumericError(std::string("non-finite gradient in ") + what);
}

} // namespace detail

/// Fraction of pruned entries over every maskable weight.
inline double sparsity(const NetworkSpec& net) {
    std::size_t zeros = 0, total = 0;
    for_each_masked(net, [&](const auto& l) {
        for (auto v : l.prune_mask) zeros += v == 0;
        total += l.prune_mask.size();
    });
    return total == 0 ? 0.0 : static_cast<double>(zeros) / static_cast<double>(total);
}

/// Fraction of frozen entries over every maskable weight.
inline double freeze_fraction(const NetworkSpec& net) {
    std::size_t ones = 0, total = 0;
    for_each_masked(net, [&](const auto& l) {
        for (auto v : l.freeze_mask) ones += v != 0;
        total += l.freeze_mask.size();
    });
    return total == 0 ? 0.0 : static_cast<double>(ones) / static_cast<double>(total);
}

inline std::vector<Tensor> thresholds_of(const NetworkSpec& net) {
    std::vector<Tensor> t;
    for_each_masked(net, [&](const auto& l) { t.push_back(l.threshold); });
    return t;
}

/// Refreshes every pruning mask from (W, t) and zeroes pruned weights.
inline void refresh_masks(NetworkSpec& net) {
    for_each_masked(net, [](auto& l) {
        refresh_prune_mask(l);
        materialize_mask(l);
    });
}

/// t <- 0 everywhere, then masks are recomputed against the new thresholds.
inline void reset_thresholds(NetworkSpec& net) {
    for_each_masked(net, [](auto& l) {
        l.threshold.fill(0.0f);
        refresh_prune_mask(l);
    });
}

/// Folds the current pruning masks into the freeze masks. A bias (or the
/// batch-norm channel following a weight layer) freezes once any weight in
/// its row is frozen.
inline void update_network_freeze(NetworkSpec& net, FreezeState& state) {
    for_each_masked(net, [](auto& l) {
        l.freeze_mask = update_freeze_mask(l.freeze_mask, l.prune_mask);
        const std::size_t rows = l.out_features(), row = l.row_size();
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < row; ++j)
                if (l.freeze_mask[i * row + j]) {
                    l.bias_freeze[i] = 1;
                    break;
                }
    });
    const Mask* last = nullptr;
    for (auto& layer : net.layers) {
        if (auto* d = std::get_if<GrowableDense>(&layer)) last = &d->bias_freeze;
        else if (auto* c = std::get_if<GrowableConv2d>(&layer)) last = &c->bias_freeze;
        else if (auto* bn = std::get_if<GrowableBatchNorm>(&layer)) {
            if (last && last->size() == bn->freeze.size())
                for (std::size_t c = 0; c < bn->freeze.size(); ++c) bn->freeze[c] = bn->freeze[c] || (*last)[c];
        }
    }
    ++state.generation;
}

/// One step of (optionally sparse) frozen gradient descent.
///
/// With `opt.sparse`: the pruning masks are refreshed from (W, t), pruned
/// weights are zeroed, and the loss is L(D; W * M) + alpha * sum exp(-t).
/// Thresholds always receive plain descent. When `freeze.active`, weights,
/// biases and batch-norm affine entries marked frozen are left bit-identical.
inline SparseLoss train_step(NetworkSpec& net, const Tensor& batch, std::span<const int> labels,
                             const TrainOptions& opt, const FreezeState& freeze, SgdState& sgd) {
    if (batch.rank() == 0 || labels.size() != batch.dim(0)) {
        throw ShapeError("train_step: " + std::to_string(labels.size()) + " labels for batch " + shape_str(batch.shape()));
    }
    if (opt.sparse) refresh_masks(net);

    GradTape tape;
    ParamBindings vars;
    ForwardOptions fo;
    fo.mode = Mode::train;
    fo.track = true;
    fo.straight_through = opt.sparse;
    fo.bn_eps = opt.bn_eps;
    fo.bn_momentum = opt.bn_momentum;
    // Batch-norm running statistics are updated by the forward pass; keep a
    // copy so a failed step leaves the network untouched.
    std::vector<BatchNormStats> saved_stats;
    for_each_norm(net, [&](const GrowableBatchNorm& b) { saved_stats.push_back(b.stats); });
    auto restore_stats = [&] {
        std::size_t i = 0;
        for_each_norm(net, [&](GrowableBatchNorm& b) { b.stats = saved_stats[i++]; });
    };

    Var x = tape.constant(batch);
    Var logits = forward(net, tape, x, fo, &vars);
    Var task = ops::softmax_cross_entropy(tape, logits, labels);
    Var total = task;

    SparseLoss out;
    out.task_loss = tape.value(task)[0];
    double reg = 0.0;
    for_each_masked(net, [&](const auto& l) {
        for (float v : l.threshold.data()) reg += std::exp(-static_cast<double>(v));
    });
    out.reg_loss = reg;
    out.alpha = opt.sparse ? opt.alpha : 0.0;
    out.total = out.task_loss + out.alpha * out.reg_loss;

    if (opt.sparse && opt.alpha != 0.0f) {
        for (const auto& lv : vars.masked) {
            Var r = ops::scale(tape, ops::sum_exp_neg(tape, lv.threshold), opt.alpha);
            total = ops::add(tape, total, r);
        }
    }
    if (!std::isfinite(out.total) || !std::isfinite(tape.value(total)[0])) {
        restore_stats();
        throw NumericError("non-finite loss (task " + std::to_string(out.task_loss) + ")");
    }
    tape.backward(total);

    // Gather every gradient before touching parameters so a numeric failure
    // aborts the step cleanly.
    std::vector<Tensor> grads;
    for (const auto& lv : vars.masked) {
        grads.push_back(tape.gradient(lv.weight));
        grads.push_back(tape.gradient(lv.bias));
        grads.push_back(opt.sparse ? tape.gradient(lv.threshold) : Tensor{});
    }
    for (const auto& nv : vars.norms) {
        grads.push_back(tape.gradient(nv.gamma));
        grads.push_back(tape.gradient(nv.beta));
    }
    for (const auto& g : grads) {
        if (!g.empty() && !g.all_finite()) {
            restore_stats();
            throw NumericError("non-finite gradient");
        }
    }

    const bool frozen = freeze.active;
    std::size_t slot = 0, gi = 0;
    for_each_masked(net, [&](auto& l) {
        const Mask none;
        detail::sgd_update(l.weight.data(), grads[gi], frozen ? std::span<const std::uint8_t>(l.freeze_mask) : none,
                           opt.lr, opt.momentum, sgd.buffer(slot++, l.weight.size()));
        detail::sgd_update(l.bias.data(), grads[gi + 1],
                           frozen ? std::span<const std::uint8_t>(l.bias_freeze) : none, opt.lr, opt.momentum,
                           sgd.buffer(slot++, l.bias.size()));
        if (opt.sparse)
            detail::sgd_update(l.threshold.data(), grads[gi + 2], none, opt.lr, opt.momentum,
                               sgd.buffer(slot, l.threshold.size()));
        ++slot;
        gi += 3;
    });
    for_each_norm(net, [&](GrowableBatchNorm& b) {
        const Mask none;
        const auto fz = frozen ? std::span<const std::uint8_t>(b.freeze) : std::span<const std::uint8_t>(none);
        detail::sgd_update(b.gamma.data(), grads[gi], fz, opt.lr, opt.momentum, sgd.buffer(slot++, b.gamma.size()));
        detail::sgd_update(b.beta.data(), grads[gi + 1], fz, opt.lr, opt.momentum, sgd.buffer(slot++, b.beta.size()));
        gi += 2;
    });
    return out;
}

} // namespace growlearn
