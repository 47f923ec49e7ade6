// Copyright (c) 2026 growlearn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "growlearn/error.hpp"
#include "growlearn/layers.hpp"
#include "growlearn/ops.hpp"
#include "growlearn/rng.hpp"
#include "growlearn/sparse.hpp"
#include "growlearn/tape.hpp"
#include "growlearn/tensor.hpp"

namespace growlearn {

struct Relu {};
struct Flatten {};
struct Pool2d {
    std::size_t window = 2;
    ops::PoolKind kind = ops::PoolKind::max;
};

using Layer = std::variant<GrowableDense, GrowableConv2d, GrowableBatchNorm, Relu, Pool2d, Flatten>;

/// Parallel branch wired from the input of dense layer `source` into the
/// pre-activation of the next dense layer `target`.
struct LateralBranch {
    std::size_t source = 0;
    std::size_t target = 0;
    GrowableDense hidden;    // [width x in(source)]
    GrowableDense connector; // [out(target) x width]
};

/// Ordered layer graph. `input_shape` is per sample (no batch axis).
struct NetworkSpec {
    Shape input_shape;
    std::vector<Layer> layers;
    std::vector<std::vector<std::size_t>> skip_groups;
    bool fixed_output = true;
    std::vector<LateralBranch> laterals;
};

enum class Mode { train, eval };

inline const char* layer_kind(const Layer& l) {
    return std::visit(
        [](const auto& v) -> const char* {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, GrowableDense>) return "dense";
            else if constexpr (std::is_same_v<T, GrowableConv2d>) return "conv2d";
            else if constexpr (std::is_same_v<T, GrowableBatchNorm>) return "batchnorm";
            else if constexpr (std::is_same_v<T, Relu>) return "relu";
            else if constexpr (std::is_same_v<T, Pool2d>) return v.kind == ops::PoolKind::max ? "maxpool" : "avgpool";
            else return "flatten";
        },
        l);
}

inline bool is_masked(const Layer& l) {
    return std::holds_alternative<GrowableDense>(l) || std::holds_alternative<GrowableConv2d>(l);
}

inline std::vector<std::size_t> masked_layer_indices(const NetworkSpec& net) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        if (is_masked(net.layers[i])) idx.push_back(i);
    return idx;
}

/// Visits every pruned/frozen weight layer: layers in order, then each
/// lateral branch's hidden and connector layers. Training code relies on
/// this order being stable.
template <typename Net, typename F>
    requires std::is_same_v<std::remove_const_t<Net>, NetworkSpec>
void for_each_masked(Net& net, F&& f) {
    for (auto& l : net.layers) {
        if (auto* d = std::get_if<GrowableDense>(&l)) f(*d);
        else if (auto* c = std::get_if<GrowableConv2d>(&l)) f(*c);
    }
    for (auto& b : net.laterals) {
        f(b.hidden);
        f(b.connector);
    }
}

template <typename Net, typename F>
    requires std::is_same_v<std::remove_const_t<Net>, NetworkSpec>
void for_each_norm(Net& net, F&& f) {
    for (auto& l : net.layers)
        if (auto* n = std::get_if<GrowableBatchNorm>(&l)) f(*n);
}

inline std::size_t masked_count(const NetworkSpec& net) {
    std::size_t n = 0;
    for_each_masked(net, [&](const auto&) { ++n; });
    return n;
}

/// Per-sample shape entering each layer, plus the output shape at the end.
/// Throws StructuralError on any inconsistency.
inline std::vector<Shape> infer_shapes(const NetworkSpec& net) {
    std::vector<Shape> shapes;
    Shape cur = net.input_shape;
    if (cur.empty()) throw StructuralError("network input shape is empty");
    auto fail = [](std::size_t i, const std::string& msg) {
        throw StructuralError("layer " + std::to_string(i) + ": " + msg);
    };
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        shapes.push_back(cur);
        const Layer& l = net.layers[i];
        if (const auto* d = std::get_if<GrowableDense>(&l)) {
            if (cur.size() != 1 || cur[0] != d->in_features())
                fail(i, "dense expects " + std::to_string(d->in_features()) + " inputs, got " + shape_str(cur));
            if (d->bias.size() != d->out_features() || d->threshold.size() != d->out_features() ||
                d->prune_mask.size() != d->weight.size() || d->freeze_mask.size() != d->weight.size() ||
                d->bias_freeze.size() != d->out_features())
                fail(i, "dense parameter/mask sizes disagree with weight " + shape_str(d->weight.shape()));
            cur = Shape{d->out_features()};
        } else if (const auto* c = std::get_if<GrowableConv2d>(&l)) {
            if (cur.size() != 3 || cur[0] != c->in_channels())
                fail(i, "conv2d expects " + std::to_string(c->in_channels()) + " channels, got " + shape_str(cur));
            if (c->bias.size() != c->out_channels() || c->threshold.size() != c->out_channels() ||
                c->prune_mask.size() != c->weight.size() || c->freeze_mask.size() != c->weight.size() ||
                c->bias_freeze.size() != c->out_channels())
                fail(i, "conv2d parameter/mask sizes disagree with weight " + shape_str(c->weight.shape()));
            const std::size_t k = c->kernel();
            if (k > cur[1] + 2 * c->pad || k > cur[2] + 2 * c->pad) fail(i, "conv2d kernel larger than input");
            cur = Shape{c->out_channels(), (cur[1] + 2 * c->pad - k) / c->stride + 1,
                        (cur[2] + 2 * c->pad - k) / c->stride + 1};
        } else if (const auto* n = std::get_if<GrowableBatchNorm>(&l)) {
            if ((cur.size() != 1 && cur.size() != 3) || cur[0] != n->channels())
                fail(i, "batchnorm has " + std::to_string(n->channels()) + " channels, input " + shape_str(cur));
            if (n->beta.size() != n->channels() || n->stats.mean.size() != n->channels() ||
                n->stats.var.size() != n->channels() || n->freeze.size() != n->channels())
                fail(i, "batchnorm vectors have different lengths");
        } else if (const auto* p = std::get_if<Pool2d>(&l)) {
            if (cur.size() != 3 || p->window == 0 || p->window > cur[1] || p->window > cur[2])
                fail(i, "pooling window incompatible with " + shape_str(cur));
            cur = Shape{cur[0], cur[1] / p->window, cur[2] / p->window};
        } else if (std::holds_alternative<Flatten>(l)) {
            cur = Shape{shape_numel(cur)};
        }
    }
    shapes.push_back(cur);
    return shapes;
}

/// Channel count a layer contributes to a skip group.
inline std::optional<std::size_t> channel_count(const Layer& l) {
    if (const auto* d = std::get_if<GrowableDense>(&l)) return d->out_features();
    if (const auto* c = std::get_if<GrowableConv2d>(&l)) return c->out_channels();
    if (const auto* n = std::get_if<GrowableBatchNorm>(&l)) return n->channels();
    return std::nullopt;
}

/// Checks consecutive-layer correspondence, skip groups and lateral wiring.
inline void validate(const NetworkSpec& net) {
    (void)infer_shapes(net);
    for (const auto& group : net.skip_groups) {
        std::optional<std::size_t> expected;
        for (std::size_t idx : group) {
            if (idx >= net.layers.size()) throw StructuralError("skip group references missing layer " + std::to_string(idx));
            const auto c = channel_count(net.layers[idx]);
            if (!c) throw StructuralError("skip group member " + std::to_string(idx) + " has no channel count");
            if (expected && *expected != *c)
                throw StructuralError("skip group channel mismatch: " + std::to_string(*expected) + " vs " +
                                      std::to_string(*c) + " at layer " + std::to_string(idx));
            expected = c;
        }
    }
    for (const auto& b : net.laterals) {
        if (b.source >= net.layers.size() || b.target >= net.layers.size() || b.target <= b.source)
            throw StructuralError("lateral branch indices out of order");
        const auto* s = std::get_if<GrowableDense>(&net.layers[b.source]);
        const auto* t = std::get_if<GrowableDense>(&net.layers[b.target]);
        if (!s || !t) throw StructuralError("lateral branches connect dense layers only");
        if (b.hidden.in_features() != s->in_features() || b.connector.in_features() != b.hidden.out_features() ||
            b.connector.out_features() != t->out_features())
            throw StructuralError("lateral branch dimensions do not match its endpoints");
    }
}

/// Weight and bias (plus batch-norm affine) element count. Thresholds and
/// masks are bookkeeping, not parameters.
inline std::size_t param_count(const NetworkSpec& net) {
    std::size_t n = 0;
    for_each_masked(net, [&](const auto& l) { n += l.weight.size() + l.bias.size(); });
    for_each_norm(net, [&](const GrowableBatchNorm& b) { n += b.gamma.size() + b.beta.size(); });
    return n;
}

/// He-normal weights, zero bias.
template <MaskedLayer L>
void he_init(L& layer, Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(layer.row_size()));
    for (auto& v : layer.weight.storage()) v = static_cast<float>(rng.normal(0.0, stddev));
    layer.bias.fill(0.0f);
}

inline GrowableDense make_dense(std::size_t in, std::size_t out, Rng& rng) {
    auto d = GrowableDense::zeros(in, out);
    he_init(d, rng);
    return d;
}

/// Flatten -> (Dense -> ReLU)* -> Dense.
inline NetworkSpec make_mlp(const Shape& input_shape, const std::vector<std::size_t>& hidden, std::size_t classes,
                            Rng& rng) {
    NetworkSpec net;
    net.input_shape = input_shape;
    if (input_shape.size() != 1) net.layers.emplace_back(Flatten{});
    std::size_t in = shape_numel(input_shape);
    for (std::size_t h : hidden) {
        net.layers.emplace_back(make_dense(in, h, rng));
        net.layers.emplace_back(Relu{});
        in = h;
    }
    net.layers.emplace_back(make_dense(in, classes, rng));
    validate(net);
    return net;
}

/// (Conv3x3 -> [BN] -> ReLU -> MaxPool2)* -> Flatten -> (Dense -> ReLU)* -> Dense.
inline NetworkSpec make_cnn(const Shape& input_shape, const std::vector<std::size_t>& conv_channels,
                            const std::vector<std::size_t>& dense_hidden, std::size_t classes, bool batchnorm,
                            Rng& rng) {
    if (input_shape.size() != 3) throw StructuralError("cnn input must be [C x H x W], got " + shape_str(input_shape));
    NetworkSpec net;
    net.input_shape = input_shape;
    std::size_t ch = input_shape[0];
    for (std::size_t c : conv_channels) {
        auto conv = GrowableConv2d::zeros(ch, c, 3, 1, 1);
        he_init(conv, rng);
        net.layers.emplace_back(std::move(conv));
        if (batchnorm) net.layers.emplace_back(GrowableBatchNorm::identity(c));
        net.layers.emplace_back(Relu{});
        net.layers.emplace_back(Pool2d{2, ops::PoolKind::max});
        ch = c;
    }
    net.layers.emplace_back(Flatten{});
    const auto shapes = infer_shapes(net);
    std::size_t in = shape_numel(shapes.back());
    for (std::size_t h : dense_hidden) {
        net.layers.emplace_back(make_dense(in, h, rng));
        net.layers.emplace_back(Relu{});
        in = h;
    }
    net.layers.emplace_back(make_dense(in, classes, rng));
    validate(net);
    return net;
}

struct LayerVars {
    Var weight, bias, threshold;
};
struct NormVars {
    Var gamma, beta;
};

/// Tape handles of every parameter, in for_each_masked / for_each_norm order.
struct ParamBindings {
    std::vector<LayerVars> masked;
    std::vector<NormVars> norms;
};

struct ForwardOptions {
    Mode mode = Mode::eval;
    /// Record parameters as differentiable leaves.
    bool track = false;
    /// Route weights through the straight-through masked-weight op so that
    /// thresholds receive gradients. Requires `track`.
    bool straight_through = false;
    float bn_eps = kBatchNormEps;
    float bn_momentum = kBatchNormMomentum;
};

namespace detail {

inline bool all_set(const Mask& m) {
    return std::all_of(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; });
}

template <MaskedLayer L>
LayerVars bind_masked(GradTape& tape, const L& l, const ForwardOptions& opt, Var& effective) {
    LayerVars v;
    if (!opt.track) {
        effective = tape.constant(all_set(l.prune_mask) ? l.weight : masked_weight_value(l.weight, l.prune_mask));
        v.bias = tape.constant(l.bias);
        return v;
    }
    v.weight = tape.leaf(l.weight);
    v.bias = tape.leaf(l.bias);
    v.threshold = tape.leaf(l.threshold, opt.straight_through);
    if (opt.straight_through) {
        effective = ops::masked_weight(tape, v.weight, v.threshold, l.prune_mask);
    } else if (all_set(l.prune_mask)) {
        effective = v.weight;
    } else {
        Tensor m(l.weight.shape());
        for (std::size_t k = 0; k < m.size(); ++k) m[k] = l.prune_mask[k] ? 1.0f : 0.0f;
        effective = ops::mul(tape, v.weight, tape.constant(std::move(m)));
    }
    return v;
}

inline Var dense_through(GradTape& tape, Var x, const GrowableDense& d, const ForwardOptions& opt, LayerVars& out) {
    Var w;
    out = bind_masked(tape, d, opt, w);
    return ops::dense(tape, x, w, out.bias);
}

/// Shared forward body. `stats` supplies the batch-norm statistics to use
/// (and update, in train mode) for each batch-norm layer in order.
inline Var forward_impl(const NetworkSpec& net, GradTape& tape, Var x, const ForwardOptions& opt,
                        ParamBindings* bindings, std::vector<BatchNormStats*>& stats) {
    if (opt.straight_through && !opt.track) throw StateError("straight-through forward requires tracking");
    const Shape& in = tape.value(x).shape();
    if (in.size() != net.input_shape.size() + 1 || !std::equal(net.input_shape.begin(), net.input_shape.end(), in.begin() + 1)) {
        throw ShapeError("batch shape " + shape_str(in) + " does not match network input " + shape_str(net.input_shape));
    }
    const std::size_t n_masked = masked_layer_indices(net).size();
    std::vector<LayerVars> masked(n_masked + 2 * net.laterals.size());
    std::vector<NormVars> norms;
    std::map<std::size_t, std::vector<std::pair<std::size_t, Var>>> pending; // target -> (branch, activation)
    std::size_t slot = 0, norm_slot = 0;
    Var cur = x;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const Layer& l = net.layers[i];
        if (const auto* d = std::get_if<GrowableDense>(&l)) {
            if (tape.value(cur).rank() != 2)
                throw ShapeError("dense layer " + std::to_string(i) + " needs a flat input, got " +
                                 shape_str(tape.value(cur).shape()));
            for (std::size_t bi = 0; bi < net.laterals.size(); ++bi) {
                const auto& br = net.laterals[bi];
                if (br.source != i) continue;
                Var h = dense_through(tape, cur, br.hidden, opt, masked[n_masked + 2 * bi]);
                pending[br.target].emplace_back(bi, ops::relu(tape, h));
            }
            Var y = dense_through(tape, cur, *d, opt, masked[slot++]);
            if (auto it = pending.find(i); it != pending.end()) {
                for (auto& [bi, act] : it->second) {
                    Var c = dense_through(tape, act, net.laterals[bi].connector, opt, masked[n_masked + 2 * bi + 1]);
                    y = ops::add(tape, y, c);
                }
            }
            cur = y;
        } else if (const auto* c = std::get_if<GrowableConv2d>(&l)) {
            Var w;
            masked[slot] = bind_masked(tape, *c, opt, w);
            cur = ops::conv2d(tape, cur, w, masked[slot].bias, c->stride, c->pad);
            ++slot;
        } else if (const auto* bn = std::get_if<GrowableBatchNorm>(&l)) {
            NormVars nv;
            nv.gamma = opt.track ? tape.leaf(bn->gamma) : tape.constant(bn->gamma);
            nv.beta = opt.track ? tape.leaf(bn->beta) : tape.constant(bn->beta);
            cur = ops::batchnorm(tape, cur, nv.gamma, nv.beta, *stats.at(norm_slot++), opt.mode == Mode::train,
                                 opt.bn_eps, opt.bn_momentum);
            norms.push_back(nv);
        } else if (std::holds_alternative<Relu>(l)) {
            cur = ops::relu(tape, cur);
        } else if (const auto* p = std::get_if<Pool2d>(&l)) {
            cur = ops::pool2d(tape, cur, p->window, p->kind);
        } else {
            cur = ops::flatten(tape, cur);
        }
    }
    if (bindings) {
        bindings->masked = std::move(masked);
        bindings->norms = std::move(norms);
    }
    return cur;
}

} // namespace detail

/// Records the network on `tape`. Train mode normalizes with batch
/// statistics and updates the running statistics held in `net`.
inline Var forward(NetworkSpec& net, GradTape& tape, Var x, const ForwardOptions& opt, ParamBindings* bindings = nullptr) {
    std::vector<BatchNormStats*> stats;
    std::vector<BatchNormStats> scratch;
    if (opt.mode == Mode::train) {
        for_each_norm(net, [&](GrowableBatchNorm& b) { stats.push_back(&b.stats); });
    } else {
        for_each_norm(net, [&](const GrowableBatchNorm& b) { scratch.push_back(b.stats); });
        for (auto& s : scratch) stats.push_back(&s);
    }
    return detail::forward_impl(net, tape, x, opt, bindings, stats);
}

/// Eval-mode logits for a batch.
inline Tensor predict(const NetworkSpec& net, const Tensor& batch) {
    std::vector<BatchNormStats> scratch;
    for_each_norm(net, [&](const GrowableBatchNorm& b) { scratch.push_back(b.stats); });
    std::vector<BatchNormStats*> stats;
    for (auto& s : scratch) stats.push_back(&s);
    GradTape tape;
    Var x = tape.constant(batch);
    ForwardOptions opt;
    return tape.value(detail::forward_impl(net, tape, x, opt, nullptr, stats));
}

/// Logits in the requested mode without recording gradients.
inline Tensor forward(NetworkSpec& net, const Tensor& batch, Mode mode) {
    if (mode == Mode::eval) return predict(net, batch);
    GradTape tape;
    Var x = tape.constant(batch);
    ForwardOptions opt;
    opt.mode = mode;
    return tape.value(forward(net, tape, x, opt));
}

// ---------------------------------------------------------------------------
// Growth.

/// Widens every hidden layer by `exp` channels, keeping input/output channel
/// correspondence between consecutive layers. When a conv stage feeds a dense
/// layer through a flatten, the dense layer gains exp * (spatial footprint)
/// inputs. The classifier's output width is left alone when `fixed_output`.
inline NetworkSpec expand_model(const NetworkSpec& net, std::int64_t exp) {
    if (exp < 0) throw InputError("expansion amount must be non-negative, got " + std::to_string(exp));
    if (!net.laterals.empty()) throw StructuralError("expand_model does not support networks with lateral branches");
    validate(net);
    NetworkSpec out = net;
    if (exp == 0) return out;
    const auto shapes = infer_shapes(net);
    const auto params = masked_layer_indices(net);
    const std::size_t e = static_cast<std::size_t>(exp);
    std::size_t prev_growth = 0;  // channels added to the previous weight layer's output
    std::size_t footprint = 1;    // spatial positions per channel at the last flatten
    for (std::size_t i = 0; i < out.layers.size(); ++i) {
        Layer& l = out.layers[i];
        const bool is_last = !params.empty() && i == params.back();
        const std::size_t grow_out = (is_last && net.fixed_output) ? 0 : e;
        if (auto* d = std::get_if<GrowableDense>(&l)) {
            *d = expand_layer(*d, static_cast<std::int64_t>(prev_growth * footprint), static_cast<std::int64_t>(grow_out));
            prev_growth = grow_out;
            footprint = 1;
        } else if (auto* c = std::get_if<GrowableConv2d>(&l)) {
            *c = expand_layer(*c, static_cast<std::int64_t>(prev_growth), static_cast<std::int64_t>(grow_out));
            prev_growth = grow_out;
        } else if (auto* bn = std::get_if<GrowableBatchNorm>(&l)) {
            *bn = expand_batchnorm(*bn, static_cast<std::int64_t>(prev_growth));
        } else if (std::holds_alternative<Flatten>(l)) {
            const Shape& s = shapes[i];
            footprint = s.size() == 3 ? s[1] * s[2] : 1;
        }
    }
    validate(out);
    return out;
}

/// Adds, for every hidden dense layer, a parallel branch of `width` units fed
/// from that layer's input and summed into the next dense layer's
/// pre-activation. Existing weights are untouched.
inline NetworkSpec grow_lateral(const NetworkSpec& net, std::size_t width, Rng& rng, bool zero_connector = false) {
    validate(net);
    const auto params = masked_layer_indices(net);
    for (std::size_t i : params)
        if (!std::holds_alternative<GrowableDense>(net.layers[i]))
            throw StrategyError("lateral growth supports dense stacks only; layer " + std::to_string(i) + " is " +
                                layer_kind(net.layers[i]));
    NetworkSpec out = net;
    if (width == 0) return out;
    for (std::size_t k = 0; k + 1 < params.size(); ++k) {
        const auto& src = std::get<GrowableDense>(net.layers[params[k]]);
        const auto& dst = std::get<GrowableDense>(net.layers[params[k + 1]]);
        LateralBranch b;
        b.source = params[k];
        b.target = params[k + 1];
        b.hidden = make_dense(src.in_features(), width, rng);
        b.connector = GrowableDense::zeros(width, dst.out_features());
        if (!zero_connector) he_init(b.connector, rng);
        out.laterals.push_back(std::move(b));
    }
    validate(out);
    return out;
}

enum class DepthInit { random, identity };

/// Inserts a square dense layer at `position` (an index into `layers`),
/// optionally followed by a ReLU.
inline NetworkSpec grow_in_depth(const NetworkSpec& net, std::size_t position, Rng& rng,
                                 DepthInit init = DepthInit::random, bool with_relu = true) {
    validate(net);
    const auto params = masked_layer_indices(net);
    for (std::size_t i : params)
        if (!std::holds_alternative<GrowableDense>(net.layers[i]))
            throw StrategyError("in-depth growth supports dense stacks only");
    if (params.empty() || position == 0 || position > params.back())
        throw InputError("invalid insertion position " + std::to_string(position));
    const auto shapes = infer_shapes(net);
    const Shape& s = shapes[position];
    if (s.size() != 1) throw InputError("insertion position " + std::to_string(position) + " is not in the dense stack");
    const std::size_t width = s[0];
    auto layer = GrowableDense::zeros(width, width);
    if (init == DepthInit::random) {
        he_init(layer, rng);
    } else {
        for (std::size_t k = 0; k < width; ++k) layer.weight.at(k, k) = 1.0f;
    }
    NetworkSpec out = net;
    const std::size_t inserted = with_relu ? 2 : 1;
    out.layers.insert(out.layers.begin() + static_cast<std::ptrdiff_t>(position), Layer{std::move(layer)});
    if (with_relu) out.layers.insert(out.layers.begin() + static_cast<std::ptrdiff_t>(position) + 1, Layer{Relu{}});
    for (auto& g : out.skip_groups)
        for (auto& idx : g)
            if (idx >= position) idx += inserted;
    for (auto& b : out.laterals) {
        if (b.source >= position) b.source += inserted;
        if (b.target >= position) b.target += inserted;
    }
    validate(out);
    return out;
}

} // namespace growlearn
