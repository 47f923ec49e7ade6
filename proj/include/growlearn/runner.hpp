// Copyright (c) 2026 growlearn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "growlearn/config.hpp"
#include "growlearn/data.hpp"
#include "growlearn/error.hpp"
#include "growlearn/metrics.hpp"
#include "growlearn/network.hpp"
#include "growlearn/rng.hpp"
#include "growlearn/trainer.hpp"

namespace growlearn {

// ---------------------------------------------------------------------------
// Evaluation.

inline constexpr std::size_t kEvalChunk = 256;

inline std::vector<int> argmax_rows(const Tensor& logits) {
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c)
            if (logits.at(i, c) > logits.at(i, best)) best = c;
        out[i] = static_cast<int>(best);
    }
    return out;
}

/// Eval-mode accuracy on a split.
inline double accuracy(const NetworkSpec& net, const LabeledSplit& split) {
    if (split.size() == 0) throw InputError("cannot evaluate on an empty split");
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t s = 0; s < split.size(); s += kEvalChunk) {
        idx.clear();
        for (std::size_t i = s; i < std::min(split.size(), s + kEvalChunk); ++i) idx.push_back(i);
        const LabeledSplit part = take(split, idx);
        const auto pred = argmax_rows(predict(net, part.images));
        for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == part.labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(split.size());
}

/// Test accuracy on `dataset`.
inline double evaluate(const NetworkSpec& net, const LabeledDataset& dataset) {
    if (dataset.test.size() == 0) throw InputError("dataset has an empty test split");
    return accuracy(net, dataset.test);
}

// ---------------------------------------------------------------------------
// Expansion bookkeeping and initialization.

/// Pre-growth (out, in) sizes of every weight layer, in for_each_masked order.
struct ExpansionRegion {
    std::vector<std::pair<std::size_t, std::size_t>> old_dims;
    [[nodiscard]] bool empty() const { return old_dims.empty(); }
};

inline ExpansionRegion capture_dims(const NetworkSpec& net) {
    ExpansionRegion r;
    for_each_masked(net, [&](const auto& l) { r.old_dims.emplace_back(l.out_features(), l.row_size()); });
    return r;
}

namespace detail {

template <MaskedLayer L>
std::size_t spatial_per_input(const L& l) {
    if constexpr (std::is_same_v<L, GrowableConv2d>) return l.kernel() * l.kernel();
    else return 1;
}

} // namespace detail

/// Draws every weight created by the expansion (new rows, and new input
/// columns of old rows) from N(0, 2 / n_in), n_in being the layer's current
/// fan-in. Old entries and all biases are left untouched.
inline void random_init_expanded(NetworkSpec& net, const ExpansionRegion& region, Rng& rng) {
    if (region.empty()) throw StateError("random_init_expanded: no expansion has been tracked");
    if (region.old_dims.size() != masked_count(net))
        throw StateError("random_init_expanded: tracked region does not match the network");
    bool grew = false;
    std::size_t li = 0;
    for_each_masked(net, [&](auto& l) {
        const auto [old_out, old_row] = region.old_dims[li++];
        const std::size_t out = l.out_features(), row = l.row_size();
        if (out < old_out || row < old_row) throw StateError("random_init_expanded: layer shrank since capture");
        if (out == old_out && row == old_row) return;
        grew = true;
        // For conv weights a "column" is one input channel's k x k patch.
        const std::size_t patch = detail::spatial_per_input(l);
        const std::size_t old_cols = old_row / patch;
        const double sd = std::sqrt(2.0 / static_cast<double>(row));
        for (std::size_t i = 0; i < out; ++i)
            for (std::size_t j = 0; j < row; ++j)
                if (i >= old_out || j / patch >= old_cols)
                    l.weight[i * row + j] = static_cast<float>(rng.normal(0.0, sd));
    });
    if (!grew) throw StateError("random_init_expanded: the tracked expansion added no weights");
}

// ---------------------------------------------------------------------------
// Training loops.

/// Batch order for one epoch; a pure function of (seed, dataset, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t dataset, std::size_t epoch) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(derive_seed(derive_seed(seed, "shuffle", dataset), "epoch", epoch));
    rng.shuffle(idx);
    return idx;
}

struct EpochStats {
    double total_loss = 0.0;
    double task_loss = 0.0;
    std::size_t steps = 0;
};

/// One pass over `split` in the given order. The last partial batch is kept.
inline EpochStats train_epoch(NetworkSpec& net, const LabeledSplit& split, const std::vector<std::size_t>& order,
                              std::size_t batch_size, const TrainOptions& opt, const FreezeState& freeze, SgdState& sgd) {
    EpochStats st;
    std::vector<std::size_t> idx;
    for (std::size_t s = 0; s < order.size(); s += batch_size) {
        idx.assign(order.begin() + static_cast<std::ptrdiff_t>(s),
                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + batch_size)));
        const LabeledSplit b = take(split, idx);
        const SparseLoss l = train_step(net, b.images, b.labels, opt, freeze, sgd);
        st.total_loss += l.total;
        st.task_loss += l.task_loss;
        ++st.steps;
    }
    if (st.steps) {
        st.total_loss /= static_cast<double>(st.steps);
        st.task_loss /= static_cast<double>(st.steps);
    }
    return st;
}

struct OnDataOptions {
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    std::size_t dataset_index = 0;
    std::size_t first_epoch = 0;
};

/// Fine-tunes the network on the current dataset with the sparse objective
/// and the existing freeze masks enforced, so frozen entries stay put while
/// the expanded region adapts. `on_epoch` observes each finished epoch.
inline void on_data_initialize(NetworkSpec& net, const LabeledDataset& dataset, std::size_t phase_epochs,
                               TrainOptions opt, const OnDataOptions& od, SgdState& sgd,
                               const std::function<void(std::size_t, const EpochStats&)>& on_epoch = {}) {
    if (phase_epochs < 1) throw InputError("on-data initialization needs at least one epoch");
    if (dataset.train.size() == 0) throw InputError("on-data initialization on an empty training split");
    opt.sparse = true;
    const FreezeState freeze{0, true};
    for (std::size_t e = 0; e < phase_epochs; ++e) {
        const std::size_t epoch = od.first_epoch + e;
        const auto order = epoch_order(dataset.train.size(), od.seed, od.dataset_index, epoch);
        const EpochStats st = train_epoch(net, dataset.train, order, od.batch_size, opt, freeze, sgd);
        if (on_epoch) on_epoch(epoch, st);
    }
}

// ---------------------------------------------------------------------------
// Run.

struct EpochRecord {
    std::size_t dataset = 0; // 0-based
    std::size_t epoch = 0;   // 0-based, within the dataset
    double loss = 0.0;
    double task_loss = 0.0;
    std::vector<double> accuracies; // on datasets 0..dataset
    double average_accuracy = 0.0;
    double sparsity = 0.0;
    bool ondata = false;
};

struct GrowthEvent {
    std::size_t dataset = 0;
    std::size_t epoch = 0;
    std::size_t params_before = 0;
    std::size_t params_after = 0;
    /// Mean accuracy on datasets learned before the current one (absent for
    /// the first dataset), measured just before and just after growth.
    std::optional<double> previous_before;
    std::optional<double> previous_after;
    double current_before = 0.0;
    double current_after = 0.0;
    /// Logit change on a fixed probe batch caused by growth + initialization.
    double logit_delta_mean = 0.0;
    double logit_delta_max = 0.0;
};

struct RunReport {
    std::vector<EpochRecord> epochs;
    std::vector<GrowthEvent> growth;
    std::size_t params_initial = 0;
    std::size_t params_final = 0;
    double sparsity = 0.0;
    double freeze_fraction = 0.0;
    std::vector<double> b_bar_fresh;
    std::vector<double> b_bar_shared;

    [[nodiscard]] double params_rise_percent() const {
        return params_initial == 0 ? 0.0
                                   : 100.0 * (static_cast<double>(params_final) - static_cast<double>(params_initial)) /
                                         static_cast<double>(params_initial);
    }
};

struct RunResult {
    ResultMatrix results;
    NetworkSpec network;
    RunReport report;
};

struct RunHooks {
    std::function<void(const EpochRecord&)> on_epoch;
    std::function<void(const GrowthEvent&, const NetworkSpec&)> on_growth;
    /// Called after dataset d (0-based) is complete and its freeze update applied.
    std::function<void(std::size_t, const NetworkSpec&)> on_dataset;
};

/// Number of epochs in the final phase: ceil(fraction * epochs), at least 1.
inline std::size_t final_phase_epochs(std::size_t epochs, double fraction) {
    const auto n = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(epochs) - 1e-9));
    return std::clamp<std::size_t>(n, 1, epochs);
}

inline TrainOptions train_options(const RunConfig& c) {
    TrainOptions o;
    o.lr = static_cast<float>(c.training.lr);
    o.momentum = static_cast<float>(c.training.momentum);
    o.alpha = static_cast<float>(c.training.alpha);
    o.sparse = c.sparse_enabled();
    o.bn_eps = static_cast<float>(c.training.bn_eps);
    o.bn_momentum = static_cast<float>(c.training.bn_momentum);
    return o;
}

/// Untrained network for `config`; `tag` selects an independent draw.
inline NetworkSpec initial_network(const RunConfig& config, const Shape& image_shape, std::size_t classes,
                                   std::string_view tag = "init", std::uint64_t index = 0) {
    Rng rng(derive_seed(config.seed, tag, index));
    return build_network(config.architecture, image_shape, classes, rng);
}

namespace detail {

inline std::optional<double> mean_accuracy(const NetworkSpec& net, const TaskStream& s, std::size_t count) {
    if (count == 0) return std::nullopt;
    double a = 0.0;
    for (std::size_t i = 0; i < count; ++i) a += evaluate(net, s.tasks[i]);
    return a / static_cast<double>(count);
}

inline Tensor probe_batch(const TaskStream& s) {
    std::vector<std::size_t> idx(std::min<std::size_t>(64, s.tasks.front().test.size()));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return take(s.tasks.front().test, idx).images;
}

/// Applies the strategy's growth and the configured initialization.
inline NetworkSpec grow(const NetworkSpec& net, const RunConfig& c, Rng& rng) {
    const InitPolicy policy = c.policy();
    const std::size_t exp = c.schedule.exp;
    switch (c.strategy) {
    case Strategy::sparsegrow:
    case Strategy::layerexp: {
        const ExpansionRegion region = capture_dims(net);
        NetworkSpec out = expand_model(net, static_cast<std::int64_t>(exp));
        if (policy != InitPolicy::zero && exp > 0) random_init_expanded(out, region, rng);
        return out;
    }
    case Strategy::latconn:
        return grow_lateral(net, exp, rng, policy == InitPolicy::zero);
    case Strategy::idgrow: {
        const auto params = masked_layer_indices(net);
        if (params.size() < 2) throw StrategyError("in-depth growth needs at least one hidden layer");
        return grow_in_depth(net, params.back(), rng, policy == InitPolicy::zero ? DepthInit::identity : DepthInit::random);
    }
    case Strategy::nogrow:
        return net;
    }
    return net;
}

} // namespace detail

/// Trains `config`'s network through `stream`, one dataset after another:
/// thresholds reset, optional growth in the final phase, frozen (sparse)
/// training, freeze-mask update, then evaluation on every dataset seen so far
/// plus the next dataset as a forward-transfer probe.
inline RunResult run_sequence(const RunConfig& raw_config, const TaskStream& stream, const RunHooks& hooks = {}) {
    const RunConfig config = resolve(raw_config);
    if (stream.tasks.empty()) throw InputError("task stream is empty");
    const Shape image_shape = stream.tasks.front().image_shape();
    for (std::size_t i = 0; i < stream.tasks.size(); ++i) {
        if (stream.tasks[i].image_shape() != image_shape)
            throw StructuralError("dataset " + std::to_string(i + 1) + " has image shape " +
                                  shape_str(stream.tasks[i].image_shape()) + ", expected " + shape_str(image_shape));
        if (stream.tasks[i].train.size() == 0) throw InputError("dataset " + std::to_string(i + 1) + " has no training data");
        for (const auto* sp : {&stream.tasks[i].train, &stream.tasks[i].test})
            for (int l : sp->labels)
                if (l < 0 || static_cast<std::size_t>(l) >= stream.classes)
                    throw StructuralError("dataset " + std::to_string(i + 1) + " has label " + std::to_string(l) +
                                          " outside the " + std::to_string(stream.classes) + "-way head");
    }
    const std::size_t T = stream.tasks.size();
    const std::size_t epochs = config.training.epochs;
    const std::size_t final_start = epochs - final_phase_epochs(epochs, config.schedule.final_fraction);
    const bool sparse = config.sparse_enabled();

    RunResult res{ResultMatrix(T), initial_network(config, image_shape, stream.classes), {}};
    NetworkSpec& net = res.network;
    RunReport& rep = res.report;
    rep.params_initial = param_count(net);

    // Forward-transfer baselines: fresh untrained models and the run's own
    // initial model.
    for (std::size_t i = 0; i < T; ++i) {
        const NetworkSpec fresh = initial_network(config, image_shape, stream.classes, "baseline", i);
        const double b = evaluate(fresh, stream.tasks[i]);
        res.results.record_baseline(i, b);
        rep.b_bar_fresh.push_back(b);
        rep.b_bar_shared.push_back(evaluate(net, stream.tasks[i]));
    }

    const TrainOptions base_opt = train_options(config);
    const Tensor probe = detail::probe_batch(stream);
    FreezeState freeze;
    SgdState sgd;

    for (std::size_t d = 0; d < T; ++d) {
        const LabeledDataset& task = stream.tasks[d];
        if (sparse) reset_thresholds(net);
        freeze.active = config.freeze_enabled() && d > 0;
        const bool expand = std::find(config.schedule.expand_on.begin(), config.schedule.expand_on.end(), d + 1) !=
                            config.schedule.expand_on.end();
        bool ondata = false;

        auto log_epoch = [&](std::size_t e, const EpochStats& st, bool od) {
            EpochRecord r;
            r.dataset = d;
            r.epoch = e;
            r.loss = st.total_loss;
            r.task_loss = st.task_loss;
            for (std::size_t j = 0; j <= d; ++j) r.accuracies.push_back(evaluate(net, stream.tasks[j]));
            r.average_accuracy = std::accumulate(r.accuracies.begin(), r.accuracies.end(), 0.0) /
                                 static_cast<double>(r.accuracies.size());
            r.sparsity = sparsity(net);
            r.ondata = od;
            if (hooks.on_epoch) hooks.on_epoch(r);
            rep.epochs.push_back(std::move(r));
        };

        for (std::size_t e = 0; e < epochs; ++e) {
            if (expand && e == final_start && config.strategy != Strategy::nogrow) {
                GrowthEvent ev;
                ev.dataset = d;
                ev.epoch = e;
                ev.params_before = param_count(net);
                ev.previous_before = detail::mean_accuracy(net, stream, d);
                // Masks lag the last optimizer step; align them first so the
                // logit comparison isolates the growth itself.
                if (sparse) for_each_masked(net, [](auto& l) { refresh_prune_mask(l); });
                ev.current_before = evaluate(net, task);
                const Tensor before = predict(net, probe);
                Rng rng(derive_seed(config.seed, "growth", d));
                net = detail::grow(net, config, rng);
                if (sparse) {
                    // New thresholds are zero; mask the new weights under them.
                    for_each_masked(net, [](auto& l) { refresh_prune_mask(l); });
                }
                sgd.reset();
                const Tensor after = predict(net, probe);
                ev.params_after = param_count(net);
                ev.previous_after = detail::mean_accuracy(net, stream, d);
                ev.current_after = evaluate(net, task);
                double sum = 0.0, mx = 0.0;
                for (std::size_t k = 0; k < before.size(); ++k) {
                    const double dl = std::fabs(static_cast<double>(after[k]) - static_cast<double>(before[k]));
                    sum += dl;
                    mx = std::max(mx, dl);
                }
                ev.logit_delta_mean = sum / static_cast<double>(before.size());
                ev.logit_delta_max = mx;
                if (hooks.on_growth) hooks.on_growth(ev, net);
                rep.growth.push_back(ev);
                ondata = config.policy() == InitPolicy::random_ondata;
                if (ondata) {
                    OnDataOptions od{config.training.batch_size, config.seed, d, e};
                    on_data_initialize(net, task, epochs - e, base_opt, od, sgd,
                                       [&](std::size_t ep, const EpochStats& st) { log_epoch(ep, st, true); });
                    break;
                }
            }
            const auto order = epoch_order(task.train.size(), config.seed, d, e);
            const EpochStats st = train_epoch(net, task.train, order, config.training.batch_size, base_opt, freeze, sgd);
            log_epoch(e, st, false);
        }

        // Bring masks in line with the final weights before freezing and
        // evaluating, so R reflects the network that is carried forward.
        if (sparse || ondata) refresh_masks(net);
        if (!sparse && ondata) {
            // Plain-SGD runs keep the zeros the on-data phase produced but not
            // its masks: those entries stay trainable later on.
            for_each_masked(net, [](auto& l) {
                std::fill(l.prune_mask.begin(), l.prune_mask.end(), std::uint8_t{1});
                l.threshold.fill(0.0f);
            });
        }
        if (config.freeze_enabled()) update_network_freeze(net, freeze);
        for (std::size_t j = 0; j <= d; ++j) res.results.record(d, j, evaluate(net, stream.tasks[j]));
        if (d + 1 < T) res.results.record(d, d + 1, evaluate(net, stream.tasks[d + 1]));
        if (hooks.on_dataset) hooks.on_dataset(d, net);
    }

    rep.params_final = param_count(net);
    rep.sparsity = sparsity(net);
    rep.freeze_fraction = freeze_fraction(net);
    return res;
}

} // namespace growlearn
