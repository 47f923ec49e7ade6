// Copyright (c) 2026 growlearn authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "growlearn/network.hpp"
#include "growlearn/sparse.hpp"
#include "growlearn/trainer.hpp"
#include "oracles.hpp"

using namespace growlearn;
using Catch::Matchers::WithinAbs;

namespace {

Mask random_mask(std::size_t n, std::mt19937& gen, unsigned one_in = 2) {
    Mask m(n);
    for (auto& v : m) v = static_cast<std::uint8_t>(gen() % one_in == 0);
    return m;
}

struct Toy {
    NetworkSpec net;
    Tensor x;
    std::vector<int> y;
};

Toy toy_problem(std::uint64_t seed, std::size_t n = 64) {
    Rng rng(seed);
    Toy t{make_mlp({6}, {10}, 3, rng), Tensor(Shape{n, 6}), std::vector<int>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(rng.below(3));
        t.y[i] = label;
        for (std::size_t j = 0; j < 6; ++j)
            t.x.at(i, j) = static_cast<float>(rng.normal(j % 3 == static_cast<std::size_t>(label) ? 1.0 : 0.0, 0.3));
    }
    return t;
}

} // namespace

TEST_CASE("compute_prune_mask", "[sparse][mask]") {
    CHECK(compute_prune_mask(Tensor::from({1, 3}, {0.5f, -0.05f, 0.2f}), Tensor::from({1}, {0.1f})) == Mask{1, 0, 1});
    CHECK(compute_prune_mask(Tensor::from({2, 2}, {0.3f, -1, 2, 0.01f}), Tensor(Shape{2})) == Mask(4, 1));
    // S(0) = 0: a weight sitting on its threshold is pruned.
    CHECK(compute_prune_mask(Tensor::from({1, 2}, {0.25f, 0}), Tensor::from({1}, {0.25f})) == Mask{0, 0});
    CHECK(compute_prune_mask(Tensor::from({1, 1}, {0}), Tensor(Shape{1})) == Mask{0});

    SECTION("random weights against elementwise comparison") {
        for (std::uint32_t s = 0; s < 20; ++s) {
            const auto w = oracle::random_tensor({7, 5}, s);
            const auto t = oracle::random_tensor({7}, 100 + s, -0.2f, 0.8f);
            const auto m = compute_prune_mask(w, t);
            for (std::size_t i = 0; i < 7; ++i)
                for (std::size_t j = 0; j < 5; ++j) REQUIRE(m[i * 5 + j] == (std::fabs(w.at(i, j)) > t[i] ? 1 : 0));
        }
    }
    SECTION("conv weights use one threshold per filter") {
        const auto w = oracle::random_tensor({3, 2, 2, 2}, 4);
        const auto t = Tensor::from({3}, {0.0f, 2.0f, 0.5f});
        const auto m = compute_prune_mask(w, t);
        for (std::size_t k = 0; k < 24; ++k) CHECK(m[k] == (std::fabs(w[k]) > t[k / 8] ? 1 : 0));
    }
    SECTION("threshold length mismatch") {
        CHECK_THROWS_AS(compute_prune_mask(Tensor(Shape{2, 3}), Tensor(Shape{3})), ShapeError);
    }
}

TEST_CASE("mask refresh is idempotent for nonnegative thresholds", "[sparse][mask][property]") {
    for (std::uint32_t s = 0; s < 20; ++s) {
        const auto w = oracle::random_tensor({6, 4}, s);
        const auto t = oracle::random_tensor({6}, 50 + s, 0.0f, 0.7f);
        const auto once = compute_prune_mask(w, t);
        const auto twice = compute_prune_mask(masked_weight_value(w, once), t);
        CHECK(once == twice);
    }
}

TEST_CASE("raising thresholds never lowers sparsity", "[sparse][property]") {
    Rng rng(3);
    auto net = make_mlp({8}, {6}, 4, rng);
    double prev = -1.0;
    for (float level : {-1.0f, 0.0f, 0.1f, 0.3f, 0.6f, 1.0f, 5.0f}) {
        for_each_masked(net, [&](auto& l) {
            l.threshold.fill(level);
            l.prune_mask = compute_prune_mask(l.weight, l.threshold);
        });
        const double s = sparsity(net);
        CHECK(s >= prev);
        prev = s;
    }
    CHECK(prev == 1.0);
}

TEST_CASE("sparse_regularizer", "[sparse][regularizer]") {
    CHECK(sparse_regularizer(std::vector<Tensor>{Tensor(Shape{2})}) == 2.0);
    CHECK_THAT(sparse_regularizer(std::vector<Tensor>{Tensor::from({1}, {std::log(2.0f)})}), WithinAbs(0.5, 1e-7));

    std::vector<Tensor> layers{oracle::random_tensor({5}, 1, -2, 2), oracle::random_tensor({3}, 2, -2, 2),
                               oracle::random_tensor({9}, 3, -2, 2)};
    long double expect = 0;
    for (const auto& t : layers)
        for (float v : t.data()) expect += std::exp(-static_cast<long double>(v));
    CHECK_THAT(sparse_regularizer(layers), WithinAbs(static_cast<double>(expect), 1e-6));

    SECTION("strictly decreasing in every threshold") {
        for (std::size_t k = 0; k < layers[0].size(); ++k) {
            auto up = layers;
            up[0][k] += 1e-2f;
            CHECK(sparse_regularizer(up) < sparse_regularizer(layers));
        }
    }
}

TEST_CASE("ste_backward", "[sparse][ste]") {
    SECTION("far above the threshold the gradient is the plain one") {
        const auto w = Tensor::from({1, 2}, {3.0f, -2.5f});
        const auto g = ste_backward(Tensor::from({1, 2}, {0.7f, -0.2f}), w, Tensor::from({1}, {0.5f}));
        CHECK(g.weight == Tensor::from({1, 2}, {0.7f, -0.2f}));
        CHECK(g.threshold[0] == 0.0f);
    }
    SECTION("alpha 0 and thresholds far below every weight give no threshold gradient") {
        const auto w = oracle::random_tensor({4, 3}, 5);
        const auto g = ste_backward(oracle::random_tensor({4, 3}, 6), w, Tensor(Shape{4}, -10.0f), 0.0f);
        CHECK(g.threshold == Tensor(Shape{4}, 0.0f));
    }
    SECTION("surrogate shape") {
        CHECK(step_surrogate(0.0f) == 2.0f);
        CHECK_THAT(step_surrogate(0.2f), WithinAbs(1.2, 1e-6));
        CHECK_THAT(step_surrogate(-0.4f), WithinAbs(0.4, 1e-6));
        CHECK(step_surrogate(0.7f) == 0.4f);
        CHECK(step_surrogate(-1.0f) == 0.4f);
        CHECK(step_surrogate(1.01f) == 0.0f);
    }
    SECTION("hand-computed entry inside the surrogate band") {
        // |w| - t = 0.1, H = 1.6
        const auto g = ste_backward(Tensor::from({1, 1}, {0.5f}), Tensor::from({1, 1}, {-0.3f}), Tensor::from({1}, {0.2f}));
        CHECK_THAT(g.weight[0], WithinAbs(0.5 * (1 + 0.3 * 1.6), 1e-6));
        CHECK_THAT(g.threshold[0], WithinAbs(-0.5 * -0.3 * 1.6, 1e-6));
    }
    SECTION("regularizer-only threshold gradient matches finite differences") {
        const float alpha = 0.3f;
        const auto t = oracle::random_tensor({6}, 7, -1, 1);
        const auto w = oracle::random_tensor({6, 2}, 8);
        const auto g = ste_backward(Tensor(Shape{6, 2}), w, t, alpha);
        for (std::size_t i = 0; i < 6; ++i) {
            const double h = 1e-3;
            const double up = alpha * std::exp(-(static_cast<double>(t[i]) + h));
            const double down = alpha * std::exp(-(static_cast<double>(t[i]) - h));
            CHECK_THAT(g.threshold[i], WithinAbs((up - down) / (2 * h), 1e-4));
            CHECK_THAT(g.threshold[i], WithinAbs(-alpha * std::exp(-static_cast<double>(t[i])), 1e-6));
        }
    }
    SECTION("tape gradient of the regularizer term matches finite differences") {
        const auto t0 = oracle::random_tensor({5}, 9, -1, 1);
        const float alpha = 0.05f;
        GradTape tape;
        Var t = tape.leaf(t0);
        tape.backward(ops::scale(tape, ops::sum_exp_neg(tape, t), alpha));
        const auto numeric = oracle::numeric_gradient(
            [&](const Tensor& p) { return alpha * sparse_regularizer(std::vector<Tensor>{p}); }, t0);
        CHECK(oracle::max_relative_error(tape.gradient(t), numeric) < 1e-2);
        for (std::size_t i = 0; i < 5; ++i)
            CHECK_THAT(tape.gradient(t)[i], WithinAbs(-alpha * std::exp(-static_cast<double>(t0[i])), 1e-6));
    }
}

TEST_CASE("apply_freeze", "[sparse][freeze]") {
    const auto g = oracle::random_tensor({4, 5}, 1);
    CHECK(apply_freeze(g, Mask(20, 1)) == Tensor(Shape{4, 5}, 0.0f));
    CHECK(apply_freeze(g, Mask(20, 0)) == g);
    std::mt19937 gen(2);
    const auto m = random_mask(20, gen);
    const auto out = apply_freeze(g, m);
    for (std::size_t k = 0; k < 20; ++k) CHECK(out[k] == g[k] * static_cast<float>(1 - m[k]));
    CHECK_THROWS_AS(apply_freeze(g, Mask(19, 0)), ShapeError);
}

TEST_CASE("update_freeze_mask", "[sparse][freeze]") {
    CHECK(update_freeze_mask(Mask{0}, Mask{1}) == Mask{1});
    CHECK(update_freeze_mask(Mask{1}, Mask{0}) == Mask{1});
    CHECK(update_freeze_mask(Mask{0}, Mask{0}) == Mask{0});
    CHECK(update_freeze_mask(Mask{1}, Mask{1}) == Mask{1});
    CHECK_THROWS_AS(update_freeze_mask(Mask{2}, Mask{0}), InputError);
    CHECK_THROWS_AS(update_freeze_mask(Mask{0, 1}, Mask{0}), ShapeError);
}

TEST_CASE("train_step degenerate cases", "[sparse][train]") {
    auto toy = toy_problem(1);
    const std::span<const int> labels(toy.y);

    SECTION("lr=0 leaves every parameter unchanged but reports the loss") {
        const auto before = toy.net;
        SgdState sgd;
        TrainOptions opt;
        opt.lr = 0.0f;
        opt.alpha = 0.01f;
        const auto loss = train_step(toy.net, toy.x, labels, opt, FreezeState{}, sgd);
        CHECK(loss.task_loss > 0.0);
        CHECK_THAT(loss.total, WithinAbs(loss.task_loss + static_cast<double>(0.01f) * loss.reg_loss, 1e-9));
        for (std::size_t i = 0; i < before.layers.size(); ++i) {
            if (const auto* d = std::get_if<GrowableDense>(&before.layers[i])) {
                const auto& n = std::get<GrowableDense>(toy.net.layers[i]);
                CHECK(n.weight == d->weight);
                CHECK(n.bias == d->bias);
                CHECK(n.threshold == d->threshold);
            }
        }
    }
    SECTION("fully frozen weights stay put while thresholds move") {
        for_each_masked(toy.net, [](auto& l) {
            std::fill(l.freeze_mask.begin(), l.freeze_mask.end(), std::uint8_t{1});
            std::fill(l.bias_freeze.begin(), l.bias_freeze.end(), std::uint8_t{1});
        });
        const auto before = toy.net;
        SgdState sgd;
        TrainOptions opt;
        opt.lr = 0.1f;
        opt.alpha = 0.0f;
        for (int i = 0; i < 5; ++i) train_step(toy.net, toy.x, labels, opt, FreezeState{1, true}, sgd);
        bool moved = false;
        for (std::size_t i = 0; i < before.layers.size(); ++i) {
            if (const auto* d = std::get_if<GrowableDense>(&before.layers[i])) {
                const auto& n = std::get<GrowableDense>(toy.net.layers[i]);
                CHECK(n.weight == d->weight);
                CHECK(n.bias == d->bias);
                moved = moved || !(n.threshold == d->threshold);
            }
        }
        CHECK(moved);
    }
    SECTION("label count mismatch") {
        SgdState sgd;
        std::vector<int> short_labels(toy.y.begin(), toy.y.end() - 1);
        CHECK_THROWS_AS(train_step(toy.net, toy.x, short_labels, TrainOptions{}, FreezeState{}, sgd), ShapeError);
    }
}

TEST_CASE("train_step matches a scalar oracle on a toy layer", "[sparse][train]") {
    // One input feeding two logits: W is [2 x 1], b is [2], t is [2].
    const double w0 = 0.6, w1 = -0.35, b0 = 0.1, b1 = -0.2, t0 = 0.3, t1 = 0.05, x = 0.8;
    const double lr = 0.5, alpha = 0.2;
    NetworkSpec net;
    net.input_shape = {1};
    auto d = GrowableDense::zeros(1, 2);
    d.weight = Tensor::from({2, 1}, {static_cast<float>(w0), static_cast<float>(w1)});
    d.bias = Tensor::from({2}, {static_cast<float>(b0), static_cast<float>(b1)});
    d.threshold = Tensor::from({2}, {static_cast<float>(t0), static_cast<float>(t1)});
    net.layers.emplace_back(d);
    SgdState sgd;
    TrainOptions opt;
    opt.lr = static_cast<float>(lr);
    opt.alpha = static_cast<float>(alpha);
    const std::vector<int> label{0};
    const auto loss = train_step(net, Tensor::from({1, 1}, {static_cast<float>(x)}), label, opt, FreezeState{}, sgd);

    auto H = [](double v) {
        const double a = std::fabs(v);
        return a <= 0.4 ? 2 - 4 * a : (a <= 1 ? 0.4 : 0.0);
    };
    const double z0 = w0 * x + b0, z1 = w1 * x + b1; // both weights active
    const double p0 = std::exp(z0) / (std::exp(z0) + std::exp(z1)), p1 = 1 - p0;
    const double dz0 = p0 - 1, dz1 = p1;
    const double g0 = dz0 * x, g1 = dz1 * x;
    const double h0 = H(std::fabs(w0) - t0), h1 = H(std::fabs(w1) - t1);
    const double nw0 = w0 - lr * g0 * (1 + std::fabs(w0) * h0);
    const double nw1 = w1 - lr * g1 * (1 + std::fabs(w1) * h1);
    const double nt0 = t0 - lr * (-g0 * w0 * h0 - alpha * std::exp(-t0));
    const double nt1 = t1 - lr * (-g1 * w1 * h1 - alpha * std::exp(-t1));

    const auto& out = std::get<GrowableDense>(net.layers[0]);
    CHECK_THAT(loss.task_loss, WithinAbs(-std::log(p0), 1e-6));
    CHECK_THAT(loss.reg_loss, WithinAbs(std::exp(-t0) + std::exp(-t1), 1e-6));
    CHECK_THAT(out.weight[0], WithinAbs(nw0, 1e-6));
    CHECK_THAT(out.weight[1], WithinAbs(nw1, 1e-6));
    CHECK_THAT(out.bias[0], WithinAbs(b0 - lr * dz0, 1e-6));
    CHECK_THAT(out.bias[1], WithinAbs(b1 - lr * dz1, 1e-6));
    CHECK_THAT(out.threshold[0], WithinAbs(nt0, 1e-6));
    CHECK_THAT(out.threshold[1], WithinAbs(nt1, 1e-6));
}

TEST_CASE("sparsity counts pruned entries", "[sparse]") {
    Rng rng(4);
    auto net = make_mlp({5}, {4}, 3, rng);
    CHECK(sparsity(net) == 0.0);
    for_each_masked(net, [](auto& l) { std::fill(l.prune_mask.begin(), l.prune_mask.end(), std::uint8_t{0}); });
    CHECK(sparsity(net) == 1.0);
    std::mt19937 gen(5);
    std::size_t zeros = 0, total = 0;
    for_each_masked(net, [&](auto& l) {
        l.prune_mask = random_mask(l.prune_mask.size(), gen);
        for (auto v : l.prune_mask) zeros += v == 0;
        total += l.prune_mask.size();
    });
    CHECK(sparsity(net) == static_cast<double>(zeros) / static_cast<double>(total));
}

TEST_CASE("frozen entries are bit-identical across 100 steps", "[sparse][freeze][property]") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        auto toy = toy_problem(10 + seed);
        std::mt19937 gen(static_cast<std::uint32_t>(seed));
        for_each_masked(toy.net, [&](auto& l) {
            l.freeze_mask = random_mask(l.freeze_mask.size(), gen);
            l.bias_freeze = random_mask(l.bias_freeze.size(), gen);
        });
        const auto before = toy.net;
        SgdState sgd;
        TrainOptions opt;
        opt.lr = 0.1f;
        opt.momentum = 0.5f;
        opt.alpha = 0.05f;
        for (int step = 0; step < 100; ++step) train_step(toy.net, toy.x, toy.y, opt, FreezeState{1, true}, sgd);
        std::size_t checked = 0;
        for (std::size_t i = 0; i < before.layers.size(); ++i) {
            const auto* d = std::get_if<GrowableDense>(&before.layers[i]);
            if (!d) continue;
            const auto& n = std::get<GrowableDense>(toy.net.layers[i]);
            for (std::size_t k = 0; k < d->weight.size(); ++k)
                if (d->freeze_mask[k]) {
                    REQUIRE(std::bit_cast<std::uint32_t>(n.weight[k]) == std::bit_cast<std::uint32_t>(d->weight[k]));
                    ++checked;
                }
            for (std::size_t k = 0; k < d->bias.size(); ++k)
                if (d->bias_freeze[k]) REQUIRE(std::bit_cast<std::uint32_t>(n.bias[k]) == std::bit_cast<std::uint32_t>(d->bias[k]));
        }
        CHECK(checked > 0);
    }
}

TEST_CASE("freeze masks are monotone over dataset boundaries", "[sparse][freeze][property]") {
    auto toy = toy_problem(20);
    FreezeState state;
    SgdState sgd;
    TrainOptions opt;
    opt.lr = 0.1f;
    opt.alpha = 0.05f;
    std::vector<Mask> prev;
    for (int boundary = 0; boundary < 5; ++boundary) {
        reset_thresholds(toy.net);
        state.active = boundary > 0;
        for (int step = 0; step < 20; ++step) train_step(toy.net, toy.x, toy.y, opt, state, sgd);
        refresh_masks(toy.net);
        update_network_freeze(toy.net, state);
        std::vector<Mask> now;
        for_each_masked(toy.net, [&](const auto& l) { now.push_back(l.freeze_mask); });
        for (std::size_t l = 0; l < prev.size(); ++l)
            for (std::size_t k = 0; k < prev[l].size(); ++k)
                if (prev[l][k]) REQUIRE(now[l][k] == 1);
        prev = now;
    }
    CHECK(state.generation == 5);
}

TEST_CASE("bias and batch-norm freezing follow their rows", "[sparse][freeze]") {
    Rng rng(6);
    auto net = make_cnn({1, 4, 4}, {2}, {}, 3, true, rng);
    auto& conv = std::get<GrowableConv2d>(net.layers[0]);
    std::fill(conv.prune_mask.begin(), conv.prune_mask.end(), std::uint8_t{0});
    conv.prune_mask[9] = 1; // one weight of filter 1
    FreezeState state;
    update_network_freeze(net, state);
    CHECK(conv.bias_freeze == Mask{0, 1});
    CHECK(std::get<GrowableBatchNorm>(net.layers[1]).freeze == Mask{0, 1});
}

TEST_CASE("large alpha prunes more than alpha 0", "[sparse][property]") {
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        double s[2];
        for (int k = 0; k < 2; ++k) {
            auto toy = toy_problem(30 + seed);
            SgdState sgd;
            TrainOptions opt;
            opt.lr = 0.1f;
            opt.alpha = k == 0 ? 0.0f : 0.5f;
            for (int step = 0; step < 50; ++step) train_step(toy.net, toy.x, toy.y, opt, FreezeState{}, sgd);
            refresh_masks(toy.net);
            s[k] = sparsity(toy.net);
        }
        wins += s[1] > s[0];
    }
    CHECK(wins == 3);
}

TEST_CASE("reset_thresholds", "[sparse][reset]") {
    auto toy = toy_problem(40);
    SgdState sgd;
    TrainOptions opt;
    opt.alpha = 0.1f;
    for (int i = 0; i < 10; ++i) train_step(toy.net, toy.x, toy.y, opt, FreezeState{}, sgd);
    bool nonzero = false;
    for_each_masked(toy.net, [&](const auto& l) {
        for (float v : l.threshold.data()) nonzero = nonzero || v != 0.0f;
    });
    REQUIRE(nonzero);
    // Zero a few weights so that the S(0) = 0 convention is visible.
    auto& first = std::get<GrowableDense>(toy.net.layers[0]);
    first.weight[0] = first.weight[3] = 0.0f;
    reset_thresholds(toy.net);
    const auto once = toy.net;
    reset_thresholds(toy.net);
    std::size_t zeros = 0, total = 0;
    for_each_masked(toy.net, [&](const auto& l) {
        CHECK(l.threshold == Tensor(l.threshold.shape(), 0.0f));
        for (float v : l.weight.data()) zeros += v == 0.0f;
        total += l.weight.size();
    });
    CHECK(sparsity(toy.net) == static_cast<double>(zeros) / static_cast<double>(total));
    CHECK(zeros >= 2);
    for (std::size_t i = 0; i < once.layers.size(); ++i)
        if (const auto* d = std::get_if<GrowableDense>(&once.layers[i]))
            CHECK(d->prune_mask == std::get<GrowableDense>(toy.net.layers[i]).prune_mask);
}
