// Copyright (c) 2026 growlearn authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <bit>
#include <filesystem>
#include <random>

#include "growlearn/checkpoint.hpp"
#include "oracles.hpp"

using namespace growlearn;

namespace {

void scramble(NetworkSpec& net, std::uint32_t seed) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    for_each_masked(net, [&](auto& l) {
        for (auto& v : l.weight.storage()) v = u(gen);
        for (auto& v : l.bias.storage()) v = u(gen);
        for (auto& v : l.threshold.storage()) v = u(gen);
        for (auto& m : l.prune_mask) m = static_cast<std::uint8_t>(gen() & 1);
        for (auto& m : l.freeze_mask) m = static_cast<std::uint8_t>(gen() & 1);
        for (auto& m : l.bias_freeze) m = static_cast<std::uint8_t>(gen() & 1);
    });
    for_each_norm(net, [&](GrowableBatchNorm& b) {
        for (auto& v : b.gamma.storage()) v = u(gen);
        for (auto& v : b.beta.storage()) v = u(gen);
        for (auto& v : b.stats.mean) v = u(gen);
        for (auto& v : b.stats.var) v = 1.0f + u(gen) * 0.5f;
        for (auto& m : b.freeze) m = static_cast<std::uint8_t>(gen() & 1);
    });
    // A signalling bit pattern and a negative zero must survive untouched.
    auto& first = std::get<GrowableDense>(net.layers[masked_layer_indices(net).back()]);
    first.weight[0] = -0.0f;
    first.weight[1] = std::bit_cast<float>(0x7f800001u);
}

bool bits_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
    return true;
}

void require_identical(const NetworkSpec& a, const NetworkSpec& b) {
    REQUIRE(a.layers.size() == b.layers.size());
    REQUIRE(a.laterals.size() == b.laterals.size());
    CHECK(a.input_shape == b.input_shape);
    CHECK(a.fixed_output == b.fixed_output);
    std::vector<const GrowableDense*> da, db;
    std::vector<const GrowableConv2d*> ca, cb;
    for_each_masked(a, [&](const auto& l) {
        if constexpr (std::is_same_v<std::decay_t<decltype(l)>, GrowableDense>) da.push_back(&l);
        else ca.push_back(&l);
    });
    for_each_masked(b, [&](const auto& l) {
        if constexpr (std::is_same_v<std::decay_t<decltype(l)>, GrowableDense>) db.push_back(&l);
        else cb.push_back(&l);
    });
    REQUIRE(da.size() == db.size());
    REQUIRE(ca.size() == cb.size());
    auto same = [](const auto& x, const auto& y) {
        CHECK(bits_equal(x.weight, y.weight));
        CHECK(bits_equal(x.bias, y.bias));
        CHECK(bits_equal(x.threshold, y.threshold));
        CHECK(x.prune_mask == y.prune_mask);
        CHECK(x.freeze_mask == y.freeze_mask);
        CHECK(x.bias_freeze == y.bias_freeze);
    };
    for (std::size_t i = 0; i < da.size(); ++i) same(*da[i], *db[i]);
    for (std::size_t i = 0; i < ca.size(); ++i) {
        same(*ca[i], *cb[i]);
        CHECK(ca[i]->stride == cb[i]->stride);
        CHECK(ca[i]->pad == cb[i]->pad);
    }
    std::vector<const GrowableBatchNorm*> na, nb;
    for_each_norm(a, [&](const GrowableBatchNorm& x) { na.push_back(&x); });
    for_each_norm(b, [&](const GrowableBatchNorm& x) { nb.push_back(&x); });
    REQUIRE(na.size() == nb.size());
    for (std::size_t i = 0; i < na.size(); ++i) {
        CHECK(bits_equal(na[i]->gamma, nb[i]->gamma));
        CHECK(bits_equal(na[i]->beta, nb[i]->beta));
        CHECK(na[i]->stats.mean == nb[i]->stats.mean);
        CHECK(na[i]->stats.var == nb[i]->stats.var);
        CHECK(na[i]->freeze == nb[i]->freeze);
    }
}

std::vector<NetworkSpec> sample_networks() {
    Rng rng(3);
    std::vector<NetworkSpec> nets;
    nets.push_back(make_mlp({1, 5, 5}, {7, 4}, 3, rng));
    nets.push_back(make_cnn({2, 8, 8}, {3, 4}, {5}, 3, true, rng));
    nets.push_back(grow_lateral(make_mlp({6}, {5, 5}, 2, rng), 3, rng));
    nets.push_back(expand_model(make_cnn({1, 6, 6}, {2}, {}, 4, true, rng), 2));
    for (std::size_t i = 0; i < nets.size(); ++i) scramble(nets[i], static_cast<std::uint32_t>(i));
    return nets;
}

} // namespace

TEST_CASE("checkpoint round trip is bit-exact", "[checkpoint]") {
    for (const auto& net : sample_networks()) {
        const nlohmann::json meta{{"dataset", 2}, {"strategy", "sparsegrow"}};
        const auto bytes = encode_checkpoint(net, meta);
        const auto ck = decode_checkpoint(bytes);
        require_identical(net, ck.net);
        CHECK(ck.manifest.at("meta") == meta);
        CHECK(encode_checkpoint(ck.net, meta) == bytes);
    }
}

TEST_CASE("checkpoint files on disk", "[checkpoint]") {
    const auto net = sample_networks()[1];
    const auto path = std::filesystem::temp_directory_path() / "growlearn-ck-test.glck";
    save_checkpoint(net, path);
    const auto ck = load_checkpoint(path);
    require_identical(net, ck.net);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path), InputError);
}

TEST_CASE("manifest describes layers in order", "[checkpoint]") {
    const auto net = sample_networks()[1];
    const auto m = checkpoint_manifest(net);
    REQUIRE(m.at("layers").size() == net.layers.size());
    CHECK(m.at("layers")[0].at("type") == "conv2d");
    CHECK(m.at("layers")[0].at("dims") == nlohmann::json::array({3, 2, 3, 3}));
    CHECK(m.at("layers")[1].at("type") == "batchnorm");
    CHECK(m.at("input_shape") == nlohmann::json::array({2, 8, 8}));
}

TEST_CASE("corrupt checkpoints are rejected", "[checkpoint][errors]") {
    const auto net = sample_networks()[0];
    const auto bytes = encode_checkpoint(net);

    SECTION("every truncation") {
        for (std::size_t n = 0; n < bytes.size(); n += 1 + n / 16) {
            CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, n)), FormatError);
        }
        CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), FormatError);
    }
    SECTION("trailing bytes") { CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), FormatError); }
    SECTION("bad magic") {
        auto bad = bytes;
        bad[0] = 'X';
        CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
    }
    SECTION("unsupported version") {
        auto bad = bytes;
        bad[4] = 9;
        CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
    }
    SECTION("flipped payload bits") {
        std::mt19937 gen(5);
        for (int trial = 0; trial < 30; ++trial) {
            auto bad = bytes;
            const std::size_t pos = bytes.size() - 1 - gen() % 400;
            bad[pos] = static_cast<char>(bad[pos] ^ (1 << (gen() % 8)));
            CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
        }
    }
    SECTION("damaged manifest") {
        auto bad = bytes;
        bad[17] = '#';
        CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
    }
    SECTION("empty input") { CHECK_THROWS_AS(decode_checkpoint(""), FormatError); }
}
