// Copyright (c) 2026 growlearn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "growlearn/error.hpp"
#include "growlearn/network.hpp"

namespace growlearn {

// Checkpoint layout:
//   "GLCK" | u32 version | u64 manifest length | manifest (JSON) | payload
// Integers are little-endian. The payload holds, for each weight layer in
// manifest order (layers first, then lateral hidden/connector pairs):
//   W, b, t as f32; prune mask, freeze mask, bias freeze as u8
// and for each batch-norm layer: gamma, beta, running mean, running var as
// f32 followed by its freeze mask as u8.

inline constexpr char kCheckpointMagic[4] = {'G', 'L', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
    void f32(std::span<const float> xs) {
        for (float x : xs) u32(std::bit_cast<std::uint32_t>(x));
    }
    void u8(std::span<const std::uint8_t> xs) { bytes_.insert(bytes_.end(), xs.begin(), xs.end()); }
    void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
    std::string take() { return std::move(bytes_); }
    [[nodiscard]] std::size_t size() const { return bytes_.size(); }

private:
    std::string bytes_;
};

class ByteReader {
public:
    ByteReader(const std::string& b, std::size_t pos) : b_(b), pos_(pos) {}

    void need(std::size_t n) const {
        if (b_.size() - pos_ < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    void f32(std::span<float> out) {
        need(out.size() * 4);
        for (auto& x : out) x = std::bit_cast<float>(u32());
    }
    void u8(std::span<std::uint8_t> out, bool binary) {
        need(out.size());
        for (auto& x : out) {
            x = static_cast<std::uint8_t>(b_[pos_++]);
            if (binary && x > 1) throw FormatError("checkpoint mask entry is not binary");
        }
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    [[nodiscard]] std::size_t pos() const { return pos_; }
    [[nodiscard]] std::size_t remaining() const { return b_.size() - pos_; }

private:
    const std::string& b_;
    std::size_t pos_;
};

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <MaskedLayer L>
void write_masked(ByteWriter& w, const L& l) {
    w.f32(l.weight.data());
    w.f32(l.bias.data());
    w.f32(l.threshold.data());
    w.u8(l.prune_mask);
    w.u8(l.freeze_mask);
    w.u8(l.bias_freeze);
}

template <MaskedLayer L>
void read_masked(ByteReader& r, L& l) {
    r.f32(l.weight.data());
    r.f32(l.bias.data());
    r.f32(l.threshold.data());
    r.u8(l.prune_mask, true);
    r.u8(l.freeze_mask, true);
    r.u8(l.bias_freeze, true);
}

inline std::vector<std::size_t> dims_of(const nlohmann::json& j, std::size_t rank, const std::string& what) {
    if (!j.contains("dims") || !j["dims"].is_array() || j["dims"].size() != rank)
        throw FormatError("checkpoint: " + what + " needs " + std::to_string(rank) + " dims");
    std::vector<std::size_t> d;
    for (const auto& v : j["dims"]) {
        if (!v.is_number_unsigned() || v.get<std::size_t>() == 0) throw FormatError("checkpoint: bad dimension in " + what);
        d.push_back(v.get<std::size_t>());
    }
    return d;
}

inline GrowableDense dense_from(const nlohmann::json& j, const std::string& what) {
    const auto d = dims_of(j, 2, what);
    return GrowableDense::zeros(d[1], d[0]);
}

} // namespace detail

/// JSON description of the layer graph, without parameter values.
inline nlohmann::json checkpoint_manifest(const NetworkSpec& net) {
    using nlohmann::json;
    json layers = json::array();
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const Layer& l = net.layers[i];
        json e{{"name", "layer" + std::to_string(i)}, {"type", layer_kind(l)}};
        if (const auto* d = std::get_if<GrowableDense>(&l)) {
            e["dims"] = {d->out_features(), d->in_features()};
        } else if (const auto* c = std::get_if<GrowableConv2d>(&l)) {
            e["dims"] = {c->out_channels(), c->in_channels(), c->kernel(), c->kernel()};
            e["stride"] = c->stride;
            e["pad"] = c->pad;
        } else if (const auto* n = std::get_if<GrowableBatchNorm>(&l)) {
            e["dims"] = {n->channels()};
        } else if (const auto* p = std::get_if<Pool2d>(&l)) {
            e["window"] = p->window;
        }
        layers.push_back(std::move(e));
    }
    json laterals = json::array();
    for (const auto& b : net.laterals) {
        laterals.push_back({{"source", b.source},
                            {"target", b.target},
                            {"hidden", {{"dims", {b.hidden.out_features(), b.hidden.in_features()}}}},
                            {"connector", {{"dims", {b.connector.out_features(), b.connector.in_features()}}}}});
    }
    return json{{"input_shape", net.input_shape},
                {"fixed_output", net.fixed_output},
                {"skip_groups", net.skip_groups},
                {"layers", std::move(layers)},
                {"laterals", std::move(laterals)}};
}

/// Serializes the network (and optional free-form metadata) to bytes.
inline std::string encode_checkpoint(const NetworkSpec& net, const nlohmann::json& meta = nlohmann::json::object()) {
    validate(net);
    detail::ByteWriter payload;
    for_each_masked(net, [&](const auto& l) { detail::write_masked(payload, l); });
    for_each_norm(net, [&](const GrowableBatchNorm& b) {
        payload.f32(b.gamma.data());
        payload.f32(b.beta.data());
        payload.f32(b.stats.mean);
        payload.f32(b.stats.var);
        payload.u8(b.freeze);
    });
    std::string body = payload.take();
    nlohmann::json manifest = checkpoint_manifest(net);
    manifest["payload_bytes"] = body.size();
    manifest["payload_fnv1a"] = detail::fnv1a(body);
    manifest["meta"] = meta;
    const std::string text = manifest.dump();

    detail::ByteWriter out;
    out.raw(std::string(kCheckpointMagic, 4));
    out.u32(kCheckpointVersion);
    out.u64(text.size());
    out.raw(text);
    out.raw(body);
    return out.take();
}

struct Checkpoint {
    NetworkSpec net;
    nlohmann::json manifest;
};

/// Inverse of encode_checkpoint. Any corruption raises FormatError.
inline Checkpoint decode_checkpoint(const std::string& bytes) {
    using nlohmann::json;
    detail::ByteReader r(bytes, 0);
    if (r.str(4) != std::string(kCheckpointMagic, 4)) throw FormatError("not a growlearn checkpoint (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const std::uint64_t mlen = r.u64();
    if (mlen > r.remaining()) throw FormatError("checkpoint truncated inside manifest");
    json m;
    try {
        m = json::parse(r.str(static_cast<std::size_t>(mlen)));
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
    }

    Checkpoint ck;
    try {
        const std::uint64_t pbytes = m.at("payload_bytes").get<std::uint64_t>();
        if (r.remaining() != pbytes)
            throw FormatError("checkpoint payload is " + std::to_string(r.remaining()) + " bytes, manifest says " +
                              std::to_string(pbytes));
        if (detail::fnv1a(std::string_view(bytes).substr(r.pos())) != m.at("payload_fnv1a").get<std::uint64_t>())
            throw FormatError("checkpoint payload checksum mismatch");

        NetworkSpec& net = ck.net;
        net.input_shape = m.at("input_shape").get<Shape>();
        net.fixed_output = m.at("fixed_output").get<bool>();
        net.skip_groups = m.at("skip_groups").get<std::vector<std::vector<std::size_t>>>();
        for (const auto& e : m.at("layers")) {
            const std::string type = e.at("type").get<std::string>();
            const std::string name = e.value("name", type);
            if (type == "dense") {
                net.layers.emplace_back(detail::dense_from(e, name));
            } else if (type == "conv2d") {
                const auto d = detail::dims_of(e, 4, name);
                if (d[2] != d[3]) throw FormatError("checkpoint: non-square kernel in " + name);
                net.layers.emplace_back(GrowableConv2d::zeros(d[1], d[0], d[2], e.at("stride").get<std::size_t>(),
                                                              e.at("pad").get<std::size_t>()));
            } else if (type == "batchnorm") {
                net.layers.emplace_back(GrowableBatchNorm::identity(detail::dims_of(e, 1, name)[0]));
            } else if (type == "relu") {
                net.layers.emplace_back(Relu{});
            } else if (type == "maxpool" || type == "avgpool") {
                net.layers.emplace_back(
                    Pool2d{e.at("window").get<std::size_t>(), type == "maxpool" ? ops::PoolKind::max : ops::PoolKind::average});
            } else if (type == "flatten") {
                net.layers.emplace_back(Flatten{});
            } else {
                throw FormatError("checkpoint: unknown layer type '" + type + "'");
            }
        }
        for (const auto& e : m.at("laterals")) {
            LateralBranch b;
            b.source = e.at("source").get<std::size_t>();
            b.target = e.at("target").get<std::size_t>();
            b.hidden = detail::dense_from(e.at("hidden"), "lateral hidden");
            b.connector = detail::dense_from(e.at("connector"), "lateral connector");
            net.laterals.push_back(std::move(b));
        }

        for_each_masked(net, [&](auto& l) { detail::read_masked(r, l); });
        for_each_norm(net, [&](GrowableBatchNorm& b) {
            r.f32(b.gamma.data());
            r.f32(b.beta.data());
            r.f32(b.stats.mean);
            r.f32(b.stats.var);
            r.u8(b.freeze, true);
        });
        if (r.remaining() != 0) throw FormatError("checkpoint has trailing bytes");
        validate(net);
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint manifest malformed: ") + e.what());
    } catch (const StructuralError& e) {
        throw FormatError(std::string("checkpoint describes an invalid network: ") + e.what());
    } catch (const ShapeError& e) {
        throw FormatError(std::string("checkpoint describes an invalid network: ") + e.what());
    }
    ck.manifest = std::move(m);
    return ck;
}

inline void save_checkpoint(const NetworkSpec& net, const std::filesystem::path& path,
                            const nlohmann::json& meta = nlohmann::json::object()) {
    const std::string bytes = encode_checkpoint(net, meta);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open " + path.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("failed writing " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open checkpoint " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

} // namespace growlearn
