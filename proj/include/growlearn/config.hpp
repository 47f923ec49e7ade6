// Copyright (c) 2026 growlearn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "growlearn/data.hpp"
#include "growlearn/error.hpp"
#include "growlearn/network.hpp"
#include "growlearn/ops.hpp"
#include "growlearn/rng.hpp"

namespace growlearn {

enum class Strategy { sparsegrow, layerexp, latconn, idgrow, nogrow };
enum class InitPolicy { zero, random, random_ondata };

inline const char* to_string(Strategy s) {
    switch (s) {
    case Strategy::sparsegrow: return "sparsegrow";
    case Strategy::layerexp: return "layerexp";
    case Strategy::latconn: return "latconn";
    case Strategy::idgrow: return "idgrow";
    case Strategy::nogrow: return "nogrow";
    }
    return "?";
}

inline const char* to_string(InitPolicy p) {
    switch (p) {
    case InitPolicy::zero: return "zero";
    case InitPolicy::random: return "random";
    case InitPolicy::random_ondata: return "random+ondata";
    }
    return "?";
}

inline Strategy parse_strategy(const std::string& s) {
    for (Strategy v : {Strategy::sparsegrow, Strategy::layerexp, Strategy::latconn, Strategy::idgrow, Strategy::nogrow})
        if (s == to_string(v)) return v;
    throw ConfigError("strategy: unknown value '" + s + "' (expected sparsegrow, layerexp, latconn, idgrow or nogrow)");
}

inline InitPolicy parse_init_policy(const std::string& s) {
    for (InitPolicy v : {InitPolicy::zero, InitPolicy::random, InitPolicy::random_ondata})
        if (s == to_string(v)) return v;
    throw ConfigError("init_policy: unknown value '" + s + "' (expected zero, random or random+ondata)");
}

struct ArchitectureConfig {
    std::string type = "mlp"; // "mlp" or "cnn"
    std::vector<std::size_t> hidden{64, 64};
    std::vector<std::size_t> conv_channels{8, 16};
    std::vector<std::size_t> dense_hidden{32};
    bool batchnorm = true;
};

struct DataConfig {
    std::string source = "synthetic"; // "synthetic" or "idx"
    std::string path;                 // IDX directory; empty means $GROWLEARN_DATA_DIR
    std::string stream = "permuted";  // "permuted" or "class_incremental"
    std::size_t tasks = 3;
    std::vector<std::vector<int>> groups;
    std::size_t train_per_task = 2000;
    std::size_t test_per_task = 500;
    std::optional<std::uint64_t> seed; // defaults to the run seed
    SyntheticOptions synthetic;
};

struct ScheduleConfig {
    std::vector<std::size_t> expand_on; // 1-based dataset numbers
    std::size_t exp = 16;
    double final_fraction = 0.2;
};

struct TrainingConfig {
    std::size_t epochs = 5;
    double lr = 0.05;
    double momentum = 0.0;
    double alpha = 1e-5;
    std::size_t batch_size = 32;
    double bn_eps = kBatchNormEps;
    double bn_momentum = kBatchNormMomentum;
};

struct RunConfig {
    ArchitectureConfig architecture;
    DataConfig data;
    Strategy strategy = Strategy::sparsegrow;
    ScheduleConfig schedule;
    TrainingConfig training;
    std::uint64_t seed = 5;
    // Unset values are filled from the strategy by resolve().
    std::optional<InitPolicy> init_policy;
    std::optional<bool> freeze;
    std::optional<bool> sparse;

    [[nodiscard]] std::uint64_t data_seed() const { return data.seed.value_or(seed); }
    [[nodiscard]] InitPolicy policy() const { return init_policy.value_or(InitPolicy::random); }
    [[nodiscard]] bool freeze_enabled() const { return freeze.value_or(false); }
    [[nodiscard]] bool sparse_enabled() const { return sparse.value_or(false); }
};

/// Strategy defaults: SparseGrow trains sparse with freezing and on-data
/// initialization; the growth baselines are plain SGD with random init.
inline RunConfig resolve(RunConfig c) {
    const bool sg = c.strategy == Strategy::sparsegrow;
    if (!c.init_policy) c.init_policy = sg ? InitPolicy::random_ondata : InitPolicy::random;
    if (!c.freeze) c.freeze = sg;
    if (!c.sparse) c.sparse = sg;
    return c;
}

// ---------------------------------------------------------------------------
// JSON parsing. Every object is read through a cursor that remembers which
// keys were consumed, so a misspelled key is reported instead of ignored.

namespace detail {

class ObjectCursor {
public:
    ObjectCursor(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where("") + "expected an object");
    }

    [[nodiscard]] bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

    void mark(const std::string& key) { seen_.insert(key); }

    std::optional<bool> read_flag(const std::string& key) {
        seen_.insert(key);
        if (!has(key)) return std::nullopt;
        if (!j_.at(key).is_boolean()) throw ConfigError(where(key) + "must be true or false");
        return j_.at(key).get<bool>();
    }

    const nlohmann::json& raw(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    template <typename T>
    void read(const std::string& key, T& out) {
        seen_.insert(key);
        if (!has(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(where(key) + "has the wrong type");
        }
    }

    void read_size(const std::string& key, std::size_t& out) {
        seen_.insert(key);
        if (!has(key)) return;
        const auto& v = j_.at(key);
        if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError(where(key) + "must be a non-negative integer");
        out = v.get<std::size_t>();
    }

    void read_number(const std::string& key, double& out) {
        seen_.insert(key);
        if (!has(key)) return;
        const auto& v = j_.at(key);
        if (!v.is_number()) throw ConfigError(where(key) + "must be a number");
        out = v.get<double>();
        if (!std::isfinite(out)) throw ConfigError(where(key) + "must be finite");
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(where(it.key()) + "unknown key");
    }

    [[nodiscard]] std::string where(const std::string& key) const {
        std::string p = path_;
        if (!key.empty()) p += (p.empty() ? "" : ".") + key;
        return (p.empty() ? std::string("config") : p) + ": ";
    }

    [[nodiscard]] std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline void check(bool ok, const std::string& field, const std::string& msg) {
    if (!ok) throw ConfigError(field + ": " + msg);
}

} // namespace detail

inline DataConfig parse_data_config(const nlohmann::json& j, const std::string& path = "data") {
    DataConfig d;
    detail::ObjectCursor c(j, path);
    c.read("source", d.source);
    c.read("path", d.path);
    c.read("stream", d.stream);
    c.read_size("tasks", d.tasks);
    c.read("groups", d.groups);
    c.read_size("train_per_task", d.train_per_task);
    c.read_size("test_per_task", d.test_per_task);
    if (c.has("seed")) {
        std::size_t s = 0;
        c.read_size("seed", s);
        d.seed = s;
    } else {
        c.mark("seed");
    }
    if (c.has("synthetic")) {
        detail::ObjectCursor s(c.raw("synthetic"), c.child("synthetic"));
        s.read_size("n_per_class", d.synthetic.n_per_class);
        std::size_t h = d.synthetic.shape[1], w = d.synthetic.shape[2];
        s.read_size("height", h);
        s.read_size("width", w);
        d.synthetic.shape = Shape{1, h, w};
        double noise = d.synthetic.noise;
        s.read_number("noise", noise);
        d.synthetic.noise = static_cast<float>(noise);
        s.read_size("max_shift", d.synthetic.max_shift);
        s.finish();
    } else {
        c.mark("synthetic");
    }
    c.finish();

    const std::string p = path + ".";
    detail::check(d.source == "synthetic" || d.source == "idx", p + "source", "must be 'synthetic' or 'idx'");
    detail::check(d.stream == "permuted" || d.stream == "class_incremental", p + "stream",
                  "must be 'permuted' or 'class_incremental'");
    detail::check(d.train_per_task >= 1, p + "train_per_task", "must be at least 1");
    detail::check(d.test_per_task >= 1, p + "test_per_task", "must be at least 1");
    detail::check(d.synthetic.n_per_class >= 1, p + "synthetic.n_per_class", "must be at least 1");
    detail::check(d.synthetic.shape[1] >= 1 && d.synthetic.shape[2] >= 1, p + "synthetic", "image size must be positive");
    detail::check(d.synthetic.noise >= 0.0f, p + "synthetic.noise", "must be non-negative");
    if (d.stream == "class_incremental") {
        detail::check(!d.groups.empty(), p + "groups", "class_incremental streams need at least one group");
        for (const auto& g : d.groups) {
            detail::check(!g.empty(), p + "groups", "groups must be non-empty");
            for (int cls : g) detail::check(cls >= 0 && cls < 10, p + "groups", "class " + std::to_string(cls) + " out of range");
        }
        d.tasks = d.groups.size();
    } else {
        detail::check(d.tasks >= 1, p + "tasks", "must be at least 1");
        detail::check(d.groups.empty(), p + "groups", "only valid for class_incremental streams");
    }
    return d;
}

inline RunConfig parse_config(const nlohmann::json& j) {
    RunConfig cfg;
    detail::ObjectCursor c(j, "");

    if (c.has("architecture")) {
        detail::ObjectCursor a(c.raw("architecture"), "architecture");
        auto& ar = cfg.architecture;
        a.read("type", ar.type);
        a.read("hidden", ar.hidden);
        a.read("conv_channels", ar.conv_channels);
        a.read("dense_hidden", ar.dense_hidden);
        ar.batchnorm = a.read_flag("batchnorm").value_or(ar.batchnorm);
        a.finish();
        detail::check(ar.type == "mlp" || ar.type == "cnn", "architecture.type", "must be 'mlp' or 'cnn'");
        for (auto v : ar.hidden) detail::check(v >= 1, "architecture.hidden", "widths must be positive");
        for (auto v : ar.conv_channels) detail::check(v >= 1, "architecture.conv_channels", "widths must be positive");
        for (auto v : ar.dense_hidden) detail::check(v >= 1, "architecture.dense_hidden", "widths must be positive");
        if (ar.type == "cnn") detail::check(!ar.conv_channels.empty(), "architecture.conv_channels", "cnn needs a conv stage");
    } else {
        c.mark("architecture");
    }

    cfg.data = c.has("data") ? parse_data_config(c.raw("data")) : parse_data_config(nlohmann::json::object());
    c.mark("data");

    if (c.has("strategy")) {
        std::string s;
        c.read("strategy", s);
        cfg.strategy = parse_strategy(s);
    } else {
        c.mark("strategy");
    }

    if (c.has("schedule")) {
        detail::ObjectCursor s(c.raw("schedule"), "schedule");
        s.read("expand_on", cfg.schedule.expand_on);
        s.read_size("exp", cfg.schedule.exp);
        s.read_number("final_fraction", cfg.schedule.final_fraction);
        s.finish();
    } else {
        c.mark("schedule");
    }
    detail::check(cfg.schedule.final_fraction > 0.0 && cfg.schedule.final_fraction <= 1.0, "schedule.final_fraction",
                  "must lie in (0, 1]");
    for (auto d : cfg.schedule.expand_on)
        detail::check(d >= 1 && d <= cfg.data.tasks, "schedule.expand_on",
                      "dataset " + std::to_string(d) + " outside 1.." + std::to_string(cfg.data.tasks));

    if (c.has("training")) {
        detail::ObjectCursor t(c.raw("training"), "training");
        auto& tr = cfg.training;
        t.read_size("epochs", tr.epochs);
        t.read_number("lr", tr.lr);
        t.read_number("momentum", tr.momentum);
        t.read_number("alpha", tr.alpha);
        t.read_size("batch_size", tr.batch_size);
        t.read_number("bn_eps", tr.bn_eps);
        t.read_number("bn_momentum", tr.bn_momentum);
        t.finish();
    } else {
        c.mark("training");
    }
    const auto& tr = cfg.training;
    detail::check(tr.epochs >= 1, "training.epochs", "must be at least 1");
    detail::check(tr.lr >= 0.0, "training.lr", "must be non-negative");
    detail::check(tr.momentum >= 0.0 && tr.momentum < 1.0, "training.momentum", "must lie in [0, 1)");
    detail::check(tr.alpha >= 0.0, "training.alpha", "must be non-negative");
    detail::check(tr.batch_size >= 1, "training.batch_size", "must be at least 1");
    detail::check(tr.bn_eps > 0.0, "training.bn_eps", "must be positive");
    detail::check(tr.bn_momentum >= 0.0 && tr.bn_momentum <= 1.0, "training.bn_momentum", "must lie in [0, 1]");

    if (c.has("seed")) {
        std::size_t s = 0;
        c.read_size("seed", s);
        cfg.seed = s;
    } else {
        c.mark("seed");
    }
    if (c.has("init_policy")) {
        std::string s;
        c.read("init_policy", s);
        cfg.init_policy = parse_init_policy(s);
    } else {
        c.mark("init_policy");
    }
    cfg.freeze = c.read_flag("freeze");
    cfg.sparse = c.read_flag("sparse");
    c.finish();
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file " + path.string());
    try {
        return parse_config(nlohmann::json::parse(f));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
}

inline nlohmann::json to_json(const DataConfig& d) {
    nlohmann::json j{{"source", d.source},
                     {"path", d.path},
                     {"stream", d.stream},
                     {"tasks", d.tasks},
                     {"groups", d.groups},
                     {"train_per_task", d.train_per_task},
                     {"test_per_task", d.test_per_task},
                     {"synthetic",
                      {{"n_per_class", d.synthetic.n_per_class},
                       {"height", d.synthetic.shape[1]},
                       {"width", d.synthetic.shape[2]},
                       {"noise", d.synthetic.noise},
                       {"max_shift", d.synthetic.max_shift}}}};
    j["seed"] = d.seed ? nlohmann::json(*d.seed) : nlohmann::json(nullptr);
    return j;
}

/// Fully resolved configuration; parse_config(effective_config(c)) == resolve(c).
inline nlohmann::json effective_config(const RunConfig& in) {
    const RunConfig c = resolve(in);
    const auto& a = c.architecture;
    const auto& t = c.training;
    nlohmann::json arch{{"type", a.type}};
    if (a.type == "mlp") {
        arch["hidden"] = a.hidden;
    } else {
        arch["conv_channels"] = a.conv_channels;
        arch["dense_hidden"] = a.dense_hidden;
        arch["batchnorm"] = a.batchnorm;
    }
    DataConfig data = c.data;
    data.seed = c.data_seed();
    return nlohmann::json{{"architecture", arch},
                          {"data", to_json(data)},
                          {"strategy", to_string(c.strategy)},
                          {"schedule",
                           {{"expand_on", c.schedule.expand_on},
                            {"exp", c.schedule.exp},
                            {"final_fraction", c.schedule.final_fraction}}},
                          {"training",
                           {{"epochs", t.epochs},
                            {"lr", t.lr},
                            {"momentum", t.momentum},
                            {"alpha", t.alpha},
                            {"batch_size", t.batch_size},
                            {"bn_eps", t.bn_eps},
                            {"bn_momentum", t.bn_momentum}}},
                          {"seed", c.seed},
                          {"init_policy", to_string(c.policy())},
                          {"freeze", c.freeze_enabled()},
                          {"sparse", c.sparse_enabled()}};
}

// ---------------------------------------------------------------------------
// Stream construction.

/// IDX directory to read: the configured path, else $GROWLEARN_DATA_DIR.
inline std::filesystem::path resolve_data_dir(const DataConfig& d) {
    if (!d.path.empty()) return d.path;
    if (const char* env = std::getenv("GROWLEARN_DATA_DIR"); env && *env) return env;
    throw ConfigError("data.path: idx source needs a directory (set data.path or GROWLEARN_DATA_DIR)");
}

inline LabeledDataset load_base(const DataConfig& d, std::uint64_t seed) {
    if (d.source == "synthetic") return synthetic_digits(seed, d.synthetic);
    return load_mnist_dir(resolve_data_dir(d));
}

/// Builds the task stream described by `d`. Pure in (d, seed, base files).
inline TaskStream build_stream(const DataConfig& d, std::uint64_t seed) {
    const LabeledDataset base = load_base(d, seed);
    if (d.stream == "permuted") {
        const auto sub = subsample(base, d.train_per_task, d.test_per_task, derive_seed(seed, "subsample"));
        return permuted_stream(sub, d.tasks, seed);
    }
    TaskStream s = class_incremental_split(base, d.groups);
    for (std::size_t i = 0; i < s.tasks.size(); ++i) {
        const auto prov = s.tasks[i].provenance;
        s.tasks[i] = subsample(s.tasks[i], d.train_per_task, d.test_per_task, derive_seed(seed, "subsample", i));
        s.tasks[i].provenance = prov;
    }
    return s;
}

inline TaskStream build_stream(const RunConfig& c) { return build_stream(c.data, c.data_seed()); }

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << v;
    return os.str();
}

/// Regeneration manifest: the generating parameters plus a fingerprint of
/// every dataset so a regenerated stream can be checked bit-for-bit.
inline nlohmann::json stream_manifest(const DataConfig& d, std::uint64_t seed, const TaskStream& s) {
    DataConfig dc = d;
    dc.seed = seed;
    nlohmann::json datasets = nlohmann::json::array();
    for (std::size_t i = 0; i < s.tasks.size(); ++i) {
        const auto& t = s.tasks[i];
        datasets.push_back({{"index", i + 1},
                            {"source", t.provenance.source},
                            {"transform", t.provenance.transform},
                            {"train", t.train.size()},
                            {"test", t.test.size()},
                            {"fingerprint", hex64(fingerprint(t))}});
    }
    return nlohmann::json{{"generator", to_json(dc)},
                          {"kind", s.kind == StreamKind::domain_incremental ? "domain_incremental" : "class_incremental"},
                          {"classes", s.classes},
                          {"datasets", std::move(datasets)}};
}

/// Rebuilds a stream from its manifest; ConsistencyError if any dataset
/// fingerprint differs.
inline TaskStream regenerate_stream(const nlohmann::json& manifest) {
    if (!manifest.is_object() || !manifest.contains("generator") || !manifest.contains("datasets"))
        throw FormatError("stream manifest lacks generator or datasets");
    const DataConfig d = parse_data_config(manifest.at("generator"), "generator");
    if (!d.seed) throw FormatError("stream manifest has no seed");
    TaskStream s = build_stream(d, *d.seed);
    const auto& ds = manifest.at("datasets");
    if (!ds.is_array() || ds.size() != s.tasks.size())
        throw ConsistencyError("manifest lists " + std::to_string(ds.size()) + " datasets, regenerated " +
                               std::to_string(s.tasks.size()));
    for (std::size_t i = 0; i < s.tasks.size(); ++i) {
        const std::string want = ds[i].value("fingerprint", "");
        const std::string got = hex64(fingerprint(s.tasks[i]));
        if (want != got)
            throw ConsistencyError("dataset " + std::to_string(i + 1) + " fingerprint " + got + " != manifest " + want);
    }
    return s;
}

// ---------------------------------------------------------------------------

/// Builds the configured architecture for images of shape `image_shape`.
inline NetworkSpec build_network(const ArchitectureConfig& a, const Shape& image_shape, std::size_t classes, Rng& rng) {
    if (a.type == "mlp") return make_mlp(image_shape, a.hidden, classes, rng);
    return make_cnn(image_shape, a.conv_channels, a.dense_hidden, classes, a.batchnorm, rng);
}

} // namespace growlearn
