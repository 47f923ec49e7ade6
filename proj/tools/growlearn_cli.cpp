// Copyright (c) 2026 growlearn authors
// SPDX-License-Identifier: Apache-2.0
//
// growlearn command-line driver.
//
//   growlearn run --config PATH --out DIR [--seed N] [--strategy NAME]
//   growlearn metrics RESULTS_CSV [--literal-fwt]
//   growlearn gen-data KIND --out DIR [--seed N] [--config PATH]
//   growlearn inspect CHECKPOINT
//
// Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "growlearn/growlearn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace growlearn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

/// Raised for problems the caller can fix (bad input files, paths, names).
struct UsageFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
    if (!f) throw std::runtime_error("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw UsageFailure("cannot read " + path.string());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void prepare_out_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw UsageFailure("cannot create output directory " + dir.string());
}

json optional_number(const std::function<double()>& f) {
    try {
        return f();
    } catch (const StateError&) {
        return nullptr;
    }
}

std::string number_or_undefined(const std::function<double()>& f) {
    try {
        return format_metric(f());
    } catch (const StateError&) {
        return "undefined";
    }
}

json growth_json(const GrowthEvent& g) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return json{{"dataset", g.dataset + 1},
                {"epoch", g.epoch + 1},
                {"params_before", g.params_before},
                {"params_after", g.params_after},
                {"previous_accuracy_before", opt(g.previous_before)},
                {"previous_accuracy_after", opt(g.previous_after)},
                {"current_accuracy_before", g.current_before},
                {"current_accuracy_after", g.current_after},
                {"logit_delta_mean", g.logit_delta_mean},
                {"logit_delta_max", g.logit_delta_max}};
}

json metrics_json(const RunConfig& cfg, const RunResult& r) {
    const ResultMatrix& R = r.results;
    const std::size_t T = R.tasks();
    json final_row = json::array();
    for (std::size_t i = 0; i < T; ++i) final_row.push_back(R.require(T - 1, i));
    ResultMatrix shared(T);
    for (std::size_t i = 0; i < T; ++i) {
        for (std::size_t j = 0; j < T && j <= i + 1; ++j)
            if (auto v = R.at(i, j)) shared.record(i, j, *v);
        shared.record_baseline(i, r.report.b_bar_shared[i]);
    }
    json growth = json::array();
    for (const auto& g : r.report.growth) growth.push_back(growth_json(g));
    return json{{"strategy", to_string(resolve(cfg).strategy)},
                {"tasks", T},
                {"aac", aac(R)},
                {"bwt", optional_number([&] { return bwt(R); })},
                {"fwt", optional_number([&] { return fwt(R); })},
                {"fwt_literal", optional_number([&] { return fwt(R, FwtBounds::literal); })},
                {"fwt_shared_baseline", optional_number([&] { return fwt(shared); })},
                {"params",
                 {{"initial", r.report.params_initial},
                  {"final", r.report.params_final},
                  {"rise_percent", r.report.params_rise_percent()}}},
                {"sparsity", r.report.sparsity},
                {"freeze_fraction", r.report.freeze_fraction},
                {"final_accuracy", final_row},
                {"b_bar", {{"fresh", r.report.b_bar_fresh}, {"shared", r.report.b_bar_shared}}},
                {"growth_events", growth}};
}

std::string curve_csv(const RunReport& rep, std::size_t T) {
    std::ostringstream os;
    os << "dataset,epoch,step,loss,task_loss,average_accuracy,sparsity,phase";
    for (std::size_t j = 0; j < T; ++j) os << ",acc_task" << j + 1;
    os << '\n';
    std::size_t step = 0;
    for (const auto& e : rep.epochs) {
        os << e.dataset + 1 << ',' << e.epoch + 1 << ',' << ++step << ',' << format_double(e.loss) << ','
           << format_double(e.task_loss) << ',' << format_double(e.average_accuracy) << ',' << format_double(e.sparsity)
           << ',' << (e.ondata ? "ondata" : "train");
        for (std::size_t j = 0; j < T; ++j) {
            os << ',';
            if (j < e.accuracies.size()) os << format_double(e.accuracies[j]);
        }
        os << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------

int cmd_run(const std::string& config_path, const std::string& out, std::optional<std::uint64_t> seed,
            std::optional<std::string> strategy) {
    RunConfig cfg;
    TaskStream stream;
    try {
        if (!fs::exists(config_path)) throw UsageFailure("config file not found: " + config_path);
        cfg = load_config(config_path);
        if (seed) cfg.seed = *seed;
        if (strategy) cfg.strategy = parse_strategy(*strategy);
        cfg = resolve(cfg);
        prepare_out_dir(out);
        if (cfg.data.source == "idx" && cfg.data.path.empty()) cfg.data.path = resolve_data_dir(cfg.data).string();
        stream = build_stream(cfg);
    } catch (const UsageFailure& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        const fs::path dir(out);
        write_text(dir / "effective-config.json", effective_config(cfg).dump(2) + "\n");
        const fs::path ckdir = dir / "checkpoints";
        fs::create_directories(ckdir);
        RunHooks hooks;
        hooks.on_dataset = [&](std::size_t d, const NetworkSpec& net) {
            save_checkpoint(net, ckdir / ("after_task" + std::to_string(d + 1) + ".glck"),
                            json{{"dataset", d + 1}, {"strategy", to_string(cfg.strategy)}, {"seed", cfg.seed}});
        };
        hooks.on_epoch = [](const EpochRecord& e) {
            std::cerr << "dataset " << e.dataset + 1 << " epoch " << e.epoch + 1 << (e.ondata ? " (on-data)" : "")
                      << "  loss " << e.loss << "  avg acc " << e.average_accuracy << "  sparsity " << e.sparsity << '\n';
        };
        const RunResult r = run_sequence(cfg, stream, hooks);
        write_text(dir / "results.csv", to_csv(r.results));
        write_text(dir / "metrics.json", metrics_json(cfg, r).dump(2) + "\n");
        write_text(dir / "curve.csv", curve_csv(r.report, r.results.tasks()));
        std::cout << "AAC " << format_metric(aac(r.results)) << '\n';
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

int cmd_metrics(const std::string& csv_path, bool literal) {
    ResultMatrix R;
    try {
        R = from_csv(read_text(csv_path));
        if (!R.row_complete(R.tasks() - 1)) throw FormatError("final row of " + csv_path + " is incomplete");
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    std::cout << "AAC " << format_metric(aac(R)) << '\n';
    std::cout << "BWT " << number_or_undefined([&] { return bwt(R); }) << '\n';
    std::cout << "FWT "
              << number_or_undefined([&] { return fwt(R, literal ? FwtBounds::literal : FwtBounds::standard); }) << '\n';
    return kExitOk;
}

int cmd_gen_data(const std::string& kind, const std::string& out, std::optional<std::uint64_t> seed,
                 const std::string& config_path) {
    try {
        if (kind != "synthetic" && kind != "permuted-manifest" && kind != "class-split-manifest")
            throw UsageFailure("unknown data kind '" + kind +
                               "' (expected synthetic, permuted-manifest or class-split-manifest)");
        DataConfig data;
        if (!config_path.empty()) {
            if (!fs::exists(config_path)) throw UsageFailure("config file not found: " + config_path);
            const RunConfig cfg = load_config(config_path);
            data = cfg.data;
            if (!seed) seed = cfg.data_seed();
        }
        const std::uint64_t s = seed.value_or(5);
        prepare_out_dir(out);
        const fs::path dir(out);
        if (kind == "synthetic") {
            const LabeledDataset d = synthetic_digits(s, data.synthetic);
            write_idx(d.train, dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
            write_idx(d.test, dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
            std::cout << "wrote " << d.train.size() << " train / " << d.test.size() << " test images to " << out << '\n';
            return kExitOk;
        }
        if (kind == "permuted-manifest") {
            data.stream = "permuted";
            data.groups.clear();
        } else if (data.stream != "class_incremental") {
            data.stream = "class_incremental";
            data.groups = {{0, 1, 2}, {2, 3, 4, 5}, {0, 3, 6, 7}, {6, 8, 9}};
            data.tasks = data.groups.size();
        }
        if (data.source == "idx" && data.path.empty()) data.path = resolve_data_dir(data).string();
        const TaskStream stream = build_stream(data, s);
        const std::string name = kind == "permuted-manifest" ? "permuted-stream.json" : "class-split-stream.json";
        write_text(dir / name, stream_manifest(data, s, stream).dump(2) + "\n");
        std::cout << "wrote " << (dir / name).string() << " (" << stream.tasks.size() << " datasets)\n";
        return kExitOk;
    } catch (const UsageFailure& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

int cmd_inspect(const std::string& path) {
    Checkpoint ck;
    try {
        ck = load_checkpoint(path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    const NetworkSpec& net = ck.net;
    std::cout << "checkpoint " << path << '\n';
    std::cout << "input_shape " << shape_str(net.input_shape) << '\n';
    std::size_t i = 0;
    auto masked_line = [](const auto& l) {
        std::size_t pruned = 0, frozen = 0;
        for (auto v : l.prune_mask) pruned += v == 0;
        for (auto v : l.freeze_mask) frozen += v != 0;
        const double n = static_cast<double>(l.prune_mask.size());
        std::ostringstream os;
        os << " sparsity " << format_double(static_cast<double>(pruned) / n) << " frozen "
           << format_double(static_cast<double>(frozen) / n);
        return os.str();
    };
    for (const auto& l : net.layers) {
        std::cout << "  [" << i++ << "] " << layer_kind(l);
        if (const auto* d = std::get_if<GrowableDense>(&l)) {
            std::cout << ' ' << shape_str(d->weight.shape()) << masked_line(*d);
        } else if (const auto* c = std::get_if<GrowableConv2d>(&l)) {
            std::cout << ' ' << shape_str(c->weight.shape()) << " stride " << c->stride << " pad " << c->pad
                      << masked_line(*c);
        } else if (const auto* n = std::get_if<GrowableBatchNorm>(&l)) {
            std::cout << " channels " << n->channels();
        } else if (const auto* p = std::get_if<Pool2d>(&l)) {
            std::cout << " window " << p->window;
        }
        std::cout << '\n';
    }
    for (const auto& b : net.laterals) {
        std::cout << "  lateral " << b.source << " -> " << b.target << " hidden " << shape_str(b.hidden.weight.shape())
                  << masked_line(b.hidden) << " connector " << shape_str(b.connector.weight.shape())
                  << masked_line(b.connector) << '\n';
    }
    std::cout << "params " << param_count(net) << '\n';
    std::cout << "sparsity " << format_double(sparsity(net)) << '\n';
    std::cout << "freeze_fraction " << format_double(freeze_fraction(net)) << '\n';
    if (ck.manifest.contains("meta") && !ck.manifest["meta"].empty()) std::cout << "meta " << ck.manifest["meta"].dump() << '\n';
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"growlearn: sparse model growth for continual learning"};
    app.require_subcommand(1);

    std::string config_path, out_dir, strategy, csv_path, kind, ck_path;
    std::uint64_t seed = 0;
    bool literal = false;

    auto* run = app.add_subcommand("run", "train a configured continual-learning run");
    run->add_option("--config", config_path, "run configuration (JSON)")->required();
    run->add_option("--out", out_dir, "output directory")->required();
    auto* run_seed = run->add_option("--seed", seed, "override the run seed");
    auto* run_strategy = run->add_option("--strategy", strategy, "override the growth strategy");

    auto* met = app.add_subcommand("metrics", "recompute AAC/BWT/FWT from results.csv");
    met->add_option("results", csv_path, "results.csv path")->required();
    met->add_flag("--literal-fwt", literal, "sum FWT over datasets 2..T-1 only");

    auto* gen = app.add_subcommand("gen-data", "write synthetic IDX files or a stream manifest");
    gen->add_option("kind", kind, "synthetic | permuted-manifest | class-split-manifest")->required();
    gen->add_option("--out", out_dir, "output directory")->required();
    auto* gen_seed = gen->add_option("--seed", seed, "generator seed");
    gen->add_option("--config", config_path, "take data settings from a run configuration");

    auto* ins = app.add_subcommand("inspect", "summarize a checkpoint");
    ins->add_option("checkpoint", ck_path, "checkpoint path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    if (*run) {
        return cmd_run(config_path, out_dir, *run_seed ? std::optional<std::uint64_t>(seed) : std::nullopt,
                       *run_strategy ? std::optional<std::string>(strategy) : std::nullopt);
    }
    if (*met) return cmd_metrics(csv_path, literal);
    if (*gen) return cmd_gen_data(kind, out_dir, *gen_seed ? std::optional<std::uint64_t>(seed) : std::nullopt, config_path);
    if (*ins) return cmd_inspect(ck_path);
    return kExitUsage;
}
