#pragma once

// Command-line surface. Every command is an ordinary function taking parsed
// options and output streams, so the test suite drives them directly without
// spawning processes.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "radar/experiments.hpp"
#include "radar/trainer.hpp"

namespace radar::cli {

constexpr const char* kVersion = "0.1.0";

// exit codes: 0 success, 1 runtime failure, 2 usage or configuration error
constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

struct Args {
    std::string command;
    std::map<std::string, std::string> options;
    std::vector<std::string> positional;

    bool has(const std::string& key) const { return options.count(key) > 0; }

    std::string get(const std::string& key, const std::string& fallback = "") const {
        auto it = options.find(key);
        return it == options.end() ? fallback : it->second;
    }
};

// Flags are --key value or --key=value; a bare --key is stored with an empty
// value (presence flag). The first non-flag token is the command, later
// non-flag tokens are positional.
inline bool parse_args(const std::vector<std::string>& argv, Args& out, std::string& error) {
    for (std::size_t i = 0; i < argv.size(); ++i) {
        const std::string& tok = argv[i];
        if (tok.rfind("--", 0) == 0) {
            std::string key = tok.substr(2);
            if (key.empty()) {
                error = "empty flag name";
                return false;
            }
            auto eq = key.find('=');
            if (eq != std::string::npos) {
                out.options[key.substr(0, eq)] = key.substr(eq + 1);
            } else if (i + 1 < argv.size() && argv[i + 1].rfind("--", 0) != 0) {
                out.options[key] = argv[++i];
            } else {
                out.options[key] = "";
            }
        } else if (out.command.empty()) {
            out.command = tok;
        } else {
            out.positional.push_back(tok);
        }
    }
    return true;
}

namespace detail {

inline std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Write-then-rename so readers never observe a half-written file.
inline void write_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(static_cast<bool>(out), "cannot write: " + tmp);
        out << content;
        require(static_cast<bool>(out), "write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline bool parse_csv_doubles(const std::string& s, std::vector<double>& out, std::string& error) {
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        double v;
        if (!::radar::detail::parse_f64(item, v)) {
            error = "cannot parse number '" + item + "'";
            return false;
        }
        out.push_back(v);
    }
    if (out.empty()) {
        error = "empty list";
        return false;
    }
    return true;
}

inline bool parse_csv_u64(const std::string& s, std::vector<std::uint64_t>& out, std::string& error) {
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::uint64_t v;
        if (!::radar::detail::parse_u64(item, v)) {
            error = "cannot parse integer '" + item + "'";
            return false;
        }
        out.push_back(v);
    }
    if (out.empty()) {
        error = "empty list";
        return false;
    }
    return true;
}

inline std::string summary_line(const eval::MetricSummary& m) {
    nlohmann::ordered_json j;
    j["recall20"] = m.recall;
    j["ndcg20"] = m.ndcg;
    j["users"] = m.users;
    return j.dump();
}

}  // namespace detail

// Loads config (defaults, then file if given, then environment), applies
// --seed, validates. Returns false and prints every problem on failure.
inline bool resolve_config(const Args& args, TrainConfig& cfg, std::ostream& err) {
    std::vector<std::string> errors;
    cfg = TrainConfig{};
    if (args.has("config")) {
        cfg = load_train_config(args.get("config"), !args.has("no-env"), errors);
    } else {
        if (!args.has("no-env")) apply_env_overrides(cfg, errors);
    }
    if (args.has("seed")) {
        std::uint64_t s;
        if (!::radar::detail::parse_u64(args.get("seed"), s))
            errors.push_back("cannot parse --seed '" + args.get("seed") + "'");
        else
            cfg.seed = s;
    }
    if (errors.empty())
        for (auto& e : validate(cfg)) errors.push_back(e);
    if (!errors.empty()) {
        err << "configuration problems:\n";
        for (const auto& e : errors) err << "  - " << e << "\n";
        return false;
    }
    return true;
}

inline bool load_dataset_arg(const Args& args, data::InteractionDataset& ds, std::ostream& err) {
    if (!args.has("data")) {
        err << "missing required --data <path>\n";
        return false;
    }
    try {
        ds = data::load_canonical(args.get("data"));
    } catch (const std::exception& e) {
        err << "cannot load dataset: " << e.what() << "\n";
        return false;
    }
    return true;
}

inline void write_manifest(const std::string& dir, const TrainConfig& cfg,
                           const data::InteractionDataset& ds, const std::string& command,
                           const std::string& started, const nlohmann::ordered_json& results) {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["version"] = kVersion;
    j["started"] = started;
    j["finished"] = detail::timestamp_utc();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(ds.checksum()));
    j["dataset_checksum"] = std::string(buf);
    j["seed"] = cfg.seed;
    j["config"] = nlohmann::ordered_json::object();
    for (const auto& f : ::radar::detail::config_fields()) j["config"][f.key] = f.get(cfg);
    j["results"] = results;
    detail::write_atomic(dir + "/manifest.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline int cmd_prepare(const Args& args, std::ostream& out, std::ostream& err) {
    if (!args.has("out")) {
        err << "missing required --out <path>\n";
        return kUsageError;
    }
    std::uint64_t seed = 1;
    if (args.has("seed") && !::radar::detail::parse_u64(args.get("seed"), seed)) {
        err << "cannot parse --seed\n";
        return kUsageError;
    }
    data::SyntheticSpec spec;
    auto set_size = [&](const char* key, std::size_t& field) {
        if (!args.has(key)) return true;
        std::uint64_t v;
        if (!::radar::detail::parse_u64(args.get(key), v)) return false;
        field = v;
        return true;
    };
    if (!set_size("users", spec.n_users) || !set_size("items", spec.n_items) ||
        !set_size("clusters", spec.n_clusters) || !set_size("per-user", spec.edges_per_user)) {
        err << "synthetic size flags must be unsigned integers\n";
        return kUsageError;
    }
    data::SplitFractions frac;
    if (args.has("split")) {
        std::vector<double> fs;
        std::string perr;
        if (!detail::parse_csv_doubles(args.get("split"), fs, perr) || fs.size() != 3) {
            err << "--split expects three comma-separated fractions\n";
            return kUsageError;
        }
        frac = {fs[0], fs[1], fs[2]};
    }
    try {
        auto ds = data::split_dataset(data::generate_synthetic(spec, seed), frac, seed);
        data::save_canonical(ds, args.get("out"));
        out << data::dataset_manifest(ds).dump() << "\n";
    } catch (const std::exception& e) {
        err << "prepare failed: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kOk;
}

inline int cmd_train(const Args& args, std::ostream& out, std::ostream& err) {
    TrainConfig cfg;
    data::InteractionDataset ds;
    if (!resolve_config(args, cfg, err)) return kUsageError;
    if (!load_dataset_arg(args, ds, err)) return kUsageError;
    train::Variant variant = train::Variant::full;
    if (args.has("variant") && !train::variant_from_string(args.get("variant"), variant)) {
        err << "unknown variant '" << args.get("variant") << "'\n";
        return kUsageError;
    }
    const std::string dir = args.get("out", "runs/train");
    std::filesystem::create_directories(dir);
    const std::string started = detail::timestamp_utc();
    try {
        auto res = train::train(ds, cfg, variant, dir);
        std::string lines;
        for (const auto& l : res.metrics_lines) {
            out << l << "\n";
            lines += l;
            lines += "\n";
        }
        detail::write_atomic(dir + "/metrics.jsonl", lines);
        detail::write_atomic(dir + "/config.conf", config_to_text(cfg));
        auto test = train::evaluate_tables(ds, res.best_user, res.best_item, cfg.layers, data::Split::test);
        nlohmann::ordered_json results;
        results["variant"] = train::to_string(variant);
        results["best_epoch"] = res.best_epoch;
        results["valid_recall20"] = res.best_valid.recall;
        results["valid_ndcg20"] = res.best_valid.ndcg;
        results["test_recall20"] = test.recall;
        results["test_ndcg20"] = test.ndcg;
        write_manifest(dir, cfg, ds, "train", started, results);
        out << "best epoch " << res.best_epoch << " " << detail::summary_line(test) << "\n";
    } catch (const std::exception& e) {
        err << "training failed: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kOk;
}

inline int cmd_evaluate(const Args& args, std::ostream& out, std::ostream& err) {
    data::InteractionDataset ds;
    if (!load_dataset_arg(args, ds, err)) return kUsageError;
    if (!args.has("ckpt")) {
        err << "missing required --ckpt <path>\n";
        return kUsageError;
    }
    data::Split split = data::Split::test;
    if (args.get("split", "test") == "valid") split = data::Split::valid;
    try {
        auto ck = encoder::load_checkpoint(args.get("ckpt"));
        require(ck.n_users == ds.n_users() && ck.n_items == ds.n_items(),
                "checkpoint does not match the dataset dimensions");
        auto m = train::evaluate_tables(ds, ck.e0_user, ck.e0_item, ck.layers, split);
        out << detail::summary_line(m) << "\n";
        if (args.has("buckets")) {
            std::vector<std::uint64_t> bs;
            std::string perr;
            if (!detail::parse_csv_u64(args.get("buckets"), bs, perr)) {
                err << "--buckets: " << perr << "\n";
                return kUsageError;
            }
            std::vector<std::size_t> bounds(bs.begin(), bs.end());
            auto rows = experiments::sparsity_profile(ds, ck.e0_user, ck.e0_item, ck.layers, split, bounds);
            for (const auto& r : rows) {
                nlohmann::ordered_json j;
                j["bucket"] = r.label;
                j["population"] = r.population;
                j["recall20"] = r.metrics.recall;
                j["ndcg20"] = r.metrics.ndcg;
                j["users"] = r.metrics.users;
                out << j.dump() << "\n";
            }
        }
    } catch (const std::exception& e) {
        err << "evaluate failed: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kOk;
}

inline int cmd_ablate(const Args& args, std::ostream& out, std::ostream& err) {
    TrainConfig cfg;
    data::InteractionDataset ds;
    if (!resolve_config(args, cfg, err)) return kUsageError;
    if (!load_dataset_arg(args, ds, err)) return kUsageError;
    std::vector<train::Variant> variants = train::all_variants();
    if (args.has("variants")) {
        variants.clear();
        std::stringstream ss(args.get("variants"));
        std::string item;
        while (std::getline(ss, item, ',')) {
            train::Variant v;
            if (!train::variant_from_string(item, v)) {
                err << "unknown variant '" << item << "'\n";
                return kUsageError;
            }
            variants.push_back(v);
        }
    }
    const std::string dir = args.get("out", "runs/ablate");
    std::filesystem::create_directories(dir);
    const std::string started = detail::timestamp_utc();
    try {
        auto rows = experiments::ablation_grid(ds, cfg, variants);
        nlohmann::ordered_json results = nlohmann::ordered_json::array();
        for (const auto& r : rows) {
            nlohmann::ordered_json j;
            j["variant"] = train::to_string(r.variant);
            j["best_epoch"] = r.best_epoch;
            j["valid_recall20"] = r.valid.recall;
            j["test_recall20"] = r.test.recall;
            j["test_ndcg20"] = r.test.ndcg;
            out << j.dump() << "\n";
            results.push_back(j);
        }
        write_manifest(dir, cfg, ds, "ablate", started, results);
    } catch (const std::exception& e) {
        err << "ablation failed: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kOk;
}

inline int cmd_robustness(const Args& args, std::ostream& out, std::ostream& err) {
    TrainConfig cfg;
    data::InteractionDataset ds;
    if (!resolve_config(args, cfg, err)) return kUsageError;
    if (!load_dataset_arg(args, ds, err)) return kUsageError;
    train::Variant variant = train::Variant::full;
    if (args.has("variant") && !train::variant_from_string(args.get("variant"), variant)) {
        err << "unknown variant '" << args.get("variant") << "'\n";
        return kUsageError;
    }
    std::vector<double> ratios{0.1, 0.25};
    std::vector<std::uint64_t> seeds{cfg.seed};
    std::string perr;
    if (args.has("ratios")) {
        ratios.clear();
        if (!detail::parse_csv_doubles(args.get("ratios"), ratios, perr)) {
            err << "--ratios: " << perr << "\n";
            return kUsageError;
        }
    }
    if (args.has("seeds")) {
        seeds.clear();
        if (!detail::parse_csv_u64(args.get("seeds"), seeds, perr)) {
            err << "--seeds: " << perr << "\n";
            return kUsageError;
        }
    }
    const std::string dir = args.get("out", "runs/robustness");
    std::filesystem::create_directories(dir);
    const std::string started = detail::timestamp_utc();
    try {
        auto rep = experiments::noise_robustness_sweep(ds, cfg, variant, ratios, seeds);
        auto j = experiments::robustness_json(rep);
        out << j.dump(2) << "\n";
        write_manifest(dir, cfg, ds, "robustness", started, j);
    } catch (const std::exception& e) {
        err << "robustness sweep failed: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kOk;
}

inline int cmd_sweep_lambda(const Args& args, std::ostream& out, std::ostream& err) {
    TrainConfig cfg;
    data::InteractionDataset ds;
    if (!resolve_config(args, cfg, err)) return kUsageError;
    if (!load_dataset_arg(args, ds, err)) return kUsageError;
    std::vector<double> values{0.0, 1.0, 5.5, 10.0};
    std::string perr;
    if (args.has("values")) {
        values.clear();
        if (!detail::parse_csv_doubles(args.get("values"), values, perr)) {
            err << "--values: " << perr << "\n";
            return kUsageError;
        }
    }
    const std::string dir = args.get("out", "runs/sweep-lambda");
    std::filesystem::create_directories(dir);
    const std::string started = detail::timestamp_utc();
    try {
        auto rows = experiments::lambda_ratio_sweep(ds, cfg, values);
        nlohmann::ordered_json results = nlohmann::ordered_json::array();
        for (const auto& r : rows) {
            nlohmann::ordered_json j;
            j["lambda_ratio"] = r.lambda_ratio;
            j["valid_recall20"] = r.valid.recall;
            j["test_recall20"] = r.test.recall;
            out << j.dump() << "\n";
            results.push_back(j);
        }
        write_manifest(dir, cfg, ds, "sweep-lambda", started, results);
    } catch (const std::exception& e) {
        err << "sweep failed: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kOk;
}

inline void print_usage(std::ostream& out) {
    out << "radar " << kVersion << " - graph contrastive recommender\n"
        << "\n"
        << "usage: radar <command> [options]\n"
        << "\n"
        << "commands:\n"
        << "  prepare      generate a synthetic interaction dataset\n"
        << "               --out <file> [--users N] [--items N] [--clusters N]\n"
        << "               [--per-user N] [--split a,b,c] [--seed N]\n"
        << "  train        train a model\n"
        << "               --data <file> [--config <file>] [--variant name]\n"
        << "               [--out <dir>] [--seed N] [--no-env]\n"
        << "  evaluate     rank a stored checkpoint\n"
        << "               --data <file> --ckpt <file> [--split test|valid]\n"
        << "               [--buckets a,b,c]\n"
        << "  ablate       train every variant on the same budget\n"
        << "               --data <file> [--config <file>] [--variants csv]\n"
        << "  robustness   retrain under injected interaction noise\n"
        << "               --data <file> [--ratios csv] [--seeds csv] [--variant name]\n"
        << "  sweep-lambda train across bottleneck weights\n"
        << "               --data <file> [--values csv]\n"
        << "\n"
        << "variants: full, gen+gen, gen+linear, no-dacl, acl-only\n"
        << "config keys can also come from RADAR_<KEY> environment variables.\n";
}

inline int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
    Args args;
    std::string perr;
    if (!parse_args(argv, args, perr)) {
        err << perr << "\n";
        return kUsageError;
    }
    if (args.command == "help" || args.has("help")) {
        print_usage(out);
        return kOk;
    }
    if (args.command.empty()) {
        print_usage(err);
        return kUsageError;
    }
    if (args.command == "prepare") return cmd_prepare(args, out, err);
    if (args.command == "train") return cmd_train(args, out, err);
    if (args.command == "evaluate") return cmd_evaluate(args, out, err);
    if (args.command == "ablate") return cmd_ablate(args, out, err);
    if (args.command == "robustness") return cmd_robustness(args, out, err);
    if (args.command == "sweep-lambda") return cmd_sweep_lambda(args, out, err);
    err << "unknown command '" << args.command << "'; run 'radar help'\n";
    return kUsageError;
}

}  // namespace radar::cli
