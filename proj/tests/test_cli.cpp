#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "radar/cli.hpp"
#include "testutil.hpp"

using namespace radar;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const char* tag) : path(fs::temp_directory_path() / tag) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const char* leaf) const { return (path / leaf).string(); }
};

struct RunResult {
    int code;
    std::string out;
    std::string err;
};

RunResult run_cli(std::vector<std::string> argv) {
    std::ostringstream out, err;
    int code = cli::run(argv, out, err);
    return {code, out.str(), err.str()};
}

std::string tiny_config_text() {
    TrainConfig cfg;
    cfg.embed_dim = 4;
    cfg.layers = 1;
    cfg.diffusion_steps = 4;
    cfg.denoise_steps = 2;
    cfg.batch_size = 16;
    cfg.learning_rate = 1e-2;
    cfg.outer_epochs = 1;
    cfg.warmup_epochs = 0;
    cfg.seed = 5;
    return config_to_text(cfg);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(static_cast<bool>(in));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    REQUIRE(static_cast<bool>(out));
    out << content;
}

}  // namespace

TEST_CASE("argument parsing covers the grammar") {
    cli::Args args;
    std::string err;
    REQUIRE(cli::parse_args({"train", "extra", "--data", "x.json", "--seed=9", "--no-env"}, args, err));
    REQUIRE(args.command == "train");
    REQUIRE(args.get("data") == "x.json");
    REQUIRE(args.get("seed") == "9");
    REQUIRE(args.has("no-env"));
    REQUIRE(args.get("no-env").empty());
    REQUIRE(args.positional == std::vector<std::string>{"extra"});
    REQUIRE(args.get("absent", "fallback") == "fallback");

    // a flag immediately followed by a non-flag token consumes it as its value
    cli::Args greedy;
    REQUIRE(cli::parse_args({"train", "--no-env", "x"}, greedy, err));
    REQUIRE(greedy.get("no-env") == "x");

    cli::Args bad;
    REQUIRE_FALSE(cli::parse_args({"--"}, bad, err));
}

TEST_CASE("help and unknown commands") {
    auto help = run_cli({"help"});
    REQUIRE(help.code == cli::kOk);
    REQUIRE(help.out.find("usage: radar") != std::string::npos);
    REQUIRE(help.out.find("sweep-lambda") != std::string::npos);

    auto none = run_cli({});
    REQUIRE(none.code == cli::kUsageError);

    auto bogus = run_cli({"frobnicate"});
    REQUIRE(bogus.code == cli::kUsageError);
    REQUIRE(bogus.err.find("unknown command") != std::string::npos);
}

TEST_CASE("prepare writes a loadable dataset") {
    TempDir tmp("radar_cli_prepare");
    auto missing = run_cli({"prepare"});
    REQUIRE(missing.code == cli::kUsageError);

    auto ok = run_cli({"prepare", "--out", tmp.str("ds.json"), "--users", "20", "--items", "20",
                       "--clusters", "2", "--per-user", "4", "--seed", "3"});
    INFO(ok.err);
    REQUIRE(ok.code == cli::kOk);
    REQUIRE(ok.out.find("checksum") != std::string::npos);
    auto ds = data::load_canonical(tmp.str("ds.json"));
    REQUIRE(ds.n_users() == 20);
    REQUIRE(ds.n_items() == 20);
    REQUIRE(ds.count(data::Split::train) > 0);
    REQUIRE(ds.count(data::Split::valid) > 0);

    auto bad_split = run_cli({"prepare", "--out", tmp.str("x.json"), "--split", "0.5,0.5"});
    REQUIRE(bad_split.code == cli::kUsageError);
}

TEST_CASE("train validates its inputs before starting") {
    TempDir tmp("radar_cli_train_val");
    auto no_data = run_cli({"train", "--no-env"});
    REQUIRE(no_data.code == cli::kUsageError);
    REQUIRE(no_data.err.find("--data") != std::string::npos);

    write_file(tmp.str("bad.conf"), "embed_dim = 0\ntau = -1\nnot a line\n");
    auto bad_cfg = run_cli({"train", "--no-env", "--config", tmp.str("bad.conf"), "--data", "x"});
    REQUIRE(bad_cfg.code == cli::kUsageError);
    REQUIRE(bad_cfg.err.find("configuration problems") != std::string::npos);
    REQUIRE(bad_cfg.err.find("line 3") != std::string::npos);

    auto bad_variant = run_cli({"train", "--no-env", "--data", "x", "--variant", "nonsense"});
    REQUIRE(bad_variant.code == cli::kUsageError);
}

TEST_CASE("train, evaluate, and rerun end to end") {
    TempDir tmp("radar_cli_e2e");
    write_file(tmp.str("tiny.conf"), tiny_config_text());
    auto prep = run_cli({"prepare", "--out", tmp.str("ds.json"), "--users", "20", "--items", "20",
                         "--clusters", "2", "--per-user", "4", "--seed", "3"});
    REQUIRE(prep.code == cli::kOk);

    auto tr = run_cli({"train", "--no-env", "--data", tmp.str("ds.json"), "--config", tmp.str("tiny.conf"),
                       "--out", tmp.str("run1")});
    INFO(tr.err);
    REQUIRE(tr.code == cli::kOk);
    REQUIRE(fs::exists(tmp.path / "run1" / "metrics.jsonl"));
    REQUIRE(fs::exists(tmp.path / "run1" / "config.conf"));
    REQUIRE(fs::exists(tmp.path / "run1" / "manifest.json"));

    auto manifest = nlohmann::ordered_json::parse(slurp(tmp.str("run1/manifest.json")));
    REQUIRE(manifest["command"] == "train");
    REQUIRE(manifest["results"]["best_epoch"].get<std::size_t>() >= 1);
    REQUIRE(manifest["config"]["embed_dim"] == "4");
    const auto best = manifest["results"]["best_epoch"].get<std::size_t>();
    const std::string ckpt = tmp.str("run1") + "/epoch_" + std::to_string(best) + ".ckpt";
    REQUIRE(fs::exists(ckpt));

    SECTION("metrics are byte-identical across reruns") {
        auto tr2 = run_cli({"train", "--no-env", "--data", tmp.str("ds.json"), "--config",
                            tmp.str("tiny.conf"), "--out", tmp.str("run2")});
        REQUIRE(tr2.code == cli::kOk);
        REQUIRE(slurp(tmp.str("run1/metrics.jsonl")) == slurp(tmp.str("run2/metrics.jsonl")));
    }

    SECTION("evaluate ranks the stored checkpoint") {
        auto ev = run_cli({"evaluate", "--data", tmp.str("ds.json"), "--ckpt", ckpt});
        INFO(ev.err);
        REQUIRE(ev.code == cli::kOk);
        REQUIRE(ev.out.find("recall20") != std::string::npos);

        auto bucketed = run_cli({"evaluate", "--data", tmp.str("ds.json"), "--ckpt", ckpt, "--split",
                                 "valid", "--buckets", "2,4"});
        REQUIRE(bucketed.code == cli::kOk);
        REQUIRE(bucketed.out.find("\"bucket\"") != std::string::npos);

        auto missing = run_cli({"evaluate", "--data", tmp.str("ds.json"), "--ckpt", tmp.str("nope.ckpt")});
        REQUIRE(missing.code == cli::kRuntimeError);
    }
}

TEST_CASE("ablate runs the requested variants") {
    TempDir tmp("radar_cli_ablate");
    write_file(tmp.str("tiny.conf"), tiny_config_text());
    auto prep = run_cli({"prepare", "--out", tmp.str("ds.json"), "--users", "16", "--items", "16",
                         "--clusters", "2", "--per-user", "4", "--seed", "3"});
    REQUIRE(prep.code == cli::kOk);

    auto ab = run_cli({"ablate", "--no-env", "--data", tmp.str("ds.json"), "--config", tmp.str("tiny.conf"),
                       "--variants", "full,no-dacl", "--out", tmp.str("ab")});
    INFO(ab.err);
    REQUIRE(ab.code == cli::kOk);
    REQUIRE(ab.out.find("\"full\"") != std::string::npos);
    REQUIRE(ab.out.find("\"no-dacl\"") != std::string::npos);
    auto manifest = nlohmann::ordered_json::parse(slurp(tmp.str("ab/manifest.json")));
    REQUIRE(manifest["results"].size() == 2);

    auto bad = run_cli({"ablate", "--no-env", "--data", tmp.str("ds.json"), "--variants", "bogus"});
    REQUIRE(bad.code == cli::kUsageError);
}

TEST_CASE("robustness sweep reports clean and noisy points") {
    TempDir tmp("radar_cli_robust");
    write_file(tmp.str("tiny.conf"), tiny_config_text());
    auto prep = run_cli({"prepare", "--out", tmp.str("ds.json"), "--users", "16", "--items", "16",
                         "--clusters", "2", "--per-user", "4", "--seed", "3"});
    REQUIRE(prep.code == cli::kOk);

    auto rb = run_cli({"robustness", "--no-env", "--data", tmp.str("ds.json"), "--config",
                       tmp.str("tiny.conf"), "--ratios", "0.25", "--seeds", "5", "--out", tmp.str("rb")});
    INFO(rb.err);
    REQUIRE(rb.code == cli::kOk);
    auto j = nlohmann::ordered_json::parse(rb.out);
    REQUIRE(j["points"].size() == 2);
    REQUIRE(j["points"][0]["ratio"] == 0.0);
    REQUIRE(j["points"][1]["ratio"] == 0.25);
    REQUIRE(j["points"][0]["cells"].size() == 1);

    auto bad = run_cli({"robustness", "--no-env", "--data", tmp.str("ds.json"), "--ratios", "x"});
    REQUIRE(bad.code == cli::kUsageError);
}

TEST_CASE("bottleneck weight sweep emits one row per value") {
    TempDir tmp("radar_cli_sweep");
    write_file(tmp.str("tiny.conf"), tiny_config_text());
    auto prep = run_cli({"prepare", "--out", tmp.str("ds.json"), "--users", "16", "--items", "16",
                         "--clusters", "2", "--per-user", "4", "--seed", "3"});
    REQUIRE(prep.code == cli::kOk);

    auto sw = run_cli({"sweep-lambda", "--no-env", "--data", tmp.str("ds.json"), "--config",
                       tmp.str("tiny.conf"), "--values", "0,5.5", "--out", tmp.str("sw")});
    INFO(sw.err);
    REQUIRE(sw.code == cli::kOk);
    std::size_t rows = 0;
    std::istringstream lines(sw.out);
    std::string line;
    while (std::getline(lines, line))
        if (line.find("lambda_ratio") != std::string::npos) ++rows;
    REQUIRE(rows == 2);
}

TEST_CASE("degree buckets partition the users") {
    data::SyntheticSpec spec;
    spec.n_users = 24;
    spec.n_items = 24;
    spec.n_clusters = 2;
    spec.edges_per_user = 4;
    auto ds = data::split_dataset(data::generate_synthetic(spec, 9), {0.7, 0.2, 0.1}, 9);
    TrainConfig cfg;
    cfg.embed_dim = 4;
    cfg.layers = 1;
    cfg.seed = 2;
    Rng rng(2);
    auto model = train::Model::init(cfg, ds.n_users(), ds.n_items(), rng);
    auto rows = experiments::sparsity_profile(ds, model.e_user, model.e_item, cfg.layers,
                                              data::Split::valid, {2, 3});
    REQUIRE(rows.size() == 3);
    std::size_t population = 0;
    for (const auto& r : rows) population += r.population;
    REQUIRE(population == ds.n_users());
    REQUIRE(rows[0].label.find("<=") != std::string::npos);
    REQUIRE(rows[2].label.find(">") != std::string::npos);
}
