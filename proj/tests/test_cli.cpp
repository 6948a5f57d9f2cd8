#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eris/cli.hpp"
#include "eris/data.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t line_count(const fs::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) ++n;
    return n;
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    return json::parse(in);
}

// Small, fast configuration shared by the training commands.
std::string write_small_config(const TempDir& dir) {
    const json cfg = {
        {"synthetic", {{"length", 16}, {"samples_per_domain_class", 4}}},
        {"arch", {{"kernel", 3}, {"conv_channels", {4}}, {"encoding_dim", 6},
                  {"projection_dim", 4}, {"mlp_hidden", 8}}},
        {"train", {{"epochs", 2}, {"batch_size", 16}, {"lr0", 0.001}, {"init", "fan_in"}}},
    };
    const std::string path = dir / "small.json";
    std::ofstream(path) << cfg.dump(2);
    return path;
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
    CHECK(eris::cli::run(std::vector<std::string>{}) == eris::cli::kUsage);
    CHECK(eris::cli::run({"frobnicate"}) == eris::cli::kUsage);
    CHECK(eris::cli::run({"train", "--out", "x", "--bogus"}) == eris::cli::kUsage);
    CHECK(eris::cli::run({"train"}) == eris::cli::kUsage);
    CHECK(eris::cli::run({"sweep", "--out", "x.csv", "--param", "nope", "--values", "1"}) ==
          eris::cli::kUsage);
    CHECK(eris::cli::run({"ablate", "--out", "x", "--values", "Z"}) == eris::cli::kUsage);
    CHECK(eris::cli::run({"--help"}) == eris::cli::kOk);
}

TEST_CASE("config files are validated") {
    TempDir dir("eris_cli_config");
    const std::string bad = dir / "bad.json";
    std::ofstream(bad) << R"({"train": {"lr": 0.1}})";
    CHECK(eris::cli::run({"gen-data", "--config", bad, "--out", dir / "d.csv"}) ==
          eris::cli::kUsage);
    const std::string broken = dir / "broken.json";
    std::ofstream(broken) << "{ not json";
    CHECK(eris::cli::run({"gen-data", "--config", broken, "--out", dir / "d.csv"}) ==
          eris::cli::kUsage);
}

TEST_CASE("runtime failures exit with 2") {
    TempDir dir("eris_cli_runtime");
    CHECK(eris::cli::run({"train", "--data", dir / "missing.csv", "--out", dir / "run"}) ==
          eris::cli::kRuntime);
    CHECK(eris::cli::run({"report", dir.path.string(), "--out", dir / "r.csv"}) ==
          eris::cli::kRuntime);
}

TEST_CASE("gen-data writes the dataset and a manifest") {
    TempDir dir("eris_cli_gen");
    REQUIRE(eris::cli::run({"gen-data", "--seed", "7", "--out", dir / "data.csv"}) ==
            eris::cli::kOk);
    const auto ds = eris::load_dataset(dir / "data.csv");
    CHECK(ds.size() == 4 * 4 * 20);
    CHECK(ds.num_domains() == 4);
    const json m = read_json(dir / "data.manifest.json");
    CHECK(m.at("command") == "gen-data");
    CHECK(m.at("config").at("synthetic").at("seed") == 7);
}

TEST_CASE("ortho-sim certifies the reference flow") {
    TempDir dir("eris_cli_ortho");
    REQUIRE(eris::cli::run({"ortho-sim", "--h", "16", "--d", "8", "--dt", "1e-3", "--steps",
                            "200000", "--out", dir / "traj.csv"}) == eris::cli::kOk);
    const json m = read_json(dir / "traj.manifest.json");
    const auto& r = m.at("report");
    CHECK(r.at("certified").get<bool>());
    CHECK(r.at("final_loss").get<double>() <= 1e-8 * r.at("initial_loss").get<double>());
    CHECK(line_count(dir.path / "traj.csv") > 2);
}

TEST_CASE("train, eval and report round trip") {
    TempDir dir("eris_cli_train");
    const std::string cfg = write_small_config(dir);
    REQUIRE(eris::cli::run({"train", "--config", cfg, "--target-domain", "1", "--seed", "3",
                            "--out", dir / "a"}) == eris::cli::kOk);
    CHECK(line_count(dir.path / "a" / "history.csv") == 3);
    CHECK(fs::exists(dir.path / "a" / "params.bin"));
    CHECK(read_json(dir.path / "a" / "metrics.json").at("samples") == 16);

    // Re-running from the manifest reproduces every byte.
    REQUIRE(eris::cli::run({"train", "--config", dir / "a/manifest.json", "--out", dir / "b"}) ==
            eris::cli::kOk);
    CHECK(slurp(dir.path / "a" / "history.csv") == slurp(dir.path / "b" / "history.csv"));
    CHECK(slurp(dir.path / "a" / "params.bin") == slurp(dir.path / "b" / "params.bin"));
    CHECK(slurp(dir.path / "a" / "manifest.json") == slurp(dir.path / "b" / "manifest.json"));

    REQUIRE(eris::cli::run({"eval", "--config", cfg, "--params", dir / "a/params.bin",
                            "--target-domain", "1", "--out", dir / "e"}) == eris::cli::kOk);
    CHECK(line_count(dir.path / "e" / "correlation.csv") == 6);
    CHECK(line_count(dir.path / "e" / "mutual_information.csv") == 6);
    CHECK(line_count(dir.path / "e" / "embeddings.csv") == 17);
    CHECK(read_json(dir.path / "e" / "metrics.json").at("accuracy") ==
          read_json(dir.path / "a" / "metrics.json").at("accuracy"));

    // A mismatched parameter file is a runtime error.
    const std::string three = dir / "three.json";
    std::ofstream(three) << R"({"synthetic": {"num_classes": 3}})";
    CHECK(eris::cli::run({"eval", "--config", three, "--params", dir / "a/params.bin", "--out",
                          dir / "f"}) == eris::cli::kRuntime);

    REQUIRE(eris::cli::run({"report", dir.path.string(), "--out", dir / "report.csv"}) ==
            eris::cli::kOk);
    CHECK(line_count(dir.path / "report.csv") == 4);
}

TEST_CASE("sweep and ablate write one row per setting") {
    TempDir dir("eris_cli_sweep");
    const std::string cfg = write_small_config(dir);
    REQUIRE(eris::cli::run({"sweep", "--config", cfg, "--target-domain", "0", "--param",
                            "lambda2", "--values", "0.5,2", "--out", dir / "sweep.csv"}) ==
            eris::cli::kOk);
    CHECK(line_count(dir.path / "sweep.csv") == 3);
    CHECK(fs::exists(dir.path / "sweep.manifest.json"));
    CHECK(eris::cli::run({"sweep", "--config", cfg, "--param", "lambda2", "--values", "x",
                          "--out", dir / "bad.csv"}) == eris::cli::kUsage);

    REQUIRE(eris::cli::run({"ablate", "--config", cfg, "--target-domain", "2", "--values", "B,G",
                            "--out", dir / "abl"}) == eris::cli::kOk);
    CHECK(line_count(dir.path / "abl" / "summary.csv") == 3);
    CHECK(line_count(dir.path / "abl" / "runs.csv") == 3);
    CHECK(fs::exists(dir.path / "abl" / "G" / "history_t2_s0.csv"));
}
