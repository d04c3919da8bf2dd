#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "sfp/tensor.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
    int exit_code = -1;
    std::string output;
};

CliResult run_cli(const std::string& args) {
    const std::string cmd = std::string(SFP_CLI_PATH) + " " + args + " 2>&1";
    std::array<char, 512> buf{};
    CliResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    while (fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("sfp_cli_" + tag + "_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

} // namespace

TEST_CASE("flops subcommand prints the resnet-20 total") {
    const auto r = run_cli("flops --arch resnet20 --input 32");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("40812544") != std::string::npos);
}

TEST_CASE("flops --json emits machine-readable output") {
    const auto r = run_cli("flops --arch resnet18 --input 224 --pruning-rate 0.3 --json");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("\"total_macs\": 1813561344") != std::string::npos);
    CHECK(r.output.find("\"pruned_ratio_rated\"") != std::string::npos);
}

TEST_CASE("flops rejects unknown architectures with exit code 2") {
    const auto r = run_cli("flops --arch resnet19 --input 32");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("6n+2") != std::string::npos);
}

TEST_CASE("train with a missing config exits with code 2") {
    const auto r = run_cli("train --config /nonexistent/missing.toml");
    CHECK(r.exit_code == 2);
}

TEST_CASE("unknown flags produce usage text and a nonzero exit") {
    const auto r = run_cli("flops --no-such-flag");
    CHECK(r.exit_code == 2);
}

TEST_CASE("datagen, train, prune, compact and bench chain together") {
    TempDir dir("chain");
    const std::string data = (dir.path / "data").string();
    auto r = run_cli("datagen --out " + data + " --train 96 --test 32 --seed 4");
    REQUIRE(r.exit_code == 0);

    std::ofstream cfg(dir.path / "run.toml");
    cfg << "[model]\narchitecture = plain-chain\nwidths = 6,8\nstrides = 1,2\n"
           "input_channels = 1\ninput_size = 28\nclasses = 10\n"
           "[sfp]\npruning_rate = 0.25\nepochs = 1\nseed = 2\n"
           "[data]\nkind = idx\ndir = " << data << "\ntrain_subset = 96\ntest_subset = 32\n"
           "[train]\nbatch_size = 32\nlr_schedule = 0:0.05\n";
    cfg.close();

    const std::string out = (dir.path / "run").string();
    r = run_cli("train --config " + (dir.path / "run.toml").string() + " --out-dir " + out);
    REQUIRE(r.exit_code == 0);
    CHECK(fs::exists(out + "/model.sfp"));

    r = run_cli("prune --model " + out + "/model.sfp --out " + (dir.path / "p.sfp").string() +
                " --pruning-rate 0.25");
    REQUIRE(r.exit_code == 0);

    r = run_cli("compact --model " + (dir.path / "p.sfp").string() + " --out " +
                (dir.path / "c.sfp").string() + " --check 20");
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("max logit diff") != std::string::npos);

    r = run_cli("bench --model " + (dir.path / "p.sfp").string() + " --compact " +
                (dir.path / "c.sfp").string() + " --batch 4 --reps 10");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("realistic speedup") != std::string::npos);

    // reps < 10 is a configuration error.
    r = run_cli("bench --model " + (dir.path / "p.sfp").string() + " --compact " +
                (dir.path / "c.sfp").string() + " --batch 4 --reps 5");
    CHECK(r.exit_code == 2);
}

TEST_CASE("reproduce prints identical log hashes across runs") {
    TempDir dir("repro");
    std::ofstream cfg(dir.path / "run.toml");
    cfg << "[model]\narchitecture = plain-chain\nwidths = 6\nstrides = 1\n"
           "input_channels = 1\ninput_size = 28\nclasses = 10\n"
           "[sfp]\npruning_rate = 0.2\nepochs = 1\nseed = 9\n"
           "[data]\nkind = synthetic\ndir = " << (dir.path / "data").string()
        << "\ntrain_subset = 64\ntest_subset = 32\n"
           "[train]\nbatch_size = 32\nlr_schedule = 0:0.05\n";
    cfg.close();

    const auto a = run_cli("reproduce --config " + (dir.path / "run.toml").string() +
                           " --out-dir " + (dir.path / "a").string());
    const auto b = run_cli("reproduce --config " + (dir.path / "run.toml").string() +
                           " --out-dir " + (dir.path / "b").string());
    REQUIRE(a.exit_code == 0);
    REQUIRE(b.exit_code == 0);
    const auto hash_of = [](const std::string& s) {
        const auto pos = s.find("log_hash=");
        REQUIRE(pos != std::string::npos);
        return s.substr(pos, 9 + 16);
    };
    CHECK(hash_of(a.output) == hash_of(b.output));
}
