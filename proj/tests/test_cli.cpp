#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string output;
};

RunResult run_prefixed(const std::string& prefix, const std::string& args) {
    const std::string cmd = prefix + PRUNEKIT_CLI_PATH + " " + args + " 2>&1";
    RunResult res;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 512> buf;
    while (fgets(buf.data(), buf.size(), pipe) != nullptr) res.output += buf.data();
    const int status = pclose(pipe);
    res.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return res;
}

RunResult run(const std::string& args) { return run_prefixed("", args); }

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    return nlohmann::json::parse(in);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

const std::string kSynthetic =
    "--dataset synthetic --synthetic-count 192 --synthetic-classes 4 --synthetic-noise 0.4 "
    "--synthetic-seed 5 --eval-count 32 --gamma 32";

}  // namespace

TEST_CASE("flops subcommand reports the reference stack") {
    const auto out = fresh_dir("prunekit_cli_flops");
    const auto res = run("flops --preset vgg16-cifar --output-dir " + out.string());
    CHECK(res.code == 0);
    CHECK(res.output.find("preset=vgg16-cifar") != std::string::npos);
    CHECK(res.output.find("conv_macs=313196544") != std::string::npos);
    CHECK(res.output.find("fc_macs=5120") != std::string::npos);

    const auto rep = read_json(out / "flops.json");
    CHECK(rep.at("conv_macs").get<long long>() == 313196544LL);
    CHECK(rep.at("fc_macs").get<long long>() == 5120LL);
    CHECK(rep.at("total_macs").get<long long>() == 313201664LL);
    fs::remove_all(out);
}

TEST_CASE("train writes a checkpoint that eval reloads") {
    const auto train_out = fresh_dir("prunekit_cli_train");
    const auto train_res =
        run("train --preset vgg-small " + kSynthetic +
            " --steps 25 --batch-size 16 --lr 0.05 --seed 3 --output-dir " + train_out.string());
    CHECK(train_res.code == 0);
    CHECK(train_res.output.find("train: top1=") != std::string::npos);
    CHECK(fs::exists(train_out / "model.json"));
    CHECK(fs::exists(train_out / "model.bin"));
    CHECK(read_json(train_out / "report.json").at("pipeline").get<std::string>() == "train");

    const auto eval_out = fresh_dir("prunekit_cli_eval");
    const auto eval_res = run("eval --checkpoint " + (train_out / "model").string() + " " +
                              kSynthetic + " --output-dir " + eval_out.string());
    CHECK(eval_res.code == 0);
    CHECK(eval_res.output.find("eval: top1=") != std::string::npos);
    const auto rep = read_json(eval_out / "report.json").at("eval");
    CHECK(rep.at("count").get<long long>() == 32);
    CHECK(rep.at("top1").get<double>() >= 0.0);
    CHECK(rep.at("top1").get<double>() <= 1.0);
    fs::remove_all(train_out);
    fs::remove_all(eval_out);
}

TEST_CASE("identical run configs reproduce artifacts byte for byte") {
    const std::string flags = "train --preset vgg-small " + kSynthetic +
                              " --steps 25 --batch-size 16 --lr 0.05 --seed 3 --output-dir ";
    const auto a = fresh_dir("prunekit_cli_repro_a");
    const auto b = fresh_dir("prunekit_cli_repro_b");
    CHECK(run(flags + a.string()).code == 0);
    CHECK(run(flags + b.string()).code == 0);
    for (const char* name : {"model.bin", "model.json", "report.json", "train_log.csv"}) {
        CHECK(slurp(a / name) == slurp(b / name));
    }
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("flag errors exit with a diagnostic") {
    auto res = run("prune --preset vgg-small --mode sideways");
    CHECK(res.code == 2);
    CHECK(res.output.find("error: --mode must be 'global' or 'per-layer'") != std::string::npos);

    res = run("eval --preset vgg-small");
    CHECK(res.code == 2);
    CHECK(res.output.find("error: eval needs --checkpoint") != std::string::npos);

    const auto out = fresh_dir("prunekit_cli_badpreset");
    res = run("flops --preset nonesuch --output-dir " + out.string());
    CHECK(res.code == 2);
    CHECK(res.output.find("error:") != std::string::npos);
    fs::remove_all(out);

    res = run("");
    CHECK(res.code != 0);
    CHECK(res.output.find("subcommand") != std::string::npos);
}

TEST_CASE("the environment override redirects artifacts") {
    const auto env_out = fresh_dir("prunekit_cli_envdir");
    const auto flag_out = fresh_dir("prunekit_cli_flagdir");
    const auto res =
        run_prefixed("PRUNEKIT_OUTPUT_DIR=" + env_out.string() + " ",
                     "flops --preset resnet-small --output-dir " + flag_out.string());
    CHECK(res.code == 0);
    CHECK(fs::exists(env_out / "flops.json"));
    CHECK_FALSE(fs::exists(flag_out / "flops.json"));
    fs::remove_all(env_out);
    fs::remove_all(flag_out);
}

TEST_CASE("a config file supplies defaults for flags") {
    const auto out = fresh_dir("prunekit_cli_config");
    const auto cfg_path = out / "run.json";
    {
        std::ofstream cfg(cfg_path);
        cfg << R"({"preset": "vgg16-cifar"})" << "\n";
    }
    const auto res =
        run("flops --config " + cfg_path.string() + " --output-dir " + out.string());
    CHECK(res.code == 0);
    CHECK(res.output.find("conv_macs=313196544") != std::string::npos);
    fs::remove_all(out);
}
