#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "l2i/cli.hpp"

using namespace l2i;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome cli(std::vector<std::string> args) {
    args.insert(args.begin(), "l2i");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

const std::string kDefaultConfig = std::string(L2I_SOURCE_DIR) + "/configs/default.cfg";

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("l2i_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path quick_config(const fs::path& dir) {
    const auto path = dir / "quick.cfg";
    std::ofstream(path) << "model.hidden = 16\nmodel.latent_dim = 4\nearly_stop.max_steps = 50\n"
                           "experiment.variants = Vanilla,L2I\nexperiment.n_runs = 2\n";
    return path;
}

std::string column(const std::string& csv, std::size_t col) {
    std::istringstream is(csv);
    std::string line, out;
    while (std::getline(is, line)) out += io::split(line, ',').at(col) + "\n";
    return out;
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
    auto r = cli({"frobnicate"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("Usage"), std::string::npos);
    EXPECT_EQ(cli({}).code, 2);
    EXPECT_EQ(cli({"run", "--runs", "zero"}).code, 2);
    EXPECT_EQ(cli({"run", "--config", "/nonexistent.cfg"}).code, 2);
    EXPECT_EQ(cli({"eval", "--data", "x.csv"}).code, 2);
    EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST(Cli, RuntimeErrorsExitOne) {
    const auto dir = scratch("runtime");
    std::ofstream(dir / "bad.cfg") << "loss.d = 3\n";
    auto r = cli({"run", "--config", (dir / "bad.cfg").string(), "--out", (dir / "o").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("loss.d"), std::string::npos);
    EXPECT_EQ(cli({"run", "--variants", "Nope", "--out", (dir / "o").string()}).code, 1);
    fs::remove_all(dir);
}

TEST(Cli, DefaultConfigRunWritesTables) {
    const auto dir = scratch("default");
    auto r = cli({"run", "--config", kDefaultConfig, "--runs", "2", "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* f : {"results.csv", "summary.csv", "summary.md", "metadata.txt"}) {
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    }
    EXPECT_NE(r.out.find("NoMargin"), std::string::npos);
    fs::remove_all(dir);
}

TEST(Cli, SeedOverrideChangesValuesNotSchema) {
    const auto dir = scratch("seed");
    const auto cfg = quick_config(dir).string();
    ASSERT_EQ(cli({"run", "--config", cfg, "--out", (dir / "a").string()}).code, 0);
    ASSERT_EQ(cli({"run", "--config", cfg, "--out", (dir / "b").string()}).code, 0);
    ASSERT_EQ(cli({"run", "--config", cfg, "--seed", "12345", "--out", (dir / "c").string()}).code, 0);
    const auto a = io::read_file(dir / "a/results.csv"), b = io::read_file(dir / "b/results.csv"),
               c = io::read_file(dir / "c/results.csv");
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    for (std::size_t col = 0; col < 3; ++col) EXPECT_EQ(column(a, col), column(c, col));
    EXPECT_NE(io::read_file(dir / "c/metadata.txt").find("experiment.master_seed = 12345"), std::string::npos);
    fs::remove_all(dir);
}

TEST(Cli, VariantsAndRunsFlags) {
    const auto dir = scratch("flags");
    const auto cfg = quick_config(dir).string();
    ASSERT_EQ(cli({"run", "--config", cfg, "--variants", "Fixed", "--runs", "1", "--out", dir.string()}).code, 0);
    const auto results = io::read_file(dir / "results.csv");
    EXPECT_EQ(results, "variant,run,domain,accuracy,kappa,auroc\n" + results.substr(results.find('\n') + 1));
    EXPECT_EQ(std::count(results.begin(), results.end(), '\n'), 3);
    EXPECT_NE(results.find("Fixed,0,target"), std::string::npos);
    fs::remove_all(dir);
}

TEST(Cli, GenerateEvalProject) {
    const auto dir = scratch("pipeline");
    const auto cfg = quick_config(dir).string();
    ASSERT_EQ(cli({"generate-data", "--config", cfg, "--out", dir.string()}).code, 0);
    const auto data = dir / "dataset.csv";
    ASSERT_TRUE(fs::exists(data));
    EXPECT_EQ(dataset_from_csv(io::read_file(data)).size(), 686u);

    ASSERT_EQ(cli({"run", "--config", cfg, "--variants", "L2I", "--runs", "1", "--out", (dir / "run").string()}).code,
              0);
    const auto ckpt = (dir / "run/checkpoints/L2I_run0.ckpt").string();
    auto ev = cli({"eval", "--checkpoint", ckpt, "--data", data.string(), "--out", dir.string()});
    ASSERT_EQ(ev.code, 0) << ev.err;
    EXPECT_EQ(ev.out.substr(0, ev.out.find('\n')), "domain,n,accuracy,kappa,auroc");
    EXPECT_NE(ev.out.find("target,14,"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "eval.csv"));

    auto pr = cli({"project", "--checkpoint", ckpt, "--data", data.string(), "--split", "all", "--out", dir.string()});
    ASSERT_EQ(pr.code, 0) << pr.err;
    const auto proj = io::read_file(dir / "projection.csv");
    EXPECT_EQ(std::count(proj.begin(), proj.end(), '\n'), 687);

    std::ofstream(dir / "tiny.csv") << io::read_file(data).substr(0, 200);
    EXPECT_EQ(cli({"eval", "--checkpoint", ckpt, "--data", (dir / "tiny.csv").string()}).code, 1);
    fs::remove_all(dir);
}
