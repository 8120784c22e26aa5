#include <gtest/gtest.h>
#include <stdlib.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "madn/eval.hpp"
#include "madn/image.hpp"

namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int exit_code = -1;
    std::string output;  // stdout and stderr combined
};

CmdResult run_cli(const std::string& args) {
    const std::string cmd = std::string(MADN_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    EXPECT_NE(pipe, nullptr);
    CmdResult r;
    char buf[512];
    while (fgets(buf, sizeof(buf), pipe) != nullptr) r.output += buf;
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// One tiny pipeline shared by the suite: dataset, short training run, report.
class CliTest : public ::testing::Test {
   protected:
    static fs::path root() {
        static const fs::path p =
            fs::temp_directory_path() / ("madn_cli_test_" + std::to_string(getpid()));
        return p;
    }
    static fs::path run_dir() { return root() / "default"; }
    static fs::path checkpoint() { return run_dir() / "train_adn_ct" / "ckpt_final.ckpt"; }

    static constexpr const char* kGenArgs =
        "gen-data --set phantom.image_size=32 --set phantom.implant_radius_min=2"
        " --set phantom.implant_radius_max=4 --set n_clean_train=2 --set n_corrupted_train=2"
        " --set n_test=3";

    static void SetUpTestSuite() {
        setenv("MADN_OUTPUT_ROOT", root().string().c_str(), 1);
        const CmdResult gen = run_cli(kGenArgs);
        ASSERT_EQ(gen.exit_code, 0) << gen.output;
        ASSERT_NE(gen.output.find("manifest.json"), std::string::npos);
        const CmdResult train = run_cli(
            "train --mode adn_ct --set train.max_steps=2 --set train.batch_size=2"
            " --set train.learning_rate=1e-4");
        ASSERT_EQ(train.exit_code, 0) << train.output;
        const CmdResult eval = run_cli("eval --method no_mar --method adn_ct=" +
                                       checkpoint().string());
        ASSERT_EQ(eval.exit_code, 0) << eval.output;
    }
};

TEST_F(CliTest, HelpOnEverySubcommandExitsZero) {
    EXPECT_EQ(run_cli("--help").exit_code, 0);
    for (const char* sub : {"gen-data", "train", "correct", "eval", "plot"}) {
        const CmdResult r = run_cli(std::string(sub) + " --help");
        EXPECT_EQ(r.exit_code, 0) << sub;
        EXPECT_NE(r.output.find("--help"), std::string::npos) << sub;
    }
    // Flags and their defaults are documented.
    const CmdResult train_help = run_cli("train --help");
    for (const char* flag : {"--config", "--set", "--mode", "--dataset-dir", "--out-dir", "--resume"})
        EXPECT_NE(train_help.output.find(flag), std::string::npos) << flag;
    EXPECT_NE(run_cli("plot --help").output.find("4"), std::string::npos);  // --samples default
}

TEST_F(CliTest, GenDataIsDeterministicAcrossReruns) {
    const fs::path again = root() / "again";
    const CmdResult r = run_cli(std::string(kGenArgs) + " --out-dir " + again.string());
    ASSERT_EQ(r.exit_code, 0) << r.output;
    const fs::path sample = fs::path("test") / "sample_00000_clean.raw";
    EXPECT_EQ(read_bytes(run_dir() / "dataset" / sample), read_bytes(again / sample));
    const nlohmann::json a = madn::read_json_file(run_dir() / "dataset" / "manifest.json");
    const nlohmann::json b = madn::read_json_file(again / "manifest.json");
    EXPECT_EQ(a.at("splits"), b.at("splits"));
    EXPECT_EQ(a.at("stats"), b.at("stats"));
}

TEST_F(CliTest, TrainWroteCheckpointAndMetrics) {
    EXPECT_TRUE(fs::exists(checkpoint()));
    std::ifstream csv(run_dir() / "train_adn_ct" / "metrics.csv");
    ASSERT_TRUE(csv.good());
    int lines = 0;
    for (std::string line; std::getline(csv, line);) ++lines;
    EXPECT_EQ(lines, 3);  // header + one row per step
}

TEST_F(CliTest, CorrectIsIdempotentWithReadableSidecars) {
    const fs::path input = run_dir() / "dataset" / "test" / "sample_00000_corrupted";
    const fs::path out = root() / "corrected_0";
    const std::string args = "correct --checkpoint " + checkpoint().string() + " --input " +
                             input.string() + " --out " + out.string();
    const CmdResult first = run_cli(args);
    ASSERT_EQ(first.exit_code, 0) << first.output;
    EXPECT_NE(first.output.find("corrected_0.raw"), std::string::npos);

    const madn::MultimodalSlice corrected = madn::read_slice(out);
    EXPECT_EQ(corrected.domain, madn::Domain::clean);
    EXPECT_EQ(corrected.height(), 32);

    const std::string raw = read_bytes(fs::path(out).concat(".raw"));
    const std::string sidecar = read_bytes(fs::path(out).concat(".json"));
    const CmdResult second = run_cli(args);
    ASSERT_EQ(second.exit_code, 0);
    EXPECT_EQ(read_bytes(fs::path(out).concat(".raw")), raw);
    EXPECT_EQ(read_bytes(fs::path(out).concat(".json")), sidecar);
}

TEST_F(CliTest, CorrectMatchesEvalPsnrOnSameSample) {
    const fs::path out = root() / "corrected_psnr";
    const CmdResult r = run_cli("correct --checkpoint " + checkpoint().string() + " --input " +
                                (run_dir() / "dataset" / "test" / "sample_00000_corrupted").string() +
                                " --out " + out.string());
    ASSERT_EQ(r.exit_code, 0) << r.output;

    const fs::path base = run_dir() / "dataset" / "test" / "sample_00000";
    const madn::MultimodalSlice clean = madn::read_slice(fs::path(base).concat("_clean"));
    const madn::ByteImage metal = madn::read_byte_image(fs::path(base).concat("_metal"));
    const madn::MultimodalSlice corrected = madn::read_slice(out);
    const double cli_psnr = madn::psnr(corrected.channel(0), clean.channel(0), &metal);

    const auto report = madn::evaluate({{"adn_ct", checkpoint()}}, run_dir() / "dataset",
                                       root() / "psnr_xcheck");
    EXPECT_NEAR(cli_psnr, report.values.at("adn_ct").at("psnr_ct")[0], 1e-6);
}

TEST_F(CliTest, EvalWroteWellFormedReport) {
    const auto report = madn::load_report(run_dir() / "eval");
    EXPECT_EQ(report.methods, (std::vector<std::string>{"no_mar", "adn_ct"}));
    EXPECT_EQ(report.values.at("no_mar").at("psnr_ct").size(), 3u);
    EXPECT_TRUE(report.reference.empty());  // no method named madn
}

TEST_F(CliTest, PlotRendersRequestedFigures) {
    const CmdResult r = run_cli("plot --method no_mar --method adn_ct=" + checkpoint().string() +
                                " --samples 2");
    ASSERT_EQ(r.exit_code, 0) << r.output;
    EXPECT_TRUE(fs::exists(run_dir() / "figures" / "bars_sigma_ct_roi_0.png"));
    EXPECT_TRUE(fs::exists(run_dir() / "figures" / "panel_sample_001.png"));

    // Bars only when no methods are given.
    const CmdResult bars = run_cli("plot --out-dir " + (root() / "bars_only").string());
    ASSERT_EQ(bars.exit_code, 0) << bars.output;
    EXPECT_FALSE(fs::exists(root() / "bars_only" / "panel_sample_000.png"));
}

TEST_F(CliTest, UsageErrorsExitOne) {
    EXPECT_EQ(run_cli("").exit_code, 1);
    EXPECT_EQ(run_cli("unknown-subcommand").exit_code, 1);
    EXPECT_EQ(run_cli("train --mode bogus").exit_code, 1);
    EXPECT_EQ(run_cli("train --set train.bogus=1").exit_code, 1);
    EXPECT_EQ(run_cli("train --set no_equals").exit_code, 1);
    EXPECT_EQ(run_cli("gen-data --config /nonexistent/config.json").exit_code, 1);
    EXPECT_EQ(run_cli("eval --dataset-dir " + (run_dir() / "dataset").string()).exit_code,
              1);  // --method required
    EXPECT_EQ(run_cli("plot --samples 0").exit_code, 1);
    EXPECT_EQ(run_cli("eval --method =x").exit_code, 1);
}

TEST_F(CliTest, RuntimeFailuresExitTwo) {
    EXPECT_EQ(run_cli("eval --method no_mar --dataset-dir /nonexistent/ds").exit_code, 2);
    EXPECT_EQ(run_cli("correct --checkpoint /nonexistent.ckpt --input x --out y").exit_code, 2);
    EXPECT_EQ(run_cli("plot --report-dir /nonexistent/report").exit_code, 2);
    EXPECT_EQ(run_cli("train --dataset-dir /nonexistent/ds").exit_code, 2);
    // Figure kinds disabled and no methods: nothing to render.
    EXPECT_EQ(run_cli("plot --set plot_bars=false").exit_code, 2);
}

TEST_F(CliTest, ConfigFileDrivesCommandsAndEnvOverridesRoot) {
    const fs::path cfg_path = root() / "cfg.json";
    {
        std::ofstream f(cfg_path);
        f << R"({"run_name": "from_config", "phantom": {"image_size": 32, "implant_radius_min": 2,
                "implant_radius_max": 4}, "n_clean_train": 1, "n_corrupted_train": 1, "n_test": 1})";
    }
    const CmdResult r = run_cli("gen-data --config " + cfg_path.string());
    ASSERT_EQ(r.exit_code, 0) << r.output;
    // MADN_OUTPUT_ROOT (set for the whole suite) overrides the default root.
    EXPECT_TRUE(fs::exists(root() / "from_config" / "dataset" / "manifest.json"));
}

}  // namespace
