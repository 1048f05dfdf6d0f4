#include <gtest/gtest.h>

#include "cli.hpp"
#include "laser/config.hpp"
#include "laser/errors.hpp"
#include "laser/image.hpp"
#include "laser/run.hpp"
#include "support.hpp"

using namespace laser;
using nlohmann::json;
using testing_support::random_image;
using testing_support::scratch_dir;
using testing_support::write_text;

namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code;
    std::string out;
};

CliResult run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "laser");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    ::testing::internal::CaptureStdout();
    ::testing::internal::CaptureStderr();
    const int code = laser::cli::run(static_cast<int>(argv.size()), argv.data());
    CliResult r{code, ::testing::internal::GetCapturedStdout()};
    ::testing::internal::GetCapturedStderr();
    return r;
}

std::size_t png_count(const fs::path& dir) {
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ".png";
    return n;
}

}  // namespace

TEST(Config, DefaultsFollowStepCount) {
    RunConfig c;
    const auto j = c.to_json();
    EXPECT_EQ(j.at("steps"), 50);
    EXPECT_EQ(j.at("cfg_scale"), 7.5);
    const auto g = c.generator_config(sd15_descriptor());
    EXPECT_EQ(g.fai_schedule.describe(),
              "steps 1-25, layers 1-" + std::to_string(sd15_descriptor().num_decoder_layers()));
    EXPECT_EQ(g.attention_schedule.describe(), "steps 6-50, layers 3-8");
    c.steps = 20;
    EXPECT_EQ(c.generator_config(sd15_descriptor()).attention_schedule.describe(), "steps 3-20, layers 3-8");
}

TEST(Config, MergeIsStrict) {
    RunConfig c;
    c.merge(json{{"steps", 30}, {"attention", {{"steps", {4, 30}}, {"layers", {2, 6}}}}, {"strategy", "kvai"}});
    EXPECT_EQ(c.steps, 30);
    EXPECT_EQ(c.attention_steps, (IndexRange{4, 30}));
    EXPECT_EQ(c.attention_layers, (IndexRange{2, 6}));
    EXPECT_EQ(c.strategy, InjectionStrategy::kvai);
    EXPECT_THROW(c.merge(json{{"stepz", 3}}), ConfigError);
    EXPECT_THROW(c.merge(json{{"attention", {{"window", 3}}}}), ConfigError);
    EXPECT_THROW(c.merge(json{{"steps", "many"}}), ConfigError);
}

TEST(Config, HashIgnoresOutputLocationAndWorkers) {
    RunConfig a, b;
    b.output_dir = "elsewhere";
    b.trace_cache = "/tmp/cache";
    b.jobs = 4;
    EXPECT_EQ(a.hash(), b.hash());
    b.seed = 1;
    EXPECT_NE(a.hash(), b.hash());
}

TEST(Config, LoadFromFile) {
    const auto dir = scratch_dir("config-load");
    write_text(dir / "c.json", R"({"steps": 12, "n_f": 5})");
    const auto c = load_run_config(dir / "c.json");
    EXPECT_EQ(c.steps, 12);
    EXPECT_EQ(c.n_f, 5);
    write_text(dir / "bad.json", R"({"steps": 12, "colour": 1})");
    EXPECT_THROW(load_run_config(dir / "bad.json"), ConfigError);
}

TEST(Cli, ExitCodes) {
    EXPECT_EQ(run_cli({"--help"}).code, 0);
    EXPECT_EQ(run_cli({"generate"}).code, 2);
    EXPECT_EQ(run_cli({"describe", "--backbone", "mystery"}).code, 1);
    EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
    const auto dir = scratch_dir("cli-empty");
    write_text(dir / "in.png", "");
    save_png(random_image(32, 1), dir / "in.png");
    fs::create_directories(dir / "frames");
    EXPECT_EQ(run_cli({"eval", "--frames", (dir / "frames").string(), "--input", (dir / "in.png").string()}).code, 1);
}

TEST(Cli, DescribeTiny) {
    const auto r = run_cli({"describe", "--backbone", "tiny-test"});
    ASSERT_EQ(r.code, 0);
    int layer_lines = 0;
    std::istringstream ss(r.out);
    for (std::string line; std::getline(ss, line);) {
        std::istringstream ls(line);
        int idx = 0, res = 0;
        if (ls >> idx >> res && idx >= 1) ++layer_lines;
    }
    EXPECT_GE(layer_lines, 8);
}

TEST(Cli, DescribeSd15ScheduleLine) {
    const auto r = run_cli({"describe"});
    ASSERT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("KVAI/DAI: steps 6–50, layers 3–8"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("FAI: steps 1–25"), std::string::npos);
}

TEST(Cli, GenerateSmokeAndOverride) {
    const auto dir = scratch_dir("cli-generate");
    save_png(random_image(32, 2), dir / "in.png");
    write_text(dir / "config.json", R"({"steps": 7, "n_f": 4})");
    const auto r = run_cli({"generate", "-d", "A year has passed on the spring meadow", "-i", (dir / "in.png").string(),
                        "--config", (dir / "config.json").string(), "--steps", "6", "--nt", "2", "--strategy",
                        "FAI", "--out", (dir / "run").string()});
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(png_count(dir / "run" / "frames"), expected_frame_count(2, 4));
    EXPECT_TRUE(fs::exists(dir / "run" / "animation.gif"));
    const json m = read_json(dir / "run" / "manifest.json");
    EXPECT_EQ(m.at("status"), "complete");
    EXPECT_EQ(m.at("config").at("steps"), 6);  // flag beats file
    EXPECT_EQ(m.at("config").at("n_f"), 4);    // file beats default
    for (const auto& t : m.at("plan").at("transitions")) {
        EXPECT_EQ(t.at("strategy"), "FAI");
        EXPECT_EQ(t.at("decided_by"), "override");
    }
    EXPECT_EQ(m.at("frames").size(), expected_frame_count(2, 4));
}

TEST(Cli, EvalMetrics) {
    const auto dir = scratch_dir("cli-eval");
    const Image a = random_image(32, 3), b = random_image(32, 4);
    save_png(a, dir / "in.png");
    fs::create_directories(dir / "same");
    fs::create_directories(dir / "drift");
    for (int k = 0; k < 12; ++k) {
        char name[16];
        std::snprintf(name, sizeof name, "%04d.png", k);
        save_png(a, dir / "same" / name);
        Image f(32, 32);
        for (std::size_t i = 0; i < f.pixels.size(); ++i) f.pixels[i] = a.pixels[i] + (b.pixels[i] - a.pixels[i]) * k / 11.0f;
        save_png(f, dir / "drift" / name);
    }
    ASSERT_EQ(run_cli({"eval", "--frames", (dir / "same").string(), "--input", (dir / "in.png").string(), "--out",
                   (dir / "same.json").string()}).code, 0);
    const json same = read_json(dir / "same.json");
    EXPECT_EQ(same.at("lpips_total"), 0.0);
    EXPECT_EQ(same.at("ppl"), 0.0);

    ASSERT_EQ(run_cli({"eval", "--frames", (dir / "drift").string(), "--input", (dir / "in.png").string(), "--out",
                   (dir / "drift.json").string()}).code, 0);
    const json drift = read_json(dir / "drift.json");
    EXPECT_GT(drift.at("lpips_total").get<double>(), 0.0);
    EXPECT_NEAR(drift.at("ppl").get<double>(), drift.at("lpips_total").get<double>() * 11.0, 1e-9);
    EXPECT_EQ(drift.at("n_frames"), 12);
}

TEST(Cli, BenchValidate) {
    EXPECT_EQ(run_cli({"bench", "validate", "--set", testing_support::source_path("data/smoke.jsonl").string()}).code, 0);
    EXPECT_EQ(run_cli({"bench", "validate", "--set", testing_support::source_path("data/smoke.jsonl").string(),
                   "--reference"}).code, 1);
}
