#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path& work() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "wsl_test_cli";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

int run(const std::string& args) {
    const std::string cmd = "cd '" + work().string() + "' && '" WSLFOOD_BIN "' " + args + " >>cli.log 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write(const fs::path& p, const std::string& text) {
    std::ofstream(work() / p) << text;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(work() / p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST(Cli, HelpAndVersionExitZero) {
    EXPECT_EQ(run("--help"), 0);
    EXPECT_EQ(run("--version"), 0);
    EXPECT_EQ(run("train base --help"), 0);
}

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run("frobnicate"), 2);
    EXPECT_EQ(run("train base --out x"), 2);  // missing --data
    write("bad.cfg", "{ not json");
    EXPECT_EQ(run("synth generate --config bad.cfg --out s"), 2);
    write("unknown.cfg", R"({"classes": 3, "colour": "red"})");
    EXPECT_EQ(run("synth generate --config unknown.cfg --out s"), 2);
    EXPECT_EQ(run("eval --ckpt missing.json --data x --out e"), 2);
}

TEST(Cli, PipelineWritesArtifactsAndManifests) {
    ASSERT_EQ(run("synth generate --classes 3 --per-class 8 --size 32 --seed 1 --name noisy --out noisy"), 0);
    ASSERT_EQ(run("synth generate --classes 3 --per-class 8 --size 32 --seed 2 --name cur --curated "
                  "--cross-cat 0 --cross-dom 0 --out cur"),
              0);
    ASSERT_EQ(run("synth testset --classes 3 --per-class 4 --size 32 --seed 3 --name test --out test"), 0);
    EXPECT_TRUE(fs::exists(work() / "noisy/manifest.jsonl"));
    EXPECT_TRUE(fs::exists(work() / "noisy/run_manifest.json"));

    ASSERT_EQ(run("dataset filter --manifest noisy --min-px 16 --out filtered.jsonl"), 0);
    EXPECT_TRUE(fs::exists(work() / "filtered.run.json"));
    ASSERT_EQ(run("dataset split --manifest noisy --val-frac 0.25 --seed 4 --out split"), 0);
    EXPECT_TRUE(fs::exists(work() / "split/train.jsonl"));
    EXPECT_TRUE(fs::exists(work() / "split/val.jsonl"));

    write("train.cfg", R"({"backbone_widths": [4, 4], "epochs": 2, "batch_size": 8, "lr_head": 0.003,
                           "lr_backbone": 0.003})");
    ASSERT_EQ(run("train base --data split/train.jsonl --val split/val.jsonl --config train.cfg --seed 5 --out base"), 0);
    EXPECT_TRUE(fs::exists(work() / "base/checkpoint.json"));
    EXPECT_TRUE(fs::exists(work() / "base/loss_history.csv"));
    const auto rm = nlohmann::json::parse(slurp("base/run_manifest.json"));
    EXPECT_EQ(rm["command"].get<std::string>().rfind("train base", 0), 0u);
    EXPECT_TRUE(rm.contains("seeds"));
    EXPECT_TRUE(rm["inputs"].contains("data"));

    ASSERT_EQ(run("train wsl --base base/checkpoint.json --data split/train.jsonl --epochs 1 --out wsl"), 0);
    ASSERT_EQ(run("eval --ckpt wsl/checkpoint.json --data test -k 2 --out eval"), 0);
    EXPECT_EQ(slurp("eval/metrics.csv").substr(0, 19), "images,k,top1,topk\n");
    EXPECT_TRUE(fs::exists(work() / "eval/confusion.csv"));

    fs::path image;
    for (const auto& e : fs::directory_iterator(work() / "test/images"))
        if (image.empty() || e.path() < image) image = e.path();
    ASSERT_EQ(run("cam --image '" + image.string() + "' --ckpt wsl/checkpoint.json --out overlay.png --boxes boxes.csv"), 0);
    EXPECT_TRUE(fs::exists(work() / "overlay.png"));
    EXPECT_EQ(slurp("boxes.csv").substr(0, 20), "id,class,x,y,w,h,sco");

    write("sweep.cfg", R"({"manifests": {"noisy": "noisy", "cur": "cur"},
                           "curated_fraction": {"pool": "noisy", "curated": "cur", "fractions": [0, 1]},
                           "base_config": {"backbone_widths": [4, 4], "epochs": 1, "batch_size": 8},
                           "wsl_config": {"epochs": 1}, "topk": 2, "seed": 6})");
    ASSERT_EQ(run("sweep run --specs sweep.cfg --test test --out sweep"), 0);
    ASSERT_EQ(run("sweep run --replay sweep/run_manifest.json --out replay"), 0);
    EXPECT_EQ(slurp("sweep/results.csv"), slurp("replay/results.csv"));
    EXPECT_EQ(slurp("sweep/table.csv"), slurp("replay/table.csv"));
    EXPECT_FALSE(slurp("sweep/results.csv").empty());
}

TEST(Cli, OutputRootOverride) {
    const fs::path root = work() / "rooted";
    const int rc = run("synth testset --classes 2 --per-class 1 --size 32 --out t2");
    ASSERT_EQ(rc, 0);
    const std::string cmd = "cd '" + work().string() + "' && WSLFOOD_OUTPUT_ROOT='" + root.string() + "' '" WSLFOOD_BIN
                            "' synth testset --classes 2 --per-class 1 --size 32 --out t3 >>cli.log 2>&1";
    ASSERT_EQ(std::system(cmd.c_str()), 0);
    EXPECT_TRUE(fs::exists(root / "t3/manifest.jsonl"));
    EXPECT_FALSE(fs::exists(work() / "t3"));
}
