#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <string>

#include "cmfl/run_io.hpp"
#include "support.hpp"

using cmfl::read_text;
using cmfl::test::TempDir;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(CMFL_EXE) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const std::string kSmall = "--image-size 16 --n-identities 6 --samples-per-identity 4";

bool same_tree(const fs::path& a, const fs::path& b) {
    std::size_t n = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const fs::path other = b / fs::relative(e.path(), a);
        if (!fs::exists(other) || read_text(e.path()) != read_text(other)) return false;
        ++n;
    }
    return n > 0;
}

}  // namespace

TEST(Cli, GenDataIsReproducible) {
    TempDir dir("cli_gen");
    const fs::path x = dir.path() / "x", y = dir.path() / "y";
    ASSERT_EQ(run("gen-data --seed 3 " + kSmall + " --out " + x.string()), 0);
    ASSERT_EQ(run("gen-data --seed 3 " + kSmall + " --out " + y.string()), 0);
    EXPECT_TRUE(same_tree(x, y));

    // Refuses to overwrite without --force.
    EXPECT_EQ(run("gen-data --seed 3 " + kSmall + " --out " + x.string()), 2);
    EXPECT_EQ(run("gen-data --seed 4 " + kSmall + " --force --out " + x.string()), 0);
    EXPECT_NE(read_text(x / "manifest.tsv"), "");
    EXPECT_FALSE(same_tree(x, y));
}

TEST(Cli, ConfigErrorsExitTwo) {
    TempDir dir("cli_cfg");
    std::ofstream(dir.path() / "bad.json") << "{ \"train\": ";
    std::ofstream(dir.path() / "unknown.json") << R"({"train": {"epoks": 3}})";
    const std::string out = " --out " + dir.path().string();
    EXPECT_EQ(run("train --config " + (dir.path() / "bad.json").string() + out), 2);
    EXPECT_EQ(run("train --config " + (dir.path() / "unknown.json").string() + out), 2);
    EXPECT_EQ(run("train --data x --threshold-rule MEDIAN" + out), 2);
    EXPECT_EQ(run("train --no-such-flag" + out), 2);
    EXPECT_EQ(run(""), 2);
}

TEST(Cli, DataErrorsExitThree) {
    TempDir dir("cli_data");
    EXPECT_EQ(run("train --data " + (dir.path() / "missing").string() + " --out " + dir.path().string()), 3);
    std::ofstream(dir.path() / "junk.bin") << "not a checkpoint";
    EXPECT_EQ(run("eval --data " + (dir.path() / "missing").string() + " --checkpoint " +
                  (dir.path() / "junk.bin").string() + " --out " + dir.path().string()),
              3);
    EXPECT_EQ(cmfl::RunDirectory(dir.path() / "runs" / "train").status(), "failed");
}

TEST(Cli, TrainEvalReportRoundTrip) {
    TempDir dir("cli_train");
    const fs::path data = dir.path() / "data";
    ASSERT_EQ(run("gen-data " + kSmall + " --out " + data.string()), 0);
    const std::string common = " --data " + data.string() + " --image-size 16 --epochs 1 --out " + dir.path().string();
    ASSERT_EQ(run("train" + common), 0);

    const fs::path train_dir = dir.path() / "runs" / "train";
    EXPECT_EQ(cmfl::RunDirectory(train_dir).status(), "complete");
    for (const char* f : {"config.json", "checkpoint.bin", "losscurve.tsv", "scores_eval_joint.tsv",
                          "report_grandtest.json"})
        EXPECT_TRUE(fs::exists(train_dir / f)) << f;
    const auto echoed = nlohmann::json::parse(read_text(train_dir / "config.json"));
    EXPECT_EQ(echoed["train"]["epochs"], 1);

    ASSERT_EQ(run("eval --head A --name evalA --checkpoint " + (train_dir / "checkpoint.bin").string() + common), 0);
    EXPECT_TRUE(fs::exists(dir.path() / "runs" / "evalA" / "scores_eval_A.tsv"));
    EXPECT_EQ(run("report --run " + train_dir.string()), 0);
    EXPECT_EQ(run("report --run " + (dir.path() / "nowhere").string()), 3);
}
