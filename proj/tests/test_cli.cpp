#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "telkit/telkit.hpp"

namespace fs = std::filesystem;
using namespace telkit;

namespace {

class Cli : public ::testing::Test {
 protected:
  fs::path dir;

  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("telkit_cli_" + std::string(::testing::UnitTest::GetInstance()
                                           ->current_test_info()
                                           ->name()) +
           "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    json cfg = to_json(RunConfig{});
    cfg["synthetic"]["train_videos"] = 3;
    cfg["synthetic"]["test_videos"] = 2;
    cfg["synthetic"]["video_duration"] = 80.0;
    cfg["detector"]["block_channels"] = {8};
    cfg["scorer"]["widths"] = {4, 8, 8, 8};
    cfg["scorer"]["hidden"] = 8;
    cfg["schedule"]["scorer_epochs"] = 1;
    cfg["schedule"]["detector_epochs"] = 1;
    detail::write_file_atomic(dir / "cfg.json", cfg.dump());
  }
  void TearDown() override { fs::remove_all(dir); }

  // Exit status of `telkit <args>`, output captured into dir/log.txt.
  int run(const std::string& args) {
    const std::string cmd = std::string(TELKIT_CLI) + " " + args + " > " +
                            (dir / "log.txt").string() + " 2>&1";
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  }
  std::string log() { return detail::read_file(dir / "log.txt"); }
  std::string p(const std::string& rel) { return (dir / rel).string(); }
  std::string cfg() { return "--config " + p("cfg.json"); }
};

}  // namespace

TEST_F(Cli, FullPipeline) {
  ASSERT_EQ(run("synth " + cfg() + " --out " + p("data")), 0) << log();
  EXPECT_TRUE(fs::exists(dir / "data" / "train.json"));
  EXPECT_TRUE(fs::exists(dir / "data" / "features"));

  fs::create_directories(dir / "run");
  ASSERT_EQ(run("train " + cfg() + " --data " + p("data") + " --out " + p("run")), 0)
      << log();
  EXPECT_TRUE(fs::exists(dir / "run" / "checkpoint.tkw"));
  EXPECT_TRUE(fs::exists(dir / "run" / "curve.csv"));

  ASSERT_EQ(run("infer " + cfg() + " --checkpoint " + p("run/checkpoint.tkw") +
                " --data " + p("data") + " --out " + p("det.json")),
            0)
      << log();
  ASSERT_EQ(run("propose " + cfg() + " --checkpoint " + p("run/checkpoint.tkw") +
                " --data " + p("data") + " --split train --out " + p("props.json")),
            0)
      << log();
  EXPECT_NO_THROW(load_proposals(dir / "props.json"));

  ASSERT_EQ(run("eval --gt " + p("data/test.json") + " --det " + p("det.json") +
                " --iou 0.3:0.7:0.1 --out " + p("eval")),
            0)
      << log();
  EXPECT_NE(log().find("0.5"), std::string::npos);
  const auto rep = json::parse(detail::read_file(dir / "eval.json"));
  EXPECT_TRUE(rep.is_object());
  EXPECT_TRUE(fs::exists(dir / "eval.txt"));

  fs::create_directories(dir / "diag");
  ASSERT_EQ(run("diagnose --gt " + p("data/test.json") + " --det " + p("det.json") +
                " --mode delete --out " + p("diag")),
            0)
      << log();
  EXPECT_TRUE(fs::exists(dir / "diag" / "diagnosis.json"));

  ASSERT_EQ(run("selfsim --gt " + p("data/test.json") + " --features " +
                p("data/features") + " --out " + p("ss.json") + " --images " + p("img")),
            0)
      << log();
  EXPECT_TRUE(fs::exists(dir / "ss.json"));
  EXPECT_FALSE(fs::is_empty(dir / "img"));
}

TEST_F(Cli, SeedOverrideChangesData) {
  ASSERT_EQ(run("synth " + cfg() + " --out " + p("a")), 0) << log();
  ASSERT_EQ(run("synth " + cfg() + " --seed 9 --out " + p("b")), 0) << log();
  EXPECT_NE(detail::read_file(dir / "a" / "test.json"),
            detail::read_file(dir / "b" / "test.json"));
}

TEST_F(Cli, ValidationFailuresExitTwo) {
  ASSERT_EQ(run("synth " + cfg() + " --out " + p("data")), 0) << log();
  detail::write_file_atomic(dir / "bad.json", R"({"results": {"nope": []}})");
  EXPECT_EQ(run("eval --gt " + p("data/test.json") + " --det " + p("bad.json") +
                " --out " + p("eval")),
            2);
  EXPECT_NE(log().find("error"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "eval.json"));

  detail::write_file_atomic(dir / "garbage.json", "{not json");
  EXPECT_EQ(run("eval --gt " + p("garbage.json") + " --det " + p("bad.json") +
                " --out " + p("eval")),
            2);

  DetectionMap empty;
  save_detections(dir / "empty.json", empty, load_annotations(dir / "data/test.json").categories);
  EXPECT_EQ(run("eval --gt " + p("data/test.json") + " --det " + p("empty.json") +
                " --iou 0.9:0.1:0.1 --out " + p("eval")),
            2);
}

TEST_F(Cli, IncompatibleCheckpointExitTwo) {
  ASSERT_EQ(run("synth " + cfg() + " --out " + p("data")), 0) << log();
  detail::write_file_atomic(dir / "ck.tkw", "TKW1garbage");
  EXPECT_EQ(run("infer " + cfg() + " --checkpoint " + p("ck.tkw") + " --data " +
                p("data") + " --out " + p("det.json")),
            2);
  EXPECT_FALSE(fs::exists(dir / "det.json"));
}

TEST_F(Cli, UsageErrorsAreNonZero) {
  EXPECT_NE(run(""), 0);
  EXPECT_NE(run("frobnicate"), 0);
  EXPECT_NE(run("eval --det x.json --out y"), 0);
  EXPECT_EQ(run("--help"), 0);
  EXPECT_NE(log().find("synth"), std::string::npos);
}
