#include "semflow/cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

using namespace semflow;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "semflow");
  std::vector<char*> argv;
  for (auto& a : args)
    argv.push_back(a.data());
  std::ostringstream out, err;
  int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

class CliTest : public ::testing::Test {
protected:
  fs::path dir;
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("semflow_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string at(const char* name) const { return (dir / name).string(); }

  void synth(const char* kind = "two-plane") {
    auto r = cli({"synth", "--template", kind, "--seed", "3", "--size", "32", "--out-dir", at("scene")});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  std::vector<std::string> estimate_args() const {
    return {"estimate",      "--frame0",          at("scene/frame0.png"),          "--frame1",
            at("scene/frame1.png"), "--labels-prev", at("scene/labels_prev.lpm"), "--labels-evidence",
            at("scene/labels_evidence.lpm")};
  }
};

} // namespace

TEST_F(CliTest, SynthThenEstimateWritesEverything) {
  synth();
  for (const char* f : {"frame0.png", "frame1.png", "labels_prev.lpm", "labels_evidence.lpm", "gt_flow.png",
                        "gt_occlusion.png", "fg_mask.png", "gt_labels1.png", "matches.txt", "manifest.txt"})
    EXPECT_TRUE(fs::exists(dir / "scene" / f)) << f;
  auto args = estimate_args();
  for (std::string extra : {"--out-flow", "flow.png", "--out-labels", "labels.lpm", "--out-occlusion", "occ.png",
                            "--out-trace", "trace.txt", "--out-superpixels", "sp.png"})
    args.push_back(extra.starts_with("--") ? extra : at(extra.c_str()));
  args.push_back("-v");
  auto r = cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"flow.png", "labels.lpm", "occ.png", "trace.txt", "sp.png"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_EQ(read_flow_kitti(at("flow.png")).width, 32);
  EXPECT_EQ(read_labelprob(at("labels.lpm")).classes(), 2);
  // verbose trace mirrors the trace file
  EXPECT_EQ(r.err, slurp(dir / "trace.txt"));
}

TEST_F(CliTest, EvaluateReportsMetrics) {
  synth();
  auto r = cli({"evaluate", "--flow", at("scene/gt_flow.png"), "--gt-flow", at("scene/gt_flow.png"), "--fg-mask",
                at("scene/fg_mask.png"), "--occlusion", at("scene/gt_occlusion.png"), "--labels",
                at("scene/labels_prev.lpm"), "--gt-labels", at("scene/gt_labels0.png")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("fl_all = 0\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("mean_iou = 1\n"), std::string::npos) << r.out;
  auto w = cli({"evaluate", "--flow", at("scene/gt_flow.png"), "--gt-flow", at("scene/gt_flow.png"), "--out",
                at("report.txt")});
  ASSERT_EQ(w.code, 0) << w.err;
  EXPECT_NE(slurp(dir / "report.txt").find("epe_all = 0"), std::string::npos);
}

TEST_F(CliTest, VisualizeWritesImages) {
  synth();
  auto r = cli({"visualize", "--flow", at("scene/gt_flow.png"), "--out-flow", at("flow_vis.png"), "--labels",
                at("scene/labels_prev.lpm"), "--out-labels", at("labels_vis.png"), "--occlusion",
                at("scene/gt_occlusion.png"), "--frame", at("scene/frame0.png"), "--out-occlusion", at("occ_vis.png")});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"flow_vis.png", "labels_vis.png", "occ_vis.png"}) {
    auto img = read_color_image(at(f));
    EXPECT_EQ(img.width(), 32) << f;
  }
}

TEST_F(CliTest, MissingRequiredOptionIsUsageError) {
  synth();
  auto args = estimate_args();
  args.erase(args.begin() + 3, args.begin() + 5);  // drop --frame1
  auto r = cli(args);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--frame1"), std::string::npos);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(cli({}).code, 1);
  EXPECT_EQ(cli({"synth", "--template", "nope", "--out-dir", at("x")}).code, 1);
}

TEST_F(CliTest, CorruptInputsAreInputErrors) {
  synth();
  {
    std::ofstream(at("scene/labels_prev.lpm"), std::ios::binary) << "LPM1 garbage";
  }
  auto r = cli(estimate_args());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("input error"), std::string::npos);
  auto missing = cli({"evaluate", "--flow", at("nope.png"), "--gt-flow", at("scene/gt_flow.png")});
  EXPECT_EQ(missing.code, 2);
}

TEST_F(CliTest, BadConfigIsRejectedWithTheRule) {
  synth();
  {
    std::ofstream(at("bad.cfg")) << "lambda_h = 5\n";
  }
  auto args = estimate_args();
  args.push_back("--config");
  args.push_back(at("bad.cfg"));
  auto r = cli(args);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("lambda_occ > lambda_h"), std::string::npos) << r.err;
}

TEST_F(CliTest, TooFewMatchesIsNumericalFailure) {
  synth();
  {
    std::ofstream f(at("few.txt"));
    f << "0 0 1 0\n1 1 2 1\n2 5 3 5\n";
  }
  auto args = estimate_args();
  args.push_back("--matches");
  args.push_back(at("few.txt"));
  auto r = cli(args);
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("numerical failure"), std::string::npos);
}

TEST_F(CliTest, BinaryExitCodes) {
  std::string bin = SEMFLOW_CLI_PATH;
  auto code = [](const std::string& cmd) {
    int s = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  EXPECT_EQ(code(bin + " --help"), 0);
  EXPECT_EQ(code(bin + " estimate --frame0 a.png"), 1);
  EXPECT_EQ(code(bin + " synth --out-dir " + at("b") + " --size 32"), 0);
  EXPECT_EQ(code(bin + " evaluate --flow " + at("missing.png") + " --gt-flow " + at("b/gt_flow.png")), 2);
}
