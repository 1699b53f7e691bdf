#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dimlight/data/dataset.h"
#include "dimlight/data/image.h"
#include "dimlight/data/synth.h"
#include "dimlight/metrics/metrics.h"

namespace dimlight {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string output;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("dimlight_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  Result run(const std::string& args) {
    const auto log = root_ / "cmd.log";
    const std::string cmd = "cd '" + root_.string() + "' && '" DIMLIGHT_CLI "' " + args + " > '" + log.string() +
                            "' 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
  }

  std::string bytes(const fs::path& p) {
    std::ifstream in(root_ / p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
  }

  // 4 pairs of 16x16 images under root/pairs.
  void make_pairs(std::size_t count = 4, std::size_t size = 16) {
    ASSERT_EQ(run("scenes --out clean --count 2 --height " + std::to_string(size) + " --width " +
                  std::to_string(size) + " --seed 1")
                  .code,
              0);
    ASSERT_EQ(run("synth --src clean --out pairs --count " + std::to_string(count) + " --seed 2").code, 0);
  }

  static constexpr const char* kTiny =
      "--base-width 4 --state-size 4 --enc-depths 1,1 --bottleneck-depth 1 --dec-depths 1,1";

  fs::path root_;
};

TEST_F(Cli, SynthIsDeterministicInSeed) {
  make_pairs();
  ASSERT_EQ(run("synth --src clean --out again --count 4 --seed 2").code, 0);
  for (const char* sub : {"low", "high"}) {
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(root_ / "pairs" / sub)) {
      const auto rel = fs::path(sub) / e.path().filename();
      EXPECT_EQ(bytes(fs::path("pairs") / rel), bytes(fs::path("again") / rel)) << rel;
      ++n;
    }
    EXPECT_EQ(n, 4u);
  }
  EXPECT_TRUE(fs::exists(root_ / "pairs" / "manifest.json"));
}

TEST_F(Cli, ZeroSigmaRangeGivesNoiselessDarkening) {
  ASSERT_EQ(run("scenes --out clean --count 1 --height 16 --width 16").code, 0);
  ASSERT_EQ(run("synth --src clean --out pairs --count 2 --seed 4 --sigma-range 0,0 --gamma-range 2,2 "
                "--scale-range 0.5,0.5")
                .code,
            0);
  for (const auto& p : data::load_pairs(data::scan_pairs(root_ / "pairs").pairs)) {
    const auto expected = data::synth_degrade(p.high, {2.0, 0.5, 0.0, 0});
    for (std::size_t i = 0; i < expected.numel(); ++i) {
      ASSERT_EQ(data::to_byte(p.low.data()[i]), data::to_byte(expected.data()[i]));
    }
  }
}

TEST_F(Cli, SynthFromEmptySourceIsADataError) {
  fs::create_directories(root_ / "empty");
  const auto r = run("synth --src empty --out pairs --count 2");
  EXPECT_EQ(r.code, 1) << r.output;
}

TEST_F(Cli, BadRangeIsAUsageError) {
  ASSERT_EQ(run("scenes --out clean --count 1 --height 16 --width 16").code, 0);
  EXPECT_EQ(run("synth --src clean --out pairs --count 1 --gamma-range 3,2").code, 2);
  EXPECT_EQ(run("synth --src clean --out pairs2 --count 1 --gamma-range 3").code, 2);
}

TEST_F(Cli, UnknownFlagIsAUsageError) {
  EXPECT_EQ(run("train --data x --out y --no-such-flag 3").code, 2);
  EXPECT_EQ(run("").code, 2);
}

TEST_F(Cli, MissingConfigFileIsNamed) {
  const auto r = run("train --data pairs --out run --config missing.cfg");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("missing.cfg"), std::string::npos) << r.output;
}

TEST_F(Cli, UnknownConfigKeyListsValidKeys) {
  std::ofstream(root_ / "bad.cfg") << "base_width = 4\nlearning_rate = 1\n";
  const auto r = run("train --data pairs --out run --config bad.cfg");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("learning_rate"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("lr_init"), std::string::npos) << r.output;
}

TEST_F(Cli, SingleIterationSmokeRun) {
  make_pairs();
  std::ofstream(root_ / "run.cfg") << "# tiny\npatch_size = 16\nbatch_size = 2\ntotal_iters = 50\n";
  const auto r = run(std::string("train --data pairs --out run --config run.cfg --total-iters 1 ") + kTiny);
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream in(root_ / "run" / "metrics.csv");
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  EXPECT_EQ(lines.size(), 2u);
  // Command line wins over the file.
  std::ifstream snap(root_ / "run" / "config.txt");
  std::stringstream ss;
  ss << snap.rdbuf();
  EXPECT_NE(ss.str().find("total_iters = 1\n"), std::string::npos);
  EXPECT_NE(ss.str().find("batch_size = 2\n"), std::string::npos);
  EXPECT_TRUE(fs::exists(root_ / "run" / "last.glsb"));
  EXPECT_TRUE(fs::exists(root_ / "run" / "manifest.json"));
  // Run directories are never reused.
  EXPECT_EQ(run(std::string("train --data pairs --out run --total-iters 1 ") + kTiny).code, 2);
}

TEST_F(Cli, ResumeContinuesTheLog) {
  make_pairs();
  const std::string common =
      std::string("--patch-size 16 --batch-size 2 --total-iters 4 --checkpoint-every 2 --seed 3 ") + kTiny;
  ASSERT_EQ(run("train --data pairs --out full " + common).code, 0);
  ASSERT_EQ(run("train --data pairs --out part " + common).code, 0);
  ASSERT_EQ(run("train --data pairs --out rest --resume part/checkpoint_2.glsb").code, 0);
  auto rows = [&](const fs::path& p) {
    std::ifstream in(root_ / p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
  };
  const auto full = rows("full/metrics.csv");
  const auto rest = rows("rest/metrics.csv");
  ASSERT_EQ(full.size(), 5u);
  ASSERT_EQ(rest.size(), 3u);
  EXPECT_EQ(rest[1], full[3]);
  EXPECT_EQ(rest[2], full[4]);
  EXPECT_EQ(bytes("full/last.glsb"), bytes("rest/last.glsb"));
}

TEST_F(Cli, IdentityCheckpointReproducesInputBytes) {
  make_pairs(3, 16);
  ASSERT_EQ(run(std::string("init --out id.glsb ") + kTiny).code, 0);
  ASSERT_EQ(run("enhance --ckpt id.glsb --in pairs/low --out out").code, 0);
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(root_ / "pairs" / "low")) {
    EXPECT_EQ(bytes(fs::path("pairs/low") / e.path().filename()), bytes(fs::path("out") / e.path().filename()));
    ++n;
  }
  EXPECT_EQ(n, 3u);
  EXPECT_TRUE(fs::exists(root_ / "out" / "manifest.json"));
}

TEST_F(Cli, OddSizedImageKeepsItsExtents) {
  ASSERT_EQ(run("scenes --out clean --count 1 --height 30 --width 46").code, 0);
  ASSERT_EQ(run(std::string("init --random-head --out r.glsb ") + kTiny).code, 0);
  const auto r = run("enhance --ckpt r.glsb --in clean/scene_0000.png --out o.png");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(data::read_image_size(root_ / "o.png"), (data::ImageSize{30, 46}));
}

TEST_F(Cli, EvalOfIdentityEqualsInputPsnr) {
  make_pairs(3, 16);
  ASSERT_EQ(run(std::string("init --out id.glsb ") + kTiny).code, 0);
  const auto r = run("eval --ckpt id.glsb --data pairs --out m.csv");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto samples = data::load_pairs(data::scan_pairs(root_ / "pairs").pairs);
  std::ifstream in(root_ / "m.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "id,psnr_db,ssim");
  for (const auto& s : samples) {
    ASSERT_TRUE(std::getline(in, line));
    std::stringstream ss(line);
    std::string id, psnr;
    std::getline(ss, id, ',');
    std::getline(ss, psnr, ',');
    EXPECT_EQ(id, s.id);
    EXPECT_EQ(std::stod(psnr), metrics::psnr(s.low, s.high));
  }
  ASSERT_TRUE(std::getline(in, line));
  EXPECT_EQ(line.rfind("mean,", 0), 0u);
}

TEST_F(Cli, ErfSourceOutOfBoundsIsAUsageError) {
  ASSERT_EQ(run("scenes --out clean --count 1 --height 16 --width 16").code, 0);
  ASSERT_EQ(run(std::string("init --random-head --out r.glsb ") + kTiny).code, 0);
  EXPECT_EQ(run("erf --ckpt r.glsb --image clean/scene_0000.png --out e.png --source 16,3").code, 2);
  EXPECT_EQ(run("erf --ckpt r.glsb --image clean/scene_0000.png --out e.png --source 3").code, 2);
  const auto ok = run("erf --ckpt r.glsb --image clean/scene_0000.png --out e.png --source 0,15");
  ASSERT_EQ(ok.code, 0) << ok.output;
  EXPECT_EQ(data::read_image_size(root_ / "e.png"), (data::ImageSize{16, 16}));
}

TEST_F(Cli, CorruptCheckpointIsARuntimeError) {
  make_pairs(1, 16);
  std::ofstream(root_ / "bad.glsb") << "GLSBjunk";
  const auto r = run("eval --ckpt bad.glsb --data pairs --out m.csv");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("format error"), std::string::npos) << r.output;
}

}  // namespace
}  // namespace dimlight
