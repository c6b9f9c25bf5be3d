#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>

#include "oracles.hpp"
#include "snst/checkpoint.hpp"
#include "snst/edit.hpp"
#include "snst/perceptual.hpp"

using namespace snst;

namespace {

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(SNST_CLI_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (p == nullptr) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.output.append(buf.data(), n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

}  // namespace

class Cli : public ::testing::Test {
 protected:
  oracle::TempDir dir{"cli"};
  ImagePlane content = oracle::textured_image(48, 56, 4);

  void SetUp() override {
    save_checkpoint(oracle::random_model(ArchConfig::tiny(), 9), dir / "m.ckpt");
    save_png(content, dir / "in.png");
  }
  std::string p(const std::string& name) const { return (dir / name).string(); }
  StyleModel model() const { return load_checkpoint(dir / "m.ckpt"); }
};

TEST_F(Cli, HelpAndUnknownFlags) {
  for (const char* sub : {"train", "stylize", "edit", "serve", "export"}) {
    const auto r = run(std::string(sub) + " --help");
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.output.find("--"), std::string::npos) << sub;
  }
  EXPECT_EQ(run("stylize --model x --in y --out z --bogus 1").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("").code, 2);
}

TEST_F(Cli, StylizeWritesTheImage) {
  const auto r = run("stylize --model " + p("m.ckpt") + " --in " + p("in.png") + " --out " + p("out.png") +
                     " --stroke-size 2 --intensity 0.5 --rotation 30");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto out = load_image(dir / "out.png");
  EXPECT_EQ(extent_of(out), extent_of(content));
  const auto want = stylize(model(), content, StrokeParams::make(2, 0.5, 30));
  EXPECT_LE(max_abs_diff(out, want), 0.5f / 255 + 1e-6f);
}

TEST_F(Cli, ExitCodes) {
  const std::string base = "stylize --model " + p("m.ckpt") + " --in " + p("in.png") + " --out " + p("o.png");
  auto bad = run(base + " --stroke-size 0.5");
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.output.find("[1, 8]"), std::string::npos) << bad.output;
  EXPECT_EQ(run(base + " --intensity 9").code, 2);
  EXPECT_EQ(run("stylize --model " + p("m.ckpt") + " --in " + p("missing.png") + " --out " + p("o.png")).code, 1);
  EXPECT_EQ(run("stylize --model " + p("none.ckpt") + " --in " + p("in.png") + " --out " + p("o.png")).code, 1);
  EXPECT_FALSE(std::filesystem::exists(dir / "o.png"));
}

TEST_F(Cli, EditModesAndMismatch) {
  auto one = run("edit --model " + p("m.ckpt") + " --in " + p("in.png") + " --levels 2 --level 0 --mode final --out " +
                 p("e.png"));
  ASSERT_EQ(one.code, 0) << one.output;
  const auto want = stylize(model(), content, StrokeParams::make(2, 1, 0));
  EXPECT_LE(max_abs_diff(load_image(dir / "e.png"), want), 0.5f / 255 + 1e-5f);

  LevelMask m = LevelMask::one_hot(3, content.height, content.width, 1);
  save_plane_masks(m, dir / "m3.tif");
  const std::string common = "edit --model " + p("m.ckpt") + " --in " + p("in.png") + " --mask " + p("m3.tif");
  ASSERT_EQ(run(common + " --levels 1,2,4 --mode preview --out " + p("pv.png")).code, 0);
  ASSERT_EQ(run(common + " --levels 1,2,4 --mode final --out " + p("fi.png")).code, 0);
  EXPECT_EQ(read_file(dir / "pv.png"), read_file(dir / "fi.png"));

  auto mismatch = run(common + " --levels 1,2 --mode final --out " + p("x.png"));
  EXPECT_EQ(mismatch.code, 2) << mismatch.output;
  EXPECT_EQ(run(common + " --levels 2,1,4 --out " + p("x.png")).code, 2);
}

TEST_F(Cli, ExportShapes) {
  ASSERT_EQ(run("export --in " + p("in.png") + " --scale 1 --out " + p("x1.png")).code, 0);
  EXPECT_EQ(read_file(dir / "x1.png"), read_file(dir / "in.png"));
  ASSERT_EQ(run("export --in " + p("in.png") + " --scale 2.5 --out " + p("x2.png")).code, 0);
  EXPECT_EQ(extent_of(load_image(dir / "x2.png")), (Extent{120, 140}));
  EXPECT_EQ(run("export --in " + p("in.png") + " --scale 0.5 --out " + p("x3.png")).code, 2);
}

TEST_F(Cli, RemoteExportWithoutEndpointIsAConfigurationError) {
  ::unsetenv("UPSAMPLE_ENDPOINT");
  const auto r = run("export --in " + p("in.png") + " --scale 2 --backend remote --out " + p("x.png"));
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("UPSAMPLE_ENDPOINT"), std::string::npos);
}

TEST_F(Cli, TrainProducesACheckpointAndLog) {
  std::filesystem::create_directories(dir / "corpus");
  for (int i = 0; i < 3; ++i) save_png(oracle::textured_image(40, 40, 50 + i), dir / "corpus" / ("c" + std::to_string(i) + ".png"));
  save_png(oracle::textured_image(32, 32, 5), dir / "style.png");
  PerceptualExtractor<float>::random(16, 1).save(dir / "vgg.ckpt");
  const auto r = run("train --style " + p("style.png") + " --data " + p("corpus") + " --out " + p("t.ckpt") +
                     " --extractor " + p("vgg.ckpt") + " --crop 32 --batch 2 --epochs 1 --arch tiny --factors 2,4" +
                     " --intensity 0:1 --seed 3 --log " + p("log.jsonl"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(load_checkpoint(dir / "t.ckpt").arch(), ArchConfig::tiny());
  std::ifstream log(dir / "log.jsonl");
  std::string line;
  int n = 0;
  while (std::getline(log, line)) {
    EXPECT_TRUE(nlohmann::json::parse(line).contains("style_loss"));
    ++n;
  }
  EXPECT_EQ(n, 2);
  EXPECT_EQ(run("train --style " + p("style.png") + " --data " + p("corpus") + " --out " + p("t.ckpt") +
                " --extractor " + p("absent.ckpt") + " --crop 32 --arch tiny")
                .code,
            3);
  EXPECT_EQ(run("train --style " + p("style.png") + " --data " + p("corpus") + " --out " + p("t.ckpt") +
                " --crop 30 --arch tiny")
                .code,
            2);
}
