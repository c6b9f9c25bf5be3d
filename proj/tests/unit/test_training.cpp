#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"
#include "snst/checkpoint.hpp"
#include "snst/perceptual.hpp"
#include "snst/training.hpp"

using namespace snst;
namespace fs = std::filesystem;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::io;
}

}  // namespace

class Training : public ::testing::Test {
 protected:
  oracle::TempDir dir{"train"};

  void SetUp() override {
    fs::create_directories(dir / "corpus");
    for (int i = 0; i < 6; ++i) save_png(oracle::textured_image(40 + 4 * i, 56, 100 + i), dir / "corpus" / ("c" + std::to_string(i) + ".png"));
    write_file(dir / "corpus" / "notes.txt", std::vector<std::uint8_t>{'h', 'i'});
    save_png(oracle::textured_image(48, 48, 7), dir / "style.png");
    PerceptualExtractor<float>::random(16, 19).save(dir / "vgg.ckpt");
  }

  TrainConfig config() const {
    TrainConfig c;
    c.style_image_path = dir / "style.png";
    c.dataset_dir = dir / "corpus";
    c.extractor_path = dir / "vgg.ckpt";
    c.crop_size = 32;
    c.batch_size = 2;
    c.epochs = 1;
    c.arch = ArchConfig::tiny();
    c.seed = 5;
    return c;
  }
};

TEST_F(Training, ConfigViolations) {
  auto c = config();
  EXPECT_TRUE(c.violations().empty());
  c.crop_size = 30;
  c.downsample_cycle = {};
  c.intensity_lo = 1;
  c.intensity_hi = 0.5;
  const auto v = c.violations();
  ASSERT_EQ(v.size(), 3u);
  EXPECT_EQ(v[0].field, "crop_size");
  EXPECT_EQ(v[1].field, "downsample_cycle");
  EXPECT_EQ(v[2].field, "intensity_range");
  EXPECT_EQ(kind_of([&] { train(c); }), ErrorKind::parameter);
  c = config();
  c.downsample_cycle = {0.5};
  EXPECT_FALSE(c.violations().empty());
}

TEST_F(Training, BatchesAreCroppedAndReproducible) {
  std::mt19937_64 a(3), b(3);
  const auto x = load_batch(dir / "corpus", 32, 4, a);
  const auto y = load_batch(dir / "corpus", 32, 4, b);
  ASSERT_EQ(x.size(), 4u);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(x[i].height, 32);
    EXPECT_EQ(x[i].width, 32);
    EXPECT_EQ(x[i], y[i]);
    for (float v : x[i].rgb) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
  std::mt19937_64 c(4);
  EXPECT_NE(load_batch(dir / "corpus", 32, 4, c)[0], x[0]);
}

TEST_F(Training, SingleImageCorpusSamplesWithReplacement) {
  fs::create_directories(dir / "one");
  save_png(oracle::textured_image(64, 80, 1), dir / "one" / "a.png");
  std::mt19937_64 rng(1);
  const auto batch = load_batch(dir / "one", 32, 4, rng);
  ASSERT_EQ(batch.size(), 4u);
  int distinct = 0;
  for (std::size_t i = 1; i < batch.size(); ++i) distinct += batch[i] != batch[0];
  EXPECT_GT(distinct, 0);
}

TEST_F(Training, EmptyOrUndecodableCorpusIsADataError) {
  fs::create_directories(dir / "empty");
  EXPECT_EQ(kind_of([&] { Corpus(dir / "empty", 32); }), ErrorKind::data);
  write_file(dir / "empty" / "broken.png", std::vector<std::uint8_t>(64, 7));
  EXPECT_EQ(kind_of([&] { Corpus(dir / "empty", 32); }), ErrorKind::data);
  EXPECT_EQ(kind_of([&] { Corpus(dir / "absent", 32); }), ErrorKind::data);
  auto c = config();
  c.dataset_dir = dir / "empty";
  EXPECT_EQ(kind_of([&] { train(c); }), ErrorKind::data);
}

TEST_F(Training, MissingExtractorIsAConfigurationError) {
  auto c = config();
  c.extractor_path = dir / "none.ckpt";
  EXPECT_EQ(kind_of([&] { train(c); }), ErrorKind::configuration);
}

TEST_F(Training, FactorCyclingAndLogRecords) {
  auto c = config();
  c.epochs = 3;  // 3 epochs × 3 steps
  c.max_steps = 7;
  std::ostringstream log;
  const auto r = train(c, &log);
  ASSERT_EQ(r.report.steps.size(), 7u);
  int twos = 0, fours = 0;
  for (const auto& s : r.report.steps) {
    EXPECT_TRUE(std::isfinite(s.style_loss) && std::isfinite(s.content_loss));
    EXPECT_GE(s.lambda_i, 0.0);
    EXPECT_LT(s.lambda_i, 1.0);
    (s.lambda_s == 2.0 ? twos : fours)++;
  }
  EXPECT_EQ(twos, 4);
  EXPECT_EQ(fours, 3);
  std::istringstream in(log.str());
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"step", "style_loss", "content_loss", "lambda_i", "lambda_s", "wall_time"})
      EXPECT_TRUE(j.contains(key)) << key;
    ++lines;
  }
  EXPECT_EQ(lines, 7);
}

TEST_F(Training, SeededRunsAreDeterministic) {
  auto c = config();
  c.max_steps = 2;
  const auto a = train(c);
  const auto b = train(c);
  EXPECT_NEAR(a.report.steps[0].style_loss, b.report.steps[0].style_loss, 1e-6);
  EXPECT_NEAR(a.report.steps[0].content_loss, b.report.steps[0].content_loss, 1e-6);
  EXPECT_EQ(a.report.steps[1].lambda_i, b.report.steps[1].lambda_i);
  EXPECT_EQ(a.model.weights().convs[0].weight, b.model.weights().convs[0].weight);
}

TEST_F(Training, CheckpointsArePeriodicAndFinal) {
  auto c = config();
  c.epochs = 2;
  c.checkpoint_dir = dir / "ckpts";
  c.checkpoint_every = 2;
  c.style_name = "unit";
  const auto r = train(c);
  EXPECT_TRUE(fs::exists(dir / "ckpts" / "step_000002.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "ckpts" / "step_000006.ckpt"));
  EXPECT_EQ(r.report.final_checkpoint, dir / "ckpts" / "final.ckpt");
  const auto m = load_checkpoint(r.report.final_checkpoint);
  EXPECT_EQ(m.meta().style_name, "unit");
  EXPECT_EQ(m.meta().training_resolution, 32);
  EXPECT_EQ(m.weights().convs[3].weight, r.model.weights().convs[3].weight);
}

TEST_F(Training, ZeroIntensityModelStaysCloserToContent) {
  auto c = config();
  c.epochs = 100;
  c.max_steps = 40;
  c.learning_rate = 3e-3;
  c.fixed_intensity = 0.0;
  const auto plain = train(c).model;
  c.fixed_intensity = 1.0;
  const auto styled = train(c).model;

  const auto ex = PerceptualExtractor<float>::load(dir / "vgg.ckpt");
  const auto probe = oracle::textured_image(48, 48, 77);
  const auto content = ex.extract(to_tensor(probe), nullptr, kContentLayer);
  auto content_distance = [&](const ImagePlane& out) {
    return content_loss(ex.extract(to_tensor(out), nullptr, kContentLayer), content);
  };
  const double d0 = content_distance(stylize(plain, probe, StrokeParams::make(2, 0, 0)));
  const double d1 = content_distance(stylize(styled, probe, StrokeParams::make(2, 1, 0)));
  EXPECT_LT(d0, d1);
}
