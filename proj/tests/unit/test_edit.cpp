#include <gtest/gtest.h>

#include <algorithm>
#include <opencv2/imgcodecs.hpp>

#include "oracles.hpp"
#include "snst/edit.hpp"

using namespace snst;

namespace {

LevelMask half_half(int levels, int h, int w) {
  LevelMask m(levels, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at(x < w / 2 ? 0 : 1, y, x) = 1.0f;
  return m;
}

LevelMask random_soft(std::mt19937_64& rng, int levels, int h, int w) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  LevelMask m(levels, h, w);
  for (auto& v : m.weights) v = u(rng);
  m.normalize();
  return m;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::io;
}

// Luma gradient magnitude by forward differences.
std::vector<double> gradient_magnitude(const ImagePlane& img) {
  auto luma = [&](int y, int x) {
    return 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
  };
  std::vector<double> g(img.pixel_count(), 0.0);
  for (int y = 0; y + 1 < img.height; ++y)
    for (int x = 0; x + 1 < img.width; ++x)
      g[static_cast<std::size_t>(y) * img.width + x] =
          std::hypot(luma(y, x + 1) - luma(y, x), luma(y + 1, x) - luma(y, x));
  return g;
}

double median(std::vector<double> v) {
  std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST(Mask, ConstructorsAreConvex) {
  EXPECT_EQ(LevelMask::one_hot(3, 4, 5, 2).max_sum_error(), 0.0);
  EXPECT_LT(LevelMask::uniform(3, 4, 5).max_sum_error(), 1e-6);
  const std::vector<std::uint8_t> labels{0, 1, 2, 1, 0, 2};
  const auto m = LevelMask::from_labels(labels, 3, 2, 3);
  EXPECT_EQ(m.at(2, 0, 2), 1.0f);
  EXPECT_EQ(m.at(0, 0, 2), 0.0f);
  EXPECT_EQ(kind_of([&] { LevelMask::from_labels(labels, 2, 2, 3); }), ErrorKind::shape);
}

TEST(Mask, NormalizeFallsBackToUniform) {
  LevelMask m(4, 2, 2);
  m.at(1, 0, 0) = 3.0f;
  m.at(2, 0, 0) = 1.0f;
  m.normalize();
  EXPECT_FLOAT_EQ(m.at(1, 0, 0), 0.75f);
  for (int l = 0; l < 4; ++l) EXPECT_FLOAT_EQ(m.at(l, 1, 1), 0.25f);
  EXPECT_LT(m.max_sum_error(), 1e-6);
}

TEST(Mask, ConvexityPreservedThroughRotation) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> side(16, 48);
  std::uniform_real_distribution<double> angle(0.0, 360.0);
  for (int t = 0; t < 20; ++t) {
    const int h = side(rng), w = side(rng);
    auto m = random_soft(rng, 3, h, w);
    if (t % 3 == 0) m = half_half(3, h, w);
    const auto frame = make_rotation_frame({h, w}, normalize_angle(angle(rng)));
    const auto r = transform_mask(m, frame);
    EXPECT_EQ(r.extent(), frame.padded);
    EXPECT_LT(r.max_sum_error(), 1e-6);
    for (float v : r.weights) EXPECT_GE(v, 0.0f);
  }
}

TEST(Levels, Validation) {
  EXPECT_TRUE(validate_levels({1, 2, 4}).empty());
  EXPECT_FALSE(validate_levels({}).empty());
  EXPECT_FALSE(validate_levels({2, 2}).empty());
  EXPECT_FALSE(validate_levels({3, 2}).empty());
  EXPECT_FALSE(validate_levels({0.5, 2}).empty());
  EXPECT_FALSE(validate_levels({2, 9}).empty());
  const auto d = default_levels();
  ASSERT_EQ(d.size(), 10u);
  EXPECT_DOUBLE_EQ(d.front(), 1.0);
  EXPECT_NEAR(d.back(), 4.0, 1e-12);
  for (std::size_t i = 1; i + 1 < d.size(); ++i) EXPECT_NEAR(d[i] * d[i], d[i - 1] * d[i + 1], 1e-9);
}

class EditPipeline : public ::testing::Test {
 protected:
  StyleModel model = oracle::random_model(ArchConfig::tiny(), 41);
  ImagePlane img = oracle::textured_image(48, 64, 6);
  std::vector<double> levels{1.0, 2.0, 4.0};
};

TEST_F(EditPipeline, PrecomputeShapes) {
  const auto set = precompute_levels(model, img, levels, 0.8, 0);
  ASSERT_EQ(set.features.levels.size(), 3u);
  EXPECT_EQ(set.features.level_values(), levels);
  ASSERT_EQ(set.previews.levels.size(), 3u);
  for (const auto& p : set.previews.levels) EXPECT_EQ(extent_of(p), extent_of(img));
  for (std::size_t k = 0; k < levels.size(); ++k)
    EXPECT_EQ(set.previews.levels[k], stylize(model, img, StrokeParams::make(levels[k], 0.8, 0)));

  const auto rot = precompute_levels(model, img, levels, 0.8, 30);
  EXPECT_EQ(rot.features.frame.padded, make_rotation_frame(extent_of(img), 30).padded);
  for (const auto& l : rot.features.levels) EXPECT_EQ(l.encoding.height(), rot.features.frame.padded.height);
  for (const auto& p : rot.previews.levels) EXPECT_EQ(extent_of(p), extent_of(img));

  const auto single = precompute_levels(model, img, {2.0}, 0.8, 0);
  EXPECT_EQ(single.previews.blended, single.previews.levels[0]);

  EXPECT_EQ(kind_of([&] { precompute_levels(model, img, {2, 2}, 1, 0); }), ErrorKind::parameter);
  EXPECT_EQ(kind_of([&] { precompute_levels(model, img, levels, 1, 0, 1024); }), ErrorKind::resource);
  try {
    precompute_levels(model, img, levels, 1, 0, 1024);
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("3 levels"), std::string::npos);
  }
}

TEST_F(EditPipeline, ImageSpaceBinaryMaskIsBitwiseSelection) {
  const auto set = precompute_levels(model, img, levels, 1.0, 0);
  for (int k = 0; k < 3; ++k)
    EXPECT_EQ(blend_image_space(set.previews, LevelMask::one_hot(3, img.height, img.width, k)), set.previews.levels[k]);
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> pick(0, 2);
  std::vector<std::uint8_t> labels(img.pixel_count());
  for (auto& v : labels) v = static_cast<std::uint8_t>(pick(rng));
  const auto out = blend_image_space(set.previews, LevelMask::from_labels(labels, 3, img.height, img.width));
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (int c = 0; c < 3; ++c) ASSERT_EQ(out.rgb[i * 3 + c], set.previews.levels[labels[i]].rgb[i * 3 + c]);
}

TEST_F(EditPipeline, ImageSpaceIsLinearInTheMask) {
  const auto set = precompute_levels(model, img, levels, 1.0, 0);
  std::mt19937_64 rng(8);
  for (int t = 0; t < 5; ++t) {
    const auto a = random_soft(rng, 3, img.height, img.width);
    const auto b = random_soft(rng, 3, img.height, img.width);
    LevelMask mid = a;
    for (std::size_t i = 0; i < mid.weights.size(); ++i) mid.weights[i] = (a.weights[i] + b.weights[i]) / 2;
    const auto ba = blend_image_space(set.previews, a), bb = blend_image_space(set.previews, b);
    const auto bm = blend_image_space(set.previews, mid);
    for (std::size_t i = 0; i < bm.rgb.size(); ++i) ASSERT_NEAR(bm.rgb[i], (ba.rgb[i] + bb.rgb[i]) / 2, 1e-6);
  }
  const auto u = blend_image_space(set.previews, LevelMask::uniform(3, img.height, img.width));
  for (std::size_t i = 0; i < u.rgb.size(); ++i) {
    const float avg = (set.previews.levels[0].rgb[i] + set.previews.levels[1].rgb[i] + set.previews.levels[2].rgb[i]);
    ASSERT_NEAR(u.rgb[i], avg / 3, 1e-6);
  }
}

TEST_F(EditPipeline, FeatureSpaceOneHotMatchesStylize) {
  const auto set = precompute_levels(model, img, levels, 0.7, 0);
  for (int k = 0; k < 3; ++k) {
    const auto out = blend_feature_space(model, set.features, LevelMask::one_hot(3, img.height, img.width, k));
    const auto ref = stylize(model, img, StrokeParams::make(levels[k], 0.7, 0));
    EXPECT_LE(max_abs_diff(out, ref), 1e-5) << k;
  }
  const auto one = precompute_levels(model, img, {3.0}, 0.7, 0);
  EXPECT_EQ(blend_feature_space(model, one.features, LevelMask::uniform(1, img.height, img.width)),
            stylize(model, img, StrokeParams::make(3.0, 0.7, 0)));
}

TEST_F(EditPipeline, PreviewAndFinalAgreeOnOneHot) {
  EditRequest e{levels, 1.0, 0.0, LevelMask::one_hot(3, img.height, img.width, 1)};
  EXPECT_EQ(render_local_edit(model, img, e, BlendMode::preview), render_local_edit(model, img, e, BlendMode::final));
  EditRequest plain{{1.0, 2.0}, 1.0, 0.0, LevelMask::one_hot(2, img.height, img.width, 0)};
  EXPECT_EQ(render_local_edit(model, img, plain, BlendMode::final), stylize(model, img, StrokeParams::make(1, 1, 0)));
}

TEST_F(EditPipeline, FeatureSpaceRotatedOneHotStaysClose) {
  const auto set = precompute_levels(model, img, levels, 1.0, 90);
  const auto out = blend_feature_space(model, set.features, LevelMask::one_hot(3, img.height, img.width, 2));
  EXPECT_LE(max_abs_diff(out, stylize(model, img, StrokeParams::make(4.0, 1.0, 90))), 1e-5);
}

TEST_F(EditPipeline, HalfHalfMatchesEachSideAwayFromTheSeam) {
  const ImagePlane wide = oracle::textured_image(48, 128, 9);
  const auto set = precompute_levels(model, wide, {1.0, 4.0}, 1.0, 0);
  const auto out = blend_feature_space(model, set.features, half_half(2, wide.height, wide.width));
  const auto left = stylize(model, wide, StrokeParams::make(1.0, 1.0, 0));
  const auto right = stylize(model, wide, StrokeParams::make(4.0, 1.0, 0));
  // decoder receptive-field radius: 3x3 convs (three) plus the 9x9 output conv
  const int radius = 1 + 1 + 1 + 4;
  double worst = 0.0;
  for (int y = 0; y < wide.height; ++y)
    for (int x = 0; x < wide.width; ++x) {
      if (std::abs(x - wide.width / 2) <= radius) continue;
      const auto& ref = x < wide.width / 2 ? left : right;
      for (int c = 0; c < 3; ++c) worst = std::max(worst, static_cast<double>(std::abs(out.at(y, x, c) - ref.at(y, x, c))));
    }
  EXPECT_LE(worst, 1e-3);
}

TEST_F(EditPipeline, SoftMaskLeavesNoSeam) {
  const ImagePlane wide = oracle::smooth_image(64, 128, 10);
  const auto set = precompute_levels(model, wide, {1.0, 4.0}, 1.0, 0);
  LevelMask m(2, wide.height, wide.width);
  const int band_lo = 48, band_hi = 80;
  for (int y = 0; y < wide.height; ++y)
    for (int x = 0; x < wide.width; ++x) {
      const float t = std::clamp((x - band_lo) / static_cast<float>(band_hi - band_lo), 0.0f, 1.0f);
      m.at(0, y, x) = 1.0f - t;
      m.at(1, y, x) = t;
    }
  const auto out = blend_feature_space(model, set.features, m);
  const auto g = gradient_magnitude(out);
  std::vector<double> band, region;
  for (int y = 0; y + 1 < wide.height; ++y)
    for (int x = 0; x + 1 < wide.width; ++x)
      (x >= band_lo && x < band_hi ? band : region).push_back(g[static_cast<std::size_t>(y) * wide.width + x]);
  double band_mean = 0;
  for (double v : band) band_mean += v;
  band_mean /= band.size();
  EXPECT_LE(band_mean, 3.0 * median(region));
}

TEST_F(EditPipeline, ShapeAndSequencingErrors) {
  const auto set = precompute_levels(model, img, levels, 1.0, 0);
  EXPECT_EQ(kind_of([&] { blend_image_space(set.previews, LevelMask::uniform(2, img.height, img.width)); }),
            ErrorKind::shape);
  EXPECT_EQ(kind_of([&] { blend_image_space(set.previews, LevelMask::uniform(3, 10, 10)); }), ErrorKind::shape);
  EXPECT_EQ(kind_of([&] { blend_feature_space(model, set.features, LevelMask::uniform(3, 10, 10)); }),
            ErrorKind::shape);
  EXPECT_EQ(kind_of([&] { blend_image_space(PreviewSet{}, LevelMask::uniform(1, 4, 4)); }), ErrorKind::sequencing);
  EXPECT_EQ(parse_blend_mode("final"), BlendMode::final);
  EXPECT_EQ(kind_of([&] { parse_blend_mode("draft"); }), ErrorKind::parameter);
}

TEST(MaskFiles, LabelPngRoundTrip) {
  oracle::TempDir dir("mask");
  std::vector<std::uint8_t> labels(6 * 8);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint8_t>(i % 3);
  save_label_mask(labels, {6, 8}, dir / "m.png");
  const auto m = load_mask((dir / "m.png").string(), 3, {6, 8});
  EXPECT_EQ(m.weights, LevelMask::from_labels(labels, 3, 6, 8).weights);
  EXPECT_EQ(kind_of([&] { load_mask((dir / "m.png").string(), 2, {6, 8}); }), ErrorKind::shape);
  EXPECT_EQ(kind_of([&] { load_mask((dir / "m.png").string(), 3, {6, 9}); }), ErrorKind::shape);
  EXPECT_EQ(kind_of([&] { load_mask((dir / "nope.png").string(), 3, {6, 8}); }), ErrorKind::io);
  const auto bytes = read_file(dir / "m.png");
  EXPECT_EQ(decode_label_mask(bytes, 3, {6, 8}).weights, m.weights);
}

TEST(MaskFiles, PlaneFormatsNormalizeOnLoad) {
  oracle::TempDir dir("planes");
  LevelMask m(2, 5, 7);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x) {
      m.at(0, y, x) = static_cast<float>(x) / 6.0f;
      m.at(1, y, x) = 1.0f - static_cast<float>(x) / 6.0f;
    }
  save_plane_masks(m, dir / "m.tif");
  const auto tiff = load_mask((dir / "m.tif").string(), 2, {5, 7});
  EXPECT_LT(tiff.max_sum_error(), 1e-6);
  for (std::size_t i = 0; i < m.weights.size(); ++i) EXPECT_NEAR(tiff.weights[i], m.weights[i], 1.0 / 255);
  EXPECT_EQ(kind_of([&] { load_mask((dir / "m.tif").string(), 3, {5, 7}); }), ErrorKind::shape);

  // unnormalized separate planes: both at full weight → half each
  cv::Mat full(5, 7, CV_8U, cv::Scalar(255));
  cv::imwrite((dir / "a.png").string(), full);
  cv::imwrite((dir / "b.png").string(), full);
  const auto pair = load_mask((dir / "a.png").string() + "," + (dir / "b.png").string(), 2, {5, 7});
  for (float v : pair.weights) EXPECT_FLOAT_EQ(v, 0.5f);
  const auto both = decode_plane_masks({read_file(dir / "a.png"), read_file(dir / "b.png")}, 2, {5, 7});
  EXPECT_EQ(both.weights, pair.weights);
}
