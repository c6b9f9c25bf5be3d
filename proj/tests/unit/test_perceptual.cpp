#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "oracles.hpp"
#include "snst/perceptual.hpp"

using namespace snst;

namespace {

PerceptualFeatures<double> random_features(std::mt19937_64& rng, int h, int w, int divisor) {
  const int widths[5] = {64, 128, 256, 512, 512};
  PerceptualFeatures<double> f;
  for (int l = 0; l < 5; ++l) {
    const int s = 1 << l;
    f[kStyleLayers[l]] = oracle::random_tensor<double>(rng, widths[l] / divisor, std::max(1, h / s),
                                                       std::max(1, w / s), 0.0, 1.0);
  }
  f[kContentLayer] = oracle::random_tensor<double>(rng, 512 / divisor, std::max(1, h / 8), std::max(1, w / 8), 0.0, 1.0);
  return f;
}

std::vector<GramMatrix<double>> grams_of(const PerceptualFeatures<double>& f) {
  std::vector<GramMatrix<double>> out;
  for (const auto& l : kStyleLayers) out.push_back(gram(f.at(l), l));
  return out;
}

}  // namespace

TEST(Gram, HandExample) {
  BasicTensor<double> f(2, 1, 1);
  f.data = {3, 4};
  const auto g = gram(f);
  ASSERT_EQ(g.channels, 2);
  EXPECT_DOUBLE_EQ(g.at(0, 0), 9.0 / 2);
  EXPECT_DOUBLE_EQ(g.at(0, 1), 12.0 / 2);
  EXPECT_DOUBLE_EQ(g.at(1, 0), 12.0 / 2);
  EXPECT_DOUBLE_EQ(g.at(1, 1), 16.0 / 2);
}

TEST(Gram, MatchesDoubleLoopOracle) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> dim(1, 4), ch(1, 3);
  for (int t = 0; t < 200; ++t) {
    const auto f = oracle::random_tensor<double>(rng, ch(rng), dim(rng), dim(rng), -3, 3);
    const auto want = oracle::naive_gram(f);
    const auto got = gram(f);
    for (std::size_t i = 0; i < want.size(); ++i) ASSERT_NEAR(got.data[i], want[i], 1e-6);
    const auto gf = gram(f.cast<float>());
    for (std::size_t i = 0; i < want.size(); ++i) ASSERT_NEAR(gf.data[i], want[i], 1e-5);
  }
}

TEST(Gram, SymmetricPositiveSemidefinite) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 30; ++t) {
    const auto f = oracle::random_tensor<double>(rng, 6, 5, 7, -2, 2);
    const auto g = gram(f);
    Eigen::MatrixXd m(g.channels, g.channels);
    for (int i = 0; i < g.channels; ++i)
      for (int j = 0; j < g.channels; ++j) {
        EXPECT_EQ(g.at(i, j), g.at(j, i));
        m(i, j) = g.at(i, j);
      }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-6);
  }
}

TEST(StyleLoss, SelfDistanceIsZero) {
  const auto ex = PerceptualExtractor<float>::random(16, 3);
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto img = to_tensor(oracle::textured_image(48, 40, seed));
    const auto feats = ex.extract(img);
    EXPECT_LT(style_loss(feats, style_grams(ex, img)), 1e-8);
  }
}

TEST(StyleLoss, SymmetricAndQuarticInActivations) {
  std::mt19937_64 rng(4);
  const auto a = random_features(rng, 8, 8, 16);
  const auto b = random_features(rng, 8, 8, 16);
  std::vector<double> ab, ba;
  style_loss<double>(a, grams_of(b), nullptr, 1.0, &ab);
  style_loss<double>(b, grams_of(a), nullptr, 1.0, &ba);
  for (std::size_t l = 0; l < ab.size(); ++l) EXPECT_NEAR(ab[l], ba[l], 1e-15 + 1e-12 * ab[l]);

  auto zero = grams_of(a);
  for (auto& g : zero) std::fill(g.data.begin(), g.data.end(), 0.0);
  auto doubled = a;
  for (auto& v : doubled.at("relu3_1").data) v *= 2.0;
  std::vector<double> base, twice;
  style_loss<double>(a, zero, nullptr, 1.0, &base);
  style_loss<double>(doubled, zero, nullptr, 1.0, &twice);
  EXPECT_NEAR(twice[2] / base[2], 16.0, 1e-9);
  EXPECT_DOUBLE_EQ(twice[0], base[0]);
}

TEST(StyleLoss, MissingLayerIsConfigurationError) {
  std::mt19937_64 rng(5);
  auto a = random_features(rng, 8, 8, 16);
  const auto refs = grams_of(a);
  a.erase("relu4_1");
  try {
    style_loss(a, refs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::configuration);
  }
}

TEST(ContentLoss, ConstantShiftGivesDeltaSquared) {
  std::mt19937_64 rng(6);
  const auto c = random_features(rng, 16, 16, 16);
  EXPECT_EQ(content_loss(c, c), 0.0);
  for (double delta : {0.1, -0.7, 2.5}) {
    auto t = c;
    for (auto& v : t.at(kContentLayer).data) v += delta;
    EXPECT_NEAR(content_loss(t, c), delta * delta, 1e-12);
  }
  auto other = random_features(rng, 16, 16, 16);
  EXPECT_GE(content_loss(other, c), 0.0);
  auto wrong = c;
  wrong[kContentLayer] = BasicTensor<double>(32, 3, 3);
  EXPECT_THROW(content_loss(wrong, c), Error);
}

class TotalLoss : public ::testing::Test {
 protected:
  PerceptualExtractor<double> ex = PerceptualExtractor<float>::random(16, 11).cast<double>();
};

TEST_F(TotalLoss, BreakdownSumsAndZeroIntensityIsContentOnly) {
  const auto out = to_tensor(oracle::textured_image(32, 32, 1)).cast<double>();
  const auto content = ex.extract(to_tensor(oracle::textured_image(32, 32, 2)).cast<double>(), nullptr, kContentLayer);
  const auto refs = style_grams(ex, to_tensor(oracle::textured_image(40, 40, 3)).cast<double>());
  const auto l = total_loss(ex, out, content, refs, 0.6, 1.0);
  EXPECT_NEAR(l.total, l.content_weight * l.content + l.style_weight * l.style, 1e-6);
  EXPECT_EQ(l.style_weight, 0.6);
  ASSERT_EQ(l.style_layers.size(), 5u);
  const auto z = total_loss(ex, out, content, refs, 0.0, 1.0);
  EXPECT_EQ(z.total, z.content);
}

TEST_F(TotalLoss, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(12);
  auto out = oracle::random_tensor<double>(rng, 3, 32, 32, 0.0, 1.0);
  const auto content = ex.extract(oracle::random_tensor<double>(rng, 3, 32, 32, 0.0, 1.0), nullptr, kContentLayer);
  const auto refs = style_grams(ex, oracle::random_tensor<double>(rng, 3, 48, 48, 0.0, 1.0));
  // amplify the style term so both terms contribute comparably
  const double lambda_i = 0.8 * 1000.0;
  BasicTensor<double> grad;
  total_loss(ex, out, content, refs, lambda_i, 1.0, &grad);
  ASSERT_TRUE(grad.same_shape(out));

  std::uniform_int_distribution<std::size_t> pick(0, out.data.size() - 1);
  double num2 = 0.0, err2 = 0.0;
  for (int k = 0; k < 40; ++k) {
    const std::size_t i = pick(rng);
    const double keep = out.data[i], h = 1e-6;
    out.data[i] = keep + h;
    const double up = total_loss(ex, out, content, refs, lambda_i, 1.0).total;
    out.data[i] = keep - h;
    const double down = total_loss(ex, out, content, refs, lambda_i, 1.0).total;
    out.data[i] = keep;
    const double num = (up - down) / (2 * h);
    num2 += num * num;
    err2 += (num - grad.data[i]) * (num - grad.data[i]);
  }
  EXPECT_LT(std::sqrt(err2 / num2), 1e-3);
}

TEST(Extractor, LayoutAndRoundTrip) {
  const auto ex = PerceptualExtractor<float>::random(8, 5);
  ASSERT_EQ(ex.layers().size(), 13u);
  EXPECT_EQ(ex.layers().front().conv.out_channels, 8);
  EXPECT_EQ(ex.layers().back().relu, "relu5_1");
  const auto img = to_tensor(oracle::textured_image(32, 32, 9));
  const auto feats = ex.extract(img);
  EXPECT_EQ(feats.size(), 6u);
  EXPECT_EQ(feats.at("relu1_1").height, 32);
  EXPECT_EQ(feats.at("relu4_2").height, 4);
  EXPECT_EQ(feats.at("relu5_1").height, 2);

  oracle::TempDir dir("extractor");
  ex.save(dir.path() / "x.ckpt");
  const auto back = PerceptualExtractor<float>::load(dir.path() / "x.ckpt");
  EXPECT_EQ(back.width_divisor(), 8);
  const auto again = back.extract(img);
  for (const auto& [name, t] : feats) EXPECT_EQ(again.at(name).data, t.data) << name;
}

TEST(Extractor, MissingWeightsAreAConfigurationError) {
  try {
    PerceptualExtractor<float>::load("/nonexistent/vgg19.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::configuration);
    EXPECT_NE(std::string(e.what()).find(kExtractorEnv), std::string::npos);
  }
}
