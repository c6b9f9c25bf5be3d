#include "snst/assets.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <opencv2/imgproc.hpp>
#include <random>
#include <vector>

namespace snst {

namespace fs = std::filesystem;

void synthesize_corpus(const fs::path& photos_dir, const fs::path& out_dir, int count, int long_side,
                       std::uint64_t seed) {
  if (count < 1 || long_side < kMinImageSide) fail(ErrorKind::parameter, "corpus count and size must be positive");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(photos_dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) fail(ErrorKind::data, "no PNG photos in '" + photos_dir.string() + "'");
  std::vector<ImagePlane> photos;
  for (const auto& f : files) photos.push_back(load_image(f));

  fs::create_directories(out_dir);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < count; ++i) {
    const auto& src = photos[static_cast<std::size_t>(i) % photos.size()];
    const double area = 0.35 + 0.65 * u(rng);
    const double aspect = std::exp((u(rng) - 0.5) * 0.6);
    int ch = std::clamp(static_cast<int>(src.height * std::sqrt(area / aspect)), 16, src.height);
    int cw = std::clamp(static_cast<int>(src.width * std::sqrt(area * aspect)), 16, src.width);
    const int y0 = static_cast<int>(u(rng) * (src.height - ch));
    const int x0 = static_cast<int>(u(rng) * (src.width - cw));
    const bool flip = u(rng) < 0.5;
    std::array<float, 3> gain{};
    for (auto& g : gain) g = static_cast<float>(0.85 + 0.3 * u(rng));
    const float contrast = static_cast<float>(0.8 + 0.4 * u(rng));

    ImagePlane c(ch, cw);
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x)
        for (int k = 0; k < 3; ++k) {
          const int sx = flip ? x0 + cw - 1 - x : x0 + x;
          const float v = src.at(y0 + y, sx, k);
          c.at(y, x, k) = std::clamp((v - 0.5f) * contrast + 0.5f, 0.0f, 1.0f) * gain[k];
        }
    const double s = static_cast<double>(long_side) / std::max(ch, cw);
    const int oh = std::max(16, static_cast<int>(std::lround(ch * s)));
    const int ow = std::max(16, static_cast<int>(std::lround(cw * s)));
    char name[32];
    std::snprintf(name, sizeof name, "img_%04d.png", i);
    save_png(clamp01(resize_image(c, oh, ow)), out_dir / name);
  }
}

ImagePlane paint_brush_style(int height, int width, std::uint64_t seed) {
  if (height < kMinImageSide || width < kMinImageSide) fail(ErrorKind::parameter, "style canvas too small");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::array<cv::Vec3f, 6> palette = {cv::Vec3f(0.10f, 0.18f, 0.45f), cv::Vec3f(0.95f, 0.78f, 0.20f),
                                            cv::Vec3f(0.15f, 0.45f, 0.55f), cv::Vec3f(0.85f, 0.35f, 0.15f),
                                            cv::Vec3f(0.92f, 0.92f, 0.80f), cv::Vec3f(0.05f, 0.08f, 0.12f)};
  cv::Mat canvas(height, width, CV_32FC3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const float t = static_cast<float>(y) / height;
      canvas.at<cv::Vec3f>(y, x) = palette[0] * (1.0f - t) + palette[2] * t;
    }

  // Swirling flow field sets the stroke orientation.
  const double fx = 2.0 + 3.0 * u(rng);
  const double fy = 2.0 + 3.0 * u(rng);
  auto angle_at = [&](double x, double y) {
    return std::sin(fx * x / width * M_PI) * 1.6 + std::cos(fy * y / height * M_PI) * 1.6;
  };

  const double scale = std::sqrt(static_cast<double>(height) * width) / 256.0;
  for (int pass = 0; pass < 3; ++pass) {
    const double len = (22.0 - 6.0 * pass) * scale;
    const double thick = (7.0 - 2.0 * pass) * scale;
    const int n = static_cast<int>((500 + 900 * pass) * scale * scale);
    for (int i = 0; i < n; ++i) {
      const double cx = u(rng) * width;
      const double cy = u(rng) * height;
      const double a = angle_at(cx, cy);
      cv::Vec3f col = palette[static_cast<std::size_t>(u(rng) * palette.size()) % palette.size()];
      const float jitter = static_cast<float>(0.85 + 0.3 * u(rng));
      col *= jitter;
      const double l = len * (0.6 + 0.8 * u(rng));
      const cv::Point2d d(std::cos(a) * l * 0.5, std::sin(a) * l * 0.5);
      // Bristles: parallel thin lines across the stroke width.
      const int bristles = std::max(2, static_cast<int>(thick));
      const cv::Point2d nrm(-std::sin(a), std::cos(a));
      for (int b = 0; b < bristles; ++b) {
        const double off = (b - bristles / 2.0) * thick / bristles;
        const float shade = static_cast<float>(0.8 + 0.4 * u(rng));
        const cv::Point2d p0 = cv::Point2d(cx, cy) - d + nrm * off;
        const cv::Point2d p1 = cv::Point2d(cx, cy) + d * (0.7 + 0.3 * u(rng)) + nrm * off;
        const cv::Vec3f c = col * shade;
        cv::line(canvas, cv::Point(static_cast<int>(p0.x * 16), static_cast<int>(p0.y * 16)),
                 cv::Point(static_cast<int>(p1.x * 16), static_cast<int>(p1.y * 16)), cv::Scalar(c[0], c[1], c[2]),
                 std::max(1, static_cast<int>(std::lround(thick / bristles * 1.6))), cv::LINE_AA, 4);
      }
    }
  }
  ImagePlane out(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int k = 0; k < 3; ++k) out.at(y, x, k) = std::clamp(canvas.at<cv::Vec3f>(y, x)[k], 0.0f, 1.0f);
  return out;
}

}  // namespace snst
