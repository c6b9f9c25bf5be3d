#include "snst/image.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "snst/resample.hpp"

namespace snst {

Tensor to_tensor(const ImagePlane& img) {
  Tensor t(3, img.height, img.width);
  const std::size_t n = img.pixel_count();
  for (int c = 0; c < 3; ++c) {
    float* dst = t.channel(c);
    for (std::size_t i = 0; i < n; ++i) dst[i] = img.rgb[i * 3 + c];
  }
  return t;
}

ImagePlane to_image(const Tensor& t) {
  if (t.channels != 3) fail(ErrorKind::shape, "to_image: expected 3 channels, got " + std::to_string(t.channels));
  ImagePlane img(t.height, t.width);
  const std::size_t n = img.pixel_count();
  for (int c = 0; c < 3; ++c) {
    const float* src = t.channel(c);
    for (std::size_t i = 0; i < n; ++i) img.rgb[i * 3 + c] = src[i];
  }
  return img;
}

ImagePlane clamp01(ImagePlane img) {
  for (auto& v : img.rgb) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

namespace {

ImagePlane from_mat(const cv::Mat& bgr) {
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  ImagePlane img(rgb.rows, rgb.cols);
  const double scale = rgb.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
  cv::Mat f;
  rgb.convertTo(f, CV_32FC3, scale);
  for (int y = 0; y < f.rows; ++y) {
    const float* row = f.ptr<float>(y);
    std::copy(row, row + f.cols * 3, img.rgb.begin() + static_cast<std::ptrdiff_t>(y) * f.cols * 3);
  }
  return img;
}

cv::Mat to_mat8(const ImagePlane& img) {
  cv::Mat rgb(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    auto* row = rgb.ptr<std::uint8_t>(y);
    for (int i = 0; i < img.width * 3; ++i) {
      const float v = img.rgb[static_cast<std::size_t>(y) * img.width * 3 + i];
      row[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    }
  }
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

}  // namespace

ImagePlane decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) fail(ErrorKind::input, "decode_image: empty buffer");
  cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8U, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat bgr = cv::imdecode(buf, cv::IMREAD_COLOR);
  if (bgr.empty()) fail(ErrorKind::input, "decode_image: undecodable image data");
  return from_mat(bgr);
}

ImagePlane load_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_image(bytes);
  } catch (const Error& e) {
    fail(ErrorKind::input, path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const ImagePlane& img) {
  if (img.empty()) fail(ErrorKind::input, "encode_png: empty image");
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", to_mat8(img), out)) fail(ErrorKind::io, "encode_png: encoder failed");
  return out;
}

void save_png(const ImagePlane& img, const std::filesystem::path& path) { write_file(path, encode_png(img)); }

std::optional<Extent> probe_png_extent(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (bytes.size() < 24 || !std::equal(std::begin(kSignature), std::end(kSignature), bytes.begin()))
    return std::nullopt;
  auto be32 = [&](std::size_t off) {
    return (static_cast<std::uint32_t>(bytes[off]) << 24) | (static_cast<std::uint32_t>(bytes[off + 1]) << 16) |
           (static_cast<std::uint32_t>(bytes[off + 2]) << 8) | static_cast<std::uint32_t>(bytes[off + 3]);
  };
  const std::uint32_t w = be32(16);
  const std::uint32_t h = be32(20);
  if (w == 0 || h == 0 || w > (1u << 30) || h > (1u << 30)) return std::nullopt;
  return Extent{static_cast<int>(h), static_cast<int>(w)};
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "short write to " + path.string());
}

ImagePlane resize_image(const ImagePlane& img, int height, int width, bool antialias) {
  if (height == img.height && width == img.width) return img;
  return to_image(resample(to_tensor(img), height, width, antialias));
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    fail(ErrorKind::io, "sha256 failed");
  std::string hex;
  hex.reserve(len * 2);
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

std::string sha256_hex(const ImagePlane& img) {
  std::vector<std::uint8_t> bytes(sizeof(int) * 2 + img.rgb.size() * sizeof(float));
  std::memcpy(bytes.data(), &img.height, sizeof(int));
  std::memcpy(bytes.data() + sizeof(int), &img.width, sizeof(int));
  std::memcpy(bytes.data() + sizeof(int) * 2, img.rgb.data(), img.rgb.size() * sizeof(float));
  return sha256_hex(bytes);
}

double psnr(const ImagePlane& a, const ImagePlane& b, double crop_fraction) {
  if (!a.same_extent(b)) fail(ErrorKind::shape, "psnr: extent mismatch");
  const int my = static_cast<int>(std::lround(a.height * (1.0 - crop_fraction) / 2.0));
  const int mx = static_cast<int>(std::lround(a.width * (1.0 - crop_fraction) / 2.0));
  double se = 0.0;
  std::size_t n = 0;
  for (int y = my; y < a.height - my; ++y)
    for (int x = mx; x < a.width - mx; ++x)
      for (int c = 0; c < 3; ++c) {
        const double d = a.at(y, x, c) - b.at(y, x, c);
        se += d * d;
        ++n;
      }
  if (n == 0) fail(ErrorKind::shape, "psnr: empty region");
  const double mse = se / static_cast<double>(n);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

float max_abs_diff(const ImagePlane& a, const ImagePlane& b) {
  if (!a.same_extent(b)) fail(ErrorKind::shape, "max_abs_diff: extent mismatch");
  float m = 0.0f;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) m = std::max(m, std::abs(a.rgb[i] - b.rgb[i]));
  return m;
}

}  // namespace snst
