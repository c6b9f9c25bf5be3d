#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "snst/tensor.hpp"

namespace snst {

// H×W×3 RGB image, interleaved, float32 in [0,1].
struct ImagePlane {
  int height = 0;
  int width = 0;
  std::vector<float> rgb;

  ImagePlane() = default;
  ImagePlane(int h, int w, float fill = 0.0f)
      : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, fill) {}

  float& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool empty() const { return rgb.empty(); }
  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  bool same_extent(const ImagePlane& o) const { return height == o.height && width == o.width; }

  friend bool operator==(const ImagePlane&, const ImagePlane&) = default;
};

struct Extent {
  int height = 0;
  int width = 0;
  friend bool operator==(const Extent&, const Extent&) = default;
};

inline Extent extent_of(const ImagePlane& img) { return {img.height, img.width}; }

Tensor to_tensor(const ImagePlane& img);
ImagePlane to_image(const Tensor& t);

ImagePlane clamp01(ImagePlane img);

// Codec helpers. PNG is the guaranteed format; JPEG is accepted on input.
ImagePlane decode_image(std::span<const std::uint8_t> bytes);
ImagePlane load_image(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const ImagePlane& img);
void save_png(const ImagePlane& img, const std::filesystem::path& path);

// Reads the PNG header without decoding pixel data.
std::optional<Extent> probe_png_extent(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// Bilinear resize; antialiased when shrinking if `antialias` is set.
ImagePlane resize_image(const ImagePlane& img, int height, int width, bool antialias = true);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const ImagePlane& img);

double psnr(const ImagePlane& a, const ImagePlane& b, double crop_fraction = 1.0);
float max_abs_diff(const ImagePlane& a, const ImagePlane& b);

}  // namespace snst
