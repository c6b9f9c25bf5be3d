#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "snst/image.hpp"
#include "snst/network.hpp"
#include "snst/rotation.hpp"

namespace snst {

// L soft weight planes over the image, convex per pixel.
struct LevelMask {
  int levels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> weights;  // L × H × W

  LevelMask() = default;
  LevelMask(int l, int h, int w) : levels(l), height(h), width(w), weights(static_cast<std::size_t>(l) * h * w, 0.0f) {}

  static LevelMask one_hot(int levels, int height, int width, int level);
  static LevelMask uniform(int levels, int height, int width);
  // `labels` is H × W, each entry a level index < levels.
  static LevelMask from_labels(std::span<const std::uint8_t> labels, int levels, int height, int width);

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  float& at(int l, int y, int x) { return weights[l * plane_size() + static_cast<std::size_t>(y) * width + x]; }
  float at(int l, int y, int x) const { return weights[l * plane_size() + static_cast<std::size_t>(y) * width + x]; }
  Extent extent() const { return {height, width}; }

  // Divides each pixel's weights by their sum; pixels whose sum is below
  // 1e-6 get uniform weights.
  void normalize();
  // Largest |Σ_ℓ w - 1| over all pixels.
  double max_sum_error() const;
  Tensor as_tensor() const;
  static LevelMask from_tensor(const Tensor& t);
};

inline constexpr double kDegenerateWeightSum = 1e-6;

// Loads a mask file. Accepted forms:
//   * a single-channel 8-bit PNG whose values are level indices,
//   * a multi-page TIFF with one 8-bit weight plane per level,
//   * a comma-separated list of 8-bit PNGs, one weight plane per level.
// Weight planes are normalized per pixel on load. The result must have
// `levels` planes of the given extent (shape error otherwise).
LevelMask load_mask(const std::string& spec, int levels, Extent extent);
LevelMask decode_label_mask(std::span<const std::uint8_t> png, int levels, Extent extent);
LevelMask decode_plane_masks(const std::vector<std::vector<std::uint8_t>>& planes, int levels, Extent extent);
void save_label_mask(const std::vector<std::uint8_t>& labels, Extent extent, const std::filesystem::path& path);
void save_plane_masks(const LevelMask& mask, const std::filesystem::path& tiff_path);

struct StrokeLevel {
  double lambda_s = 1.0;
  StrokeEncoding encoding;
  DecoderStats decoder_stats;  // from the level's own decode, mixed by the mask when blending
};

// Per-level encoder features in the rotated/padded frame.
struct StrokeFeatureSet {
  std::vector<StrokeLevel> levels;
  RotationFrame frame;
  double lambda_i = 1.0;

  std::vector<double> level_values() const;
  std::size_t byte_size() const;
};

struct PreviewSet {
  std::vector<ImagePlane> levels;  // decoded per-level images at original extent
  ImagePlane blended;
};

struct LevelSet {
  StrokeFeatureSet features;
  PreviewSet previews;
};

inline constexpr std::size_t kDefaultLevelBudgetBytes = std::size_t{3} << 30;

// `level_values` must be non-empty, strictly increasing and inside [1, 8].
std::vector<Violation> validate_levels(const std::vector<double>& level_values);

// Geometric spacing over [lo, hi].
std::vector<double> default_levels(int count = 10, double lo = 1.0, double hi = 4.0);

// Estimated memory for a level set (features plus previews).
std::size_t estimate_level_bytes(const StyleModel& model, Extent content, const std::vector<double>& level_values,
                                 double tau);

LevelSet precompute_levels(const StyleModel& model, const ImagePlane& content, const std::vector<double>& level_values,
                           double lambda_i, double tau, std::size_t budget_bytes = kDefaultLevelBudgetBytes);

ImagePlane blend_image_space(const PreviewSet& previews, const LevelMask& mask);

// Rotates every weight plane into the feature frame and renormalizes.
LevelMask transform_mask(const LevelMask& mask, const RotationFrame& frame);

ImagePlane blend_feature_space(const StyleModel& model, const StrokeFeatureSet& fs, const LevelMask& mask);

enum class BlendMode { preview, final };

BlendMode parse_blend_mode(const std::string& s);
const char* to_string(BlendMode m);

struct EditRequest {
  std::vector<double> level_values;
  double lambda_i = 1.0;
  double tau = 0.0;
  LevelMask mask;
};

ImagePlane render_local_edit(const StyleModel& model, const ImagePlane& content, const EditRequest& edit, BlendMode mode);

}  // namespace snst
