#pragma once

#include <cstdint>
#include <filesystem>

#include "snst/image.hpp"
#include "snst/network.hpp"

namespace snst {

// Builds a training corpus of `count` PNGs by random crops, flips, rescaling
// and colour jitter of the photos in `photos_dir`.
void synthesize_corpus(const std::filesystem::path& photos_dir, const std::filesystem::path& out_dir, int count,
                       int long_side, std::uint64_t seed);

// Procedural painting made of oriented bristle strokes; stands in as a style
// image when no artwork is at hand.
ImagePlane paint_brush_style(int height, int width, std::uint64_t seed);

}  // namespace snst
