#pragma once

#include <utility>

#include "snst/image.hpp"
#include "snst/tensor.hpp"

namespace snst {

// Geometry of a rotate-and-pad step: the original extent, the enlarged
// axis-aligned canvas holding the rotated image, and where the original
// extent sits when the canvas is rotated back.
struct RotationFrame {
  double tau = 0.0;
  Extent original;
  Extent padded;
  int offset_row = 0;
  int offset_col = 0;

  bool is_identity() const { return tau == 0.0; }
  friend bool operator==(const RotationFrame&, const RotationFrame&) = default;
};

// H' = ceil(H|cos τ| + W|sin τ|), W' = ceil(W|cos τ| + H|sin τ|).
RotationFrame make_rotation_frame(Extent original, double tau);

// Rotates about the image center into the enlarged canvas (bilinear), filling
// pixels outside the source by mirroring across the rotated image boundary.
// Multiples of 90° are exact pixel permutations; τ = 0 is the identity.
std::pair<ImagePlane, RotationFrame> rotate_pad(const ImagePlane& image, double tau);
Tensor rotate_pad(const Tensor& planes, const RotationFrame& frame);

// Rotates by -τ and crops back to the original extent.
ImagePlane crop_unrotate(const ImagePlane& image, const RotationFrame& frame);
Tensor crop_unrotate(const Tensor& planes, const RotationFrame& frame);

}  // namespace snst
