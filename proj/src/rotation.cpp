#include "snst/rotation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "snst/network.hpp"

namespace snst {

namespace {

int quarter_turns(double tau) {
  if (tau == 90.0) return 1;
  if (tau == 180.0) return 2;
  if (tau == 270.0) return 3;
  return 0;
}

// Symmetric reflection of a continuous coordinate into [0, n-1].
double reflect_coord(double u, int n) {
  if (n <= 1) return 0.0;
  const double period = 2.0 * (n - 1);
  u = std::fmod(std::abs(u), period);
  if (u > n - 1) u = period - u;
  return u;
}

float sample_bilinear(const float* plane, int h, int w, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const double fy = y - y0;
  const double fx = x - x0;
  const double top = plane[static_cast<std::size_t>(y0) * w + x0] * (1.0 - fx) + plane[static_cast<std::size_t>(y0) * w + x1] * fx;
  const double bot = plane[static_cast<std::size_t>(y1) * w + x0] * (1.0 - fx) + plane[static_cast<std::size_t>(y1) * w + x1] * fx;
  return static_cast<float>(top * (1.0 - fy) + bot * fy);
}

// Exact quarter-turn permutation; `turns` clockwise turns (y down).
Tensor rotate_quarter(const Tensor& x, int turns) {
  const bool swap = turns % 2 == 1;
  Tensor out(x.channels, swap ? x.width : x.height, swap ? x.height : x.width);
  const int h = x.height;
  const int w = x.width;
  for (int c = 0; c < x.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        const float v = x.at(c, y, xx);
        switch (turns) {
          case 1: out.at(c, xx, h - 1 - y) = v; break;
          case 2: out.at(c, h - 1 - y, w - 1 - xx) = v; break;
          case 3: out.at(c, w - 1 - xx, y) = v; break;
          default: out.at(c, y, xx) = v; break;
        }
      }
  return out;
}

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

}  // namespace

RotationFrame make_rotation_frame(Extent original, double tau) {
  RotationFrame f;
  f.tau = normalize_angle(tau);
  f.original = original;
  if (f.tau == 0.0) {
    f.padded = original;
    return f;
  }
  const double c = std::abs(std::cos(radians(f.tau)));
  const double s = std::abs(std::sin(radians(f.tau)));
  // snap away float noise so quarter turns give exact integer extents
  auto extent = [](double v) { return static_cast<int>(std::ceil(v - 1e-9)); };
  f.padded.height = extent(original.height * c + original.width * s);
  f.padded.width = extent(original.width * c + original.height * s);
  f.offset_row = (f.padded.height - original.height) / 2;
  f.offset_col = (f.padded.width - original.width) / 2;
  return f;
}

Tensor rotate_pad(const Tensor& planes, const RotationFrame& frame) {
  if (planes.height != frame.original.height || planes.width != frame.original.width)
    fail(ErrorKind::shape, "rotate_pad: input extent does not match rotation frame");
  if (frame.is_identity()) return planes;
  if (int turns = quarter_turns(frame.tau)) return rotate_quarter(planes, turns);
  const int h = planes.height;
  const int w = planes.width;
  const int ph = frame.padded.height;
  const int pw = frame.padded.width;
  const double ct = std::cos(radians(frame.tau));
  const double st = std::sin(radians(frame.tau));
  Tensor out(planes.channels, ph, pw);
  for (int r = 0; r < ph; ++r) {
    for (int col = 0; col < pw; ++col) {
      const double dr = r - (ph - 1) / 2.0;
      const double dc = col - (pw - 1) / 2.0;
      const double sy = reflect_coord(dr * ct - dc * st + (h - 1) / 2.0, h);
      const double sx = reflect_coord(dr * st + dc * ct + (w - 1) / 2.0, w);
      for (int c = 0; c < planes.channels; ++c) out.at(c, r, col) = sample_bilinear(planes.channel(c), h, w, sy, sx);
    }
  }
  return out;
}

Tensor crop_unrotate(const Tensor& planes, const RotationFrame& frame) {
  if (planes.height != frame.padded.height || planes.width != frame.padded.width)
    fail(ErrorKind::shape, "crop_unrotate: image extent " + std::to_string(planes.height) + "x" +
                               std::to_string(planes.width) + " does not match padded extent " +
                               std::to_string(frame.padded.height) + "x" + std::to_string(frame.padded.width));
  if (frame.is_identity()) return planes;
  if (int turns = quarter_turns(frame.tau)) return rotate_quarter(planes, 4 - turns);
  const int h = frame.original.height;
  const int w = frame.original.width;
  const int ph = planes.height;
  const int pw = planes.width;
  const double ct = std::cos(radians(frame.tau));
  const double st = std::sin(radians(frame.tau));
  Tensor out(planes.channels, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double a = y - (h - 1) / 2.0;
      const double b = x - (w - 1) / 2.0;
      const double r = a * ct + b * st + (ph - 1) / 2.0;
      const double col = -a * st + b * ct + (pw - 1) / 2.0;
      for (int c = 0; c < planes.channels; ++c) out.at(c, y, x) = sample_bilinear(planes.channel(c), ph, pw, r, col);
    }
  }
  return out;
}

std::pair<ImagePlane, RotationFrame> rotate_pad(const ImagePlane& image, double tau) {
  const RotationFrame frame = make_rotation_frame(extent_of(image), tau);
  if (frame.is_identity()) return {image, frame};
  return {to_image(rotate_pad(to_tensor(image), frame)), frame};
}

ImagePlane crop_unrotate(const ImagePlane& image, const RotationFrame& frame) {
  if (frame.is_identity()) {
    if (extent_of(image) != frame.padded) fail(ErrorKind::shape, "crop_unrotate: extent mismatch");
    return image;
  }
  return to_image(crop_unrotate(to_tensor(image), frame));
}

}  // namespace snst
