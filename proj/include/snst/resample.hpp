#pragma once

#include <vector>

#include "snst/tensor.hpp"

namespace snst {

// One axis of a separable triangle-filter resampler with half-pixel centers.
// Shrinking with antialias widens the filter support by the scale factor;
// otherwise the filter is plain linear interpolation. Same-size axes are the
// identity.
struct ResampleAxis {
  int in = 0;
  int out = 0;
  std::vector<int> first;      // first source index per output sample
  std::vector<int> count;      // taps per output sample
  std::vector<double> weights;  // packed taps, `max_taps` per output sample
  int max_taps = 0;

  static ResampleAxis make(int in, int out, bool antialias);
};

template <class T>
BasicTensor<T> resample(const BasicTensor<T>& x, int height, int width, bool antialias);

// Adjoint of `resample` with the same geometry: maps a gradient on the output
// grid back to the input grid.
template <class T>
BasicTensor<T> resample_backward(const BasicTensor<T>& dy, int in_height, int in_width, bool antialias);

// Size of the dynamic-branch input for a downsample factor; a multiple of 4,
// at least 8, and equal to `size` when factor == 1 and size % 4 == 0.
int branch_extent(int size, double factor);

}  // namespace snst
