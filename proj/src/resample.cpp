#include "snst/resample.hpp"

#include <algorithm>
#include <cmath>

namespace snst {

ResampleAxis ResampleAxis::make(int in, int out, bool antialias) {
  if (in <= 0 || out <= 0) fail(ErrorKind::shape, "resample: empty axis");
  ResampleAxis ax;
  ax.in = in;
  ax.out = out;
  const double scale = static_cast<double>(in) / out;
  const double support = (antialias && scale > 1.0) ? scale : 1.0;
  ax.max_taps = static_cast<int>(std::ceil(support)) * 2 + 1;
  ax.first.resize(out);
  ax.count.resize(out);
  ax.weights.assign(static_cast<std::size_t>(out) * ax.max_taps, 0.0);
  for (int o = 0; o < out; ++o) {
    const double center = (o + 0.5) * scale;
    int lo = std::max(0, static_cast<int>(std::floor(center - support)));
    int hi = std::min(in, static_cast<int>(std::ceil(center + support)) + 1);
    double total = 0.0;
    int first = -1;
    int n = 0;
    double* w = &ax.weights[static_cast<std::size_t>(o) * ax.max_taps];
    for (int i = lo; i < hi; ++i) {
      double t = 1.0 - std::abs((i + 0.5 - center) / support);
      if (t <= 0.0) {
        if (first >= 0) break;
        continue;
      }
      if (first < 0) first = i;
      w[n++] = t;
      total += t;
    }
    if (first < 0) {
      // center falls exactly between clamped samples; take the nearest
      first = std::clamp(static_cast<int>(center), 0, in - 1);
      w[0] = 1.0;
      n = 1;
      total = 1.0;
    }
    for (int k = 0; k < n; ++k) w[k] /= total;
    ax.first[o] = first;
    ax.count[o] = n;
  }
  return ax;
}

template <class T>
BasicTensor<T> resample(const BasicTensor<T>& x, int height, int width, bool antialias) {
  if (height == x.height && width == x.width) return x;
  const auto ax_h = ResampleAxis::make(x.height, height, antialias);
  const auto ax_w = ResampleAxis::make(x.width, width, antialias);
  BasicTensor<T> mid(x.channels, x.height, width);
  for (int c = 0; c < x.channels; ++c) {
    for (int y = 0; y < x.height; ++y) {
      const T* src = x.channel(c) + static_cast<std::size_t>(y) * x.width;
      T* dst = mid.channel(c) + static_cast<std::size_t>(y) * width;
      for (int o = 0; o < width; ++o) {
        const double* w = &ax_w.weights[static_cast<std::size_t>(o) * ax_w.max_taps];
        const T* s = src + ax_w.first[o];
        double acc = 0.0;
        for (int k = 0; k < ax_w.count[o]; ++k) acc += w[k] * s[k];
        dst[o] = static_cast<T>(acc);
      }
    }
  }
  BasicTensor<T> out(x.channels, height, width);
  std::vector<double> row(width);
  for (int c = 0; c < x.channels; ++c) {
    const T* src = mid.channel(c);
    T* dst = out.channel(c);
    for (int o = 0; o < height; ++o) {
      std::fill(row.begin(), row.end(), 0.0);
      const double* w = &ax_h.weights[static_cast<std::size_t>(o) * ax_h.max_taps];
      for (int k = 0; k < ax_h.count[o]; ++k) {
        const T* s = src + static_cast<std::size_t>(ax_h.first[o] + k) * width;
        const double wk = w[k];
        for (int i = 0; i < width; ++i) row[i] += wk * s[i];
      }
      T* d = dst + static_cast<std::size_t>(o) * width;
      for (int i = 0; i < width; ++i) d[i] = static_cast<T>(row[i]);
    }
  }
  return out;
}

template <class T>
BasicTensor<T> resample_backward(const BasicTensor<T>& dy, int in_height, int in_width, bool antialias) {
  if (dy.height == in_height && dy.width == in_width) return dy;
  const auto ax_h = ResampleAxis::make(in_height, dy.height, antialias);
  const auto ax_w = ResampleAxis::make(in_width, dy.width, antialias);
  // transpose of the vertical pass
  BasicTensor<T> mid(dy.channels, in_height, dy.width);
  for (int c = 0; c < dy.channels; ++c) {
    const T* g = dy.channel(c);
    T* m = mid.channel(c);
    for (int o = 0; o < dy.height; ++o) {
      const double* w = &ax_h.weights[static_cast<std::size_t>(o) * ax_h.max_taps];
      const T* grow = g + static_cast<std::size_t>(o) * dy.width;
      for (int k = 0; k < ax_h.count[o]; ++k) {
        T* mrow = m + static_cast<std::size_t>(ax_h.first[o] + k) * dy.width;
        const T wk = static_cast<T>(w[k]);
        for (int i = 0; i < dy.width; ++i) mrow[i] += wk * grow[i];
      }
    }
  }
  // transpose of the horizontal pass
  BasicTensor<T> dx(dy.channels, in_height, in_width);
  for (int c = 0; c < dy.channels; ++c) {
    for (int y = 0; y < in_height; ++y) {
      const T* m = mid.channel(c) + static_cast<std::size_t>(y) * dy.width;
      T* d = dx.channel(c) + static_cast<std::size_t>(y) * in_width;
      for (int o = 0; o < dy.width; ++o) {
        const double* w = &ax_w.weights[static_cast<std::size_t>(o) * ax_w.max_taps];
        T* s = d + ax_w.first[o];
        for (int k = 0; k < ax_w.count[o]; ++k) s[k] += static_cast<T>(w[k]) * m[o];
      }
    }
  }
  return dx;
}

int branch_extent(int size, double factor) {
  const int scaled = static_cast<int>(std::lround(size / (4.0 * factor))) * 4;
  return std::max(8, scaled);
}

template BasicTensor<float> resample(const BasicTensor<float>&, int, int, bool);
template BasicTensor<double> resample(const BasicTensor<double>&, int, int, bool);
template BasicTensor<float> resample_backward(const BasicTensor<float>&, int, int, bool);
template BasicTensor<double> resample_backward(const BasicTensor<double>&, int, int, bool);

}  // namespace snst
