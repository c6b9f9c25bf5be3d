#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "snst/errors.hpp"

namespace snst {

// Dense C×H×W array, channel-major. The network operates on one image at a
// time; batching happens at the training-loop level.
template <class T>
struct BasicTensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  BasicTensor() = default;
  BasicTensor(int c, int h, int w, T fill = T{})
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  T* channel(int c) { return data.data() + c * plane_size(); }
  const T* channel(int c) const { return data.data() + c * plane_size(); }
  std::span<T> channel_span(int c) { return {channel(c), plane_size()}; }
  std::span<const T> channel_span(int c) const { return {channel(c), plane_size()}; }

  T& at(int c, int y, int x) { return data[(c * plane_size()) + static_cast<std::size_t>(y) * width + x]; }
  T at(int c, int y, int x) const { return data[(c * plane_size()) + static_cast<std::size_t>(y) * width + x]; }

  bool same_shape(const BasicTensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  template <class U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

using Tensor = BasicTensor<float>;

template <class T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* what) {
  if (!a.same_shape(b)) fail(ErrorKind::shape, std::string(what) + ": tensor shape mismatch");
}

}  // namespace snst
