#include "snst/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace snst {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Scratch budget for im2col buffers, in elements.
constexpr std::size_t kColumnBudget = std::size_t{8} << 20;

inline int reflect_index(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

template <class T>
BasicTensor<T> pad_input(const BasicTensor<T>& x, int p, Padding pad) {
  if (p == 0) return x;
  if (pad == Padding::reflect && (p >= x.height || p >= x.width))
    fail(ErrorKind::shape, "conv2d: input " + std::to_string(x.height) + "x" + std::to_string(x.width) +
                               " too small for reflection padding " + std::to_string(p));
  const int hp = x.height + 2 * p;
  const int wp = x.width + 2 * p;
  BasicTensor<T> out(x.channels, hp, wp);
  for (int c = 0; c < x.channels; ++c) {
    const T* src = x.channel(c);
    T* dst = out.channel(c);
    for (int py = 0; py < hp; ++py) {
      int sy = py - p;
      T* drow = dst + static_cast<std::size_t>(py) * wp;
      if (pad == Padding::zero && (sy < 0 || sy >= x.height)) continue;
      sy = reflect_index(sy, x.height);
      const T* srow = src + static_cast<std::size_t>(sy) * x.width;
      std::memcpy(drow + p, srow, sizeof(T) * x.width);
      if (pad == Padding::reflect) {
        for (int k = 1; k <= p; ++k) {
          drow[p - k] = srow[k];
          drow[p + x.width - 1 + k] = srow[x.width - 1 - k];
        }
      }
    }
  }
  return out;
}

template <class T>
BasicTensor<T> fold_padding(const BasicTensor<T>& dp, int p, Padding pad, int h, int w) {
  if (p == 0) return dp;
  BasicTensor<T> dx(dp.channels, h, w);
  for (int c = 0; c < dp.channels; ++c) {
    const T* src = dp.channel(c);
    T* dst = dx.channel(c);
    for (int py = 0; py < dp.height; ++py) {
      int sy = py - p;
      if (pad == Padding::zero && (sy < 0 || sy >= h)) continue;
      sy = reflect_index(sy, h);
      const T* srow = src + static_cast<std::size_t>(py) * dp.width;
      T* drow = dst + static_cast<std::size_t>(sy) * w;
      for (int px = 0; px < dp.width; ++px) {
        int sx = px - p;
        if (pad == Padding::zero && (sx < 0 || sx >= w)) continue;
        drow[reflect_index(sx, w)] += srow[px];
      }
    }
  }
  return dx;
}

template <class T>
void im2col_rows(const BasicTensor<T>& padded, int k, int s, int r0, int r1, int wout, T* cols) {
  const std::size_t n = static_cast<std::size_t>(r1 - r0) * wout;
  std::size_t row = 0;
  for (int c = 0; c < padded.channels; ++c) {
    const T* plane = padded.channel(c);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        T* dst = cols + row * n;
        for (int r = r0; r < r1; ++r) {
          const T* src = plane + static_cast<std::size_t>(r * s + ky) * padded.width + kx;
          if (s == 1) {
            std::memcpy(dst, src, sizeof(T) * wout);
          } else {
            for (int ox = 0; ox < wout; ++ox) dst[ox] = src[ox * s];
          }
          dst += wout;
        }
      }
    }
  }
}

template <class T>
void col2im_rows(const T* cols, int k, int s, int r0, int r1, int wout, BasicTensor<T>& dpadded) {
  const std::size_t n = static_cast<std::size_t>(r1 - r0) * wout;
  std::size_t row = 0;
  for (int c = 0; c < dpadded.channels; ++c) {
    T* plane = dpadded.channel(c);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        const T* src = cols + row * n;
        for (int r = r0; r < r1; ++r) {
          T* dst = plane + static_cast<std::size_t>(r * s + ky) * dpadded.width + kx;
          for (int ox = 0; ox < wout; ++ox) dst[ox * s] += src[ox];
          src += wout;
        }
      }
    }
  }
}

// Stride-1 convolution with very few output channels: multiply every input
// pixel by all kernel taps at once, then gather the shifted partial sums.
// Keeps the GEMM wide when the im2col form would be a skinny 3×K product.
template <class T>
void conv_few_outputs(const BasicTensor<T>& padded, const ConvWeights<T>& w, BasicTensor<T>& y) {
  const int k = w.kernel;
  const int cin = w.in_channels;
  const int cout = w.out_channels;
  const int taps = cout * k * k;
  RowMat<T> wt(taps, cin);
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci)
      for (int t = 0; t < k * k; ++t)
        wt(co * k * k + t, ci) = w.weight[(static_cast<std::size_t>(co) * cin + ci) * k * k + t];

  const int wp = padded.width;
  const std::size_t padded_plane = padded.plane_size();
  const int rows_per_chunk =
      std::max<int>(1, static_cast<int>(kColumnBudget / (static_cast<std::size_t>(taps) * wp)) - (k - 1));
  RowMat<T> z;
  for (int r0 = 0; r0 < y.height; r0 += rows_per_chunk) {
    const int r1 = std::min(y.height, r0 + rows_per_chunk);
    const int in_rows = r1 - r0 + k - 1;
    ConstStridedMap<T> pin(padded.data.data() + static_cast<std::size_t>(r0) * wp, cin,
                           static_cast<Eigen::Index>(in_rows) * wp, Eigen::OuterStride<>(padded_plane));
    z.noalias() = wt * pin;
    for (int co = 0; co < cout; ++co) {
      T* out = y.channel(co);
      for (int r = r0; r < r1; ++r) {
        T* orow = out + static_cast<std::size_t>(r) * y.width;
        std::fill(orow, orow + y.width, w.bias[co]);
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const T* zrow = z.data() + static_cast<std::size_t>(co * k * k + ky * k + kx) * z.cols() +
                            static_cast<std::size_t>(r - r0 + ky) * wp + kx;
            for (int ox = 0; ox < y.width; ++ox) orow[ox] += zrow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

int conv_output_extent(int size, int kernel, int stride) {
  const int p = kernel / 2;
  return (size + 2 * p - kernel) / stride + 1;
}

template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const ConvWeights<T>& w, Padding pad) {
  if (x.channels != w.in_channels)
    fail(ErrorKind::shape, "conv2d: expected " + std::to_string(w.in_channels) + " input channels, got " +
                               std::to_string(x.channels));
  const int k = w.kernel;
  const int s = w.stride;
  const int hout = conv_output_extent(x.height, k, s);
  const int wout = conv_output_extent(x.width, k, s);
  BasicTensor<T> y(w.out_channels, hout, wout);
  const std::size_t out_plane = y.plane_size();
  Eigen::Map<const RowMat<T>> wm(w.weight.data(), w.out_channels, static_cast<Eigen::Index>(w.fan_in()));

  if (k == 1 && s == 1) {
    Eigen::Map<const RowMat<T>> xm(x.data.data(), x.channels, static_cast<Eigen::Index>(x.plane_size()));
    Eigen::Map<RowMat<T>> ym(y.data.data(), y.channels, static_cast<Eigen::Index>(out_plane));
    ym.noalias() = wm * xm;
  } else {
    const BasicTensor<T> padded = pad_input(x, k / 2, pad);
    if (s == 1 && w.out_channels <= 4) {
      conv_few_outputs(padded, w, y);
      return y;
    }
    const std::size_t kdim = w.fan_in();
    const int rows_per_chunk = std::max<int>(1, static_cast<int>(kColumnBudget / (kdim * wout)));
    std::vector<T> cols;
    for (int r0 = 0; r0 < hout; r0 += rows_per_chunk) {
      const int r1 = std::min(hout, r0 + rows_per_chunk);
      const std::size_t n = static_cast<std::size_t>(r1 - r0) * wout;
      cols.resize(kdim * n);
      im2col_rows(padded, k, s, r0, r1, wout, cols.data());
      Eigen::Map<const RowMat<T>> cm(cols.data(), static_cast<Eigen::Index>(kdim), static_cast<Eigen::Index>(n));
      StridedMap<T> ym(y.data.data() + static_cast<std::size_t>(r0) * wout, y.channels,
                       static_cast<Eigen::Index>(n), Eigen::OuterStride<>(out_plane));
      ym.noalias() = wm * cm;
    }
  }
  for (int c = 0; c < y.channels; ++c) {
    T* p = y.channel(c);
    const T b = w.bias[c];
    for (std::size_t i = 0; i < out_plane; ++i) p[i] += b;
  }
  return y;
}

template <class T>
BasicTensor<T> conv2d_backward(const BasicTensor<T>& x, const ConvWeights<T>& w, Padding pad,
                               const BasicTensor<T>& dy, ConvWeights<T>* grad, bool need_input_grad) {
  const int k = w.kernel;
  const int s = w.stride;
  const std::size_t out_plane = dy.plane_size();
  if (dy.channels != w.out_channels || dy.height != conv_output_extent(x.height, k, s) ||
      dy.width != conv_output_extent(x.width, k, s))
    fail(ErrorKind::shape, "conv2d_backward: gradient shape mismatch");
  Eigen::Map<const RowMat<T>> wm(w.weight.data(), w.out_channels, static_cast<Eigen::Index>(w.fan_in()));

  if (grad) {
    for (int c = 0; c < dy.channels; ++c) {
      const T* g = dy.channel(c);
      double acc = 0.0;
      for (std::size_t i = 0; i < out_plane; ++i) acc += g[i];
      grad->bias[c] += static_cast<T>(acc);
    }
  }

  if (k == 1 && s == 1) {
    Eigen::Map<const RowMat<T>> xm(x.data.data(), x.channels, static_cast<Eigen::Index>(x.plane_size()));
    Eigen::Map<const RowMat<T>> gm(dy.data.data(), dy.channels, static_cast<Eigen::Index>(out_plane));
    if (grad) {
      Eigen::Map<RowMat<T>> dwm(grad->weight.data(), w.out_channels, w.in_channels);
      dwm.noalias() += gm * xm.transpose();
    }
    if (!need_input_grad) return {};
    BasicTensor<T> dx(x.channels, x.height, x.width);
    Eigen::Map<RowMat<T>> dxm(dx.data.data(), dx.channels, static_cast<Eigen::Index>(dx.plane_size()));
    dxm.noalias() = wm.transpose() * gm;
    return dx;
  }

  const int p = k / 2;
  const BasicTensor<T> padded = pad_input(x, p, pad);
  BasicTensor<T> dpadded;
  if (need_input_grad) dpadded = BasicTensor<T>(padded.channels, padded.height, padded.width);
  const std::size_t kdim = w.fan_in();
  const int wout = dy.width;
  const int rows_per_chunk = std::max<int>(1, static_cast<int>(kColumnBudget / (kdim * wout)));
  std::vector<T> cols;
  for (int r0 = 0; r0 < dy.height; r0 += rows_per_chunk) {
    const int r1 = std::min(dy.height, r0 + rows_per_chunk);
    const std::size_t n = static_cast<std::size_t>(r1 - r0) * wout;
    cols.resize(kdim * n);
    ConstStridedMap<T> gm(dy.data.data() + static_cast<std::size_t>(r0) * wout, dy.channels,
                          static_cast<Eigen::Index>(n), Eigen::OuterStride<>(out_plane));
    Eigen::Map<RowMat<T>> cm(cols.data(), static_cast<Eigen::Index>(kdim), static_cast<Eigen::Index>(n));
    if (grad) {
      im2col_rows(padded, k, s, r0, r1, wout, cols.data());
      Eigen::Map<RowMat<T>> dwm(grad->weight.data(), w.out_channels, static_cast<Eigen::Index>(kdim));
      dwm.noalias() += gm * cm.transpose();
    }
    if (need_input_grad) {
      cm.noalias() = wm.transpose() * gm;
      col2im_rows(cols.data(), k, s, r0, r1, wout, dpadded);
    }
  }
  if (!need_input_grad) return {};
  return fold_padding(dpadded, p, pad, x.height, x.width);
}

template <class T>
void relu_inplace(BasicTensor<T>& x) {
  for (auto& v : x.data) v = v > T{0} ? v : T{0};
}

template <class T>
void relu_backward_inplace(const BasicTensor<T>& y, BasicTensor<T>& dy) {
  require_same_shape(y, dy, "relu_backward");
  for (std::size_t i = 0; i < dy.data.size(); ++i)
    if (!(y.data[i] > T{0})) dy.data[i] = T{0};
}

template <class T>
void sigmoid_inplace(BasicTensor<T>& x) {
  for (auto& v : x.data) v = T{1} / (T{1} + std::exp(-v));
}

template <class T>
void sigmoid_backward_inplace(const BasicTensor<T>& y, BasicTensor<T>& dy) {
  require_same_shape(y, dy, "sigmoid_backward");
  for (std::size_t i = 0; i < dy.data.size(); ++i) dy.data[i] *= y.data[i] * (T{1} - y.data[i]);
}

template <class T>
BasicTensor<T> max_pool2(const BasicTensor<T>& x, std::vector<std::uint32_t>* argmax) {
  const int ho = x.height / 2;
  const int wo = x.width / 2;
  BasicTensor<T> y(x.channels, ho, wo);
  if (argmax) argmax->resize(y.size());
  std::size_t o = 0;
  for (int c = 0; c < x.channels; ++c) {
    const std::size_t base = c * x.plane_size();
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox, ++o) {
        std::size_t best = base + static_cast<std::size_t>(2 * oy) * x.width + 2 * ox;
        const std::size_t cand[3] = {best + 1, best + x.width, best + x.width + 1};
        for (std::size_t i : cand)
          if (x.data[i] > x.data[best]) best = i;
        y.data[o] = x.data[best];
        if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return y;
}

template <class T>
BasicTensor<T> max_pool2_backward(const BasicTensor<T>& dy, const std::vector<std::uint32_t>& argmax,
                                  int in_height, int in_width) {
  BasicTensor<T> dx(dy.channels, in_height, in_width);
  for (std::size_t o = 0; o < dy.data.size(); ++o) dx.data[argmax[o]] += dy.data[o];
  return dx;
}

template <class T>
BasicTensor<T> upsample_nearest2(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.channels, x.height * 2, x.width * 2);
  for (int c = 0; c < x.channels; ++c) {
    const T* src = x.channel(c);
    T* dst = y.channel(c);
    for (int yy = 0; yy < y.height; ++yy) {
      const T* srow = src + static_cast<std::size_t>(yy / 2) * x.width;
      T* drow = dst + static_cast<std::size_t>(yy) * y.width;
      for (int xx = 0; xx < y.width; ++xx) drow[xx] = srow[xx / 2];
    }
  }
  return y;
}

template <class T>
BasicTensor<T> upsample_nearest2_backward(const BasicTensor<T>& dy) {
  BasicTensor<T> dx(dy.channels, dy.height / 2, dy.width / 2);
  for (int c = 0; c < dy.channels; ++c) {
    const T* src = dy.channel(c);
    T* dst = dx.channel(c);
    for (int yy = 0; yy < dy.height; ++yy) {
      const T* srow = src + static_cast<std::size_t>(yy) * dy.width;
      T* drow = dst + static_cast<std::size_t>(yy / 2) * dx.width;
      for (int xx = 0; xx < dy.width; ++xx) drow[xx / 2] += srow[xx];
    }
  }
  return dx;
}

template <class T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.height != b.height || a.width != b.width) fail(ErrorKind::shape, "concat_channels: extent mismatch");
  BasicTensor<T> out;
  out.channels = a.channels + b.channels;
  out.height = a.height;
  out.width = a.width;
  out.data.reserve(a.size() + b.size());
  out.data.insert(out.data.end(), a.data.begin(), a.data.end());
  out.data.insert(out.data.end(), b.data.begin(), b.data.end());
  return out;
}

template <class T>
void split_channels(const BasicTensor<T>& x, int first_channels, BasicTensor<T>& a, BasicTensor<T>& b) {
  if (first_channels < 0 || first_channels > x.channels) fail(ErrorKind::shape, "split_channels: bad split");
  const auto mid = x.data.begin() + static_cast<std::ptrdiff_t>(first_channels * x.plane_size());
  a.channels = first_channels;
  a.height = x.height;
  a.width = x.width;
  a.data.assign(x.data.begin(), mid);
  b.channels = x.channels - first_channels;
  b.height = x.height;
  b.width = x.width;
  b.data.assign(mid, x.data.end());
}

template <class T>
BasicTensor<T> reflect_pad_to_multiple(const BasicTensor<T>& x, int multiple) {
  const int h = (x.height + multiple - 1) / multiple * multiple;
  const int w = (x.width + multiple - 1) / multiple * multiple;
  if (h == x.height && w == x.width) return x;
  if (h - x.height >= x.height || w - x.width >= x.width)
    fail(ErrorKind::shape, "reflect_pad_to_multiple: input too small");
  BasicTensor<T> out(x.channels, h, w);
  for (int c = 0; c < x.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        out.at(c, y, xx) = x.at(c, reflect_index(y, x.height), reflect_index(xx, x.width));
  return out;
}

template <class T>
BasicTensor<T> crop(const BasicTensor<T>& x, int top, int left, int height, int width) {
  if (top < 0 || left < 0 || top + height > x.height || left + width > x.width)
    fail(ErrorKind::shape, "crop: window outside tensor");
  if (top == 0 && left == 0 && height == x.height && width == x.width) return x;
  BasicTensor<T> out(x.channels, height, width);
  for (int c = 0; c < x.channels; ++c)
    for (int y = 0; y < height; ++y)
      std::memcpy(out.channel(c) + static_cast<std::size_t>(y) * width,
                  x.channel(c) + static_cast<std::size_t>(y + top) * x.width + left, sizeof(T) * width);
  return out;
}

template <class T>
BasicTensor<T> cin_forward(const BasicTensor<T>& x, std::span<const T> gamma, std::span<const T> beta,
                           CinStats* stats) {
  if (gamma.size() != static_cast<std::size_t>(x.channels) || beta.size() != gamma.size())
    fail(ErrorKind::shape, "cin_forward: expected " + std::to_string(x.channels) + " gamma/beta entries, got " +
                               std::to_string(gamma.size()) + "/" + std::to_string(beta.size()));
  if (x.plane_size() == 0) fail(ErrorKind::shape, "cin_forward: empty spatial extent");
  BasicTensor<T> y(x.channels, x.height, x.width);
  if (stats) {
    stats->mean.resize(x.channels);
    stats->stddev.resize(x.channels);
  }
  const double n = static_cast<double>(x.plane_size());
  for (int c = 0; c < x.channels; ++c) {
    const T* src = x.channel(c);
    double sum = 0.0;
    for (std::size_t i = 0; i < x.plane_size(); ++i) sum += src[i];
    const double mean = sum / n;
    double sq = 0.0;
    for (std::size_t i = 0; i < x.plane_size(); ++i) {
      const double d = src[i] - mean;
      sq += d * d;
    }
    const double sd = std::sqrt(sq / n);
    const double scale = gamma[c] / (sd + kCinEpsilon);
    const double shift = beta[c];
    T* dst = y.channel(c);
    for (std::size_t i = 0; i < x.plane_size(); ++i) dst[i] = static_cast<T>((src[i] - mean) * scale + shift);
    if (stats) {
      stats->mean[c] = mean;
      stats->stddev[c] = sd;
    }
  }
  return y;
}

template <class T>
BasicTensor<T> cin_backward(const BasicTensor<T>& x, const CinStats& stats, std::span<const T> gamma,
                            const BasicTensor<T>& dy, std::span<T> dgamma, std::span<T> dbeta) {
  require_same_shape(x, dy, "cin_backward");
  BasicTensor<T> dx(x.channels, x.height, x.width);
  const std::size_t n = x.plane_size();
  const double nd = static_cast<double>(n);
  for (int c = 0; c < x.channels; ++c) {
    const T* xs = x.channel(c);
    const T* gs = dy.channel(c);
    const double mean = stats.mean[c];
    const double sd = stats.stddev[c];
    const double s = sd + kCinEpsilon;
    double sum_g = 0.0, sum_gxhat = 0.0, sum_gc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double centered = xs[i] - mean;
      sum_g += gs[i];
      sum_gxhat += gs[i] * centered / s;
      sum_gc += gs[i] * centered;
    }
    dgamma[c] += static_cast<T>(sum_gxhat);
    dbeta[c] += static_cast<T>(sum_g);
    // with g = gamma * dy: dx = (g - mean(g)) / s - (x - μ) Σ g (x - μ) / (N σ s²)
    const double gam = gamma[c];
    const double mean_g = gam * sum_g / nd;
    const double coupling = sd > 0.0 ? gam * sum_gc / (nd * sd * s * s) : 0.0;
    T* out = dx.channel(c);
    for (std::size_t i = 0; i < n; ++i) {
      const double centered = xs[i] - mean;
      out[i] = static_cast<T>((gam * gs[i] - mean_g) / s - centered * coupling);
    }
  }
  return dx;
}

#define SNST_INSTANTIATE_OPS(T)                                                                            \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const ConvWeights<T>&, Padding);                   \
  template BasicTensor<T> conv2d_backward(const BasicTensor<T>&, const ConvWeights<T>&, Padding,           \
                                          const BasicTensor<T>&, ConvWeights<T>*, bool);                   \
  template void relu_inplace(BasicTensor<T>&);                                                             \
  template void relu_backward_inplace(const BasicTensor<T>&, BasicTensor<T>&);                             \
  template void sigmoid_inplace(BasicTensor<T>&);                                                          \
  template void sigmoid_backward_inplace(const BasicTensor<T>&, BasicTensor<T>&);                          \
  template BasicTensor<T> max_pool2(const BasicTensor<T>&, std::vector<std::uint32_t>*);                   \
  template BasicTensor<T> max_pool2_backward(const BasicTensor<T>&, const std::vector<std::uint32_t>&, int, \
                                             int);                                                         \
  template BasicTensor<T> upsample_nearest2(const BasicTensor<T>&);                                        \
  template BasicTensor<T> upsample_nearest2_backward(const BasicTensor<T>&);                               \
  template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template void split_channels(const BasicTensor<T>&, int, BasicTensor<T>&, BasicTensor<T>&);              \
  template BasicTensor<T> reflect_pad_to_multiple(const BasicTensor<T>&, int);                             \
  template BasicTensor<T> crop(const BasicTensor<T>&, int, int, int, int);                                 \
  template BasicTensor<T> cin_forward(const BasicTensor<T>&, std::span<const T>, std::span<const T>,       \
                                      CinStats*);                                                          \
  template BasicTensor<T> cin_backward(const BasicTensor<T>&, const CinStats&, std::span<const T>,         \
                                       const BasicTensor<T>&, std::span<T>, std::span<T>);

SNST_INSTANTIATE_OPS(float)
SNST_INSTANTIATE_OPS(double)

#undef SNST_INSTANTIATE_OPS

}  // namespace snst
