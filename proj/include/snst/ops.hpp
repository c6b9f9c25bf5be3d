#pragma once

#include <cstdint>
#include <vector>

#include "snst/tensor.hpp"

namespace snst {

enum class Padding { zero, reflect };

// Weights for a square-kernel convolution with "same" padding (k / 2).
// weight layout: [out][in][k][k].
template <class T>
struct ConvWeights {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  std::vector<T> weight;
  std::vector<T> bias;

  ConvWeights() = default;
  ConvWeights(int in, int out, int k, int s)
      : in_channels(in), out_channels(out), kernel(k), stride(s),
        weight(static_cast<std::size_t>(out) * in * k * k, T{}), bias(out, T{}) {}

  std::size_t fan_in() const { return static_cast<std::size_t>(in_channels) * kernel * kernel; }

  template <class U>
  ConvWeights<U> cast() const {
    ConvWeights<U> o;
    o.in_channels = in_channels;
    o.out_channels = out_channels;
    o.kernel = kernel;
    o.stride = stride;
    o.weight.assign(weight.begin(), weight.end());
    o.bias.assign(bias.begin(), bias.end());
    return o;
  }
};

int conv_output_extent(int size, int kernel, int stride);

template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const ConvWeights<T>& w, Padding pad);

// Returns dL/dx. When `grad` is non-null, dL/dweight and dL/dbias are
// accumulated into it. `need_input_grad = false` skips the dx computation
// and returns an empty tensor.
template <class T>
BasicTensor<T> conv2d_backward(const BasicTensor<T>& x, const ConvWeights<T>& w, Padding pad,
                               const BasicTensor<T>& dy, ConvWeights<T>* grad,
                               bool need_input_grad = true);

template <class T>
void relu_inplace(BasicTensor<T>& x);

// Gradient through a ReLU given its output.
template <class T>
void relu_backward_inplace(const BasicTensor<T>& y, BasicTensor<T>& dy);

template <class T>
void sigmoid_inplace(BasicTensor<T>& x);

template <class T>
void sigmoid_backward_inplace(const BasicTensor<T>& y, BasicTensor<T>& dy);

// 2×2 max pooling, stride 2. `argmax` receives the flat source index of
// each output element.
template <class T>
BasicTensor<T> max_pool2(const BasicTensor<T>& x, std::vector<std::uint32_t>* argmax);

template <class T>
BasicTensor<T> max_pool2_backward(const BasicTensor<T>& dy, const std::vector<std::uint32_t>& argmax,
                                  int in_height, int in_width);

template <class T>
BasicTensor<T> upsample_nearest2(const BasicTensor<T>& x);

template <class T>
BasicTensor<T> upsample_nearest2_backward(const BasicTensor<T>& dy);

template <class T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Splits off the first `first_channels` channels.
template <class T>
void split_channels(const BasicTensor<T>& x, int first_channels, BasicTensor<T>& a, BasicTensor<T>& b);

// Reflection padding on the bottom/right edges so both sides become
// multiples of `multiple`.
template <class T>
BasicTensor<T> reflect_pad_to_multiple(const BasicTensor<T>& x, int multiple);

template <class T>
BasicTensor<T> crop(const BasicTensor<T>& x, int top, int left, int height, int width);

// ----- conditional instance normalization -----

inline constexpr double kCinEpsilon = 1e-5;

// Per-channel statistics retained for the backward pass.
struct CinStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // population σ, before adding epsilon
};

// out_c = gamma[c] * (x_c - μ_c) / (σ_c + ε) + beta[c]
template <class T>
BasicTensor<T> cin_forward(const BasicTensor<T>& x, std::span<const T> gamma, std::span<const T> beta,
                           CinStats* stats = nullptr);

// Returns dL/dx; accumulates dL/dgamma and dL/dbeta.
template <class T>
BasicTensor<T> cin_backward(const BasicTensor<T>& x, const CinStats& stats, std::span<const T> gamma,
                            const BasicTensor<T>& dy, std::span<T> dgamma, std::span<T> dbeta);

}  // namespace snst
