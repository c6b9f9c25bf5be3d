#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "snst/image.hpp"
#include "snst/ops.hpp"
#include "snst/tensor.hpp"

namespace snst {

inline const std::array<std::string, 5> kStyleLayers = {"relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1"};
inline const std::string kContentLayer = "relu4_2";

// Canonical ImageNet normalization of the VGG family.
inline constexpr std::array<double, 3> kExtractorMean = {0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kExtractorStd = {0.229, 0.224, 0.225};

// Environment variable naming the extractor weight file.
inline constexpr const char* kExtractorEnv = "SNST_EXTRACTOR";

template <class T>
using PerceptualFeatures = std::map<std::string, BasicTensor<T>>;

template <class T>
struct GramMatrix {
  int channels = 0;
  std::vector<T> data;  // channels × channels, row-major
  std::string source_layer;

  T at(int i, int j) const { return data[static_cast<std::size_t>(i) * channels + j]; }
};

// Fixed VGG-19 feature extractor up to relu5_1 (3×3 convs, zero padding,
// 2×2 max pooling). `width_divisor` > 1 gives a proportionally slimmer
// network with the same topology (used in fast tests).
template <class T>
class PerceptualExtractor {
 public:
  struct Layer {
    std::string name;  // conv1_1 ...
    std::string relu;  // relu1_1 ...
    bool pool_after = false;
    ConvWeights<T> conv;
  };

  struct Trace {
    std::vector<BasicTensor<T>> conv_inputs;
    std::vector<BasicTensor<T>> relu_outputs;
    std::vector<std::vector<std::uint32_t>> pool_argmax;
    int layers_run = 0;
  };

  static PerceptualExtractor random(int width_divisor, std::uint64_t seed);
  // Throws ErrorKind::configuration when the file is missing or not an
  // extractor.
  static PerceptualExtractor load(const std::filesystem::path& path);
  // Path from $SNST_EXTRACTOR, else `fallback`.
  static std::filesystem::path resolve_path(const std::filesystem::path& fallback);
  void save(const std::filesystem::path& path) const;

  template <class U>
  PerceptualExtractor<U> cast() const;

  const std::vector<Layer>& layers() const { return layers_; }
  int width_divisor() const { return width_divisor_; }

  // Forwards a 3×H×W [0,1] image and returns the named ReLU activations up to
  // and including `deepest` (all six loss layers by default).
  PerceptualFeatures<T> extract(const BasicTensor<T>& image, Trace* trace = nullptr,
                                const std::string& deepest = "relu5_1") const;
  PerceptualFeatures<T> extract(const ImagePlane& image) const;

  // Backpropagates gradients given on named activations to the input image.
  BasicTensor<T> backward(const Trace& trace, const PerceptualFeatures<T>& grads) const;

 private:
  template <class>
  friend class PerceptualExtractor;
  std::vector<Layer> layers_;
  int width_divisor_ = 1;

  static PerceptualExtractor empty_layout(int width_divisor);
};

template <class T>
GramMatrix<T> gram(const BasicTensor<T>& f, const std::string& layer = {});

// Reference Grams of the style image, one per style layer.
template <class T>
std::vector<GramMatrix<T>> style_grams(const PerceptualExtractor<T>& extractor, const BasicTensor<T>& style);

// Σ over style layers of mean((gram(target) - ref)²). When `grads` is
// non-null the per-layer dL/dF are written into it (scaled by `scale`).
template <class T>
double style_loss(const PerceptualFeatures<T>& target, const std::vector<GramMatrix<T>>& style_ref,
                  PerceptualFeatures<T>* grads = nullptr, double scale = 1.0, std::vector<double>* per_layer = nullptr);

// mean((target - content)²) over the content layer.
template <class T>
double content_loss(const PerceptualFeatures<T>& target, const PerceptualFeatures<T>& content,
                    PerceptualFeatures<T>* grads = nullptr, double scale = 1.0);

struct LossBreakdown {
  double content = 0.0;
  double style = 0.0;
  double content_weight = 1.0;
  double style_weight = 0.0;
  double total = 0.0;
  std::vector<double> style_layers;
};

// content_weight · content_loss + lambda_i · style_loss. With `d_output`
// set, also returns dL/d(output image).
template <class T>
LossBreakdown total_loss(const PerceptualExtractor<T>& extractor, const BasicTensor<T>& output,
                         const PerceptualFeatures<T>& content_features, const std::vector<GramMatrix<T>>& style_ref,
                         double lambda_i, double content_weight, BasicTensor<T>* d_output = nullptr);

LossBreakdown total_loss(const PerceptualExtractor<float>& extractor, const ImagePlane& output,
                         const ImagePlane& content, const std::vector<GramMatrix<float>>& style_ref, double lambda_i,
                         double content_weight = 1.0);

}  // namespace snst
