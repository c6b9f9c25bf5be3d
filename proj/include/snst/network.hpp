#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "snst/image.hpp"
#include "snst/json.hpp"
#include "snst/ops.hpp"
#include "snst/tensor.hpp"

namespace snst {

inline constexpr double kMinStrokeSize = 1.0;
inline constexpr double kMaxStrokeSize = 8.0;
inline constexpr double kMinIntensity = 0.0;
inline constexpr double kMaxIntensity = 4.0;
inline constexpr int kMinImageSide = 16;

struct Violation {
  std::string field;
  std::string message;
};

std::vector<Violation> validate_stroke_size(double lambda_s);
std::vector<Violation> validate_intensity(double lambda_i);
std::vector<Violation> validate_rotation(double tau);

// Wraps any angle into [0, 360).
double normalize_angle(double tau);

// The control triple: downsample factor, style intensity, rotation (degrees).
struct StrokeParams {
  double lambda_s = 1.0;
  double lambda_i = 1.0;
  double tau = 0.0;

  // Validates ranges (throws ErrorKind::parameter listing every violation)
  // and normalizes tau.
  static StrokeParams make(double lambda_s, double lambda_i, double tau);
  static std::vector<Violation> violations(double lambda_s, double lambda_i, double tau);
};

// Channel configuration of the two-branch network. Defaults are the
// production layout; tests use `tiny()` for speed.
struct ArchConfig {
  int dyn_c1 = 32;
  int dyn_c2 = 64;
  int dyn_c3 = 128;
  int dyn_res_blocks = 5;
  int dyn_out = 64;
  int hi_c1 = 16;
  int hi_c2 = 32;
  int hi_c3 = 32;
  int dec_c = 32;

  int feature_channels() const { return hi_c3 + dyn_out; }

  static ArchConfig tiny();
  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

void to_json(nlohmann::json& j, const ArchConfig& a);
void from_json(const nlohmann::json& j, ArchConfig& a);

struct CinLayer {
  std::string name;
  int channels = 0;
  std::size_t offset = 0;  // gamma at [offset, offset+C), beta at [offset+C, offset+2C)
};

struct ConvSpec {
  std::string name;
  int in = 0;
  int out = 0;
  int kernel = 0;
  int stride = 1;
  int cin = -1;  // index into cin_layers, -1 when the conv is not normalized
};

// Flattened description of every conv and CIN layer, in execution order.
struct LayerMap {
  std::vector<ConvSpec> convs;
  std::vector<CinLayer> cin_layers;
  std::size_t cin_param_count = 0;

  int dyn_conv1 = 0, dyn_conv2 = 0, dyn_conv3 = 0;
  std::vector<int> dyn_res;  // first conv of each residual block; second is +1
  int dyn_up1 = 0, dyn_up2 = 0;
  int hi_conv1 = 0, hi_conv2 = 0, hi_conv3 = 0;
  int dec_merge = 0, dec_res = 0, dec_conv = 0, dec_out = 0;

  static LayerMap build(const ArchConfig& arch);
};

template <class T>
struct IntensityRegressor {
  std::vector<T> weight;
  std::vector<T> bias;
};

// Per-layer (gamma, beta) pairs produced by the intensity regression.
template <class T>
struct CINParamSet {
  std::vector<CinLayer> layers;
  std::vector<T> values;

  std::span<const T> gamma(int layer) const {
    const auto& l = layers[layer];
    return {values.data() + l.offset, static_cast<std::size_t>(l.channels)};
  }
  std::span<const T> beta(int layer) const {
    const auto& l = layers[layer];
    return {values.data() + l.offset + l.channels, static_cast<std::size_t>(l.channels)};
  }
};

template <class T>
struct GeneratorWeights {
  ArchConfig arch;
  std::vector<ConvWeights<T>> convs;  // indexed like LayerMap::convs
  IntensityRegressor<T> regressor;

  // He-normal conv weights, zero biases; regression starts at gamma = 1,
  // beta = 0 with zero slope.
  static GeneratorWeights init(const ArchConfig& arch, std::uint64_t seed);
  // Same shapes, all zeros (gradient accumulator).
  static GeneratorWeights zeros_like(const GeneratorWeights& other);

  template <class U>
  GeneratorWeights<U> cast() const {
    GeneratorWeights<U> o;
    o.arch = arch;
    for (const auto& c : convs) o.convs.push_back(c.template cast<U>());
    o.regressor.weight.assign(regressor.weight.begin(), regressor.weight.end());
    o.regressor.bias.assign(regressor.bias.begin(), regressor.bias.end());
    return o;
  }
};

template <class T>
CINParamSet<T> regress_cin_params(const GeneratorWeights<T>& w, const LayerMap& map, double lambda_i);

struct ModelMeta {
  std::string style_name;
  int training_resolution = 0;
  std::vector<double> trained_factors;
  nlohmann::json training = nlohmann::json::object();
  std::optional<ImagePlane> style_image;
};

// Immutable trained network. Safe for concurrent read-only inference.
class StyleModel {
 public:
  StyleModel(GeneratorWeights<float> weights, ModelMeta meta);

  const GeneratorWeights<float>& weights() const { return weights_; }
  const ModelMeta& meta() const { return meta_; }
  const LayerMap& layers() const { return layers_; }
  const ArchConfig& arch() const { return weights_.arch; }

 private:
  GeneratorWeights<float> weights_;
  ModelMeta meta_;
  LayerMap layers_;
};

// Validates that all arrays match the architecture (configuration error).
template <class T>
void check_consistency(const GeneratorWeights<T>& w, const LayerMap& map);

struct FeatureTensor {
  Tensor values;
  std::optional<int> level;
};

// Encoder output kept in compact form: the high-resolution detail features
// at full extent and the stroke features at dynamic-branch resolution.
// `materialize` upsamples and concatenates them into the decoder input.
struct StrokeEncoding {
  double lambda_s = 1.0;
  Tensor detail;   // hi_c3 × H × W
  Tensor strokes;  // dyn_out × h × w (branch resolution)
  int padded_height = 0;
  int padded_width = 0;

  int height() const { return detail.height; }
  int width() const { return detail.width; }
  Tensor upsampled_strokes() const;
  FeatureTensor materialize() const;
  std::size_t byte_size() const { return (detail.size() + strokes.size()) * sizeof(float); }
};

CINParamSet<float> intensity_to_cin_params(const StyleModel& model, double lambda_i);

StrokeEncoding encode_strokes(const StyleModel& model, const ImagePlane& content, double lambda_s, double lambda_i);
FeatureTensor encode(const StyleModel& model, const ImagePlane& content, double lambda_s, double lambda_i);
ImagePlane decode(const StyleModel& model, const FeatureTensor& features, double lambda_i);

// CIN statistics of one decoder pass, one entry per normalized decoder layer.
struct DecoderStats {
  std::vector<CinStats> layers;
};

ImagePlane decode(const StyleModel& model, const FeatureTensor& features, double lambda_i, DecoderStats* stats);

// Decodes with per-pixel normalization statistics mixed from per-level passes:
// μ(p) = Σ w_l(p) μ_l, σ(p) = Σ w_l(p) σ_l. `weights` has one plane per level
// at the feature extent. A one-hot plane reproduces that level's decode exactly.
ImagePlane decode_blended(const StyleModel& model, const Tensor& features, double lambda_i,
                          std::span<const DecoderStats* const> level_stats, const Tensor& weights);

ImagePlane stylize(const StyleModel& model, const ImagePlane& content, const StrokeParams& params);

// Number of encoder invocations since process start (instrumentation).
std::uint64_t encoder_invocations();

// ----- training-time forward/backward -----

template <class T>
struct UnitTrace {
  int conv = -1;
  bool upsample_first = false;
  bool relu = true;
  BasicTensor<T> input;     // conv input (after optional upsample)
  BasicTensor<T> pre_norm;  // conv output, when normalized
  CinStats stats;
  BasicTensor<T> output;
};

template <class T>
struct GeneratorTrace {
  double lambda_s = 1.0;
  double lambda_i = 0.0;
  int height = 0, width = 0;
  int branch_height = 0, branch_width = 0;
  std::vector<UnitTrace<T>> dyn;
  std::vector<UnitTrace<T>> hi;
  std::vector<UnitTrace<T>> dec;
  BasicTensor<T> output;
};

// Full generator on a content tensor whose sides are multiples of 4.
template <class T>
BasicTensor<T> generator_forward(const GeneratorWeights<T>& w, const LayerMap& map, const BasicTensor<T>& content,
                                 double lambda_s, double lambda_i, GeneratorTrace<T>* trace);

// Accumulates parameter gradients (including the regressor) into `grads`.
template <class T>
void generator_backward(const GeneratorWeights<T>& w, const LayerMap& map, const GeneratorTrace<T>& trace,
                        const BasicTensor<T>& d_output, GeneratorWeights<T>& grads);

}  // namespace snst
