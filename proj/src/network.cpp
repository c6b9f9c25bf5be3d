#include "snst/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "snst/resample.hpp"
#include "snst/rotation.hpp"

namespace snst {

namespace {

std::atomic<std::uint64_t> g_encoder_calls{0};

std::string format_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

std::vector<Violation> validate_stroke_size(double lambda_s) {
  if (!std::isfinite(lambda_s) || lambda_s < kMinStrokeSize || lambda_s > kMaxStrokeSize)
    return {{"lambda_s", "stroke size " + format_number(lambda_s) + " outside [1, 8]"}};
  return {};
}

std::vector<Violation> validate_intensity(double lambda_i) {
  if (!std::isfinite(lambda_i) || lambda_i < kMinIntensity || lambda_i > kMaxIntensity)
    return {{"lambda_i", "style intensity " + format_number(lambda_i) + " outside [0, 4]"}};
  return {};
}

std::vector<Violation> validate_rotation(double tau) {
  if (!std::isfinite(tau)) return {{"tau", "rotation must be a finite angle in degrees"}};
  return {};
}

double normalize_angle(double tau) {
  double t = std::fmod(tau, 360.0);
  if (t < 0.0) t += 360.0;
  if (t >= 360.0) t = 0.0;
  return t == 0.0 ? 0.0 : t;  // folds -0.0
}

std::vector<Violation> StrokeParams::violations(double lambda_s, double lambda_i, double tau) {
  std::vector<Violation> out = validate_stroke_size(lambda_s);
  for (auto& v : validate_intensity(lambda_i)) out.push_back(std::move(v));
  for (auto& v : validate_rotation(tau)) out.push_back(std::move(v));
  return out;
}

StrokeParams StrokeParams::make(double lambda_s, double lambda_i, double tau) {
  const auto bad = violations(lambda_s, lambda_i, tau);
  if (!bad.empty()) {
    std::string msg;
    for (const auto& v : bad) msg += (msg.empty() ? "" : "; ") + v.message;
    fail(ErrorKind::parameter, msg);
  }
  return {lambda_s, lambda_i, normalize_angle(tau)};
}

ArchConfig ArchConfig::tiny() {
  ArchConfig a;
  a.dyn_c1 = 4;
  a.dyn_c2 = 6;
  a.dyn_c3 = 8;
  a.dyn_res_blocks = 1;
  a.dyn_out = 6;
  a.hi_c1 = 3;
  a.hi_c2 = 4;
  a.hi_c3 = 4;
  a.dec_c = 5;
  return a;
}

void to_json(nlohmann::json& j, const ArchConfig& a) {
  j = {{"dyn_c1", a.dyn_c1}, {"dyn_c2", a.dyn_c2}, {"dyn_c3", a.dyn_c3}, {"dyn_res_blocks", a.dyn_res_blocks},
       {"dyn_out", a.dyn_out}, {"hi_c1", a.hi_c1},   {"hi_c2", a.hi_c2},   {"hi_c3", a.hi_c3},
       {"dec_c", a.dec_c}};
}

void from_json(const nlohmann::json& j, ArchConfig& a) {
  j.at("dyn_c1").get_to(a.dyn_c1);
  j.at("dyn_c2").get_to(a.dyn_c2);
  j.at("dyn_c3").get_to(a.dyn_c3);
  j.at("dyn_res_blocks").get_to(a.dyn_res_blocks);
  j.at("dyn_out").get_to(a.dyn_out);
  j.at("hi_c1").get_to(a.hi_c1);
  j.at("hi_c2").get_to(a.hi_c2);
  j.at("hi_c3").get_to(a.hi_c3);
  j.at("dec_c").get_to(a.dec_c);
}

LayerMap LayerMap::build(const ArchConfig& a) {
  LayerMap m;
  auto add = [&m](std::string name, int in, int out, int k, int stride, bool normalized) {
    ConvSpec spec{name, in, out, k, stride, -1};
    if (normalized) {
      spec.cin = static_cast<int>(m.cin_layers.size());
      m.cin_layers.push_back({name + ".cin", out, m.cin_param_count});
      m.cin_param_count += 2 * static_cast<std::size_t>(out);
    }
    m.convs.push_back(std::move(spec));
    return static_cast<int>(m.convs.size()) - 1;
  };
  m.dyn_conv1 = add("dyn.conv1", 3, a.dyn_c1, 9, 1, true);
  m.dyn_conv2 = add("dyn.conv2", a.dyn_c1, a.dyn_c2, 3, 2, true);
  m.dyn_conv3 = add("dyn.conv3", a.dyn_c2, a.dyn_c3, 3, 2, true);
  for (int i = 0; i < a.dyn_res_blocks; ++i) {
    const std::string base = "dyn.res" + std::to_string(i);
    m.dyn_res.push_back(add(base + ".conv_a", a.dyn_c3, a.dyn_c3, 3, 1, true));
    add(base + ".conv_b", a.dyn_c3, a.dyn_c3, 3, 1, true);
  }
  m.dyn_up1 = add("dyn.up1", a.dyn_c3, a.dyn_c2, 3, 1, true);
  m.dyn_up2 = add("dyn.up2", a.dyn_c2, a.dyn_out, 3, 1, true);
  m.hi_conv1 = add("hi.conv1", 3, a.hi_c1, 9, 1, false);
  m.hi_conv2 = add("hi.conv2", a.hi_c1, a.hi_c2, 3, 1, false);
  m.hi_conv3 = add("hi.conv3", a.hi_c2, a.hi_c3, 3, 1, false);
  m.dec_merge = add("dec.merge", a.feature_channels(), a.dec_c, 1, 1, true);
  m.dec_res = add("dec.res.conv_a", a.dec_c, a.dec_c, 3, 1, true);
  add("dec.res.conv_b", a.dec_c, a.dec_c, 3, 1, true);
  m.dec_conv = add("dec.conv", a.dec_c, a.dec_c, 3, 1, true);
  m.dec_out = add("dec.out", a.dec_c, 3, 9, 1, false);
  return m;
}

template <class T>
GeneratorWeights<T> GeneratorWeights<T>::init(const ArchConfig& arch, std::uint64_t seed) {
  const LayerMap map = LayerMap::build(arch);
  GeneratorWeights<T> g;
  g.arch = arch;
  std::mt19937_64 rng(seed);
  for (const auto& spec : map.convs) {
    ConvWeights<T> c(spec.in, spec.out, spec.kernel, spec.stride);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(c.fan_in())));
    for (auto& v : c.weight) v = static_cast<T>(dist(rng));
    g.convs.push_back(std::move(c));
  }
  // the second conv of each residual block starts small so blocks begin near identity
  auto shrink = [&g](int idx) {
    for (auto& v : g.convs[idx + 1].weight) v *= static_cast<T>(0.1);
  };
  for (int r : map.dyn_res) shrink(r);
  shrink(map.dec_res);
  g.regressor.weight.assign(map.cin_param_count, T{0});
  g.regressor.bias.assign(map.cin_param_count, T{0});
  for (const auto& l : map.cin_layers)
    std::fill_n(g.regressor.bias.begin() + static_cast<std::ptrdiff_t>(l.offset), l.channels, T{1});
  return g;
}

template <class T>
GeneratorWeights<T> GeneratorWeights<T>::zeros_like(const GeneratorWeights& other) {
  GeneratorWeights<T> g;
  g.arch = other.arch;
  for (const auto& c : other.convs) g.convs.emplace_back(c.in_channels, c.out_channels, c.kernel, c.stride);
  g.regressor.weight.assign(other.regressor.weight.size(), T{0});
  g.regressor.bias.assign(other.regressor.bias.size(), T{0});
  return g;
}

template <class T>
void check_consistency(const GeneratorWeights<T>& w, const LayerMap& map) {
  if (w.convs.size() != map.convs.size())
    fail(ErrorKind::configuration, "model has " + std::to_string(w.convs.size()) + " conv layers, architecture expects " +
                                       std::to_string(map.convs.size()));
  for (std::size_t i = 0; i < map.convs.size(); ++i) {
    const auto& s = map.convs[i];
    const auto& c = w.convs[i];
    if (c.in_channels != s.in || c.out_channels != s.out || c.kernel != s.kernel || c.stride != s.stride ||
        c.weight.size() != c.fan_in() * c.out_channels || c.bias.size() != static_cast<std::size_t>(c.out_channels))
      fail(ErrorKind::configuration, "layer " + s.name + " does not match the architecture config");
  }
  if (w.regressor.weight.size() != map.cin_param_count || w.regressor.bias.size() != map.cin_param_count)
    fail(ErrorKind::configuration, "intensity regressor has " + std::to_string(w.regressor.weight.size()) +
                                       " outputs, architecture expects " + std::to_string(map.cin_param_count));
}

template <class T>
CINParamSet<T> regress_cin_params(const GeneratorWeights<T>& w, const LayerMap& map, double lambda_i) {
  if (w.regressor.weight.size() != map.cin_param_count || w.regressor.bias.size() != map.cin_param_count)
    fail(ErrorKind::configuration, "intensity regressor length does not match CIN parameter count");
  CINParamSet<T> p;
  p.layers = map.cin_layers;
  p.values.resize(map.cin_param_count);
  const T li = static_cast<T>(lambda_i);
  for (std::size_t i = 0; i < p.values.size(); ++i) p.values[i] = w.regressor.weight[i] * li + w.regressor.bias[i];
  return p;
}

StyleModel::StyleModel(GeneratorWeights<float> weights, ModelMeta meta)
    : weights_(std::move(weights)), meta_(std::move(meta)), layers_(LayerMap::build(weights_.arch)) {
  check_consistency(weights_, layers_);
}

// ----- forward / backward building blocks -----

namespace {

template <class T>
BasicTensor<T> run_unit(const GeneratorWeights<T>& w, const LayerMap& map, const CINParamSet<T>& phi, int conv,
                        BasicTensor<T> x, bool upsample_first, bool relu, UnitTrace<T>* trace) {
  if (upsample_first) x = upsample_nearest2(x);
  BasicTensor<T> y = conv2d(x, w.convs[conv], Padding::reflect);
  const int cin = map.convs[conv].cin;
  if (cin >= 0) {
    if (trace) {
      trace->pre_norm = y;
      y = cin_forward<T>(y, phi.gamma(cin), phi.beta(cin), &trace->stats);
    } else {
      y = cin_forward<T>(y, phi.gamma(cin), phi.beta(cin), nullptr);
    }
  }
  if (relu) relu_inplace(y);
  if (trace) {
    trace->conv = conv;
    trace->upsample_first = upsample_first;
    trace->relu = relu;
    trace->input = std::move(x);
    trace->output = y;
  }
  return y;
}

template <class T>
BasicTensor<T> unit_backward(const GeneratorWeights<T>& w, const LayerMap& map, const CINParamSet<T>& phi,
                             const UnitTrace<T>& tr, BasicTensor<T> dy, GeneratorWeights<T>& grads,
                             std::vector<T>& dphi, bool need_input_grad = true) {
  if (tr.relu) relu_backward_inplace(tr.output, dy);
  const int cin = map.convs[tr.conv].cin;
  if (cin >= 0) {
    const auto& layer = map.cin_layers[cin];
    std::span<T> dgamma(dphi.data() + layer.offset, layer.channels);
    std::span<T> dbeta(dphi.data() + layer.offset + layer.channels, layer.channels);
    dy = cin_backward<T>(tr.pre_norm, tr.stats, phi.gamma(cin), dy, dgamma, dbeta);
  }
  BasicTensor<T> dx = conv2d_backward(tr.input, w.convs[tr.conv], Padding::reflect, dy, &grads.convs[tr.conv],
                                      need_input_grad);
  if (need_input_grad && tr.upsample_first) dx = upsample_nearest2_backward(dx);
  return dx;
}

template <class T>
void add_inplace(BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "residual add");
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

template <class T>
BasicTensor<T> residual_forward(const GeneratorWeights<T>& w, const LayerMap& map, const CINParamSet<T>& phi,
                                int first_conv, const BasicTensor<T>& x, std::vector<UnitTrace<T>>* traces) {
  UnitTrace<T>* ta = nullptr;
  UnitTrace<T>* tb = nullptr;
  if (traces) {
    traces->emplace_back();
    traces->emplace_back();
    ta = &(*traces)[traces->size() - 2];
    tb = &(*traces)[traces->size() - 1];
  }
  BasicTensor<T> h = run_unit(w, map, phi, first_conv, x, false, true, ta);
  h = run_unit(w, map, phi, first_conv + 1, std::move(h), false, false, tb);
  add_inplace(h, x);
  return h;
}

template <class T>
BasicTensor<T> residual_backward(const GeneratorWeights<T>& w, const LayerMap& map, const CINParamSet<T>& phi,
                                 const UnitTrace<T>& ta, const UnitTrace<T>& tb, const BasicTensor<T>& dy,
                                 GeneratorWeights<T>& grads, std::vector<T>& dphi) {
  BasicTensor<T> d = unit_backward(w, map, phi, tb, dy, grads, dphi);
  d = unit_backward(w, map, phi, ta, std::move(d), grads, dphi);
  add_inplace(d, dy);
  return d;
}

template <class T>
UnitTrace<T>* next_trace(std::vector<UnitTrace<T>>* traces) {
  if (!traces) return nullptr;
  traces->emplace_back();
  return &traces->back();
}

template <class T>
BasicTensor<T> dynamic_branch(const GeneratorWeights<T>& w, const LayerMap& map, const CINParamSet<T>& phi,
                              BasicTensor<T> x, std::vector<UnitTrace<T>>* traces) {
  if (traces) traces->reserve(5 + 2 * map.dyn_res.size());
  BasicTensor<T> h = run_unit(w, map, phi, map.dyn_conv1, std::move(x), false, true, next_trace(traces));
  h = run_unit(w, map, phi, map.dyn_conv2, std::move(h), false, true, next_trace(traces));
  h = run_unit(w, map, phi, map.dyn_conv3, std::move(h), false, true, next_trace(traces));
  for (int r : map.dyn_res) h = residual_forward(w, map, phi, r, h, traces);
  h = run_unit(w, map, phi, map.dyn_up1, std::move(h), true, true, next_trace(traces));
  h = run_unit(w, map, phi, map.dyn_up2, std::move(h), true, true, next_trace(traces));
  return h;
}

template <class T>
BasicTensor<T> detail_branch(const GeneratorWeights<T>& w, const LayerMap& map, const CINParamSet<T>& phi,
                             const BasicTensor<T>& x, std::vector<UnitTrace<T>>* traces) {
  if (traces) traces->reserve(3);
  BasicTensor<T> h = run_unit(w, map, phi, map.hi_conv1, x, false, true, next_trace(traces));
  h = run_unit(w, map, phi, map.hi_conv2, std::move(h), false, true, next_trace(traces));
  return run_unit(w, map, phi, map.hi_conv3, std::move(h), false, true, next_trace(traces));
}

template <class T>
BasicTensor<T> decoder(const GeneratorWeights<T>& w, const LayerMap& map, const CINParamSet<T>& phi,
                       const BasicTensor<T>& features, std::vector<UnitTrace<T>>* traces) {
  if (traces) traces->reserve(5);
  BasicTensor<T> h = run_unit(w, map, phi, map.dec_merge, features, false, true, next_trace(traces));
  h = residual_forward(w, map, phi, map.dec_res, h, traces);
  h = run_unit(w, map, phi, map.dec_conv, std::move(h), false, true, next_trace(traces));
  h = run_unit(w, map, phi, map.dec_out, std::move(h), false, false, next_trace(traces));
  sigmoid_inplace(h);
  return h;
}

template <class T>
BasicTensor<T> branch_input(const BasicTensor<T>& content, double lambda_s) {
  return resample(content, branch_extent(content.height, lambda_s), branch_extent(content.width, lambda_s), true);
}

void check_stroke_size(double lambda_s) {
  const auto bad = validate_stroke_size(lambda_s);
  if (!bad.empty()) fail(ErrorKind::parameter, bad.front().message);
}

void check_intensity(double lambda_i) {
  const auto bad = validate_intensity(lambda_i);
  if (!bad.empty()) fail(ErrorKind::parameter, bad.front().message);
}

}  // namespace

template <class T>
BasicTensor<T> generator_forward(const GeneratorWeights<T>& w, const LayerMap& map, const BasicTensor<T>& content,
                                 double lambda_s, double lambda_i, GeneratorTrace<T>* trace) {
  if (content.channels != 3 || content.height % 4 != 0 || content.width % 4 != 0)
    fail(ErrorKind::shape, "generator_forward: content must be 3×H×W with sides divisible by 4");
  const CINParamSet<T> phi = regress_cin_params(w, map, lambda_i);
  const BasicTensor<T> small = branch_input(content, lambda_s);
  BasicTensor<T> strokes = dynamic_branch(w, map, phi, small, trace ? &trace->dyn : nullptr);
  strokes = resample(strokes, content.height, content.width, false);
  BasicTensor<T> detail = detail_branch(w, map, phi, content, trace ? &trace->hi : nullptr);
  BasicTensor<T> out = decoder(w, map, phi, concat_channels(detail, strokes), trace ? &trace->dec : nullptr);
  if (trace) {
    trace->lambda_s = lambda_s;
    trace->lambda_i = lambda_i;
    trace->height = content.height;
    trace->width = content.width;
    trace->branch_height = small.height;
    trace->branch_width = small.width;
    trace->output = out;
  }
  return out;
}

template <class T>
void generator_backward(const GeneratorWeights<T>& w, const LayerMap& map, const GeneratorTrace<T>& trace,
                        const BasicTensor<T>& d_output, GeneratorWeights<T>& grads) {
  const CINParamSet<T> phi = regress_cin_params(w, map, trace.lambda_i);
  std::vector<T> dphi(map.cin_param_count, T{0});

  // decoder: merge, res(a, b), conv, out
  BasicTensor<T> d = d_output;
  sigmoid_backward_inplace(trace.output, d);
  const auto& dec = trace.dec;
  d = unit_backward(w, map, phi, dec[4], std::move(d), grads, dphi);
  d = unit_backward(w, map, phi, dec[3], std::move(d), grads, dphi);
  d = residual_backward(w, map, phi, dec[1], dec[2], d, grads, dphi);
  d = unit_backward(w, map, phi, dec[0], std::move(d), grads, dphi);

  BasicTensor<T> d_detail, d_strokes;
  split_channels(d, w.arch.hi_c3, d_detail, d_strokes);

  const auto& hi = trace.hi;
  d_detail = unit_backward(w, map, phi, hi[2], std::move(d_detail), grads, dphi);
  d_detail = unit_backward(w, map, phi, hi[1], std::move(d_detail), grads, dphi);
  unit_backward(w, map, phi, hi[0], std::move(d_detail), grads, dphi, false);

  d_strokes = resample_backward(d_strokes, trace.dyn.back().output.height, trace.dyn.back().output.width, false);
  const auto& dyn = trace.dyn;
  std::size_t i = dyn.size() - 1;
  d_strokes = unit_backward(w, map, phi, dyn[i--], std::move(d_strokes), grads, dphi);
  d_strokes = unit_backward(w, map, phi, dyn[i--], std::move(d_strokes), grads, dphi);
  for (std::size_t r = 0; r < map.dyn_res.size(); ++r) {
    d_strokes = residual_backward(w, map, phi, dyn[i - 1], dyn[i], d_strokes, grads, dphi);
    i -= 2;
  }
  d_strokes = unit_backward(w, map, phi, dyn[i--], std::move(d_strokes), grads, dphi);
  d_strokes = unit_backward(w, map, phi, dyn[i--], std::move(d_strokes), grads, dphi);
  unit_backward(w, map, phi, dyn[i], std::move(d_strokes), grads, dphi, false);

  const T li = static_cast<T>(trace.lambda_i);
  for (std::size_t k = 0; k < dphi.size(); ++k) {
    grads.regressor.weight[k] += dphi[k] * li;
    grads.regressor.bias[k] += dphi[k];
  }
}

// ----- inference API -----

CINParamSet<float> intensity_to_cin_params(const StyleModel& model, double lambda_i) {
  check_intensity(lambda_i);
  return regress_cin_params(model.weights(), model.layers(), lambda_i);
}

Tensor StrokeEncoding::upsampled_strokes() const {
  Tensor up = resample(strokes, padded_height, padded_width, false);
  return crop(up, 0, 0, height(), width());
}

FeatureTensor StrokeEncoding::materialize() const { return {concat_channels(detail, upsampled_strokes()), std::nullopt}; }

StrokeEncoding encode_strokes(const StyleModel& model, const ImagePlane& content, double lambda_s, double lambda_i) {
  check_stroke_size(lambda_s);
  check_intensity(lambda_i);
  if (content.height < kMinImageSide || content.width < kMinImageSide)
    fail(ErrorKind::input, "image " + std::to_string(content.height) + "x" + std::to_string(content.width) +
                               " is smaller than the 16x16 minimum");
  g_encoder_calls.fetch_add(1, std::memory_order_relaxed);
  const auto& w = model.weights();
  const auto& map = model.layers();
  const CINParamSet<float> phi = regress_cin_params(w, map, lambda_i);
  const Tensor padded = reflect_pad_to_multiple(to_tensor(content), 4);
  StrokeEncoding enc;
  enc.lambda_s = lambda_s;
  enc.padded_height = padded.height;
  enc.padded_width = padded.width;
  enc.strokes = dynamic_branch<float>(w, map, phi, branch_input(padded, lambda_s), nullptr);
  enc.detail = crop(detail_branch<float>(w, map, phi, padded, nullptr), 0, 0, content.height, content.width);
  return enc;
}

FeatureTensor encode(const StyleModel& model, const ImagePlane& content, double lambda_s, double lambda_i) {
  return encode_strokes(model, content, lambda_s, lambda_i).materialize();
}

namespace {

// Inference decoder; same op order as decoder<T>, with normalization supplied by `norm(layer, cin, y)`.
template <class Norm>
Tensor decoder_with(const StyleModel& model, const Tensor& features, Norm&& norm) {
  const auto& w = model.weights();
  const auto& map = model.layers();
  int layer = 0;
  auto unit = [&](int conv, const Tensor& x, bool relu) {
    Tensor y = conv2d(x, w.convs[conv], Padding::reflect);
    const int cin = map.convs[conv].cin;
    if (cin >= 0) y = norm(layer++, cin, y);
    if (relu) relu_inplace(y);
    return y;
  };
  Tensor h = unit(map.dec_merge, features, true);
  Tensor r = unit(map.dec_res, h, true);
  r = unit(map.dec_res + 1, r, false);
  add_inplace(r, h);
  h = unit(map.dec_conv, r, true);
  h = unit(map.dec_out, h, false);
  sigmoid_inplace(h);
  return h;
}

void check_decoder_input(const StyleModel& model, const Tensor& features) {
  if (features.channels != model.arch().feature_channels())
    fail(ErrorKind::shape, "decode: expected " + std::to_string(model.arch().feature_channels()) +
                               " feature channels, got " + std::to_string(features.channels));
}

}  // namespace

ImagePlane decode(const StyleModel& model, const FeatureTensor& features, double lambda_i) {
  return decode(model, features, lambda_i, nullptr);
}

ImagePlane decode(const StyleModel& model, const FeatureTensor& features, double lambda_i, DecoderStats* stats) {
  check_intensity(lambda_i);
  check_decoder_input(model, features.values);
  const CINParamSet<float> phi = regress_cin_params(model.weights(), model.layers(), lambda_i);
  if (stats) stats->layers.clear();
  Tensor out = decoder_with(model, features.values, [&](int, int cin, const Tensor& y) {
    if (!stats) return cin_forward<float>(y, phi.gamma(cin), phi.beta(cin), nullptr);
    stats->layers.emplace_back();
    return cin_forward<float>(y, phi.gamma(cin), phi.beta(cin), &stats->layers.back());
  });
  return clamp01(to_image(out));
}

ImagePlane decode_blended(const StyleModel& model, const Tensor& features, double lambda_i,
                          std::span<const DecoderStats* const> level_stats, const Tensor& weights) {
  check_intensity(lambda_i);
  check_decoder_input(model, features);
  if (weights.channels != static_cast<int>(level_stats.size()))
    fail(ErrorKind::shape, "decode_blended: " + std::to_string(weights.channels) + " weight planes for " +
                               std::to_string(level_stats.size()) + " levels");
  if (weights.height != features.height || weights.width != features.width)
    fail(ErrorKind::shape, "decode_blended: weight planes do not match the feature extent");
  const CINParamSet<float> phi = regress_cin_params(model.weights(), model.layers(), lambda_i);
  const std::size_t n = weights.plane_size();
  std::vector<double> mu(n), sd(n);
  Tensor out = decoder_with(model, features, [&](int layer, int cin, const Tensor& y) {
    const auto gamma = phi.gamma(cin);
    const auto beta = phi.beta(cin);
    Tensor z(y.channels, y.height, y.width);
    for (int c = 0; c < y.channels; ++c) {
      std::fill(mu.begin(), mu.end(), 0.0);
      std::fill(sd.begin(), sd.end(), 0.0);
      for (std::size_t l = 0; l < level_stats.size(); ++l) {
        const auto& st = level_stats[l]->layers.at(static_cast<std::size_t>(layer));
        const double m = st.mean[c], s = st.stddev[c];
        const float* wl = weights.channel(static_cast<int>(l));
        for (std::size_t i = 0; i < n; ++i) {
          mu[i] += wl[i] * m;
          sd[i] += wl[i] * s;
        }
      }
      const float* src = y.channel(c);
      float* dst = z.channel(c);
      const double g = gamma[c], b = beta[c];
      for (std::size_t i = 0; i < n; ++i) {
        const double scale = g / (sd[i] + kCinEpsilon);
        dst[i] = static_cast<float>((src[i] - mu[i]) * scale + b);
      }
    }
    return z;
  });
  return clamp01(to_image(out));
}

ImagePlane stylize(const StyleModel& model, const ImagePlane& content, const StrokeParams& params) {
  const StrokeParams p = StrokeParams::make(params.lambda_s, params.lambda_i, params.tau);
  if (p.tau == 0.0) return decode(model, encode(model, content, p.lambda_s, p.lambda_i), p.lambda_i);
  auto [rotated, frame] = rotate_pad(content, p.tau);
  return crop_unrotate(decode(model, encode(model, rotated, p.lambda_s, p.lambda_i), p.lambda_i), frame);
}

std::uint64_t encoder_invocations() { return g_encoder_calls.load(std::memory_order_relaxed); }

#define SNST_INSTANTIATE_NET(T)                                                                                   \
  template struct GeneratorWeights<T>;                                                                           \
  template void check_consistency(const GeneratorWeights<T>&, const LayerMap&);                                  \
  template CINParamSet<T> regress_cin_params(const GeneratorWeights<T>&, const LayerMap&, double);               \
  template BasicTensor<T> generator_forward(const GeneratorWeights<T>&, const LayerMap&, const BasicTensor<T>&,  \
                                            double, double, GeneratorTrace<T>*);                                 \
  template void generator_backward(const GeneratorWeights<T>&, const LayerMap&, const GeneratorTrace<T>&,        \
                                   const BasicTensor<T>&, GeneratorWeights<T>&);

SNST_INSTANTIATE_NET(float)
SNST_INSTANTIATE_NET(double)

#undef SNST_INSTANTIATE_NET

}  // namespace snst
