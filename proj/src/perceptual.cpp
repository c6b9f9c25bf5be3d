#include "snst/perceptual.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>

#include "snst/checkpoint.hpp"

namespace snst {

namespace {

struct VggSlot {
  const char* name;
  int in;
  int out;
  bool pool_after;
};

// VGG-19 convolution stack up to conv5_1.
constexpr VggSlot kVgg19[] = {
    {"conv1_1", 3, 64, false},    {"conv1_2", 64, 64, true},    {"conv2_1", 64, 128, false},
    {"conv2_2", 128, 128, true},  {"conv3_1", 128, 256, false}, {"conv3_2", 256, 256, false},
    {"conv3_3", 256, 256, false}, {"conv3_4", 256, 256, true},  {"conv4_1", 256, 512, false},
    {"conv4_2", 512, 512, false}, {"conv4_3", 512, 512, false}, {"conv4_4", 512, 512, true},
    {"conv5_1", 512, 512, false},
};

std::string relu_name(const std::string& conv) { return "relu" + conv.substr(4); }

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

template <class T>
PerceptualExtractor<T> PerceptualExtractor<T>::empty_layout(int width_divisor) {
  if (width_divisor < 1 || 64 % width_divisor != 0)
    fail(ErrorKind::configuration, "extractor width divisor must divide 64");
  PerceptualExtractor e;
  e.width_divisor_ = width_divisor;
  for (const auto& s : kVgg19) {
    Layer l;
    l.name = s.name;
    l.relu = relu_name(s.name);
    l.pool_after = s.pool_after;
    const int in = s.in == 3 ? 3 : s.in / width_divisor;
    l.conv = ConvWeights<T>(in, s.out / width_divisor, 3, 1);
    e.layers_.push_back(std::move(l));
  }
  return e;
}

template <class T>
PerceptualExtractor<T> PerceptualExtractor<T>::random(int width_divisor, std::uint64_t seed) {
  auto e = empty_layout(width_divisor);
  std::mt19937_64 rng(seed);
  for (auto& l : e.layers_) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(l.conv.fan_in())));
    for (auto& w : l.conv.weight) w = static_cast<T>(dist(rng));
  }
  return e;
}

template <class T>
std::filesystem::path PerceptualExtractor<T>::resolve_path(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv(kExtractorEnv); env != nullptr && *env != '\0') return env;
  return fallback;
}

template <class T>
PerceptualExtractor<T> PerceptualExtractor<T>::load(const std::filesystem::path& path) {
  if (path.empty() || !std::filesystem::exists(path))
    fail(ErrorKind::configuration,
         "perceptual extractor weights not found at '" + path.string() +
             "' (set " + kExtractorEnv + ", run scripts/fetch_vgg19.py, or build a seeded stand-in with `snst-make-assets extractor`)");
  WeightContainer c;
  try {
    c = read_container(path);
  } catch (const Error& e) {
    fail(ErrorKind::configuration, "unusable extractor file '" + path.string() + "': " + e.what());
  }
  if (c.meta.value("kind", "") != "perceptual-extractor" || c.meta.value("layout", "") != "vgg19")
    fail(ErrorKind::configuration, "'" + path.string() + "' is not a vgg19 extractor");
  auto e = empty_layout(c.meta.value("width_divisor", 1));
  for (auto& l : e.layers_) {
    const auto* w = c.find(l.name + ".weight");
    const auto* b = c.find(l.name + ".bias");
    if (w == nullptr || b == nullptr) fail(ErrorKind::configuration, "extractor is missing " + l.name);
    if (w->values.size() != l.conv.weight.size() || b->values.size() != l.conv.bias.size())
      fail(ErrorKind::configuration, "extractor layer " + l.name + " has the wrong shape");
    l.conv.weight.assign(w->values.begin(), w->values.end());
    l.conv.bias.assign(b->values.begin(), b->values.end());
  }
  return e;
}

template <class T>
void PerceptualExtractor<T>::save(const std::filesystem::path& path) const {
  WeightContainer c;
  c.meta = {{"kind", "perceptual-extractor"},
            {"layout", "vgg19"},
            {"width_divisor", width_divisor_},
            {"mean", kExtractorMean},
            {"std", kExtractorStd}};
  for (const auto& l : layers_) {
    const auto& cw = l.conv;
    c.arrays.push_back({l.name + ".weight",
                        {cw.out_channels, cw.in_channels, cw.kernel, cw.kernel},
                        std::vector<float>(cw.weight.begin(), cw.weight.end())});
    c.arrays.push_back({l.name + ".bias", {cw.out_channels}, std::vector<float>(cw.bias.begin(), cw.bias.end())});
  }
  write_container(c, path);
}

template <class T>
template <class U>
PerceptualExtractor<U> PerceptualExtractor<T>::cast() const {
  PerceptualExtractor<U> o;
  o.width_divisor_ = width_divisor_;
  for (const auto& l : layers_) o.layers_.push_back({l.name, l.relu, l.pool_after, l.conv.template cast<U>()});
  return o;
}

template <class T>
PerceptualFeatures<T> PerceptualExtractor<T>::extract(const BasicTensor<T>& image, Trace* trace,
                                                      const std::string& deepest) const {
  if (image.channels != 3) fail(ErrorKind::shape, "extractor expects a 3-channel image");
  BasicTensor<T> x = image;
  for (int c = 0; c < 3; ++c) {
    const T m = static_cast<T>(kExtractorMean[c]);
    const T s = static_cast<T>(kExtractorStd[c]);
    for (auto& v : x.channel_span(c)) v = (v - m) / s;
  }
  if (trace != nullptr) *trace = Trace{};
  PerceptualFeatures<T> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (x.height < 1 || x.width < 1) fail(ErrorKind::shape, "image too small for the extractor");
    BasicTensor<T> y = conv2d(x, l.conv, Padding::zero);
    relu_inplace(y);
    const bool wanted = l.relu == kContentLayer ||
                        std::find(kStyleLayers.begin(), kStyleLayers.end(), l.relu) != kStyleLayers.end();
    if (wanted) out[l.relu] = y;
    const bool last = l.relu == deepest;
    if (trace != nullptr) {
      trace->conv_inputs.push_back(std::move(x));
      trace->relu_outputs.push_back(y);
      trace->pool_argmax.emplace_back();
      trace->layers_run = static_cast<int>(i) + 1;
    }
    if (last) break;
    if (l.pool_after) {
      x = max_pool2(y, trace != nullptr ? &trace->pool_argmax.back() : nullptr);
    } else {
      x = std::move(y);
    }
  }
  return out;
}

template <class T>
PerceptualFeatures<T> PerceptualExtractor<T>::extract(const ImagePlane& image) const {
  return extract(to_tensor(image).template cast<T>());
}

template <class T>
BasicTensor<T> PerceptualExtractor<T>::backward(const Trace& trace, const PerceptualFeatures<T>& grads) const {
  BasicTensor<T> d;  // gradient w.r.t. the current relu output
  for (int i = trace.layers_run - 1; i >= 0; --i) {
    const auto& l = layers_[i];
    const auto& y = trace.relu_outputs[i];
    if (!d.empty() && l.pool_after) d = max_pool2_backward(d, trace.pool_argmax[i], y.height, y.width);
    if (auto it = grads.find(l.relu); it != grads.end()) {
      require_same_shape(it->second, y, "feature gradient");
      if (d.empty()) {
        d = it->second;
      } else {
        for (std::size_t k = 0; k < d.data.size(); ++k) d.data[k] += it->second.data[k];
      }
    }
    if (d.empty()) continue;
    relu_backward_inplace(y, d);
    d = conv2d_backward<T>(trace.conv_inputs[i], l.conv, Padding::zero, d, nullptr, true);
  }
  if (d.empty()) {
    const auto& x0 = trace.conv_inputs.front();
    return BasicTensor<T>(3, x0.height, x0.width);
  }
  for (int c = 0; c < 3; ++c) {
    const T s = static_cast<T>(kExtractorStd[c]);
    for (auto& v : d.channel_span(c)) v /= s;
  }
  return d;
}

template <class T>
GramMatrix<T> gram(const BasicTensor<T>& f, const std::string& layer) {
  GramMatrix<T> g;
  g.channels = f.channels;
  g.source_layer = layer;
  g.data.assign(static_cast<std::size_t>(f.channels) * f.channels, T{});
  const auto n = static_cast<Eigen::Index>(f.plane_size());
  Eigen::Map<const EMat<T>> F(f.data.data(), f.channels, n);
  Eigen::Map<EMat<T>> G(g.data.data(), f.channels, f.channels);
  // lower triangle via a rank update, mirrored so the result is exactly symmetric
  G.template selfadjointView<Eigen::Lower>().rankUpdate(F);
  G.template triangularView<Eigen::StrictlyUpper>() = G.transpose();
  G /= static_cast<T>(static_cast<double>(f.channels) * static_cast<double>(n));
  return g;
}

template <class T>
std::vector<GramMatrix<T>> style_grams(const PerceptualExtractor<T>& extractor, const BasicTensor<T>& style) {
  const auto feats = extractor.extract(style);
  std::vector<GramMatrix<T>> out;
  for (const auto& name : kStyleLayers) out.push_back(gram(feats.at(name), name));
  return out;
}

template <class T>
double style_loss(const PerceptualFeatures<T>& target, const std::vector<GramMatrix<T>>& style_ref,
                  PerceptualFeatures<T>* grads, double scale, std::vector<double>* per_layer) {
  if (style_ref.size() != kStyleLayers.size())
    fail(ErrorKind::configuration, "style reference must provide one Gram per style layer");
  double total = 0.0;
  if (per_layer != nullptr) per_layer->clear();
  for (std::size_t l = 0; l < kStyleLayers.size(); ++l) {
    const auto& name = kStyleLayers[l];
    auto it = target.find(name);
    if (it == target.end()) fail(ErrorKind::configuration, "target features lack layer " + name);
    const auto& ref = style_ref[l];
    if (!ref.source_layer.empty() && ref.source_layer != name)
      fail(ErrorKind::configuration, "style reference layer mismatch at " + name);
    const auto& F = it->second;
    if (ref.channels != F.channels) fail(ErrorKind::configuration, "style reference channel mismatch at " + name);
    const auto g = gram(F, name);
    const int C = F.channels;
    std::vector<T> diff(g.data.size());
    double sq = 0.0;
    for (std::size_t k = 0; k < diff.size(); ++k) {
      diff[k] = g.data[k] - ref.data[k];
      sq += static_cast<double>(diff[k]) * static_cast<double>(diff[k]);
    }
    const double layer_loss = sq / (static_cast<double>(C) * C);
    total += layer_loss;
    if (per_layer != nullptr) per_layer->push_back(layer_loss);
    if (grads != nullptr) {
      // d/dF of mean((FFᵀ/n - A)²) = 2·(D + Dᵀ)·F / (C²·n)
      const auto n = static_cast<Eigen::Index>(F.plane_size());
      const double nl = static_cast<double>(C) * static_cast<double>(n);
      Eigen::Map<const EMat<T>> D(diff.data(), C, C);
      EMat<T> Dsym = D + D.transpose();
      Eigen::Map<const EMat<T>> Fm(F.data.data(), C, n);
      BasicTensor<T> dF(C, F.height, F.width);
      Eigen::Map<EMat<T>> dFm(dF.data.data(), C, n);
      dFm.noalias() = Dsym * Fm;
      dFm *= static_cast<T>(2.0 * scale / (static_cast<double>(C) * C * nl));
      auto& slot = (*grads)[name];
      if (slot.empty()) {
        slot = std::move(dF);
      } else {
        for (std::size_t k = 0; k < slot.data.size(); ++k) slot.data[k] += dF.data[k];
      }
    }
  }
  return total;
}

template <class T>
double content_loss(const PerceptualFeatures<T>& target, const PerceptualFeatures<T>& content,
                    PerceptualFeatures<T>* grads, double scale) {
  auto t = target.find(kContentLayer);
  auto c = content.find(kContentLayer);
  if (t == target.end() || c == content.end()) fail(ErrorKind::configuration, "content layer missing");
  require_same_shape(t->second, c->second, "content loss");
  const auto& F = t->second;
  const auto& P = c->second;
  const double n = static_cast<double>(F.size());
  double sq = 0.0;
  for (std::size_t k = 0; k < F.size(); ++k) {
    const double d = static_cast<double>(F.data[k]) - static_cast<double>(P.data[k]);
    sq += d * d;
  }
  if (grads != nullptr) {
    BasicTensor<T> dF(F.channels, F.height, F.width);
    const T k2 = static_cast<T>(2.0 * scale / n);
    for (std::size_t k = 0; k < F.size(); ++k) dF.data[k] = k2 * (F.data[k] - P.data[k]);
    auto& slot = (*grads)[kContentLayer];
    if (slot.empty()) {
      slot = std::move(dF);
    } else {
      for (std::size_t k = 0; k < slot.data.size(); ++k) slot.data[k] += dF.data[k];
    }
  }
  return sq / n;
}

template <class T>
LossBreakdown total_loss(const PerceptualExtractor<T>& extractor, const BasicTensor<T>& output,
                         const PerceptualFeatures<T>& content_features, const std::vector<GramMatrix<T>>& style_ref,
                         double lambda_i, double content_weight, BasicTensor<T>* d_output) {
  typename PerceptualExtractor<T>::Trace trace;
  const auto feats = extractor.extract(output, d_output != nullptr ? &trace : nullptr);
  LossBreakdown r;
  r.content_weight = content_weight;
  r.style_weight = lambda_i;
  PerceptualFeatures<T> grads;
  auto* g = d_output != nullptr ? &grads : nullptr;
  r.content = content_loss(feats, content_features, g, content_weight);
  r.style = style_loss(feats, style_ref, g, lambda_i, &r.style_layers);
  r.total = content_weight * r.content + lambda_i * r.style;
  if (d_output != nullptr) *d_output = extractor.backward(trace, grads);
  return r;
}

LossBreakdown total_loss(const PerceptualExtractor<float>& extractor, const ImagePlane& output,
                         const ImagePlane& content, const std::vector<GramMatrix<float>>& style_ref, double lambda_i,
                         double content_weight) {
  if (!output.same_extent(content)) fail(ErrorKind::shape, "output and content extents differ");
  const auto cf = extractor.extract(to_tensor(content), nullptr, kContentLayer);
  return total_loss(extractor, to_tensor(output), cf, style_ref, lambda_i, content_weight);
}

#define SNST_INSTANTIATE(T)                                                                                     \
  template class PerceptualExtractor<T>;                                                                        \
  template GramMatrix<T> gram(const BasicTensor<T>&, const std::string&);                                      \
  template std::vector<GramMatrix<T>> style_grams(const PerceptualExtractor<T>&, const BasicTensor<T>&);       \
  template double style_loss(const PerceptualFeatures<T>&, const std::vector<GramMatrix<T>>&,                  \
                             PerceptualFeatures<T>*, double, std::vector<double>*);                            \
  template double content_loss(const PerceptualFeatures<T>&, const PerceptualFeatures<T>&,                     \
                               PerceptualFeatures<T>*, double);                                                 \
  template LossBreakdown total_loss(const PerceptualExtractor<T>&, const BasicTensor<T>&,                      \
                                    const PerceptualFeatures<T>&, const std::vector<GramMatrix<T>>&, double,   \
                                    double, BasicTensor<T>*);

SNST_INSTANTIATE(float)
SNST_INSTANTIATE(double)
#undef SNST_INSTANTIATE

template PerceptualExtractor<double> PerceptualExtractor<float>::cast<double>() const;
template PerceptualExtractor<float> PerceptualExtractor<double>::cast<float>() const;

}  // namespace snst
