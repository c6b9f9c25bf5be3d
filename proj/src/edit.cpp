#include "snst/edit.hpp"

#include "snst/resample.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace snst {

LevelMask LevelMask::one_hot(int levels, int height, int width, int level) {
  if (level < 0 || level >= levels) fail(ErrorKind::parameter, "one-hot level out of range");
  LevelMask m(levels, height, width);
  std::fill_n(m.weights.begin() + static_cast<std::ptrdiff_t>(level * m.plane_size()), m.plane_size(), 1.0f);
  return m;
}

LevelMask LevelMask::uniform(int levels, int height, int width) {
  LevelMask m(levels, height, width);
  std::fill(m.weights.begin(), m.weights.end(), 1.0f / static_cast<float>(levels));
  return m;
}

LevelMask LevelMask::from_labels(std::span<const std::uint8_t> labels, int levels, int height, int width) {
  if (labels.size() != static_cast<std::size_t>(height) * width)
    fail(ErrorKind::shape, "label map size does not match its extent");
  LevelMask m(levels, height, width);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= levels)
      fail(ErrorKind::shape, "mask label " + std::to_string(labels[i]) + " exceeds the " + std::to_string(levels) +
                                 " available levels");
    m.weights[labels[i] * m.plane_size() + i] = 1.0f;
  }
  return m;
}

void LevelMask::normalize() {
  const std::size_t n = plane_size();
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (int l = 0; l < levels; ++l) sum += weights[l * n + i];
    if (sum < kDegenerateWeightSum) {
      for (int l = 0; l < levels; ++l) weights[l * n + i] = 1.0f / static_cast<float>(levels);
    } else if (sum != 1.0) {
      for (int l = 0; l < levels; ++l) weights[l * n + i] = static_cast<float>(weights[l * n + i] / sum);
    }
  }
}

double LevelMask::max_sum_error() const {
  const std::size_t n = plane_size();
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (int l = 0; l < levels; ++l) sum += weights[l * n + i];
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  return worst;
}

Tensor LevelMask::as_tensor() const {
  Tensor t(levels, height, width);
  t.data = weights;
  return t;
}

LevelMask LevelMask::from_tensor(const Tensor& t) {
  LevelMask m(t.channels, t.height, t.width);
  m.weights = t.data;
  return m;
}

std::vector<double> StrokeFeatureSet::level_values() const {
  std::vector<double> v;
  for (const auto& l : levels) v.push_back(l.lambda_s);
  return v;
}

std::size_t StrokeFeatureSet::byte_size() const {
  std::size_t s = 0;
  for (const auto& l : levels) s += l.encoding.byte_size();
  return s;
}

std::vector<Violation> validate_levels(const std::vector<double>& level_values) {
  std::vector<Violation> v;
  if (level_values.empty()) v.push_back({"level_values", "at least one level is required"});
  for (std::size_t i = 0; i < level_values.size(); ++i) {
    for (auto& e : validate_stroke_size(level_values[i])) v.push_back({"level_values", e.message});
    if (i > 0 && !(level_values[i] > level_values[i - 1]))
      v.push_back({"level_values", "levels must be strictly increasing"});
  }
  return v;
}

std::vector<double> default_levels(int count, double lo, double hi) {
  if (count < 1) fail(ErrorKind::parameter, "level count must be positive");
  if (count == 1) return {lo};
  std::vector<double> v;
  for (int i = 0; i < count; ++i) v.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / (count - 1)));
  v.back() = hi;
  return v;
}

std::size_t estimate_level_bytes(const StyleModel& model, Extent content, const std::vector<double>& level_values,
                                 double tau) {
  const auto frame = make_rotation_frame(content, tau);
  const std::size_t ph = static_cast<std::size_t>(frame.padded.height);
  const std::size_t pw = static_cast<std::size_t>(frame.padded.width);
  const auto& a = model.arch();
  std::size_t total = 0;
  for (double s : level_values) {
    const std::size_t bh = static_cast<std::size_t>(branch_extent(static_cast<int>((ph + 3) / 4 * 4), s));
    const std::size_t bw = static_cast<std::size_t>(branch_extent(static_cast<int>((pw + 3) / 4 * 4), s));
    total += (static_cast<std::size_t>(a.hi_c3) * ph * pw + static_cast<std::size_t>(a.dyn_out) * bh * bw) * sizeof(float);
    total += static_cast<std::size_t>(content.height) * content.width * 3 * sizeof(float);
  }
  return total;
}

namespace {

std::string join_violations(const std::vector<Violation>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "; " : "") << v[i].field << ": " << v[i].message;
  return os.str();
}

}  // namespace

LevelSet precompute_levels(const StyleModel& model, const ImagePlane& content, const std::vector<double>& level_values,
                           double lambda_i, double tau, std::size_t budget_bytes) {
  if (auto v = validate_levels(level_values); !v.empty()) fail(ErrorKind::parameter, join_violations(v));
  const StrokeParams p = StrokeParams::make(level_values.front(), lambda_i, tau);
  const std::size_t need = estimate_level_bytes(model, extent_of(content), level_values, p.tau);
  if (need > budget_bytes)
    fail(ErrorKind::resource, std::to_string(level_values.size()) + " levels at " + std::to_string(content.height) +
                                  "x" + std::to_string(content.width) + " need about " +
                                  std::to_string(need >> 20) + " MiB, over the " + std::to_string(budget_bytes >> 20) +
                                  " MiB budget; use fewer levels");
  LevelSet out;
  auto [rotated, frame] = rotate_pad(content, p.tau);
  out.features.frame = frame;
  out.features.lambda_i = p.lambda_i;
  try {
    for (double s : level_values) {
      StrokeLevel level{s, encode_strokes(model, rotated, s, p.lambda_i), {}};
      const ImagePlane decoded = decode(model, level.encoding.materialize(), p.lambda_i, &level.decoder_stats);
      out.previews.levels.push_back(crop_unrotate(decoded, frame));
      out.features.levels.push_back(std::move(level));
    }
  } catch (const std::bad_alloc&) {
    fail(ErrorKind::resource, "out of memory while precomputing " + std::to_string(level_values.size()) + " levels");
  }
  out.previews.blended = out.previews.levels.front();
  return out;
}

ImagePlane blend_image_space(const PreviewSet& previews, const LevelMask& mask) {
  if (previews.levels.empty()) fail(ErrorKind::sequencing, "no precomputed levels to blend");
  const auto& first = previews.levels.front();
  if (mask.levels != static_cast<int>(previews.levels.size()))
    fail(ErrorKind::shape, "mask has " + std::to_string(mask.levels) + " planes but " +
                               std::to_string(previews.levels.size()) + " levels were precomputed");
  if (mask.height != first.height || mask.width != first.width)
    fail(ErrorKind::shape, "mask extent " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                               " does not match the image extent " + std::to_string(first.height) + "x" +
                               std::to_string(first.width));
  ImagePlane out(first.height, first.width);
  const std::size_t n = mask.plane_size();
  for (int l = 0; l < mask.levels; ++l) {
    const auto& img = previews.levels[l];
    const float* w = mask.weights.data() + l * n;
    for (std::size_t i = 0; i < n; ++i) {
      const float wl = w[i];
      for (int c = 0; c < 3; ++c) out.rgb[i * 3 + c] += wl * img.rgb[i * 3 + c];
    }
  }
  return out;
}

LevelMask transform_mask(const LevelMask& mask, const RotationFrame& frame) {
  if (mask.extent() != frame.original) fail(ErrorKind::shape, "mask extent does not match the content extent");
  if (frame.is_identity()) {
    LevelMask m = mask;
    m.normalize();
    return m;
  }
  LevelMask m = LevelMask::from_tensor(rotate_pad(mask.as_tensor(), frame));
  for (auto& w : m.weights) w = std::max(w, 0.0f);
  m.normalize();
  return m;
}

ImagePlane blend_feature_space(const StyleModel& model, const StrokeFeatureSet& fs, const LevelMask& mask) {
  if (fs.levels.empty()) fail(ErrorKind::sequencing, "no precomputed levels to blend");
  if (mask.levels != static_cast<int>(fs.levels.size()))
    fail(ErrorKind::shape, "mask has " + std::to_string(mask.levels) + " planes but " +
                               std::to_string(fs.levels.size()) + " levels were precomputed");
  const LevelMask m = transform_mask(mask, fs.frame);
  const auto& e0 = fs.levels.front().encoding;
  if (m.height != e0.height() || m.width != e0.width()) fail(ErrorKind::shape, "mask does not match the feature frame");

  const std::size_t n = m.plane_size();
  Tensor blended;
  for (std::size_t l = 0; l < fs.levels.size(); ++l) {
    const float* w = m.weights.data() + l * n;
    if (std::all_of(w, w + n, [](float v) { return v == 0.0f; })) continue;
    const Tensor f = fs.levels[l].encoding.materialize().values;
    if (blended.empty()) blended = Tensor(f.channels, f.height, f.width);
    for (int c = 0; c < f.channels; ++c) {
      float* dst = blended.channel(c);
      const float* src = f.channel(c);
      for (std::size_t i = 0; i < n; ++i) dst[i] += w[i] * src[i];
    }
  }
  std::vector<const DecoderStats*> stats;
  for (const auto& l : fs.levels) stats.push_back(&l.decoder_stats);
  return crop_unrotate(decode_blended(model, blended, fs.lambda_i, stats, m.as_tensor()), fs.frame);
}

BlendMode parse_blend_mode(const std::string& s) {
  if (s == "preview") return BlendMode::preview;
  if (s == "final") return BlendMode::final;
  fail(ErrorKind::parameter, "mode must be 'preview' or 'final', got '" + s + "'");
}

const char* to_string(BlendMode m) { return m == BlendMode::preview ? "preview" : "final"; }

ImagePlane render_local_edit(const StyleModel& model, const ImagePlane& content, const EditRequest& edit,
                             BlendMode mode) {
  if (edit.mask.levels != static_cast<int>(edit.level_values.size()))
    fail(ErrorKind::shape, "mask has " + std::to_string(edit.mask.levels) + " planes for " +
                               std::to_string(edit.level_values.size()) + " levels");
  if (edit.mask.extent() != extent_of(content)) fail(ErrorKind::shape, "mask extent does not match the content");
  const LevelSet set = precompute_levels(model, content, edit.level_values, edit.lambda_i, edit.tau);
  if (mode == BlendMode::preview) return blend_image_space(set.previews, edit.mask);
  return blend_feature_space(model, set.features, edit.mask);
}

}  // namespace snst
