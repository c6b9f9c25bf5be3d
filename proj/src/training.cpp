#include "snst/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "snst/checkpoint.hpp"
#include "snst/perceptual.hpp"

namespace snst {

namespace fs = std::filesystem;

std::vector<Violation> TrainConfig::violations() const {
  std::vector<Violation> v;
  if (crop_size < kMinImageSide || crop_size % 4 != 0)
    v.push_back({"crop_size", "must be a multiple of 4 and at least " + std::to_string(kMinImageSide)});
  if (downsample_cycle.empty()) v.push_back({"downsample_cycle", "must not be empty"});
  for (double f : downsample_cycle)
    if (!(f >= 1.0 && f <= kMaxStrokeSize)) {
      v.push_back({"downsample_cycle", "factors must lie in [1, 8]"});
      break;
    }
  if (!(intensity_lo >= 0.0 && intensity_hi > intensity_lo))
    v.push_back({"intensity_range", "requires hi > lo >= 0"});
  if (fixed_intensity && !(*fixed_intensity >= kMinIntensity && *fixed_intensity <= kMaxIntensity))
    v.push_back({"fixed_intensity", "must lie in [0, 4]"});
  if (epochs < 1) v.push_back({"epochs", "must be at least 1"});
  if (batch_size < 1) v.push_back({"batch_size", "must be at least 1"});
  if (!(learning_rate > 0.0)) v.push_back({"learning_rate", "must be positive"});
  if (checkpoint_every < 1) v.push_back({"checkpoint_every", "must be at least 1"});
  if (!(style_weight > 0.0)) v.push_back({"style_weight", "must be positive"});
  if (max_steps < 0) v.push_back({"max_steps", "must not be negative"});
  return v;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"style_image", c.style_image_path.string()},
       {"dataset_dir", c.dataset_dir.string()},
       {"epochs", c.epochs},
       {"crop_size", c.crop_size},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"downsample_cycle", c.downsample_cycle},
       {"intensity_range", {c.intensity_lo, c.intensity_hi}},
       {"seed", c.seed},
       {"content_weight", c.content_weight},
       {"style_weight", c.style_weight},
       {"max_steps", c.max_steps}};
  if (c.fixed_intensity) j["fixed_intensity"] = *c.fixed_intensity;
}

void to_json(nlohmann::json& j, const TrainStep& s) {
  j = {{"step", s.step},
       {"style_loss", s.style_loss},
       {"content_loss", s.content_loss},
       {"total_loss", s.total_loss},
       {"lambda_i", s.lambda_i},
       {"lambda_s", s.lambda_s},
       {"wall_time", s.wall_seconds}};
}

namespace {

double window_mean(const std::vector<TrainStep>& steps, double fraction, bool head) {
  if (steps.empty()) return 0.0;
  const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * steps.size())));
  const std::size_t begin = head ? 0 : steps.size() - n;
  double s = 0.0;
  for (std::size_t i = begin; i < begin + n; ++i) s += steps[i].style_loss;
  return s / static_cast<double>(n);
}

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

}  // namespace

double TrainReport::head_style_loss(double fraction) const { return window_mean(steps, fraction, true); }
double TrainReport::tail_style_loss(double fraction) const { return window_mean(steps, fraction, false); }

Corpus::Corpus(const fs::path& dir, int crop_size) : crop_(crop_size) {
  if (crop_size < 1) fail(ErrorKind::parameter, "crop size must be positive");
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) fail(ErrorKind::data, "dataset directory '" + dir.string() + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    ImagePlane img;
    try {
      img = load_image(f);
    } catch (const Error&) {
      continue;  // undecodable files are skipped
    }
    const double s = static_cast<double>(crop_) / std::min(img.height, img.width);
    const int h = std::max(crop_, static_cast<int>(std::lround(img.height * s)));
    const int w = std::max(crop_, static_cast<int>(std::lround(img.width * s)));
    images_.push_back(resize_image(img, h, w));
  }
  if (images_.empty()) fail(ErrorKind::data, "no decodable images in '" + dir.string() + "'");
}

ImagePlane Corpus::crop(std::size_t index, std::mt19937_64& rng) const {
  const auto& img = images_.at(index);
  std::uniform_int_distribution<int> dy(0, img.height - crop_);
  std::uniform_int_distribution<int> dx(0, img.width - crop_);
  const int y0 = dy(rng);
  const int x0 = dx(rng);
  ImagePlane out(crop_, crop_);
  for (int y = 0; y < crop_; ++y)
    std::copy_n(&img.rgb[(static_cast<std::size_t>(y0 + y) * img.width + x0) * 3], static_cast<std::size_t>(crop_) * 3,
                &out.rgb[static_cast<std::size_t>(y) * crop_ * 3]);
  return out;
}

std::vector<ImagePlane> load_batch(const Corpus& corpus, int batch_size, std::mt19937_64& rng) {
  if (batch_size < 1) fail(ErrorKind::parameter, "batch size must be positive");
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  std::vector<ImagePlane> batch;
  for (int i = 0; i < batch_size; ++i) {
    const auto idx = pick(rng);
    batch.push_back(corpus.crop(idx, rng));
  }
  return batch;
}

std::vector<ImagePlane> load_batch(const fs::path& dataset_dir, int crop_size, int batch_size, std::mt19937_64& rng) {
  return load_batch(Corpus(dataset_dir, crop_size), batch_size, rng);
}

namespace {

class Adam {
 public:
  Adam(const GeneratorWeights<float>& like, double lr)
      : lr_(lr), m_(GeneratorWeights<float>::zeros_like(like)), v_(GeneratorWeights<float>::zeros_like(like)) {}

  void step(GeneratorWeights<float>& w, const GeneratorWeights<float>& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    const float step = static_cast<float>(lr_ * std::sqrt(c2) / c1);
    auto update = [&](std::vector<float>& p, const std::vector<float>& gp, std::vector<float>& m,
                      std::vector<float>& v) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = static_cast<float>(kBeta1) * m[i] + static_cast<float>(1.0 - kBeta1) * gp[i];
        v[i] = static_cast<float>(kBeta2) * v[i] + static_cast<float>(1.0 - kBeta2) * gp[i] * gp[i];
        p[i] -= step * m[i] / (std::sqrt(v[i]) + static_cast<float>(kEps * std::sqrt(c2)));
      }
    };
    for (std::size_t k = 0; k < w.convs.size(); ++k) {
      update(w.convs[k].weight, g.convs[k].weight, m_.convs[k].weight, v_.convs[k].weight);
      update(w.convs[k].bias, g.convs[k].bias, m_.convs[k].bias, v_.convs[k].bias);
    }
    update(w.regressor.weight, g.regressor.weight, m_.regressor.weight, v_.regressor.weight);
    update(w.regressor.bias, g.regressor.bias, m_.regressor.bias, v_.regressor.bias);
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_;
  int t_ = 0;
  GeneratorWeights<float> m_;
  GeneratorWeights<float> v_;
};

ModelMeta make_meta(const TrainConfig& c, const ImagePlane& style) {
  ModelMeta meta;
  meta.style_name = c.style_name.empty() ? c.style_image_path.stem().string() : c.style_name;
  meta.training_resolution = c.crop_size;
  meta.trained_factors = c.downsample_cycle;
  meta.training = c;
  meta.style_image = style;
  return meta;
}

}  // namespace

TrainResult train(const TrainConfig& config, std::ostream* log) {
  if (auto v = config.violations(); !v.empty())
    fail(ErrorKind::parameter, "invalid training config: " + v.front().field + " " + v.front().message);
  const auto extractor = PerceptualExtractor<float>::load(PerceptualExtractor<float>::resolve_path(config.extractor_path));
  const ImagePlane style = load_image(config.style_image_path);
  const Corpus corpus(config.dataset_dir, config.crop_size);

  const auto style_ref = style_grams(extractor, to_tensor(style));
  auto weights = GeneratorWeights<float>::init(config.arch, config.seed);
  const auto map = LayerMap::build(config.arch);
  Adam adam(weights, config.learning_rate);

  const int steps_per_epoch =
      static_cast<int>((corpus.size() + static_cast<std::size_t>(config.batch_size) - 1) / config.batch_size);
  int total_steps = config.epochs * steps_per_epoch;
  if (config.max_steps > 0) total_steps = std::min(total_steps, config.max_steps);

  std::mt19937_64 rng(config.seed ^ 0x5eedf00dULL);
  std::uniform_real_distribution<double> intensity(config.intensity_lo, config.intensity_hi);
  std::vector<std::size_t> order(corpus.size());
  std::size_t cursor = order.size();

  const ModelMeta meta = make_meta(config, style);
  TrainResult result{StyleModel(weights, meta), {}};
  const auto t0 = std::chrono::steady_clock::now();

  auto write_checkpoint = [&](const fs::path& path) {
    try {
      save_checkpoint(StyleModel(weights, meta), path);
    } catch (const Error& e) {
      fail(ErrorKind::io, "checkpoint write failed at '" + path.string() + "': " + e.what());
    }
  };

  for (int step = 1; step <= total_steps; ++step) {
    const double lambda_s = config.downsample_cycle[(step - 1) % config.downsample_cycle.size()];
    const double lambda_i = config.fixed_intensity ? *config.fixed_intensity : intensity(rng);

    // Epoch-wise shuffled pass over the corpus.
    std::vector<ImagePlane> batch;
    for (int b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(corpus.crop(order[cursor++], rng));
    }

    auto grads = GeneratorWeights<float>::zeros_like(weights);
    TrainStep rec;
    rec.step = step;
    rec.lambda_i = lambda_i;
    rec.lambda_s = lambda_s;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (const auto& img : batch) {
      const Tensor content = to_tensor(img);
      GeneratorTrace<float> trace;
      const Tensor out = generator_forward(weights, map, content, lambda_s, lambda_i, &trace);
      const auto content_features = extractor.extract(content, nullptr, kContentLayer);
      Tensor d_out;
      const auto loss = total_loss(extractor, out, content_features, style_ref, config.style_weight * lambda_i,
                                   config.content_weight, &d_out);
      if (!std::isfinite(loss.total) || !std::isfinite(loss.style) || !std::isfinite(loss.content))
        fail(ErrorKind::training, "non-finite loss at step " + std::to_string(step) +
                                      " (lambda_i=" + std::to_string(lambda_i) +
                                      ", lambda_s=" + std::to_string(lambda_s) + ")");
      rec.style_loss += loss.style * inv_b;
      rec.content_loss += loss.content * inv_b;
      rec.total_loss += loss.total * inv_b;
      for (auto& v : d_out.data) v *= static_cast<float>(inv_b);
      generator_backward(weights, map, trace, d_out, grads);
    }
    adam.step(weights, grads);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.report.steps.push_back(rec);
    if (log != nullptr) *log << nlohmann::json(rec).dump() << '\n' << std::flush;

    if (!config.checkpoint_dir.empty() && step % config.checkpoint_every == 0) {
      fs::create_directories(config.checkpoint_dir);
      char name[32];
      std::snprintf(name, sizeof name, "step_%06d.ckpt", step);
      write_checkpoint(config.checkpoint_dir / name);
    }
  }

  if (!config.output.empty()) {
    write_checkpoint(config.output);
    result.report.final_checkpoint = config.output;
  } else if (!config.checkpoint_dir.empty()) {
    fs::create_directories(config.checkpoint_dir);
    result.report.final_checkpoint = config.checkpoint_dir / "final.ckpt";
    write_checkpoint(result.report.final_checkpoint);
  }
  result.model = StyleModel(std::move(weights), meta);
  return result;
}

}  // namespace snst
