#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "snst/image.hpp"
#include "snst/json.hpp"
#include "snst/network.hpp"

namespace snst {

inline constexpr double kDefaultStyleWeight = 3e4;

struct TrainConfig {
  std::filesystem::path style_image_path;
  std::filesystem::path dataset_dir;
  int epochs = 2;
  int crop_size = 256;
  int batch_size = 4;
  double learning_rate = 1e-3;
  std::vector<double> downsample_cycle = {2.0, 4.0};
  double intensity_lo = 0.0;
  double intensity_hi = 1.0;
  // Overrides the intensity sampling with a constant.
  std::optional<double> fixed_intensity;
  std::uint64_t seed = 1;
  std::filesystem::path checkpoint_dir;  // periodic checkpoints; empty disables them
  std::filesystem::path output;          // final checkpoint; may be empty
  std::filesystem::path extractor_path;
  int checkpoint_every = 500;
  double content_weight = 1.0;
  // Base style weight; the per-batch style weight is style_weight · λI.
  double style_weight = kDefaultStyleWeight;
  ArchConfig arch;
  std::string style_name;
  // Limits the run (0 = epochs × ceil(corpus / batch)).
  int max_steps = 0;

  // Returns the list of violated invariants (empty when valid).
  std::vector<Violation> violations() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);

struct TrainStep {
  int step = 0;
  double style_loss = 0.0;
  double content_loss = 0.0;
  double total_loss = 0.0;
  double lambda_i = 0.0;
  double lambda_s = 1.0;
  double wall_seconds = 0.0;
};

void to_json(nlohmann::json& j, const TrainStep& s);

struct TrainReport {
  std::vector<TrainStep> steps;
  std::filesystem::path final_checkpoint;

  // Mean style loss over the first / last `fraction` of the steps.
  double head_style_loss(double fraction = 0.1) const;
  double tail_style_loss(double fraction = 0.1) const;
};

// Decoded training images, each resized so its short side equals the crop
// size. Crops are taken at random positions.
class Corpus {
 public:
  Corpus(const std::filesystem::path& dir, int crop_size);

  std::size_t size() const { return images_.size(); }
  int crop_size() const { return crop_; }
  ImagePlane crop(std::size_t index, std::mt19937_64& rng) const;

 private:
  std::vector<ImagePlane> images_;
  int crop_;
};

// Uniform sampling with replacement from the corpus.
std::vector<ImagePlane> load_batch(const std::filesystem::path& dataset_dir, int crop_size, int batch_size,
                                   std::mt19937_64& rng);
std::vector<ImagePlane> load_batch(const Corpus& corpus, int batch_size, std::mt19937_64& rng);

struct TrainResult {
  StyleModel model;
  TrainReport report;
};

// `log` receives one JSON record per step.
TrainResult train(const TrainConfig& config, std::ostream* log = nullptr);

}  // namespace snst
