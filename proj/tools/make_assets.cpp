// snst-make-assets: offline stand-ins for the external assets (training
// corpus, style image, perceptual extractor weights).
#include <CLI11.hpp>
#include <iostream>

#include "snst/assets.hpp"
#include "snst/perceptual.hpp"

using namespace snst;

int main(int argc, char** argv) {
  CLI::App app{"Generate local training assets"};
  app.require_subcommand(1);

  std::string photos, corpus_out;
  int count = 200, long_side = 320;
  std::uint64_t corpus_seed = 7;
  auto* corpus = app.add_subcommand("corpus", "Augment a few photos into a training corpus");
  corpus->add_option("--photos", photos, "Directory of source PNG photos")->required();
  corpus->add_option("--out", corpus_out, "Output directory")->required();
  corpus->add_option("--count", count, "Number of images")->capture_default_str();
  corpus->add_option("--size", long_side, "Long side of each image")->capture_default_str();
  corpus->add_option("--seed", corpus_seed)->capture_default_str();

  std::string style_out;
  int style_size = 256;
  std::uint64_t style_seed = 3;
  auto* style = app.add_subcommand("style", "Paint a procedural brush-stroke style image");
  style->add_option("--out", style_out, "Output PNG")->required();
  style->add_option("--size", style_size, "Square side")->capture_default_str();
  style->add_option("--seed", style_seed)->capture_default_str();

  std::string ext_out;
  int divisor = 1;
  std::uint64_t ext_seed = 19;
  auto* extractor = app.add_subcommand("extractor", "Write a seeded random-weight VGG-19 extractor");
  extractor->add_option("--out", ext_out, "Output weight file")->required();
  extractor->add_option("--width-divisor", divisor, "Channel divisor (1 = full width)")->capture_default_str();
  extractor->add_option("--seed", ext_seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return e.get_exit_code() == 0 ? app.exit(e) : (app.exit(e), 2);
  }
  try {
    if (*corpus) synthesize_corpus(photos, corpus_out, count, long_side, corpus_seed);
    if (*style) save_png(paint_brush_style(style_size, style_size, style_seed), style_out);
    if (*extractor) PerceptualExtractor<float>::random(divisor, ext_seed).save(ext_out);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code_for(e.kind());
  }
  return 0;
}
