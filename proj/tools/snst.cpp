// snst: train, stylize, edit, serve and export from the command line.
#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "json_config.hpp"
#include "snst/checkpoint.hpp"
#include "snst/edit.hpp"
#include "snst/service.hpp"
#include "snst/training.hpp"
#include "snst/upsample.hpp"

namespace fs = std::filesystem;
using namespace snst;

namespace {

struct TrainArgs {
  std::string style, data, out, checkpoint_dir, extractor, log, style_name, factors = "2,4", intensity = "0:1";
  std::string arch = "full";
  int epochs = 2, crop = 256, batch = 4, checkpoint_every = 500, max_steps = 0;
  double lr = 1e-3, style_weight = kDefaultStyleWeight;
  std::uint64_t seed = 1;
  std::optional<double> fixed_intensity;
};

struct StylizeArgs {
  std::string model, in, out;
  double stroke_size = 1.0, intensity = 1.0, rotation = 0.0;
};

struct EditArgs {
  std::string model, in, out, mask, mode = "final";
  std::vector<double> levels;
  std::optional<int> level;
  double intensity = 1.0, rotation = 0.0;
};

struct ServeArgs {
  std::string models, host = "127.0.0.1", work_dir;
  int port = 8080, preview_cap = 1024;
  std::size_t max_pixels = 25'000'000;
};

struct ExportArgs {
  std::string in, style, out, backend = "local";
  double scale = 1.0, timeout = 600.0;
};

std::vector<double> parse_list(const std::string& s, const char* what) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      fail(ErrorKind::parameter, std::string(what) + ": '" + tok + "' is not a number");
    }
  }
  return v;
}

int run_train(const TrainArgs& a) {
  TrainConfig c;
  c.style_image_path = a.style;
  c.dataset_dir = a.data;
  c.epochs = a.epochs;
  c.crop_size = a.crop;
  c.batch_size = a.batch;
  c.learning_rate = a.lr;
  c.style_weight = a.style_weight;
  c.downsample_cycle = parse_list(a.factors, "--factors");
  const auto colon = a.intensity.find(':');
  if (colon == std::string::npos) fail(ErrorKind::parameter, "--intensity expects lo:hi");
  c.intensity_lo = parse_list(a.intensity.substr(0, colon), "--intensity").at(0);
  c.intensity_hi = parse_list(a.intensity.substr(colon + 1), "--intensity").at(0);
  c.fixed_intensity = a.fixed_intensity;
  c.seed = a.seed;
  c.output = a.out;
  c.checkpoint_dir = a.checkpoint_dir;
  c.checkpoint_every = a.checkpoint_every;
  c.extractor_path = a.extractor;
  c.max_steps = a.max_steps;
  c.style_name = a.style_name;
  if (a.arch == "tiny") {
    c.arch = ArchConfig::tiny();
  } else if (a.arch != "full") {
    fail(ErrorKind::parameter, "--arch must be 'full' or 'tiny'");
  }
  std::ofstream file;
  std::ostream* log = &std::cout;
  if (!a.log.empty()) {
    file.open(a.log);
    if (!file) fail(ErrorKind::io, "cannot write log " + a.log);
    log = &file;
  }
  const auto result = train(c, log);
  std::cerr << "trained " << result.report.steps.size() << " steps; style loss " << result.report.head_style_loss()
            << " -> " << result.report.tail_style_loss() << "\n";
  if (!result.report.final_checkpoint.empty()) std::cerr << "wrote " << result.report.final_checkpoint << "\n";
  return 0;
}

int run_stylize(const StylizeArgs& a) {
  const auto params = StrokeParams::make(a.stroke_size, a.intensity, a.rotation);
  const StyleModel model = load_checkpoint(a.model);
  const ImagePlane content = load_image(a.in);
  save_png(stylize(model, content, params), a.out);
  return 0;
}

int run_edit(const EditArgs& a) {
  if (auto v = validate_levels(a.levels); !v.empty()) fail(ErrorKind::parameter, v.front().field + ": " + v.front().message);
  const BlendMode mode = parse_blend_mode(a.mode);
  StrokeParams::make(a.levels.front(), a.intensity, a.rotation);
  const ImagePlane content = load_image(a.in);
  const int L = static_cast<int>(a.levels.size());
  EditRequest req;
  req.level_values = a.levels;
  req.lambda_i = a.intensity;
  req.tau = a.rotation;
  if (!a.mask.empty()) {
    req.mask = load_mask(a.mask, L, extent_of(content));
  } else if (a.level) {
    req.mask = LevelMask::one_hot(L, content.height, content.width, *a.level);
  } else {
    fail(ErrorKind::parameter, "edit needs --mask or --level");
  }
  const StyleModel model = load_checkpoint(a.model);
  save_png(render_local_edit(model, content, req, mode), a.out);
  return 0;
}

int run_serve(const ServeArgs& a) {
  ServiceConfig c;
  c.models_dir = a.models;
  c.preview_cap = a.preview_cap;
  c.max_pixels = a.max_pixels;
  c.work_dir = a.work_dir;
  EditService service(c);
  std::cerr << "serving " << service.style_ids().size() << " styles on http://" << a.host << ":" << a.port << "\n";
  service.listen(a.host, a.port);
  return 0;
}

int run_export(const ExportArgs& a) {
  const Backend backend = parse_backend(a.backend);
  const auto bytes = read_file(a.in);
  const ImagePlane img = decode_image(bytes);
  if (auto v = validate_upsample(extent_of(img), a.scale); !v.empty())
    fail(ErrorKind::parameter, v.front().field + " " + v.front().message);
  if (backend == Backend::local && a.scale == 1.0) {
    write_file(a.out, bytes);  // identity: keep the original bytes
    return 0;
  }
  UpsampleRequest req;
  req.stylized = img;
  if (!a.style.empty()) req.style = load_image(a.style);
  req.target_scale = a.scale;
  UpsampleGateway gateway({fs::temp_directory_path() / "snst-export", std::nullopt, 5});
  auto job = gateway.submit(req, backend);
  job = gateway.wait(job.job_id, a.timeout);
  if (job.state == JobState::failed) fail(ErrorKind::io, "upsampling failed: " + job.error);
  write_file(a.out, gateway.result_bytes(job.job_id));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stroke-controllable neural style transfer"};
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file with option defaults (nested by subcommand)");
  app.require_subcommand(1);
  app.fallthrough();

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a style model on a folder of content images");
  train_cmd->add_option("--style", ta.style, "Style image")->required();
  train_cmd->add_option("--data", ta.data, "Directory of training images")->required();
  train_cmd->add_option("--out", ta.out, "Final checkpoint path")->required();
  train_cmd->add_option("--epochs", ta.epochs, "Passes over the corpus")->capture_default_str();
  train_cmd->add_option("--crop", ta.crop, "Square crop size (multiple of 4)")->capture_default_str();
  train_cmd->add_option("--batch", ta.batch, "Batch size")->capture_default_str();
  train_cmd->add_option("--lr", ta.lr, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--style-weight", ta.style_weight, "Base style weight, scaled by the sampled intensity")
      ->capture_default_str();
  train_cmd->add_option("--factors", ta.factors, "Downsample factors cycled per batch")->capture_default_str();
  train_cmd->add_option("--intensity", ta.intensity, "Style intensity range lo:hi")->capture_default_str();
  train_cmd->add_option("--fixed-intensity", ta.fixed_intensity, "Use one intensity for every batch");
  train_cmd->add_option("--seed", ta.seed, "Random seed")->capture_default_str();
  train_cmd->add_option("--checkpoint-dir", ta.checkpoint_dir, "Directory for periodic checkpoints");
  train_cmd->add_option("--checkpoint-every", ta.checkpoint_every, "Steps between checkpoints")->capture_default_str();
  train_cmd->add_option("--extractor", ta.extractor, "Perceptual extractor weights (or $SNST_EXTRACTOR)");
  train_cmd->add_option("--log", ta.log, "JSON-lines progress log (default stdout)");
  train_cmd->add_option("--max-steps", ta.max_steps, "Stop after this many steps (0 = no limit)");
  train_cmd->add_option("--style-name", ta.style_name, "Name stored in the checkpoint");
  train_cmd->add_option("--arch", ta.arch, "Network width: full or tiny")->capture_default_str();

  StylizeArgs sa;
  auto* stylize_cmd = app.add_subcommand("stylize", "Stylize one image with global stroke controls");
  stylize_cmd->add_option("--model", sa.model, "Style checkpoint")->required();
  stylize_cmd->add_option("--in", sa.in, "Content image")->required();
  stylize_cmd->add_option("--out", sa.out, "Output PNG")->required();
  stylize_cmd->add_option("--stroke-size,--lambda-s", sa.stroke_size, "Stroke size in [1, 8]")->capture_default_str();
  stylize_cmd->add_option("--intensity,--lambda-i", sa.intensity, "Style intensity in [0, 4]")->capture_default_str();
  stylize_cmd->add_option("--rotation,--tau", sa.rotation, "Stroke orientation in degrees")->capture_default_str();

  EditArgs ea;
  auto* edit_cmd = app.add_subcommand("edit", "Blend several stroke sizes through a level mask");
  edit_cmd->add_option("--model", ea.model, "Style checkpoint")->required();
  edit_cmd->add_option("--in", ea.in, "Content image")->required();
  edit_cmd->add_option("--out", ea.out, "Output PNG")->required();
  edit_cmd->add_option("--levels,--level-values", ea.levels, "Stroke sizes, strictly increasing")
      ->delimiter(',')
      ->required();
  edit_cmd->add_option("--mask", ea.mask, "Label PNG, multi-page TIFF, or comma-separated plane PNGs");
  edit_cmd->add_option("--level", ea.level, "Use level index K everywhere instead of a mask file");
  edit_cmd->add_option("--mode", ea.mode, "preview (image-space) or final (feature-space)")->capture_default_str();
  edit_cmd->add_option("--intensity,--lambda-i", ea.intensity, "Style intensity in [0, 4]")->capture_default_str();
  edit_cmd->add_option("--rotation,--tau", ea.rotation, "Stroke orientation in degrees")->capture_default_str();

  ServeArgs va;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP editing service");
  serve_cmd->add_option("--models", va.models, "Directory of .ckpt style models")->required();
  serve_cmd->add_option("--port", va.port, "TCP port")->capture_default_str();
  serve_cmd->add_option("--host", va.host, "Bind address")->capture_default_str();
  serve_cmd->add_option("--preview-cap", va.preview_cap, "Long side of session images")->capture_default_str();
  serve_cmd->add_option("--max-pixels", va.max_pixels, "Upload pixel limit")->capture_default_str();
  serve_cmd->add_option("--work-dir", va.work_dir, "Directory for export results");

  ExportArgs xa;
  auto* export_cmd = app.add_subcommand("export", "Upsample a stylized image for high-resolution export");
  export_cmd->add_option("--in", xa.in, "Stylized image")->required();
  export_cmd->add_option("--style", xa.style, "Style image (sent to the remote service)");
  export_cmd->add_option("--scale", xa.scale, "Upscaling factor >= 1")->required();
  export_cmd->add_option("--backend", xa.backend, "local or remote ($UPSAMPLE_ENDPOINT)")->capture_default_str();
  export_cmd->add_option("--out", xa.out, "Output PNG")->required();
  export_cmd->add_option("--timeout", xa.timeout, "Seconds to wait for a remote job")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train_cmd) return run_train(ta);
    if (*stylize_cmd) return run_stylize(sa);
    if (*edit_cmd) return run_edit(ea);
    if (*serve_cmd) return run_serve(va);
    if (*export_cmd) return run_export(xa);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
