#include "snst/service.hpp"

#include <httplib.h>

#include <cstdio>
#include <iostream>
#include <random>
#include <sstream>

#include "snst/checkpoint.hpp"

namespace snst {

namespace fs = std::filesystem;
using nlohmann::json;

int http_status_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::parameter:
    case ErrorKind::shape: return 422;
    case ErrorKind::input:
    case ErrorKind::data: return 400;
    case ErrorKind::not_found: return 404;
    case ErrorKind::sequencing: return 409;
    case ErrorKind::configuration:
    case ErrorKind::resource: return 503;
    case ErrorKind::transport: return 502;
    case ErrorKind::integrity:
    case ErrorKind::io:
    case ErrorKind::training: return 500;
  }
  return 500;
}

namespace {

// Carries a machine-readable violation list to the 422 response.
struct ValidationFailure {
  std::vector<Violation> violations;
};

json violations_json(const std::vector<Violation>& v) {
  json arr = json::array();
  for (const auto& x : v) arr.push_back({{"field", x.field}, {"message", x.message}});
  return arr;
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message) {
  send_json(res, status, {{"error", kind}, {"message", message}});
}

void send_png(httplib::Response& res, const ImagePlane& img) {
  const auto bytes = encode_png(img);
  res.status = 200;
  res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
}

template <class F>
httplib::Server::Handler guarded(F&& f) {
  return [f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ValidationFailure& v) {
      send_json(res, 422, {{"error", "validation"}, {"message", "invalid parameters"},
                           {"violations", violations_json(v.violations)}});
    } catch (const Error& e) {
      send_error(res, http_status_for(e.kind()), to_string(e.kind()), e.what());
    } catch (const std::bad_alloc&) {
      send_error(res, 503, "resource", "out of memory");
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    auto j = json::parse(req.body);
    if (!j.is_object()) fail(ErrorKind::input, "request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    fail(ErrorKind::input, std::string("malformed JSON: ") + e.what());
  }
}

// Reads an optional number, recording a violation on a type mismatch.
std::optional<double> number_field(const json& j, const char* name, std::vector<Violation>& bad) {
  auto it = j.find(name);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) {
    bad.push_back({name, "must be a number"});
    return std::nullopt;
  }
  return it->get<double>();
}

std::optional<std::vector<double>> levels_field(const json& j, std::vector<Violation>& bad) {
  auto it = j.find("level_values");
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_array()) {
    bad.push_back({"level_values", "must be an array of numbers"});
    return std::nullopt;
  }
  std::vector<double> v;
  for (const auto& x : *it) {
    if (!x.is_number()) {
      bad.push_back({"level_values", "must be an array of numbers"});
      return std::nullopt;
    }
    v.push_back(x.get<double>());
  }
  return v;
}

std::vector<double> parse_number_list(const std::string& s, const char* field, std::vector<Violation>& bad) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      bad.push_back({field, "'" + tok + "' is not a number"});
      return {};
    }
  }
  return v;
}

std::string random_suffix() {
  static thread_local std::mt19937_64 rng(std::random_device{}());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
  return buf;
}

std::span<const std::uint8_t> as_bytes(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

bool looks_like_tiff(const std::string& s) {
  return s.size() >= 4 && ((s[0] == 'I' && s[1] == 'I' && s[2] == 42 && s[3] == 0) ||
                           (s[0] == 'M' && s[1] == 'M' && s[2] == 0 && s[3] == 42));
}

LevelMask decode_tiff_mask(const std::string& bytes, int levels, Extent extent, const fs::path& work_dir) {
  // OpenCV reads multi-page TIFF from files only.
  const fs::path tmp = work_dir / ("mask-" + random_suffix() + ".tiff");
  write_file(tmp, as_bytes(bytes));
  try {
    auto m = load_mask(tmp.string(), levels, extent);
    fs::remove(tmp);
    return m;
  } catch (...) {
    fs::remove(tmp);
    throw;
  }
}

}  // namespace

struct ServiceRoutes {
  static void styles(EditService& s, const httplib::Request&, httplib::Response& res) {
    json arr = json::array();
    for (const auto& [id, st] : s.styles_) {
      json entry = {{"id", id}};
      for (const char* k : {"style_name", "training_resolution", "trained_factors"})
        if (st.meta.contains(k)) entry[k] = st.meta[k];
      entry["has_style_image"] = st.model->meta().style_image.has_value();
      arr.push_back(entry);
    }
    send_json(res, 200, {{"styles", arr}});
  }

  static void create_session(EditService& s, const httplib::Request& req, httplib::Response& res) {
    std::string bytes;
    if (req.is_multipart_form_data()) {
      if (!req.has_file("content")) fail(ErrorKind::input, "multipart upload needs a 'content' file");
      bytes = req.get_file_value("content").content;
    } else {
      bytes = req.body;
    }
    if (bytes.empty()) fail(ErrorKind::input, "empty upload");
    auto too_large = [&](Extent e) {
      const auto px = static_cast<std::size_t>(e.height) * static_cast<std::size_t>(e.width);
      if (px > s.config_.max_pixels) {
        send_json(res, 413, {{"error", "validation"},
                             {"message", "image has " + std::to_string(px) + " pixels, above the " +
                                             std::to_string(s.config_.max_pixels) + " pixel limit"},
                             {"violations", violations_json({{"content", "too many pixels"}})}});
        return true;
      }
      return false;
    };
    if (auto e = probe_png_extent(as_bytes(bytes)); e && too_large(*e)) return;
    ImagePlane img = decode_image(as_bytes(bytes));
    if (too_large(extent_of(img))) return;
    const int long_side = std::max(img.height, img.width);
    if (long_side > s.config_.preview_cap) {
      const double k = static_cast<double>(s.config_.preview_cap) / long_side;
      img = resize_image(img, std::max(1, static_cast<int>(std::lround(img.height * k))),
                         std::max(1, static_cast<int>(std::lround(img.width * k))));
    }
    if (img.height < kMinImageSide || img.width < kMinImageSide)
      fail(ErrorKind::input, "image must be at least 16x16 pixels");

    auto session = std::make_shared<EditSession>();
    session->content = std::move(img);
    session->content_hash = sha256_hex(session->content);
    session->created = session->updated = std::chrono::system_clock::now();
    {
      std::lock_guard lock(s.sessions_mu_);
      session->id = "s" + std::to_string(++s.session_counter_) + "-" + random_suffix().substr(0, 8);
      s.sessions_[session->id] = session;
    }
    send_json(res, 201, {{"session_id", session->id},
                         {"height", session->content.height},
                         {"width", session->content.width}});
  }

  static void get_session(EditService& s, const httplib::Request& req, httplib::Response& res) {
    auto ses = s.session(req.path_params.at("id"));
    std::lock_guard lock(ses->mu);
    json j = {{"session_id", ses->id},
              {"height", ses->content.height},
              {"width", ses->content.width},
              {"content_hash", ses->content_hash},
              {"lambda_s", ses->params.lambda_s},
              {"lambda_i", ses->params.lambda_i},
              {"tau", ses->params.tau},
              {"has_final", ses->final_render.has_value()}};
    j["style_id"] = ses->style_id ? json(*ses->style_id) : json(nullptr);
    j["levels"] = ses->levels_key ? json(ses->levels_key->levels) : json(nullptr);
    j["levels_fresh"] = ses->levels_key.has_value() && *ses->levels_key == current_key(*ses, ses->levels_key->levels);
    send_json(res, 200, j);
  }

  static LevelCacheKey current_key(const EditSession& ses, const std::vector<double>& levels) {
    return {ses.content_hash, ses.style_id.value_or(""), ses.params.lambda_i, ses.params.tau, levels};
  }

  static void stylize(EditService& s, const httplib::Request& req, httplib::Response& res) {
    auto ses = s.session(req.path_params.at("id"));
    const json body = parse_body(req);
    std::vector<Violation> bad;
    std::string style_id;
    if (auto it = body.find("style_id"); it != body.end() && it->is_string()) {
      style_id = it->get<std::string>();
    } else {
      bad.push_back({"style_id", "required string"});
    }
    const auto ls = number_field(body, "lambda_s", bad);
    const auto li = number_field(body, "lambda_i", bad);
    const auto tau = number_field(body, "tau", bad);
    const StrokeParams defaults;
    for (auto& v : StrokeParams::violations(ls.value_or(defaults.lambda_s), li.value_or(defaults.lambda_i),
                                            tau.value_or(defaults.tau)))
      bad.push_back(v);
    if (!bad.empty()) throw ValidationFailure{bad};
    const auto& st = s.style(style_id);
    const StrokeParams p =
        StrokeParams::make(ls.value_or(defaults.lambda_s), li.value_or(defaults.lambda_i), tau.value_or(defaults.tau));

    std::lock_guard lock(ses->mu);
    const ImagePlane out = snst::stylize(*st.model, ses->content, p);
    ses->style_id = style_id;
    ses->params = p;
    ses->updated = std::chrono::system_clock::now();
    send_png(res, out);
  }

  static void levels(EditService& s, const httplib::Request& req, httplib::Response& res) {
    auto ses = s.session(req.path_params.at("id"));
    const json body = parse_body(req);
    std::vector<Violation> bad;
    auto values = levels_field(body, bad);
    if (!values && bad.empty()) bad.push_back({"level_values", "required (the full level list)"});
    const auto li = number_field(body, "lambda_i", bad);
    const auto tau = number_field(body, "tau", bad);
    std::optional<std::string> style_id;
    if (auto it = body.find("style_id"); it != body.end() && !it->is_null()) {
      if (it->is_string()) {
        style_id = it->get<std::string>();
      } else {
        bad.push_back({"style_id", "must be a string"});
      }
    }
    std::lock_guard lock(ses->mu);
    if (!style_id) style_id = ses->style_id;
    if (!style_id && bad.empty()) bad.push_back({"style_id", "no style chosen for this session"});
    const double lambda_i = li.value_or(ses->params.lambda_i);
    const double t = tau.value_or(ses->params.tau);
    if (values)
      for (auto& v : validate_levels(*values)) bad.push_back(v);
    for (auto& v : validate_intensity(lambda_i)) bad.push_back(v);
    for (auto& v : validate_rotation(t)) bad.push_back(v);
    if (!bad.empty()) throw ValidationFailure{bad};
    const auto& st = s.style(*style_id);

    LevelSet set = precompute_levels(*st.model, ses->content, *values, lambda_i, t, s.config_.level_budget_bytes);
    ses->style_id = style_id;
    ses->params.lambda_i = lambda_i;
    ses->params.tau = normalize_angle(t);
    ses->levels = std::move(set);
    ses->levels_key = current_key(*ses, *values);
    ses->mask.reset();
    ses->updated = std::chrono::system_clock::now();

    json arr = json::array();
    for (std::size_t k = 0; k < values->size(); ++k)
      arr.push_back({{"index", k},
                     {"lambda_s", (*values)[k]},
                     {"url", "/sessions/" + ses->id + "/levels/" + std::to_string(k)}});
    send_json(res, 200, {{"levels", arr}, {"height", ses->content.height}, {"width", ses->content.width}});
  }

  static void level_image(EditService& s, const httplib::Request& req, httplib::Response& res) {
    auto ses = s.session(req.path_params.at("id"));
    std::lock_guard lock(ses->mu);
    if (!ses->levels) fail(ErrorKind::sequencing, "levels have not been precomputed for this session");
    std::size_t k = 0;
    try {
      k = std::stoul(req.path_params.at("k"));
    } catch (const std::exception&) {
      fail(ErrorKind::not_found, "no such level");
    }
    if (k >= ses->levels->previews.levels.size()) fail(ErrorKind::not_found, "no level " + std::to_string(k));
    send_png(res, ses->levels->previews.levels[k]);
  }

  static void blend(EditService& s, const httplib::Request& req, httplib::Response& res) {
    auto ses = s.session(req.path_params.at("id"));
    std::vector<Violation> bad;
    std::string mode_text;
    std::optional<double> li, tau, level;
    std::optional<std::vector<double>> values;
    const httplib::MultipartFormData* mask_file = nullptr;
    std::vector<httplib::MultipartFormData> planes;
    bool multipart = req.is_multipart_form_data();
    auto parse_num = [&](const std::string& name, const std::string& text) -> std::optional<double> {
      auto v = parse_number_list(text, name.c_str(), bad);
      if (v.size() != 1) {
        if (bad.empty()) bad.push_back({name, "must be a single number"});
        return std::nullopt;
      }
      return v.front();
    };
    if (multipart) {
      if (req.has_file("mode")) mode_text = req.get_file_value("mode").content;
      if (req.has_file("lambda_i")) li = parse_num("lambda_i", req.get_file_value("lambda_i").content);
      if (req.has_file("tau")) tau = parse_num("tau", req.get_file_value("tau").content);
      if (req.has_file("level")) level = parse_num("level", req.get_file_value("level").content);
      if (req.has_file("level_values"))
        values = parse_number_list(req.get_file_value("level_values").content, "level_values", bad);
      if (req.has_file("mask")) mask_file = &req.files.find("mask")->second;
      planes = req.get_file_values("plane");
    } else {
      const json body = parse_body(req);
      if (auto it = body.find("mode"); it != body.end() && it->is_string()) mode_text = it->get<std::string>();
      li = number_field(body, "lambda_i", bad);
      tau = number_field(body, "tau", bad);
      level = number_field(body, "level", bad);
      values = levels_field(body, bad);
    }
    BlendMode mode = BlendMode::preview;
    if (mode_text.empty()) {
      bad.push_back({"mode", "required: 'preview' or 'final'"});
    } else if (mode_text != "preview" && mode_text != "final") {
      bad.push_back({"mode", "must be 'preview' or 'final'"});
    } else {
      mode = parse_blend_mode(mode_text);
    }
    if (li)
      for (auto& v : validate_intensity(*li)) bad.push_back(v);
    if (tau)
      for (auto& v : validate_rotation(*tau)) bad.push_back(v);
    if (!bad.empty()) throw ValidationFailure{bad};

    std::lock_guard lock(ses->mu);
    if (li) ses->params.lambda_i = *li;
    if (tau) ses->params.tau = normalize_angle(*tau);
    if (!ses->levels || !ses->levels_key)
      fail(ErrorKind::sequencing, "levels have not been precomputed; call POST /sessions/{id}/levels first");
    const auto wanted = current_key(*ses, values.value_or(ses->levels_key->levels));
    if (!(wanted == *ses->levels_key))
      fail(ErrorKind::sequencing,
           "precomputed levels are stale (content, style, lambda_i, tau or level list changed); refresh /levels");

    const int L = static_cast<int>(ses->levels->previews.levels.size());
    const Extent extent = extent_of(ses->content);
    LevelMask mask;
    if (mask_file != nullptr) {
      mask = looks_like_tiff(mask_file->content)
                 ? decode_tiff_mask(mask_file->content, L, extent, s.config_.work_dir)
                 : decode_label_mask(as_bytes(mask_file->content), L, extent);
    } else if (!planes.empty()) {
      std::vector<std::vector<std::uint8_t>> raw;
      for (const auto& p : planes) raw.emplace_back(p.content.begin(), p.content.end());
      mask = decode_plane_masks(raw, L, extent);
    } else if (level) {
      const double k = *level;
      if (k != std::floor(k) || k < 0 || k >= L)
        throw ValidationFailure{{{"level", "must be an index below " + std::to_string(L)}}};
      mask = LevelMask::one_hot(L, extent.height, extent.width, static_cast<int>(k));
    } else if (ses->mask) {
      mask = *ses->mask;
    } else {
      throw ValidationFailure{{{"mask", "provide a mask file, plane files, or a level index"}}};
    }

    ImagePlane out = mode == BlendMode::preview ? blend_image_space(ses->levels->previews, mask)
                                                : blend_feature_space(*s.style(ses->levels_key->style_id).model,
                                                                      ses->levels->features, mask);
    if (mode == BlendMode::preview) {
      ses->levels->previews.blended = out;
    } else {
      ses->final_render = out;
    }
    ses->mask = std::move(mask);
    ses->updated = std::chrono::system_clock::now();
    send_png(res, out);
  }

  static void export_job(EditService& s, const httplib::Request& req, httplib::Response& res) {
    auto ses = s.session(req.path_params.at("id"));
    const json body = parse_body(req);
    std::vector<Violation> bad;
    const auto scale = number_field(body, "scale", bad);
    if (!scale && bad.empty()) bad.push_back({"scale", "required number >= 1"});
    std::string backend_text = "local";
    if (auto it = body.find("backend"); it != body.end()) {
      if (it->is_string() && (*it == "local" || *it == "remote")) {
        backend_text = it->get<std::string>();
      } else {
        bad.push_back({"backend", "must be 'local' or 'remote'"});
      }
    }
    std::lock_guard lock(ses->mu);
    if (scale)
      for (auto& v : validate_upsample(extent_of(ses->content), *scale)) bad.push_back(v);
    if (!bad.empty()) throw ValidationFailure{bad};
    if (!ses->final_render) fail(ErrorKind::sequencing, "no final render yet; blend with mode=final first");
    UpsampleRequest up;
    up.stylized = *ses->final_render;
    if (ses->levels_key) {
      const auto& model = *s.style(ses->levels_key->style_id).model;
      if (model.meta().style_image) up.style = *model.meta().style_image;
    }
    up.target_scale = *scale;
    const auto job = s.gateway_->submit(up, parse_backend(backend_text));
    send_json(res, 202, job_json(job));
  }

  static json job_json(const UpsampleJob& job) {
    json j = {{"job_id", job.job_id},
              {"state", to_string(job.state)},
              {"status_url", "/jobs/" + job.job_id}};
    if (job.state == JobState::done) {
      j["result_url"] = "/jobs/" + job.job_id + "/result";
      j["height"] = job.result_extent.height;
      j["width"] = job.result_extent.width;
    }
    if (job.state == JobState::failed) j["error"] = job.error;
    return j;
  }

  static void job_status(EditService& s, const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, job_json(s.gateway_->poll(req.path_params.at("id"))));
  }

  static void job_result(EditService& s, const httplib::Request& req, httplib::Response& res) {
    const auto bytes = s.gateway_->result_bytes(req.path_params.at("id"));
    res.status = 200;
    res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
  }

  static void stats(EditService& s, const httplib::Request&, httplib::Response& res) {
    std::size_t n = 0;
    {
      std::lock_guard lock(s.sessions_mu_);
      n = s.sessions_.size();
    }
    send_json(res, 200, {{"encoder_invocations", encoder_invocations()}, {"sessions", n}, {"styles", s.styles_.size()}});
  }
};

EditService::EditService(ServiceConfig config) : config_(std::move(config)) {
  std::error_code ec;
  if (!fs::is_directory(config_.models_dir, ec))
    fail(ErrorKind::configuration, "model directory '" + config_.models_dir.string() + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(config_.models_dir))
    if (e.is_regular_file() && e.path().extension() == ".ckpt") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    try {
      Style st;
      st.id = f.stem().string();
      st.meta = read_checkpoint_meta(f);
      st.model = std::make_shared<const StyleModel>(load_checkpoint(f));
      styles_.emplace(st.id, std::move(st));
    } catch (const Error& e) {
      std::cerr << "skipping model " << f << ": " << e.what() << '\n';
    }
  }
  if (config_.work_dir.empty()) config_.work_dir = fs::temp_directory_path() / ("snst-service-" + random_suffix());
  fs::create_directories(config_.work_dir);
  gateway_ = std::make_unique<UpsampleGateway>(
      UpsampleGateway::Options{config_.work_dir / "exports", config_.upsample_endpoint, 5});
}

EditService::~EditService() = default;

std::vector<std::string> EditService::style_ids() const {
  std::vector<std::string> ids;
  for (const auto& [id, st] : styles_) ids.push_back(id);
  return ids;
}

std::shared_ptr<EditSession> EditService::session(const std::string& id) {
  std::lock_guard lock(sessions_mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) fail(ErrorKind::not_found, "unknown session '" + id + "'");
  return it->second;
}

const EditService::Style& EditService::style(const std::string& id) const {
  auto it = styles_.find(id);
  if (it == styles_.end()) fail(ErrorKind::not_found, "unknown style '" + id + "'");
  return it->second;
}

void EditService::attach(httplib::Server& server) {
  using R = ServiceRoutes;
  auto bind = [this](void (*fn)(EditService&, const httplib::Request&, httplib::Response&)) {
    return guarded([this, fn](const httplib::Request& req, httplib::Response& res) { fn(*this, req, res); });
  };
  server.set_payload_max_length(std::size_t{512} << 20);
  server.Get("/styles", bind(&R::styles));
  server.Post("/sessions", bind(&R::create_session));
  server.Get("/sessions/:id", bind(&R::get_session));
  server.Post("/sessions/:id/stylize", bind(&R::stylize));
  server.Post("/sessions/:id/levels", bind(&R::levels));
  server.Get("/sessions/:id/levels/:k", bind(&R::level_image));
  server.Post("/sessions/:id/blend", bind(&R::blend));
  server.Post("/sessions/:id/export", bind(&R::export_job));
  server.Get("/jobs/:id", bind(&R::job_status));
  server.Get("/jobs/:id/result", bind(&R::job_result));
  server.Get("/stats", bind(&R::stats));
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send_error(res, res.status, res.status == 404 ? "not_found" : "http", "no such route");
  });
}

void EditService::listen(const std::string& host, int port) {
  httplib::Server server;
  attach(server);
  if (!server.listen(host, port))
    fail(ErrorKind::configuration, "cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace snst
