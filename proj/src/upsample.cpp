#include "snst/upsample.hpp"

#include <httplib.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <opencv2/imgproc.hpp>
#include <random>
#include <thread>

#include "snst/json.hpp"

namespace snst {

namespace fs = std::filesystem;

const char* to_string(JobState s) {
  switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
  }
  return "unknown";
}

JobState parse_job_state(const std::string& s) {
  if (s == "queued") return JobState::queued;
  if (s == "running") return JobState::running;
  if (s == "done") return JobState::done;
  if (s == "failed") return JobState::failed;
  fail(ErrorKind::transport, "upsample service reported unknown job state '" + s + "'");
}

Backend parse_backend(const std::string& s) {
  if (s == "local") return Backend::local;
  if (s == "remote") return Backend::remote;
  fail(ErrorKind::parameter, "backend must be 'local' or 'remote', got '" + s + "'");
}

Extent upsample_extent(Extent in, double scale) {
  return {static_cast<int>(std::lround(scale * in.height)), static_cast<int>(std::lround(scale * in.width))};
}

std::vector<Violation> validate_upsample(Extent in, double scale) {
  std::vector<Violation> v;
  if (!std::isfinite(scale) || scale < 1.0) {
    v.push_back({"scale", "must be at least 1"});
    return v;
  }
  const Extent out = upsample_extent(in, scale);
  if (std::max(out.height, out.width) > kMaxUpsampleSide)
    v.push_back({"scale", "output " + std::to_string(out.height) + "x" + std::to_string(out.width) +
                              " exceeds the " + std::to_string(kMaxUpsampleSide) + " pixel side limit"});
  return v;
}

namespace {

void require_valid(Extent in, double scale) {
  if (in.height < 1 || in.width < 1) fail(ErrorKind::input, "cannot upsample an empty image");
  if (auto v = validate_upsample(in, scale); !v.empty()) fail(ErrorKind::parameter, v.front().field + " " + v.front().message);
}

}  // namespace

ImagePlane upsample_local(const ImagePlane& image, double scale) {
  require_valid(extent_of(image), scale);
  if (scale == 1.0) return image;
  const Extent out = upsample_extent(extent_of(image), scale);
  const cv::Mat src(image.height, image.width, CV_32FC3, const_cast<float*>(image.rgb.data()));
  cv::Mat up;
  cv::resize(src, up, cv::Size(out.width, out.height), 0, 0, cv::INTER_CUBIC);

  // Sharpen against the luminance of the bicubic result: the high-pass of Y
  // is added back to every channel, restoring edge contrast lost to the
  // interpolation without shifting hue.
  cv::Mat lum(up.rows, up.cols, CV_32F);
  for (int y = 0; y < up.rows; ++y)
    for (int x = 0; x < up.cols; ++x) {
      const auto& p = up.at<cv::Vec3f>(y, x);
      lum.at<float>(y, x) = 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2];
    }
  cv::Mat blurred;
  const double sigma = 0.5 * scale;
  cv::GaussianBlur(lum, blurred, cv::Size(0, 0), sigma, sigma, cv::BORDER_REFLECT);
  constexpr float kAmount = 0.6f;
  ImagePlane result(out.height, out.width);
  for (int y = 0; y < up.rows; ++y)
    for (int x = 0; x < up.cols; ++x) {
      const float detail = kAmount * (lum.at<float>(y, x) - blurred.at<float>(y, x));
      const auto& p = up.at<cv::Vec3f>(y, x);
      for (int c = 0; c < 3; ++c) result.at(y, x, c) = std::clamp(p[c] + detail, 0.0f, 1.0f);
    }
  return result;
}

namespace {

struct EndpointUrl {
  std::string origin;  // scheme://host[:port]
  std::string base;    // path prefix without trailing slash
};

EndpointUrl split_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) fail(ErrorKind::configuration, "upsample endpoint '" + url + "' lacks a scheme");
  const auto path = url.find('/', scheme + 3);
  EndpointUrl e;
  e.origin = url.substr(0, path);
  e.base = path == std::string::npos ? "" : url.substr(path);
  while (!e.base.empty() && e.base.back() == '/') e.base.pop_back();
  return e;
}

httplib::Client make_client(const EndpointUrl& e, int timeout) {
  httplib::Client cli(e.origin);
  cli.set_connection_timeout(timeout, 0);
  cli.set_read_timeout(60, 0);
  return cli;
}

[[noreturn]] void transport_failure(const std::string& endpoint, const std::string& what) {
  fail(ErrorKind::transport, "upsample service at " + endpoint + " " + what +
                                 "; check that it is running and that " + kUpsampleEndpointEnv +
                                 " is correct, then retry");
}

nlohmann::json parse_json_body(const std::string& endpoint, const std::string& body) {
  try {
    return nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception&) {
    transport_failure(endpoint, "returned malformed JSON");
  }
}

}  // namespace

UpsampleGateway::UpsampleGateway(Options options) : options_(std::move(options)) {
  if (options_.work_dir.empty()) options_.work_dir = fs::temp_directory_path() / "snst-upsample";
  fs::create_directories(options_.work_dir);
}

std::optional<std::string> UpsampleGateway::endpoint() const {
  if (options_.endpoint && !options_.endpoint->empty()) return options_.endpoint;
  if (const char* env = std::getenv(kUpsampleEndpointEnv); env != nullptr && *env != '\0') return std::string(env);
  return std::nullopt;
}

std::string UpsampleGateway::next_id() {
  static thread_local std::mt19937_64 rng(std::random_device{}());
  char buf[40];
  std::snprintf(buf, sizeof buf, "job-%llu-%08llx", static_cast<unsigned long long>(++counter_),
                static_cast<unsigned long long>(rng() & 0xffffffffULL));
  return buf;
}

void UpsampleGateway::advance(Entry& e, JobState s) {
  if (static_cast<int>(s) <= static_cast<int>(e.job.state)) return;
  if (e.job.state == JobState::done || e.job.state == JobState::failed) return;
  e.job.state = s;
}

UpsampleJob UpsampleGateway::submit(const UpsampleRequest& request, Backend backend) {
  require_valid(extent_of(request.stylized), request.target_scale);
  std::optional<std::string> ep;
  if (backend == Backend::remote) {
    ep = endpoint();
    if (!ep) fail(ErrorKind::configuration, std::string("remote upsampling requires ") + kUpsampleEndpointEnv);
  }

  std::string id;
  {
    std::lock_guard lock(mu_);
    id = request.job_id.empty() ? next_id() : request.job_id;
    if (jobs_.count(id)) fail(ErrorKind::parameter, "job id '" + id + "' already exists");
    Entry e;
    e.job.job_id = id;
    e.backend = backend;
    jobs_[id] = e;
  }

  if (backend == Backend::local) {
    {
      std::lock_guard lock(mu_);
      advance(jobs_[id], JobState::running);
    }
    const fs::path out = options_.work_dir / (id + ".png");
    std::string error;
    Extent extent;
    try {
      const ImagePlane up = upsample_local(request.stylized, request.target_scale);
      extent = extent_of(up);
      save_png(up, out);
    } catch (const std::exception& ex) {
      error = ex.what();
    }
    std::lock_guard lock(mu_);
    auto& e = jobs_[id];
    if (error.empty()) {
      e.job.result_path = out;
      e.job.result_extent = extent;
      advance(e, JobState::done);
    } else {
      e.job.error = error;
      advance(e, JobState::failed);
    }
    return e.job;
  }

  const auto url = split_endpoint(*ep);
  auto cli = make_client(url, options_.connect_timeout_seconds);
  const auto stylized_png = encode_png(request.stylized);
  const auto style_png = request.style.empty() ? std::vector<std::uint8_t>{} : encode_png(request.style);
  httplib::MultipartFormDataItems items = {
      {"stylized", std::string(stylized_png.begin(), stylized_png.end()), "stylized.png", "image/png"},
      {"style", std::string(style_png.begin(), style_png.end()), "style.png", "image/png"},
      {"scale", nlohmann::json(request.target_scale).dump(), "", "text/plain"},
  };
  auto res = cli.Post(url.base + "/jobs", items);
  if (!res) {
    std::lock_guard lock(mu_);
    jobs_.erase(id);
    transport_failure(*ep, "is unreachable (" + httplib::to_string(res.error()) + ")");
  }
  if (res->status >= 300) {
    std::lock_guard lock(mu_);
    jobs_.erase(id);
    transport_failure(*ep, "rejected the job with HTTP " + std::to_string(res->status) + ": " + res->body);
  }
  const auto j = parse_json_body(*ep, res->body);
  std::lock_guard lock(mu_);
  auto& e = jobs_[id];
  e.remote_id = j.value("job_id", "");
  if (e.remote_id.empty()) transport_failure(*ep, "did not return a job id");
  e.job.result_extent = upsample_extent(extent_of(request.stylized), request.target_scale);
  advance(e, parse_job_state(j.value("state", "queued")));
  return e.job;
}

UpsampleJob UpsampleGateway::poll(const std::string& job_id) {
  Entry snapshot;
  {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(job_id);
    if (it == jobs_.end()) fail(ErrorKind::not_found, "unknown job '" + job_id + "'");
    snapshot = it->second;
  }
  if (snapshot.backend == Backend::local || snapshot.job.state == JobState::done ||
      snapshot.job.state == JobState::failed)
    return snapshot.job;

  const auto ep = endpoint();
  if (!ep) fail(ErrorKind::configuration, std::string("remote upsampling requires ") + kUpsampleEndpointEnv);
  const auto url = split_endpoint(*ep);
  auto cli = make_client(url, options_.connect_timeout_seconds);
  auto res = cli.Get(url.base + "/jobs/" + snapshot.remote_id);
  if (!res) transport_failure(*ep, "is unreachable (" + httplib::to_string(res.error()) + ")");
  if (res->status >= 300) transport_failure(*ep, "answered HTTP " + std::to_string(res->status));
  const auto j = parse_json_body(*ep, res->body);
  const JobState remote = parse_job_state(j.value("state", "queued"));

  fs::path result_path;
  std::string error = j.value("error", "");
  JobState next = remote;
  if (remote == JobState::done) {
    // Download once and keep the local copy.
    auto img = cli.Get(url.base + "/jobs/" + snapshot.remote_id + "/result");
    if (!img) transport_failure(*ep, "is unreachable (" + httplib::to_string(img.error()) + ")");
    if (img->status >= 300) transport_failure(*ep, "answered HTTP " + std::to_string(img->status) + " for the result");
    result_path = options_.work_dir / (job_id + ".png");
    const std::vector<std::uint8_t> bytes(img->body.begin(), img->body.end());
    try {
      const auto decoded = decode_image(bytes);
      write_file(result_path, bytes);
      snapshot.job.result_extent = extent_of(decoded);
    } catch (const Error& ex) {
      next = JobState::failed;
      error = std::string("unusable result: ") + ex.what();
    }
  }

  std::lock_guard lock(mu_);
  auto& e = jobs_[job_id];
  if (e.job.state == JobState::done || e.job.state == JobState::failed) return e.job;
  if (next == JobState::done) {
    e.job.result_path = result_path;
    e.job.result_extent = snapshot.job.result_extent;
  }
  if (next == JobState::failed) e.job.error = error.empty() ? "remote job failed" : error;
  advance(e, next);
  return e.job;
}

UpsampleJob UpsampleGateway::wait(const std::string& job_id, double timeout_seconds, double interval_seconds) {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_seconds);
  for (;;) {
    auto job = poll(job_id);
    if (job.state == JobState::done || job.state == JobState::failed) return job;
    if (std::chrono::steady_clock::now() >= deadline)
      fail(ErrorKind::transport, "upsample job " + job_id + " did not finish within " +
                                     std::to_string(static_cast<int>(timeout_seconds)) + " s; poll again later");
    std::this_thread::sleep_for(std::chrono::duration<double>(interval_seconds));
  }
}

std::vector<std::uint8_t> UpsampleGateway::result_bytes(const std::string& job_id) {
  const auto job = poll(job_id);
  if (job.state == JobState::failed) fail(ErrorKind::sequencing, "job " + job_id + " failed: " + job.error);
  if (job.state != JobState::done) fail(ErrorKind::sequencing, "job " + job_id + " is still " + to_string(job.state));
  return read_file(job.result_path);
}

}  // namespace snst
