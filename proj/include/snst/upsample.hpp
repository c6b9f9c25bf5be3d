#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "snst/image.hpp"
#include "snst/network.hpp"

namespace snst {

inline constexpr int kMaxUpsampleSide = 8192;
inline constexpr const char* kUpsampleEndpointEnv = "UPSAMPLE_ENDPOINT";

struct UpsampleRequest {
  ImagePlane stylized;
  ImagePlane style;
  double target_scale = 1.0;
  std::string job_id;  // assigned by the gateway when empty
};

enum class JobState { queued, running, done, failed };
const char* to_string(JobState s);
JobState parse_job_state(const std::string& s);

struct UpsampleJob {
  std::string job_id;
  JobState state = JobState::queued;
  std::filesystem::path result_path;  // set when done
  std::string error;                  // set when failed
  Extent result_extent;
};

enum class Backend { local, remote };
Backend parse_backend(const std::string& s);

// round(scale · extent) per side.
Extent upsample_extent(Extent in, double scale);
std::vector<Violation> validate_upsample(Extent in, double scale);

// Bicubic upscale followed by unsharp sharpening driven by the upscaled
// luminance. Scale 1 returns the input unchanged.
ImagePlane upsample_local(const ImagePlane& image, double scale);

// Job registry in front of the local fallback and a remote upsampling
// service. Remote wire contract (see docs/api.md):
//   POST {endpoint}/jobs            multipart: stylized (PNG), style (PNG), scale
//                                   -> {"job_id": "...", "state": "queued"}
//   GET  {endpoint}/jobs/{id}       -> {"job_id", "state", "error"?}
//   GET  {endpoint}/jobs/{id}/result -> PNG
class UpsampleGateway {
 public:
  struct Options {
    std::filesystem::path work_dir;
    std::optional<std::string> endpoint;  // falls back to $UPSAMPLE_ENDPOINT
    int connect_timeout_seconds = 5;
  };

  explicit UpsampleGateway(Options options);

  UpsampleJob submit(const UpsampleRequest& request, Backend backend);
  // Unknown ids raise ErrorKind::not_found.
  UpsampleJob poll(const std::string& job_id);
  // Blocks until the job reaches a terminal state or the timeout elapses.
  UpsampleJob wait(const std::string& job_id, double timeout_seconds, double interval_seconds = 0.2);
  std::vector<std::uint8_t> result_bytes(const std::string& job_id);

  std::optional<std::string> endpoint() const;

 private:
  struct Entry {
    UpsampleJob job;
    Backend backend = Backend::local;
    std::string remote_id;
  };

  std::string next_id();
  void advance(Entry& e, JobState s);

  Options options_;
  std::mutex mu_;
  std::map<std::string, Entry> jobs_;
  std::uint64_t counter_ = 0;
};

}  // namespace snst
