#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "snst/edit.hpp"

namespace snst {

namespace fs = std::filesystem;

namespace {

cv::Mat to_gray8(const cv::Mat& m, const std::string& what) {
  if (m.empty()) fail(ErrorKind::input, "cannot decode mask " + what);
  if (m.depth() != CV_8U) fail(ErrorKind::input, "mask " + what + " must be 8-bit");
  if (m.channels() == 1) return m;
  // Colour masks are accepted only when all channels agree (grey PNG saved
  // as RGB); use the first channel.
  std::vector<cv::Mat> ch;
  cv::split(m, ch);
  return ch[0];
}

void require_extent(const cv::Mat& m, Extent extent, const std::string& what) {
  if (m.rows != extent.height || m.cols != extent.width)
    fail(ErrorKind::shape, "mask " + what + " is " + std::to_string(m.rows) + "x" + std::to_string(m.cols) +
                               ", expected " + std::to_string(extent.height) + "x" + std::to_string(extent.width));
}

LevelMask from_planes(const std::vector<cv::Mat>& planes, int levels, Extent extent) {
  if (static_cast<int>(planes.size()) != levels)
    fail(ErrorKind::shape, "mask has " + std::to_string(planes.size()) + " planes but " + std::to_string(levels) +
                               " levels were requested");
  LevelMask m(levels, extent.height, extent.width);
  for (int l = 0; l < levels; ++l) {
    const cv::Mat g = to_gray8(planes[l], "plane " + std::to_string(l));
    require_extent(g, extent, "plane " + std::to_string(l));
    for (int y = 0; y < g.rows; ++y)
      for (int x = 0; x < g.cols; ++x) m.at(l, y, x) = g.at<std::uint8_t>(y, x) / 255.0f;
  }
  m.normalize();
  return m;
}

LevelMask from_label_mat(const cv::Mat& raw, int levels, Extent extent) {
  const cv::Mat g = to_gray8(raw, "label map");
  require_extent(g, extent, "label map");
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(g.rows) * g.cols);
  for (int y = 0; y < g.rows; ++y)
    for (int x = 0; x < g.cols; ++x) labels[static_cast<std::size_t>(y) * g.cols + x] = g.at<std::uint8_t>(y, x);
  return LevelMask::from_labels(labels, levels, extent.height, extent.width);
}

cv::Mat read_gray(const fs::path& p) {
  if (!fs::exists(p)) fail(ErrorKind::io, "mask file '" + p.string() + "' does not exist");
  return cv::imread(p.string(), cv::IMREAD_UNCHANGED);
}

bool is_tiff(const fs::path& p) {
  const auto e = p.extension().string();
  return e == ".tif" || e == ".tiff" || e == ".TIF" || e == ".TIFF";
}

}  // namespace

LevelMask load_mask(const std::string& spec, int levels, Extent extent) {
  if (levels < 1) fail(ErrorKind::parameter, "at least one level is required");
  if (spec.find(',') != std::string::npos) {
    std::vector<cv::Mat> planes;
    std::size_t start = 0;
    while (start <= spec.size()) {
      const auto end = std::min(spec.find(',', start), spec.size());
      planes.push_back(read_gray(spec.substr(start, end - start)));
      start = end + 1;
    }
    return from_planes(planes, levels, extent);
  }
  const fs::path p(spec);
  if (is_tiff(p)) {
    if (!fs::exists(p)) fail(ErrorKind::io, "mask file '" + spec + "' does not exist");
    std::vector<cv::Mat> pages;
    if (!cv::imreadmulti(p.string(), pages, cv::IMREAD_UNCHANGED))
      fail(ErrorKind::input, "cannot decode TIFF mask '" + spec + "'");
    return from_planes(pages, levels, extent);
  }
  return from_label_mat(read_gray(p), levels, extent);
}

LevelMask decode_label_mask(std::span<const std::uint8_t> png, int levels, Extent extent) {
  const cv::Mat buf(1, static_cast<int>(png.size()), CV_8U, const_cast<std::uint8_t*>(png.data()));
  return from_label_mat(cv::imdecode(buf, cv::IMREAD_UNCHANGED), levels, extent);
}

LevelMask decode_plane_masks(const std::vector<std::vector<std::uint8_t>>& planes, int levels, Extent extent) {
  std::vector<cv::Mat> mats;
  for (const auto& p : planes) {
    const cv::Mat buf(1, static_cast<int>(p.size()), CV_8U, const_cast<std::uint8_t*>(p.data()));
    mats.push_back(cv::imdecode(buf, cv::IMREAD_UNCHANGED));
  }
  return from_planes(mats, levels, extent);
}

void save_label_mask(const std::vector<std::uint8_t>& labels, Extent extent, const fs::path& path) {
  if (labels.size() != static_cast<std::size_t>(extent.height) * extent.width)
    fail(ErrorKind::shape, "label count does not match the mask extent");
  cv::Mat m(extent.height, extent.width, CV_8U, const_cast<std::uint8_t*>(labels.data()));
  if (!cv::imwrite(path.string(), m)) fail(ErrorKind::io, "cannot write mask '" + path.string() + "'");
}

void save_plane_masks(const LevelMask& mask, const fs::path& tiff_path) {
  std::vector<cv::Mat> pages;
  for (int l = 0; l < mask.levels; ++l) {
    cv::Mat m(mask.height, mask.width, CV_8U);
    for (int y = 0; y < mask.height; ++y)
      for (int x = 0; x < mask.width; ++x)
        m.at<std::uint8_t>(y, x) = cv::saturate_cast<std::uint8_t>(mask.at(l, y, x) * 255.0f + 0.5f);
    pages.push_back(m);
  }
  if (!cv::imwritemulti(tiff_path.string(), pages)) fail(ErrorKind::io, "cannot write mask '" + tiff_path.string() + "'");
}

}  // namespace snst
