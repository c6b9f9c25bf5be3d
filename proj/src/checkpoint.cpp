#include "snst/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace snst {

static_assert(std::endian::native == std::endian::little, "checkpoint payload is little-endian float32");

const NamedArray* WeightContainer::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

const NamedArray& WeightContainer::require(const std::string& name) const {
  if (const NamedArray* a = find(name)) return *a;
  fail(ErrorKind::integrity, "checkpoint is missing array '" + name + "'");
}

namespace {

std::string hash_values(const std::vector<float>& v) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(v.data()), v.size() * sizeof(float)));
}

std::int64_t element_count(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

}  // namespace

void write_container(const WeightContainer& c, const std::filesystem::path& path) {
  nlohmann::json header;
  header["format"] = "snst-weights";
  header["version"] = kContainerVersion;
  header["meta"] = c.meta;
  header["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : c.arrays) {
    if (element_count(a.shape) != static_cast<std::int64_t>(a.values.size()))
      fail(ErrorKind::shape, "array '" + a.name + "' shape does not match its element count");
    header["arrays"].push_back({{"name", a.name},
                                {"shape", a.shape},
                                {"dtype", "float32"},
                                {"offset", offset},
                                {"length", a.values.size()},
                                {"sha256", hash_values(a.values)}});
    offset += a.values.size() * sizeof(float);
  }
  header["payload_bytes"] = offset;
  const std::string text = header.dump();

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write checkpoint " + tmp.string());
    const std::uint32_t version = kContainerVersion;
    const std::uint64_t hlen = text.size();
    out.write(kContainerMagic, sizeof(kContainerMagic));
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& a : c.arrays)
      out.write(reinterpret_cast<const char*>(a.values.data()), static_cast<std::streamsize>(a.values.size() * sizeof(float)));
    out.flush();
    if (!out) fail(ErrorKind::io, "short write to " + tmp.string() + " (disk full?)");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::io, "cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

namespace {

nlohmann::json read_header(std::ifstream& in, const std::filesystem::path& path, std::uint64_t file_size,
                           std::uint64_t& payload_start) {
  constexpr std::uint64_t kFixed = sizeof(kContainerMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (file_size < kFixed) fail(ErrorKind::integrity, path.string() + ": truncated header");
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t hlen = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in || std::memcmp(magic, kContainerMagic, sizeof(magic)) != 0)
    fail(ErrorKind::integrity, path.string() + ": not a weight container (bad magic)");
  if (version != kContainerVersion)
    fail(ErrorKind::integrity, path.string() + ": unsupported container version " + std::to_string(version));
  if (hlen > file_size - kFixed) fail(ErrorKind::integrity, path.string() + ": truncated header");
  std::string text(hlen, '\0');
  in.read(text.data(), static_cast<std::streamsize>(hlen));
  payload_start = kFixed + hlen;
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::integrity, path.string() + ": corrupt header: " + e.what());
  }
}

}  // namespace

WeightContainer read_container(const std::filesystem::path& path) {
  std::error_code ec;
  const auto file_size = std::filesystem::file_size(path, ec);
  if (ec) fail(ErrorKind::io, "cannot open checkpoint " + path.string() + ": " + ec.message());
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open checkpoint " + path.string());
  std::uint64_t payload_start = 0;
  const nlohmann::json header = read_header(in, path, file_size, payload_start);

  WeightContainer c;
  try {
    const std::uint64_t payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
    if (file_size - payload_start != payload_bytes)
      fail(ErrorKind::integrity, path.string() + ": payload is " + std::to_string(file_size - payload_start) +
                                     " bytes, manifest declares " + std::to_string(payload_bytes));
    c.meta = header.value("meta", nlohmann::json::object());
    for (const auto& entry : header.at("arrays")) {
      NamedArray a;
      a.name = entry.at("name").get<std::string>();
      a.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto length = entry.at("length").get<std::uint64_t>();
      if (static_cast<std::int64_t>(length) != element_count(a.shape) ||
          offset + length * sizeof(float) > payload_bytes)
        fail(ErrorKind::integrity, path.string() + ": manifest entry '" + a.name + "' is inconsistent");
      a.values.resize(length);
      in.seekg(static_cast<std::streamoff>(payload_start + offset));
      in.read(reinterpret_cast<char*>(a.values.data()), static_cast<std::streamsize>(length * sizeof(float)));
      if (!in) fail(ErrorKind::integrity, path.string() + ": truncated payload in '" + a.name + "'");
      if (hash_values(a.values) != entry.at("sha256").get<std::string>())
        fail(ErrorKind::integrity, path.string() + ": hash mismatch in array '" + a.name + "'");
      c.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::integrity, path.string() + ": malformed manifest: " + e.what());
  }
  return c;
}

nlohmann::json read_checkpoint_meta(const std::filesystem::path& path) {
  std::error_code ec;
  const auto file_size = std::filesystem::file_size(path, ec);
  if (ec) fail(ErrorKind::io, "cannot open checkpoint " + path.string());
  std::ifstream in(path, std::ios::binary);
  std::uint64_t payload_start = 0;
  return read_header(in, path, file_size, payload_start).value("meta", nlohmann::json::object());
}

void save_checkpoint(const StyleModel& model, const std::filesystem::path& path) {
  WeightContainer c;
  const auto& map = model.layers();
  const auto& w = model.weights();
  const auto& meta = model.meta();
  nlohmann::json cin = nlohmann::json::array();
  for (const auto& l : map.cin_layers) cin.push_back({{"name", l.name}, {"channels", l.channels}});
  c.meta = {{"kind", "style-model"},
            {"arch", model.arch()},
            {"style_name", meta.style_name},
            {"training_resolution", meta.training_resolution},
            {"trained_factors", meta.trained_factors},
            {"training", meta.training},
            {"cin_layers", cin}};
  for (std::size_t i = 0; i < map.convs.size(); ++i) {
    const auto& s = map.convs[i];
    c.arrays.push_back({s.name + ".weight", {s.out, s.in, s.kernel, s.kernel}, w.convs[i].weight});
    c.arrays.push_back({s.name + ".bias", {s.out}, w.convs[i].bias});
  }
  const auto p = static_cast<std::int64_t>(map.cin_param_count);
  c.arrays.push_back({"regressor.weight", {p}, w.regressor.weight});
  c.arrays.push_back({"regressor.bias", {p}, w.regressor.bias});
  if (meta.style_image)
    c.arrays.push_back({"style.image", {meta.style_image->height, meta.style_image->width, 3}, meta.style_image->rgb});
  write_container(c, path);
}

StyleModel load_checkpoint(const std::filesystem::path& path) {
  const WeightContainer c = read_container(path);
  if (c.meta.value("kind", "") != "style-model")
    fail(ErrorKind::configuration, path.string() + " is not a style model checkpoint");
  GeneratorWeights<float> w;
  ModelMeta meta;
  try {
    w.arch = c.meta.at("arch").get<ArchConfig>();
    meta.style_name = c.meta.value("style_name", "");
    meta.training_resolution = c.meta.value("training_resolution", 0);
    meta.trained_factors = c.meta.value("trained_factors", std::vector<double>{});
    meta.training = c.meta.value("training", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::integrity, path.string() + ": malformed metadata: " + e.what());
  }
  const LayerMap map = LayerMap::build(w.arch);
  for (const auto& s : map.convs) {
    ConvWeights<float> conv(s.in, s.out, s.kernel, s.stride);
    const auto& wa = c.require(s.name + ".weight");
    const auto& ba = c.require(s.name + ".bias");
    if (wa.values.size() != conv.weight.size() || ba.values.size() != conv.bias.size())
      fail(ErrorKind::configuration, path.string() + ": array " + s.name + " does not match the architecture");
    conv.weight = wa.values;
    conv.bias = ba.values;
    w.convs.push_back(std::move(conv));
  }
  w.regressor.weight = c.require("regressor.weight").values;
  w.regressor.bias = c.require("regressor.bias").values;
  if (const NamedArray* img = c.find("style.image"); img && img->shape.size() == 3 && img->shape[2] == 3) {
    ImagePlane style(static_cast<int>(img->shape[0]), static_cast<int>(img->shape[1]));
    style.rgb = img->values;
    meta.style_image = std::move(style);
  }
  return StyleModel(std::move(w), std::move(meta));
}

}  // namespace snst
