#include "dasecount/csi.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

#include "dasecount/error.hpp"

namespace dasecount {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(MotionType m) {
  switch (m) {
    case MotionType::Static: return "static";
    case MotionType::Dynamic: return "dynamic";
    case MotionType::Mixed: return "mixed";
  }
  return "unknown";
}

MotionType parse_motion(std::string_view s) {
  if (s == "static") return MotionType::Static;
  if (s == "dynamic") return MotionType::Dynamic;
  if (s == "mixed") return MotionType::Mixed;
  throw ValidationError("unknown motion type '" + std::string(s) + "'");
}

CsiRecording CsiRecording::zeros(CsiDims dims, RecordingMeta meta) {
  CsiRecording rec{dims, std::move(meta), {}};
  rec.data.assign(dims.count(), {0.0f, 0.0f});
  return rec;
}

void CsiRecording::validate() const {
  if (dims.t < 1 || dims.nr < 2 || dims.nt < 1 || dims.nsc < 1) {
    throw ValidationError("invalid CSI dims T=" + std::to_string(dims.t) +
                          " Nr=" + std::to_string(dims.nr) + " Nt=" + std::to_string(dims.nt) +
                          " Nsc=" + std::to_string(dims.nsc));
  }
  if (data.size() != dims.count()) {
    throw ValidationError("tensor holds " + std::to_string(data.size()) +
                          " entries but dims require " + std::to_string(dims.count()));
  }
  if (meta.crowd_count < 0) throw ValidationError("negative crowd_count");
  if (meta.scenario_id.size() > kMaxScenarioIdBytes)
    throw ValidationError("scenario_id longer than 64 bytes");
}

bool CsiRecording::bit_equal(const CsiRecording& other) const {
  return dims == other.dims && meta == other.meta && data.size() == other.data.size() &&
         std::memcmp(data.data(), other.data.data(), data.size() * sizeof(data[0])) == 0;
}

namespace {

// Little-endian field writers/readers over a byte buffer.
template <typename U>
void put_le(std::vector<unsigned char>& buf, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

constexpr std::array<char, 5> kMagic = {'C', 'S', 'I', 'R', '1'};

std::vector<unsigned char> encode_header(const CsiDims& d, const RecordingMeta& m) {
  std::vector<unsigned char> h;
  h.reserve(kCsirHeaderBytes);
  for (char c : kMagic) h.push_back(static_cast<unsigned char>(c));
  h.insert(h.end(), 3, 0);
  put_le<std::uint32_t>(h, d.t);
  put_le<std::uint32_t>(h, d.nr);
  put_le<std::uint32_t>(h, d.nt);
  put_le<std::uint32_t>(h, d.nsc);
  h.push_back(static_cast<unsigned char>(m.motion_type));
  h.push_back(m.seed ? 1 : 0);
  put_le<std::uint16_t>(h, 0);
  put_le<std::uint32_t>(h, static_cast<std::uint32_t>(m.crowd_count));
  put_le<std::uint64_t>(h, std::bit_cast<std::uint64_t>(m.sample_rate));
  put_le<std::uint64_t>(h, m.seed.value_or(0));
  std::size_t start = h.size();
  h.insert(h.end(), m.scenario_id.begin(), m.scenario_id.end());
  h.resize(start + kMaxScenarioIdBytes, 0);
  return h;
}

std::pair<CsiDims, RecordingMeta> decode_header(const unsigned char* h, const fs::path& path) {
  if (std::memcmp(h, kMagic.data(), kMagic.size()) != 0)
    throw FormatError("bad magic in " + path.string());
  CsiDims d;
  d.t = static_cast<int>(get_le<std::uint32_t>(h + 8));
  d.nr = static_cast<int>(get_le<std::uint32_t>(h + 12));
  d.nt = static_cast<int>(get_le<std::uint32_t>(h + 16));
  d.nsc = static_cast<int>(get_le<std::uint32_t>(h + 20));
  RecordingMeta m;
  if (h[24] > 2) throw FormatError("bad motion type in " + path.string());
  m.motion_type = static_cast<MotionType>(h[24]);
  bool has_seed = h[25] != 0;
  m.crowd_count = static_cast<int>(get_le<std::uint32_t>(h + 28));
  m.sample_rate = std::bit_cast<double>(get_le<std::uint64_t>(h + 32));
  if (has_seed) m.seed = get_le<std::uint64_t>(h + 40);
  const char* id = reinterpret_cast<const char*>(h + 48);
  m.scenario_id.assign(id, strnlen(id, kMaxScenarioIdBytes));
  return {d, m};
}

}  // namespace

std::size_t save_recording(const CsiRecording& rec, const fs::path& path) {
  rec.validate();
  std::vector<unsigned char> buf = encode_header(rec.dims, rec.meta);
  buf.reserve(csir_file_bytes(rec.dims));
  for (const auto& c : rec.data) {
    put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(c.real()));
    put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(c.imag()));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed for " + path.string());
  return buf.size();
}

std::pair<CsiDims, RecordingMeta> read_recording_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<unsigned char, kCsirHeaderBytes> h{};
  in.read(reinterpret_cast<char*>(h.data()), h.size());
  if (in.gcount() >= static_cast<std::streamsize>(kMagic.size()) &&
      std::memcmp(h.data(), kMagic.data(), kMagic.size()) != 0)
    throw FormatError("bad magic in " + path.string());
  if (in.gcount() != static_cast<std::streamsize>(h.size()))
    throw CorruptionError("truncated header in " + path.string());
  return decode_header(h.data(), path);
}

CsiRecording load_recording(const fs::path& path) {
  auto [dims, meta] = read_recording_header(path);
  std::error_code ec;
  auto size = fs::file_size(path, ec);
  if (ec) throw IoError("cannot stat " + path.string());
  const std::size_t payload = 8 * dims.count();
  if (size < kCsirHeaderBytes + payload)
    throw CorruptionError("truncated payload in " + path.string() + ": expected " +
                          std::to_string(payload) + " bytes, found " +
                          std::to_string(size - kCsirHeaderBytes));
  if (size > kCsirHeaderBytes + payload)
    throw CorruptionError("payload of " + path.string() + " exceeds the header dims product");

  std::ifstream in(path, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(kCsirHeaderBytes));
  std::vector<unsigned char> raw(payload);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(payload));
  if (in.gcount() != static_cast<std::streamsize>(payload))
    throw CorruptionError("short read in " + path.string());

  CsiRecording rec{dims, std::move(meta), std::vector<std::complex<float>>(dims.count())};
  for (std::size_t i = 0; i < rec.data.size(); ++i) {
    float re = std::bit_cast<float>(get_le<std::uint32_t>(&raw[8 * i]));
    float im = std::bit_cast<float>(get_le<std::uint32_t>(&raw[8 * i + 4]));
    rec.data[i] = {re, im};
  }
  rec.validate();
  return rec;
}

namespace {

json entry_to_json(const ManifestEntry& e) {
  json j;
  j["path"] = e.path;
  j["scenario_id"] = e.meta.scenario_id;
  j["motion_type"] = std::string(to_string(e.meta.motion_type));
  j["crowd_count"] = e.meta.crowd_count;
  j["sample_rate"] = e.meta.sample_rate;
  j["t"] = e.dims.t;
  j["nr"] = e.dims.nr;
  j["nt"] = e.dims.nt;
  j["nsc"] = e.dims.nsc;
  j["seed"] = e.meta.seed ? json(*e.meta.seed) : json(nullptr);
  return j;
}

ManifestEntry entry_from_json(const json& j) {
  static const std::set<std::string> keys = {"path", "scenario_id", "motion_type", "crowd_count",
                                             "sample_rate", "t", "nr", "nt", "nsc", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!keys.count(it.key())) throw ValidationError("unknown manifest key '" + it.key() + "'");
  ManifestEntry e;
  try {
    e.path = j.at("path").get<std::string>();
    e.meta.scenario_id = j.at("scenario_id").get<std::string>();
    e.meta.motion_type = parse_motion(j.at("motion_type").get<std::string>());
    e.meta.crowd_count = j.at("crowd_count").get<int>();
    e.meta.sample_rate = j.at("sample_rate").get<double>();
    e.dims = {j.at("t").get<int>(), j.at("nr").get<int>(), j.at("nt").get<int>(),
              j.at("nsc").get<int>()};
    if (j.contains("seed") && !j.at("seed").is_null()) e.meta.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& ex) {
    throw ValidationError("malformed manifest entry: " + std::string(ex.what()));
  }
  return e;
}

}  // namespace

void save_manifest(const DatasetManifest& manifest, const fs::path& dir) {
  json j;
  j["format_version"] = manifest.format_version;
  j["recordings"] = json::array();
  for (const auto& e : manifest.recordings) j["recordings"].push_back(entry_to_json(e));
  std::ofstream out(dir / kManifestFile, std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / kManifestFile).string());
  out << j.dump(2) << '\n';
}

DatasetManifest load_manifest(const fs::path& dir) {
  const fs::path file = dir / kManifestFile;
  std::ifstream in(file);
  if (!in) throw IoError("manifest not found: " + file.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& ex) {
    throw FormatError("cannot parse " + file.string() + ": " + ex.what());
  }
  DatasetManifest m;
  if (!j.is_object()) throw ValidationError("manifest must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "format_version" && it.key() != "recordings")
      throw ConfigError("manifest: unknown key '" + it.key() + "'");
  m.format_version = j.value("format_version", 1);
  if (!j.contains("recordings") || !j["recordings"].is_array())
    throw ValidationError("manifest lacks a recordings array");
  std::set<std::string> seen;
  for (const auto& rj : j["recordings"]) {
    ManifestEntry e = entry_from_json(rj);
    if (!seen.insert(e.path).second) throw ValidationError("duplicate path in manifest: " + e.path);
    if (e.dims.t < 1 || e.dims.nr < 2 || e.dims.nt < 1 || e.dims.nsc < 1)
      throw ValidationError("invalid dims for manifest entry: " + e.path);
    if (e.meta.crowd_count < 0) throw ValidationError("negative crowd_count for entry: " + e.path);
    const fs::path p = dir / e.path;
    std::error_code ec;
    if (!fs::is_regular_file(p, ec)) throw ValidationError("missing file for manifest entry: " + e.path);
    auto size = fs::file_size(p, ec);
    if (ec || size != csir_file_bytes(e.dims))
      throw ValidationError("size mismatch for manifest entry: " + e.path + " (expected payload " +
                            std::to_string(8 * e.dims.count()) + " bytes)");
    auto [fdims, fmeta] = read_recording_header(p);
    if (fdims != e.dims)
      throw ValidationError("header dims disagree with manifest for entry: " + e.path);
    if (fmeta != e.meta) m.warnings.push_back("metadata conflict for " + e.path + "; manifest wins");
    m.recordings.push_back(std::move(e));
  }
  return m;
}

CsiRecording load_entry(const fs::path& dir, const ManifestEntry& entry) {
  CsiRecording rec = load_recording(dir / entry.path);
  if (rec.dims != entry.dims)
    throw ValidationError("header dims disagree with manifest for entry: " + entry.path);
  rec.meta = entry.meta;
  return rec;
}

}  // namespace dasecount
