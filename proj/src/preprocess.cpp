#include "dasecount/preprocess.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "dasecount/error.hpp"
#include "dasecount/json_util.hpp"
#include "dasecount/parallel.hpp"

namespace dasecount::prep {

namespace fs = std::filesystem;
constexpr double kPi = std::numbers::pi;

void SegmentationConfig::validate() const {
  if (ts < 1 || ts > tw)
    throw ConfigError("segmentation requires 1 <= ts <= tw (tw=" + std::to_string(tw) +
                      ", ts=" + std::to_string(ts) + ")");
}

std::size_t segment_count(int t, const SegmentationConfig& cfg) {
  if (t < cfg.tw) return 0;
  return static_cast<std::size_t>((t - cfg.tw) / cfg.ts) + 1;
}

std::string TaskId::str() const { return scenario_id + ":" + std::string(to_string(motion)); }

TaskId TaskId::parse(const std::string& s) {
  auto pos = s.rfind(':');
  if (pos == std::string::npos || pos == 0)
    throw ValidationError("task id must look like 'scenario:motion', got '" + s + "'");
  return {s.substr(0, pos), parse_motion(s.substr(pos + 1))};
}

std::size_t SampleStore::size() const {
  std::size_t n = 0;
  for (const auto& [id, v] : tasks) n += v.size();
  return n;
}

std::vector<const Sample*> SampleStore::scenario_samples(const std::string& scenario_id) const {
  std::vector<const Sample*> out;
  for (const auto& [id, v] : tasks)
    if (id.scenario_id == scenario_id)
      for (const auto& s : v) out.push_back(&s);
  return out;
}

std::vector<const Sample*> SampleStore::all_samples() const {
  std::vector<const Sample*> out;
  for (const auto& [id, v] : tasks)
    for (const auto& s : v) out.push_back(&s);
  return out;
}

const std::vector<Sample>& SampleStore::task(const TaskId& id) const {
  auto it = tasks.find(id);
  if (it == tasks.end()) throw ValidationError("unknown task '" + id.str() + "'");
  return it->second;
}

void SampleStore::validate() const {
  for (const auto& [id, v] : tasks)
    for (const auto& s : v)
      if (s.label < 0 || s.label >= num_classes)
        throw ValidationError("sample label " + std::to_string(s.label) + " in task " + id.str() +
                              " outside the class set");
}

std::vector<CsiRecording> segment(const CsiRecording& rec, const SegmentationConfig& cfg) {
  cfg.validate();
  if (rec.dims.t < cfg.tw)
    throw ValidationError("empty input: recording has " + std::to_string(rec.dims.t) +
                          " frames, fewer than the window length " + std::to_string(cfg.tw));
  const std::size_t n = segment_count(rec.dims.t, cfg);
  const std::size_t frame = static_cast<std::size_t>(rec.dims.nr) * rec.dims.nt * rec.dims.nsc;
  std::vector<CsiRecording> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    CsiDims d = rec.dims;
    d.t = cfg.tw;
    auto first = rec.data.begin() + static_cast<std::ptrdiff_t>(k * cfg.ts * frame);
    out.push_back({d, rec.meta, {first, first + static_cast<std::ptrdiff_t>(cfg.tw * frame)}});
  }
  return out;
}

namespace {

void require_finite(const CsiRecording& seg) {
  for (const auto& c : seg.data)
    if (!std::isfinite(c.real()) || !std::isfinite(c.imag()))
      throw ValidationError("non-finite CSI value in segment");
}

}  // namespace

Tensor3 amp_pipeline(const CsiRecording& seg) {
  const auto& d = seg.dims;
  Tensor3 out(d.nr * d.nt, d.t, d.nsc);
  require_finite(seg);
  const double n = static_cast<double>(d.t) * d.nsc;
  std::vector<double> mag(static_cast<std::size_t>(d.t) * d.nsc);
  for (int rx = 0; rx < d.nr; ++rx)
    for (int tx = 0; tx < d.nt; ++tx) {
      const int layer = rx * d.nt + tx;
      double sum = 0.0;
      for (int t = 0; t < d.t; ++t)
        for (int j = 0; j < d.nsc; ++j) {
          auto c = seg.at(t, rx, tx, j);
          double m = std::hypot(static_cast<double>(c.real()), static_cast<double>(c.imag()));
          mag[static_cast<std::size_t>(t) * d.nsc + j] = m;
          sum += m;
        }
      const double mean = sum / n;
      double ss = 0.0;
      for (double m : mag) ss += (m - mean) * (m - mean);
      const double denom = std::sqrt(ss / n) + kLayerNormEps;
      for (int t = 0; t < d.t; ++t)
        for (int j = 0; j < d.nsc; ++j)
          out.at(layer, t, j) = static_cast<float>((mag[static_cast<std::size_t>(t) * d.nsc + j] - mean) / denom);
    }
  return out;
}

void unwrap(std::span<double> phase) {
  double correction = 0.0;
  for (std::size_t j = 1; j < phase.size(); ++j) {
    // Compare raw neighbours; the accumulated correction applies to all later entries.
    const double raw_prev = phase[j - 1] - correction;
    const double step = phase[j] - raw_prev;
    if (std::abs(step) > kPi) correction -= 2 * kPi * std::round(step / (2 * kPi));
    phase[j] += correction;
  }
}

namespace {

double principal_arg(std::complex<float> c) {
  double a = std::atan2(static_cast<double>(c.imag()), static_cast<double>(c.real()));
  return a <= -kPi ? a + 2 * kPi : a;
}

}  // namespace

Tensor3 phd_pipeline(const CsiRecording& seg) {
  const auto& d = seg.dims;
  if (d.nr < 2) throw ConfigError("phase differencing needs at least 2 receive antennas");
  require_finite(seg);
  Tensor3 out(d.nt * (d.nr - 1), d.t, d.nsc);
  std::vector<double> un(static_cast<std::size_t>(d.nr) * d.nsc);
  for (int t = 0; t < d.t; ++t)
    for (int tx = 0; tx < d.nt; ++tx) {
      for (int rx = 0; rx < d.nr; ++rx) {
        std::span<double> row(&un[static_cast<std::size_t>(rx) * d.nsc], d.nsc);
        for (int j = 0; j < d.nsc; ++j) row[j] = principal_arg(seg.at(t, rx, tx, j));
        unwrap(row);
      }
      for (int r = 0; r + 1 < d.nr; ++r) {
        const double* hi = &un[static_cast<std::size_t>(r + 1) * d.nsc];
        const double* lo = &un[static_cast<std::size_t>(r) * d.nsc];
        const double first = hi[0] - lo[0];
        // Shift so that the first entry lands in (-pi, pi].
        double shift = -2 * kPi * std::ceil((first - kPi) / (2 * kPi));
        const int layer = tx * (d.nr - 1) + r;
        for (int j = 0; j < d.nsc; ++j) out.at(layer, t, j) = static_cast<float>(hi[j] - lo[j] + shift);
      }
    }
  return out;
}

Sample make_sample(const CsiRecording& window, std::string recording, int segment_index) {
  return {amp_pipeline(window), phd_pipeline(window), window.meta.crowd_count,
          {std::move(recording), segment_index}};
}

namespace {

void check_homogeneous(const std::vector<CsiDims>& dims, const std::vector<std::string>& names) {
  for (std::size_t i = 1; i < dims.size(); ++i)
    if (dims[i].nr != dims[0].nr || dims[i].nt != dims[0].nt || dims[i].nsc != dims[0].nsc)
      throw ValidationError("recording " + names[i] + " has antenna/subcarrier dims that differ from " +
                            names[0]);
}

SampleStore assemble(std::vector<std::vector<Sample>>& per_rec, const std::vector<RecordingMeta>& metas) {
  SampleStore store;
  int max_label = -1;
  for (std::size_t i = 0; i < per_rec.size(); ++i) {
    TaskId id{metas[i].scenario_id, metas[i].motion_type};
    auto& bucket = store.tasks[id];
    for (auto& s : per_rec[i]) {
      max_label = std::max(max_label, s.label);
      bucket.push_back(std::move(s));
    }
  }
  store.num_classes = max_label + 1;
  return store;
}

}  // namespace

SampleStore preprocess_recordings(const std::vector<CsiRecording>& recs, const std::vector<std::string>& names,
                                  const SegmentationConfig& cfg) {
  cfg.validate();
  if (names.size() != recs.size()) throw ValidationError("one name per recording required");
  std::vector<CsiDims> dims;
  std::vector<RecordingMeta> metas;
  for (const auto& r : recs) {
    r.validate();
    dims.push_back(r.dims);
    metas.push_back(r.meta);
  }
  check_homogeneous(dims, names);
  std::vector<std::vector<Sample>> per_rec(recs.size());
  parallel_for(recs.size(), [&](std::size_t i) {
    auto windows = segment(recs[i], cfg);
    for (std::size_t k = 0; k < windows.size(); ++k)
      per_rec[i].push_back(make_sample(windows[k], names[i], static_cast<int>(k)));
  });
  return assemble(per_rec, metas);
}

SampleStore preprocess_dataset(const fs::path& dir, const DatasetManifest& manifest, const SegmentationConfig& cfg) {
  cfg.validate();
  std::vector<CsiDims> dims;
  std::vector<std::string> names;
  std::vector<RecordingMeta> metas;
  for (const auto& e : manifest.recordings) {
    dims.push_back(e.dims);
    names.push_back(e.path);
    metas.push_back(e.meta);
  }
  check_homogeneous(dims, names);
  std::vector<std::vector<Sample>> per_rec(manifest.recordings.size());
  parallel_for(manifest.recordings.size(), [&](std::size_t i) {
    CsiRecording rec = load_entry(dir, manifest.recordings[i]);
    auto windows = segment(rec, cfg);
    for (std::size_t k = 0; k < windows.size(); ++k)
      per_rec[i].push_back(make_sample(windows[k], names[i], static_cast<int>(k)));
  });
  return assemble(per_rec, metas);
}

namespace {

constexpr char kSegMagic[5] = {'D', 'S', 'E', 'G', '1'};
constexpr std::size_t kSegHeader = 24;

void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
std::uint32_t get_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void write_blob(const Sample& s, const fs::path& path) {
  std::vector<unsigned char> b(kSegMagic, kSegMagic + 5);
  b.insert(b.end(), 3, 0);
  put_u32(b, s.amp.d0);
  put_u32(b, s.phd.d0);
  put_u32(b, s.amp.d1);
  put_u32(b, s.amp.d2);
  for (float f : s.amp.v) put_u32(b, std::bit_cast<std::uint32_t>(f));
  for (float f : s.phd.v) put_u32(b, std::bit_cast<std::uint32_t>(f));
  b.push_back(static_cast<unsigned char>(s.label));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Sample read_blob(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (b.size() < kSegHeader || std::memcmp(b.data(), kSegMagic, 5) != 0)
    throw FormatError("bad sample blob " + path.string());
  const int nrt = static_cast<int>(get_u32(&b[8])), npd = static_cast<int>(get_u32(&b[12]));
  const int tw = static_cast<int>(get_u32(&b[16])), nsc = static_cast<int>(get_u32(&b[20]));
  Sample s;
  s.amp = Tensor3(nrt, tw, nsc);
  s.phd = Tensor3(npd, tw, nsc);
  const std::size_t need = kSegHeader + 4 * (s.amp.v.size() + s.phd.v.size()) + 1;
  if (b.size() != need) throw CorruptionError("sample blob " + path.string() + " has wrong length");
  std::size_t off = kSegHeader;
  for (float& f : s.amp.v) { f = std::bit_cast<float>(get_u32(&b[off])); off += 4; }
  for (float& f : s.phd.v) { f = std::bit_cast<float>(get_u32(&b[off])); off += 4; }
  s.label = b[off];
  return s;
}

}  // namespace

void save_store(const SampleStore& store, const SegmentationConfig& cfg, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw IoError("cannot create " + dir.string());
  json j;
  j["format_version"] = 1;
  j["num_classes"] = store.num_classes;
  j["tw"] = cfg.tw;
  j["ts"] = cfg.ts;
  j["samples"] = json::array();
  std::vector<std::pair<const Sample*, std::string>> jobs;
  std::size_t index = 0;
  for (const auto& [id, v] : store.tasks)
    for (const auto& s : v) {
      char name[32];
      std::snprintf(name, sizeof name, "s%06zu.dseg", index++);
      j["samples"].push_back({{"file", name},
                              {"scenario_id", id.scenario_id},
                              {"motion_type", std::string(to_string(id.motion))},
                              {"label", s.label},
                              {"recording", s.source.recording},
                              {"segment", s.source.segment}});
      jobs.emplace_back(&s, name);
    }
  parallel_for(jobs.size(), [&](std::size_t i) { write_blob(*jobs[i].first, dir / jobs[i].second); });
  write_json_file(j, dir / kStoreIndex);
}

SampleStore load_store(const fs::path& dir) {
  json j = read_json_file(dir / kStoreIndex);
  SampleStore store;
  store.num_classes = j.at("num_classes").get<int>();
  const auto& entries = j.at("samples");
  std::vector<Sample> samples(entries.size());
  parallel_for(entries.size(), [&](std::size_t i) {
    samples[i] = read_blob(dir / entries[i].at("file").get<std::string>());
  });
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    Sample& s = samples[i];
    if (s.label != e.at("label").get<int>())
      throw CorruptionError("label mismatch for " + e.at("file").get<std::string>());
    s.source = {e.at("recording").get<std::string>(), e.at("segment").get<int>()};
    TaskId id{e.at("scenario_id").get<std::string>(), parse_motion(e.at("motion_type").get<std::string>())};
    store.tasks[id].push_back(std::move(s));
  }
  store.validate();
  return store;
}

}  // namespace dasecount::prep
