#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dasecount {

enum class MotionType : std::uint8_t { Static = 0, Dynamic = 1, Mixed = 2 };

inline constexpr MotionType kAllMotions[] = {MotionType::Static, MotionType::Dynamic,
                                             MotionType::Mixed};

std::string_view to_string(MotionType m);
MotionType parse_motion(std::string_view s);

struct RecordingMeta {
  std::string scenario_id;
  MotionType motion_type = MotionType::Static;
  int crowd_count = 0;
  double sample_rate = 100.0;  // packets per second
  std::optional<std::uint64_t> seed;

  bool operator==(const RecordingMeta&) const = default;
};

/// Extents of a CSI tensor [T x Nr x Nt x Nsc].
struct CsiDims {
  int t = 0;
  int nr = 0;
  int nt = 0;
  int nsc = 0;

  std::size_t count() const {
    return static_cast<std::size_t>(t) * nr * nt * nsc;
  }
  bool operator==(const CsiDims&) const = default;
};

/// Raw complex CSI, row-major over [t][rx][tx][subcarrier].
struct CsiRecording {
  CsiDims dims;
  RecordingMeta meta;
  std::vector<std::complex<float>> data;

  static CsiRecording zeros(CsiDims dims, RecordingMeta meta);

  std::size_t index(int t, int rx, int tx, int sc) const {
    return ((static_cast<std::size_t>(t) * dims.nr + rx) * dims.nt + tx) * dims.nsc + sc;
  }
  std::complex<float>& at(int t, int rx, int tx, int sc) { return data[index(t, rx, tx, sc)]; }
  const std::complex<float>& at(int t, int rx, int tx, int sc) const {
    return data[index(t, rx, tx, sc)];
  }

  /// Throws ValidationError when extents or element count are inconsistent.
  void validate() const;

  /// Bitwise equality (distinguishes -0.0 and NaN payloads).
  bool bit_equal(const CsiRecording& other) const;
};

/// Size of the fixed CSIR1 header in bytes.
inline constexpr std::size_t kCsirHeaderBytes = 112;
inline constexpr std::size_t kMaxScenarioIdBytes = 64;

inline std::size_t csir_file_bytes(const CsiDims& d) { return kCsirHeaderBytes + 8 * d.count(); }

std::size_t save_recording(const CsiRecording& rec, const std::filesystem::path& path);
CsiRecording load_recording(const std::filesystem::path& path);
/// Reads only the header of a CSIR1 file.
std::pair<CsiDims, RecordingMeta> read_recording_header(const std::filesystem::path& path);

struct ManifestEntry {
  std::string path;  // relative to the dataset directory
  RecordingMeta meta;
  CsiDims dims;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  int format_version = 1;
  std::vector<ManifestEntry> recordings;
  /// Non-fatal findings from validation, e.g. per-file metadata conflicts.
  std::vector<std::string> warnings;
};

inline constexpr const char* kManifestFile = "manifest.json";

/// Loads and eagerly validates dir/manifest.json.
DatasetManifest load_manifest(const std::filesystem::path& dir);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& dir);

/// Loads one manifest entry; manifest metadata wins over the file header.
CsiRecording load_entry(const std::filesystem::path& dir, const ManifestEntry& entry);

}  // namespace dasecount
