#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dasecount/csi.hpp"

namespace dasecount::prep {

struct SegmentationConfig {
  int tw = 200;  // window length, frames
  int ts = 50;   // stride, frames

  void validate() const;
};

/// Number of windows floor((T - Tw) / Ts) + 1, or 0 when T < Tw.
std::size_t segment_count(int t, const SegmentationConfig& cfg);

/// Dense real tensor, row-major [d0][d1][d2].
struct Tensor3 {
  int d0 = 0, d1 = 0, d2 = 0;
  std::vector<float> v;

  Tensor3() = default;
  Tensor3(int a, int b, int c) : d0(a), d1(b), d2(c), v(static_cast<std::size_t>(a) * b * c, 0.0f) {}
  float& at(int i, int j, int k) { return v[(static_cast<std::size_t>(i) * d1 + j) * d2 + k]; }
  float at(int i, int j, int k) const { return v[(static_cast<std::size_t>(i) * d1 + j) * d2 + k]; }
  std::span<const float> layer(int i) const {
    return {v.data() + static_cast<std::size_t>(i) * d1 * d2, static_cast<std::size_t>(d1) * d2};
  }
};

struct SampleSource {
  std::string recording;
  int segment = 0;
};

/// One labelled window: amplitude [Nr*Nt x Tw x Nsc] and phase difference
/// [Nt*(Nr-1) x Tw x Nsc].
struct Sample {
  Tensor3 amp;
  Tensor3 phd;
  int label = 0;
  SampleSource source;
};

struct TaskId {
  std::string scenario_id;
  MotionType motion = MotionType::Static;

  std::string str() const;  // "scenario:motion"
  static TaskId parse(const std::string& s);
  auto operator<=>(const TaskId&) const = default;
};

struct SampleStore {
  int num_classes = 0;  // labels are 0 .. num_classes-1
  std::map<TaskId, std::vector<Sample>> tasks;

  std::size_t size() const;
  /// All samples of one scenario across motion types, in task order.
  std::vector<const Sample*> scenario_samples(const std::string& scenario_id) const;
  std::vector<const Sample*> all_samples() const;
  const std::vector<Sample>& task(const TaskId& id) const;
  void validate() const;
};

/// Windows of `rec`; window k covers frames [k*Ts, k*Ts + Tw).
std::vector<CsiRecording> segment(const CsiRecording& rec, const SegmentationConfig& cfg);

/// Magnitude, rx-major layer order l = rx*Nt + tx, then per-layer
/// standardization (a - mean) / (std + 1e-5) with population std.
Tensor3 amp_pipeline(const CsiRecording& segment);

inline constexpr double kLayerNormEps = 1e-5;

/// In-place phase unwrap: steps larger than pi get the 2*pi multiple that
/// brings them back into [-pi, pi].
void unwrap(std::span<double> phase);

/// Per (frame, rx, tx) subcarrier-axis unwrap, then adjacent receive antenna
/// differences rx(r+1) - rx(r), tx-major layer order. Each difference row is
/// shifted by a multiple of 2*pi so its first subcarrier lies in (-pi, pi].
Tensor3 phd_pipeline(const CsiRecording& segment);

Sample make_sample(const CsiRecording& window, std::string recording, int segment_index);

/// Segments and transforms in-memory recordings.
SampleStore preprocess_recordings(const std::vector<CsiRecording>& recs,
                                  const std::vector<std::string>& names,
                                  const SegmentationConfig& cfg);

/// Loads every manifest entry from `dir` and preprocesses it.
SampleStore preprocess_dataset(const std::filesystem::path& dir, const DatasetManifest& manifest,
                               const SegmentationConfig& cfg);

inline constexpr const char* kStoreIndex = "store.json";

void save_store(const SampleStore& store, const SegmentationConfig& cfg,
                const std::filesystem::path& dir);
SampleStore load_store(const std::filesystem::path& dir);

}  // namespace dasecount::prep
