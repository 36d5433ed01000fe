#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dasecount/csi.hpp"

namespace dasecount::synth {

/// One propagation environment. Different scenario ids draw different
/// background multipath from `seed`; everything else is geometry and radio.
struct SceneConfig {
  std::string scenario_id = "roomA-LOS";
  int n_static_paths = 12;
  double los_gain = 1.0;
  double background_gain = 0.8;       // rms amplitude of all background paths together
  double room_delay_spread = 40e-9;   // seconds, mean excess delay
  double antenna_spacing = 0.0625;    // meters
  double carrier_freq = 2.437e9;      // Hz
  double bandwidth = 40e6;            // Hz
  int nsc = 114;
  int nr = 3;
  int nt = 2;
  double room_width = 8.0;   // meters, along the tx-rx axis
  double room_depth = 6.0;   // meters
  double snr_db = 30.0;
  double sample_rate = 100.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct CrowdMotionConfig {
  int scatterers_per_person = 4;
  double static_jitter_std = 0.02;  // meters per frame
  double walk_speed = 1.0;          // meters per second
  double mixed_moving_fraction = 0.5;
  double per_person_reflection_gain = 0.6;

  void validate() const;
};

struct ImpairmentConfig {
  bool common_phase_offset = true;
  double sto_slope_std = 0.02;  // radians per subcarrier

  void validate() const;
};

/// A time-invariant background path. Per-antenna delays add
/// (rx_offset * sin(aoa) + tx_offset * sin(aod)) / c to `delay`.
struct PathSpec {
  std::complex<double> gain;
  double delay = 0.0;
  double aod = 0.0;
  double aoa = 0.0;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline constexpr double kSpeedOfLight = 299792458.0;

/// Background paths drawn from scene.seed.
std::vector<PathSpec> draw_background(const SceneConfig& scene);
std::vector<Point> tx_positions(const SceneConfig& scene);
std::vector<Point> rx_positions(const SceneConfig& scene);
/// Antenna offset along the array axis, centred on the array.
double element_offset(int index, int count, double spacing);
double subcarrier_freq(const SceneConfig& scene, int j);

CsiRecording generate_recording(const SceneConfig& scene, const CrowdMotionConfig& motion,
                                MotionType motion_type, int crowd_count, int duration_frames,
                                std::uint64_t seed, const ImpairmentConfig& impairments = {});

struct DatasetGenConfig {
  std::vector<SceneConfig> scenarios;
  std::vector<MotionType> motions = {MotionType::Static, MotionType::Dynamic, MotionType::Mixed};
  std::vector<int> counts = {0, 1, 2, 3, 4, 5, 6, 7, 8};
  int max_count = 8;
  int duration_frames = 3150;
  CrowdMotionConfig motion;
  ImpairmentConfig impairments;
  std::uint64_t base_seed = 0;

  void validate() const;
};

DatasetGenConfig dataset_config_from_json(const nlohmann::json& j);
nlohmann::json dataset_config_to_json(const DatasetGenConfig& cfg);

std::uint64_t category_seed(std::uint64_t base_seed, const std::string& scenario_id,
                            MotionType motion, int count);

/// Writes one CSIR1 file per (scenario, motion, count) plus manifest.json.
DatasetManifest generate_dataset(const DatasetGenConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace dasecount::synth
