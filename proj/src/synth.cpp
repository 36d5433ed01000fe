#include "dasecount/synth.hpp"

#include <cmath>
#include <numbers>
#include <set>

#include "dasecount/error.hpp"
#include "dasecount/json_util.hpp"
#include "dasecount/parallel.hpp"
#include "dasecount/rng.hpp"

namespace dasecount::synth {

namespace fs = std::filesystem;
using cd = std::complex<double>;

void SceneConfig::validate() const {
  if (n_static_paths < 1) throw ValidationError(scenario_id + ": n_static_paths must be >= 1");
  if (nsc < 1) throw ValidationError(scenario_id + ": nsc must be >= 1");
  if (nr < 2) throw ValidationError(scenario_id + ": nr must be >= 2");
  if (nt < 1) throw ValidationError(scenario_id + ": nt must be >= 1");
  if (std::isnan(snr_db) || snr_db == -INFINITY) throw ValidationError(scenario_id + ": snr_db must be finite or +inf");
  if (los_gain < 0 || background_gain < 0) throw ValidationError(scenario_id + ": gains must be nonnegative");
  if (!(room_delay_spread > 0)) throw ValidationError(scenario_id + ": room_delay_spread must be > 0");
  if (!(room_width > 1.0) || !(room_depth > 1.0)) throw ValidationError(scenario_id + ": room must exceed 1 m per side");
  if (!(sample_rate > 0) || !(carrier_freq > 0) || !(bandwidth > 0))
    throw ValidationError(scenario_id + ": sample_rate, carrier_freq and bandwidth must be > 0");
  if (scenario_id.empty() || scenario_id.size() > kMaxScenarioIdBytes)
    throw ValidationError("scenario_id must have 1..64 bytes");
}

void CrowdMotionConfig::validate() const {
  if (scatterers_per_person < 1) throw ValidationError("scatterers_per_person must be >= 1");
  if (!(mixed_moving_fraction >= 0 && mixed_moving_fraction <= 1))
    throw ValidationError("mixed_moving_fraction must lie in [0, 1]");
  if (static_jitter_std < 0 || walk_speed < 0) throw ValidationError("motion magnitudes must be nonnegative");
}

void ImpairmentConfig::validate() const {
  if (!(sto_slope_std >= 0)) throw ValidationError("sto_slope_std must be >= 0");
}

double element_offset(int index, int count, double spacing) {
  return (index - (count - 1) / 2.0) * spacing;
}

std::vector<Point> tx_positions(const SceneConfig& s) {
  std::vector<Point> p;
  for (int k = 0; k < s.nt; ++k) p.push_back({0.5, s.room_depth / 2 + element_offset(k, s.nt, s.antenna_spacing)});
  return p;
}

std::vector<Point> rx_positions(const SceneConfig& s) {
  std::vector<Point> p;
  for (int r = 0; r < s.nr; ++r)
    p.push_back({s.room_width - 0.5, s.room_depth / 2 + element_offset(r, s.nr, s.antenna_spacing)});
  return p;
}

double subcarrier_freq(const SceneConfig& s, int j) {
  return s.carrier_freq + (j - (s.nsc - 1) / 2.0) * s.bandwidth / s.nsc;
}

std::vector<PathSpec> draw_background(const SceneConfig& s) {
  Rng rng(derive_seed(s.seed, "background"));
  std::exponential_distribution<double> excess(1.0 / s.room_delay_spread);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> angle(-std::numbers::pi / 2, std::numbers::pi / 2);
  const double base = (s.room_width - 1.0) / kSpeedOfLight;

  std::vector<PathSpec> paths(s.n_static_paths);
  double power = 0.0;
  for (auto& p : paths) {
    double ex = excess(rng);
    double scale = std::exp(-ex / (2 * s.room_delay_spread));
    p.gain = cd(gauss(rng), gauss(rng)) * scale;
    p.delay = base + ex;
    p.aod = angle(rng);
    p.aoa = angle(rng);
    power += std::norm(p.gain);
  }
  if (power > 0) {
    double k = s.background_gain / std::sqrt(power);
    for (auto& p : paths) p.gain *= k;
  }
  return paths;
}

namespace {

double dist(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

// Adds amp * exp(-i 2 pi f_j delay) for every subcarrier j.
void add_path(cd* h, const SceneConfig& s, cd amp, double delay) {
  const double df = s.bandwidth / s.nsc;
  cd term = amp * std::polar(1.0, -2 * std::numbers::pi * subcarrier_freq(s, 0) * delay);
  const cd step = std::polar(1.0, -2 * std::numbers::pi * df * delay);
  for (int j = 0; j < s.nsc; ++j) {
    h[j] += term;
    term *= step;
  }
}

struct Person {
  Point center;
  double heading = 0.0;
  bool moving = false;
  std::vector<Point> offsets;
  std::vector<cd> coeffs;
};

}  // namespace

CsiRecording generate_recording(const SceneConfig& scene, const CrowdMotionConfig& motion,
                                MotionType motion_type, int crowd_count, int duration_frames,
                                std::uint64_t seed, const ImpairmentConfig& impairments) {
  scene.validate();
  motion.validate();
  impairments.validate();
  if (crowd_count < 0) throw ValidationError("crowd_count must be >= 0");
  if (duration_frames < 1) throw ValidationError("duration_frames must be >= 1");

  const int nr = scene.nr, nt = scene.nt, nsc = scene.nsc;
  const std::size_t frame_len = static_cast<std::size_t>(nr) * nt * nsc;
  const auto txs = tx_positions(scene);
  const auto rxs = rx_positions(scene);

  // Time-invariant part: background multipath plus the direct path.
  std::vector<cd> still(frame_len, cd{});
  for (const auto& p : draw_background(scene)) {
    for (int r = 0; r < nr; ++r)
      for (int k = 0; k < nt; ++k) {
        double d = p.delay + (element_offset(r, nr, scene.antenna_spacing) * std::sin(p.aoa) +
                              element_offset(k, nt, scene.antenna_spacing) * std::sin(p.aod)) /
                                 kSpeedOfLight;
        add_path(&still[(r * nt + k) * nsc], scene, p.gain, d);
      }
  }
  if (scene.los_gain > 0) {
    for (int r = 0; r < nr; ++r)
      for (int k = 0; k < nt; ++k)
        add_path(&still[(r * nt + k) * nsc], scene, scene.los_gain, dist(txs[k], rxs[r]) / kSpeedOfLight);
  }

  // Crowd.
  Rng prng(derive_seed(seed, "persons"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double margin = 0.5;
  std::vector<Person> crowd(crowd_count);
  for (auto& person : crowd) {
    person.center = {margin + unit(prng) * (scene.room_width - 2 * margin),
                     margin + unit(prng) * (scene.room_depth - 2 * margin)};
    person.heading = 2 * std::numbers::pi * unit(prng);
    double coin = unit(prng);
    person.moving = motion_type == MotionType::Dynamic ||
                    (motion_type == MotionType::Mixed && coin < motion.mixed_moving_fraction);
    for (int s = 0; s < motion.scatterers_per_person; ++s) {
      person.offsets.push_back({0.15 * gauss(prng), 0.15 * gauss(prng)});
      person.coeffs.push_back(std::polar(1.0, 2 * std::numbers::pi * unit(prng)));
    }
  }
  const double d_ref = dist(txs[0], rxs[0]);
  const double scat_gain = motion.per_person_reflection_gain / std::sqrt(motion.scatterers_per_person);
  const double step_len = motion.walk_speed / scene.sample_rate;

  std::vector<cd> h(static_cast<std::size_t>(duration_frames) * frame_len);
  for (int t = 0; t < duration_frames; ++t) {
    cd* frame = &h[t * frame_len];
    std::copy(still.begin(), still.end(), frame);
    for (auto& person : crowd) {
      if (person.moving && t > 0) {
        person.heading += 0.3 * gauss(prng);
        Point& c = person.center;
        c.x += step_len * std::cos(person.heading);
        c.y += step_len * std::sin(person.heading);
        if (c.x < margin) { c.x = 2 * margin - c.x; person.heading = std::numbers::pi - person.heading; }
        if (c.x > scene.room_width - margin) { c.x = 2 * (scene.room_width - margin) - c.x; person.heading = std::numbers::pi - person.heading; }
        if (c.y < margin) { c.y = 2 * margin - c.y; person.heading = -person.heading; }
        if (c.y > scene.room_depth - margin) { c.y = 2 * (scene.room_depth - margin) - c.y; person.heading = -person.heading; }
      }
      for (std::size_t s = 0; s < person.offsets.size(); ++s) {
        Point p{person.center.x + person.offsets[s].x, person.center.y + person.offsets[s].y};
        if (!person.moving) {
          p.x += motion.static_jitter_std * gauss(prng);
          p.y += motion.static_jitter_std * gauss(prng);
        }
        for (int r = 0; r < nr; ++r)
          for (int k = 0; k < nt; ++k) {
            double len = dist(txs[k], p) + dist(p, rxs[r]);
            add_path(&frame[(r * nt + k) * nsc], scene, person.coeffs[s] * (scat_gain * d_ref / len),
                     len / kSpeedOfLight);
          }
      }
    }
  }

  // Receiver noise at the requested SNR relative to the noiseless tensor.
  if (std::isfinite(scene.snr_db)) {
    double power = 0.0;
    for (const auto& v : h) power += std::norm(v);
    power /= static_cast<double>(h.size());
    const double sigma = std::sqrt(power / std::pow(10.0, scene.snr_db / 10.0) / 2.0);
    Rng nrng(derive_seed(seed, "noise"));
    for (auto& v : h) {
      double re = gauss(nrng), im = gauss(nrng);
      v += cd(sigma * re, sigma * im);
    }
  }

  // Hardware impairments, each on its own stream so toggles do not shift others.
  if (impairments.common_phase_offset) {
    Rng crng(derive_seed(seed, "common-phase"));
    std::uniform_real_distribution<double> phase(-std::numbers::pi, std::numbers::pi);
    for (int t = 0; t < duration_frames; ++t)
      for (int k = 0; k < nt; ++k) {
        const cd rot = std::polar(1.0, phase(crng));
        for (int r = 0; r < nr; ++r) {
          cd* row = &h[t * frame_len + (r * nt + k) * nsc];
          for (int j = 0; j < nsc; ++j) row[j] *= rot;
        }
      }
  }
  if (impairments.sto_slope_std > 0) {
    Rng srng(derive_seed(seed, "sto"));
    std::normal_distribution<double> slope(0.0, impairments.sto_slope_std);
    for (int t = 0; t < duration_frames; ++t) {
      const double delta = slope(srng);
      for (std::size_t a = 0; a < static_cast<std::size_t>(nr * nt); ++a) {
        cd* row = &h[t * frame_len + a * nsc];
        for (int j = 0; j < nsc; ++j) row[j] *= std::polar(1.0, -delta * (j - (nsc - 1) / 2.0));
      }
    }
  }

  RecordingMeta meta{scene.scenario_id, motion_type, crowd_count, scene.sample_rate, seed};
  CsiRecording rec{{duration_frames, nr, nt, nsc}, std::move(meta), {}};
  rec.data.resize(h.size());
  for (std::size_t i = 0; i < h.size(); ++i)
    rec.data[i] = {static_cast<float>(h[i].real()), static_cast<float>(h[i].imag())};
  return rec;
}

void DatasetGenConfig::validate() const {
  std::set<std::string> ids;
  for (const auto& s : scenarios) {
    s.validate();
    if (!ids.insert(s.scenario_id).second) throw ValidationError("duplicate scenario '" + s.scenario_id + "'");
  }
  std::set<MotionType> ms(motions.begin(), motions.end());
  if (ms.size() != motions.size()) throw ValidationError("duplicate motion type in dataset config");
  std::set<int> cs(counts.begin(), counts.end());
  if (cs.size() != counts.size()) throw ValidationError("duplicate crowd count in dataset config");
  for (int c : counts)
    if (c < 0 || c > max_count)
      throw ValidationError("crowd count " + std::to_string(c) + " outside [0, " + std::to_string(max_count) + "]");
  if (duration_frames < 1) throw ValidationError("duration_frames must be >= 1");
  motion.validate();
  impairments.validate();
}

std::uint64_t category_seed(std::uint64_t base_seed, const std::string& scenario_id, MotionType motion,
                            int count) {
  return derive_seed(base_seed, {fnv1a(scenario_id), static_cast<std::uint64_t>(motion),
                                 static_cast<std::uint64_t>(count)});
}

namespace {

SceneConfig scene_from_json(const json& j) {
  SceneConfig s;
  StrictObject o(j, "scenario");
  o.get("scenario_id", s.scenario_id);
  o.get("n_static_paths", s.n_static_paths);
  o.get("los_gain", s.los_gain);
  o.get("background_gain", s.background_gain);
  o.get("room_delay_spread", s.room_delay_spread);
  o.get("antenna_spacing", s.antenna_spacing);
  o.get("carrier_freq", s.carrier_freq);
  o.get("bandwidth", s.bandwidth);
  o.get("nsc", s.nsc);
  o.get("nr", s.nr);
  o.get("nt", s.nt);
  o.get("room_width", s.room_width);
  o.get("room_depth", s.room_depth);
  if (o.has("snr_db") && j.at("snr_db").is_string()) {
    if (j.at("snr_db").get<std::string>() != "inf") throw ConfigError("scenario.snr_db: number or \"inf\"");
    s.snr_db = INFINITY;
    o.child("snr_db");
  } else {
    o.get("snr_db", s.snr_db);
  }
  o.get("sample_rate", s.sample_rate);
  o.get("seed", s.seed);
  o.finish();
  return s;
}

json scene_to_json(const SceneConfig& s) {
  return {{"scenario_id", s.scenario_id},
          {"n_static_paths", s.n_static_paths},
          {"los_gain", s.los_gain},
          {"background_gain", s.background_gain},
          {"room_delay_spread", s.room_delay_spread},
          {"antenna_spacing", s.antenna_spacing},
          {"carrier_freq", s.carrier_freq},
          {"bandwidth", s.bandwidth},
          {"nsc", s.nsc},
          {"nr", s.nr},
          {"nt", s.nt},
          {"room_width", s.room_width},
          {"room_depth", s.room_depth},
          {"snr_db", std::isfinite(s.snr_db) ? json(s.snr_db) : json("inf")},
          {"sample_rate", s.sample_rate},
          {"seed", s.seed}};
}

}  // namespace

DatasetGenConfig dataset_config_from_json(const json& j) {
  DatasetGenConfig cfg;
  StrictObject o(j, "synth");
  o.get("base_seed", cfg.base_seed);
  o.get("duration_frames", cfg.duration_frames);
  o.get("max_count", cfg.max_count);
  if (o.has("counts")) {
    o.get("counts", cfg.counts);
  } else {
    cfg.counts.clear();
    for (int c = 0; c <= cfg.max_count; ++c) cfg.counts.push_back(c);
  }
  if (o.has("motions")) {
    std::vector<std::string> names;
    o.get("motions", names);
    cfg.motions.clear();
    for (const auto& n : names) cfg.motions.push_back(parse_motion(n));
  }
  if (o.has("motion")) {
    StrictObject m(o.child("motion"), "synth.motion");
    m.get("scatterers_per_person", cfg.motion.scatterers_per_person);
    m.get("static_jitter_std", cfg.motion.static_jitter_std);
    m.get("walk_speed", cfg.motion.walk_speed);
    m.get("mixed_moving_fraction", cfg.motion.mixed_moving_fraction);
    m.get("per_person_reflection_gain", cfg.motion.per_person_reflection_gain);
    m.finish();
  }
  if (o.has("impairments")) {
    StrictObject m(o.child("impairments"), "synth.impairments");
    m.get("common_phase_offset", cfg.impairments.common_phase_offset);
    m.get("sto_slope_std", cfg.impairments.sto_slope_std);
    m.finish();
  }
  if (o.has("scenarios")) {
    for (const auto& sj : o.child("scenarios")) cfg.scenarios.push_back(scene_from_json(sj));
  }
  o.finish();
  try {
    cfg.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("synth: ") + e.what());
  }
  return cfg;
}

json dataset_config_to_json(const DatasetGenConfig& cfg) {
  json j;
  j["base_seed"] = cfg.base_seed;
  j["duration_frames"] = cfg.duration_frames;
  j["max_count"] = cfg.max_count;
  j["counts"] = cfg.counts;
  j["motions"] = json::array();
  for (auto m : cfg.motions) j["motions"].push_back(std::string(to_string(m)));
  j["motion"] = {{"scatterers_per_person", cfg.motion.scatterers_per_person},
                 {"static_jitter_std", cfg.motion.static_jitter_std},
                 {"walk_speed", cfg.motion.walk_speed},
                 {"mixed_moving_fraction", cfg.motion.mixed_moving_fraction},
                 {"per_person_reflection_gain", cfg.motion.per_person_reflection_gain}};
  j["impairments"] = {{"common_phase_offset", cfg.impairments.common_phase_offset},
                      {"sto_slope_std", cfg.impairments.sto_slope_std}};
  j["scenarios"] = json::array();
  for (const auto& s : cfg.scenarios) j["scenarios"].push_back(scene_to_json(s));
  return j;
}

DatasetManifest generate_dataset(const DatasetGenConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir)) throw IoError("cannot create " + out_dir.string());

  struct Job {
    const SceneConfig* scene;
    MotionType motion;
    int count;
  };
  std::vector<Job> jobs;
  for (const auto& s : cfg.scenarios)
    for (auto m : cfg.motions)
      for (int c : cfg.counts) jobs.push_back({&s, m, c});

  DatasetManifest manifest;
  manifest.recordings.resize(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t i) {
    const Job& job = jobs[i];
    const auto seed = category_seed(cfg.base_seed, job.scene->scenario_id, job.motion, job.count);
    CsiRecording rec = generate_recording(*job.scene, cfg.motion, job.motion, job.count,
                                          cfg.duration_frames, seed, cfg.impairments);
    std::string name = job.scene->scenario_id + "_" + std::string(to_string(job.motion)) + "_" +
                       std::to_string(job.count) + ".csir";
    save_recording(rec, out_dir / name);
    manifest.recordings[i] = {name, rec.meta, rec.dims};
  });
  save_manifest(manifest, out_dir);
  return manifest;
}

}  // namespace dasecount::synth
