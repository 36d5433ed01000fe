#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "dasecount/distill.hpp"
#include "dasecount/evalreport.hpp"
#include "dasecount/preprocess.hpp"
#include "dasecount/synth.hpp"
#include "dasecount/trainer.hpp"

namespace dasecount::cli {

struct Paths {
  std::string data = "data";
  std::string samples = "samples";
  std::string model = "model";
  std::string lineage = "lineage";
  std::string results = "results";
  std::string report = "report";
};

struct MetatestSection {
  std::vector<int> shots = {5, 1};
  int queries_per_class = 20;
  int repeats = 10;
  std::string tap = "cnn2";
  std::string modality = "both";
  fewshot::ClassifierConfig classifier;
  std::vector<std::string> baselines = {"direct-amp", "direct-phd", "raw-lr"};
  std::string tasks = "all";
  std::uint64_t seed = 0;

  eval::Protocol protocol(int shots) const;
};

struct ReportSection {
  bool csv = true;
  bool json = true;
};

/// Every module config keyed by section. Section seeds that the file
/// leaves unset are derived from the global seed.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string source = "roomA-LOS";
  std::string target = "roomB-NLOS";
  Paths paths;
  synth::DatasetGenConfig synth;
  prep::SegmentationConfig preprocess;
  nn::TrainConfig train;
  nn::DistillConfig distill;
  MetatestSection metatest;
  ReportSection report;

  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

/// Two scenarios sharing one room layout generator; used when the config
/// omits synth.scenarios.
std::vector<synth::SceneConfig> default_scenarios();

/// Parses a config file; the missing-file case reports "file not found".
nlohmann::json read_config_file(const std::filesystem::path& path);

/// Runs one subcommand. Returns the process exit code; errors go to `err`
/// as a single `ERROR: <category>: <detail>` line.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv);

}  // namespace dasecount::cli
