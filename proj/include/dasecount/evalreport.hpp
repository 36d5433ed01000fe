#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dasecount/fewshot.hpp"

namespace dasecount::eval {

struct Protocol {
  int shots = 5;
  int queries_per_class = 20;
  int repeats = 10;
  fewshot::FeatureSpec features;
  fewshot::ClassifierConfig classifier;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Per-repeat seed hash(protocol.seed, r).
std::uint64_t repeat_seed(std::uint64_t seed, int repeat);

struct TaskReport {
  std::string task_id;
  std::string motion_type;
  int shots = 0;
  std::string tap;
  std::string modality;
  std::string classifier;
  std::vector<double> accuracies;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // sample standard deviation over repeats (0 for one repeat)
  std::vector<std::vector<double>> confusion;  // row-stochastic mean over repeats
  nlohmann::json protocol;

  nlohmann::json to_json() const;
  static TaskReport from_json(const nlohmann::json& j);
};

/// Predicts query labels from support features; the query matrix carries
/// the true labels so test oracles can read them.
using EpisodePredictor =
    std::function<std::vector<int>(const fewshot::FeatureMatrix& support, const fewshot::FeatureMatrix& query)>;

/// Shared repeat loop over precomputed per-sample features of one task.
TaskReport run_protocol(const prep::SampleStore& store, const prep::TaskId& task, const Protocol& protocol,
                        const fewshot::FeatureMatrix& task_features, const EpisodePredictor& predictor,
                        const std::string& classifier_name);

TaskReport run_metatest(const nn::FeatureExtractor& fx, const prep::SampleStore& store, const prep::TaskId& task,
                        const Protocol& protocol);

/// The classifier that repeat `repeat` of run_metatest trains on its support set.
fewshot::Classifier fit_episode_classifier(const nn::FeatureExtractor& fx, const prep::SampleStore& store,
                                           const prep::TaskId& task, const Protocol& protocol, int repeat = 0);

enum class BaselineKind { DirectTransferAmp, DirectTransferPhd, RawLR, AmpOnly, PhdOnly };
std::string_view to_string(BaselineKind k);
BaselineKind parse_baseline(std::string_view s);

TaskReport run_baseline(BaselineKind kind, const nn::FeatureExtractor& fx, const prep::SampleStore& store,
                        const prep::TaskId& task, const Protocol& protocol);

struct ReportFormats {
  bool csv = true;
  bool json = true;
};

/// Sorted by task id, then shots, then tap, modality and classifier.
void sort_reports(std::vector<TaskReport>& reports);
std::string confusion_file_name(const TaskReport& r);

/// summary.csv, one confusion_*.csv per report and summary.json.
std::vector<std::filesystem::path> emit_report(std::vector<TaskReport> reports, const std::filesystem::path& out_dir,
                                               const ReportFormats& formats = {});

}  // namespace dasecount::eval
