#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dasecount/preprocess.hpp"
#include "dasecount/trainer.hpp"

namespace dasecount::fewshot {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Support and query members are indices into the task's sample list.
struct Episode {
  prep::TaskId task;
  std::uint64_t seed = 0;
  int shots = 0;
  std::vector<std::size_t> support;
  std::vector<std::size_t> query;
  std::vector<int> support_labels;
  std::vector<int> query_labels;
};

/// k support and q query samples per class, drawn without replacement.
Episode sample_episode(const prep::SampleStore& store, const prep::TaskId& task, int k, int q, std::uint64_t seed);

/// Feature source: a network tap, or "raw" (flattened preprocessed tensors).
struct FeatureSpec {
  bool raw = false;
  nn::Tap tap = nn::Tap::CNN2;
  nn::Modality modality = nn::Modality::Both;

  std::string tap_name() const { return raw ? "raw" : std::string(nn::to_string(tap)); }
};

struct FeatureMatrix {
  Matrix rows;
  std::vector<int> labels;
  FeatureSpec spec;
  int duplication_factor = 1;

  std::size_t n() const { return static_cast<std::size_t>(rows.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(rows.cols()); }
  /// Row count before duplication.
  std::size_t unique_rows() const { return n() / static_cast<std::size_t>(duplication_factor); }
};

/// Feature width for one sample shape.
std::size_t feature_dim(const nn::FeatureExtractor& fx, const FeatureSpec& spec);

/// One row per sample ([amp || phd] for Both), each repeated
/// duplication_factor times consecutively.
FeatureMatrix extract_features(const nn::FeatureExtractor& fx, nn::SampleRefs samples, const FeatureSpec& spec,
                               int duplication_factor = 1);
FeatureMatrix raw_features(nn::SampleRefs samples, nn::Modality modality, int duplication_factor = 1);

/// Rows `idx` of `source`, each repeated `duplication_factor` times.
FeatureMatrix take_rows(const FeatureMatrix& source, std::span<const std::size_t> idx, std::span<const int> labels,
                        int duplication_factor);

enum class ClassifierKind { LR, LinearSVM, NearestNeighbor };
std::string_view to_string(ClassifierKind k);
ClassifierKind parse_classifier(std::string_view s);

struct ClassifierConfig {
  ClassifierKind kind = ClassifierKind::LR;
  double learning_rate = 1.0;
  int max_iters = 1000;
  double grad_tol = 1e-6;
  double l2_strength = 1.0;
  int duplication_factor = 5;
  int k_neighbors = 1;
  bool standardize = false;
  bool backtracking = true;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static ClassifierConfig from_json(const nlohmann::json& j);
};

struct Classifier {
  ClassifierKind kind = ClassifierKind::LR;
  FeatureSpec spec;
  int num_classes = 0;
  std::size_t dim = 0;
  Matrix weights;           // [K x d] for LR / SVM
  Eigen::VectorXd bias;     // [K]
  Matrix stored;            // NN rows
  std::vector<int> stored_labels;
  int k_neighbors = 1;
  Eigen::RowVectorXd shift; // standardization (empty when off)
  Eigen::RowVectorXd scale;
  ClassifierConfig config;
  /// Objective per accepted iterate, including the initial point.
  std::vector<double> loss_history;
  int iterations = 0;
};

/// Trains on `features` (labels 0..num_classes-1). LR and SVM start from
/// zero weights and use full-batch gradient descent.
Classifier train_classifier(const FeatureMatrix& features, int num_classes, const ClassifierConfig& cfg);

struct Prediction {
  std::vector<int> labels;
  Matrix probabilities;  // LR only; [n x K]
};

Prediction classify(const Classifier& clf, const FeatureMatrix& query);

/// LR objective and gradient at (W, b); exposed for tests.
double lr_objective(const Matrix& x, std::span<const int> labels, const Matrix& w, const Eigen::VectorXd& b,
                    double l2, std::size_t n_reg, Matrix* grad_w, Eigen::VectorXd* grad_b);

nlohmann::json classifier_to_json(const Classifier& clf);
Classifier classifier_from_json(const nlohmann::json& j);

}  // namespace dasecount::fewshot
