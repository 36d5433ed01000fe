#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "dasecount/trainer.hpp"

namespace dasecount::nn {

struct DistillConfig {
  double alpha = 0.5;
  int generations = 6;
  int batch_size = 100;
  int epochs = 100;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double temperature = 1.0;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static DistillConfig from_json(const nlohmann::json& j);
};

struct DistillLoss {
  double total = 0.0;
  double ce = 0.0;
  double kl = 0.0;
};

/// alpha * CE(student, labels) + (1 - alpha) * KL(teacher || student), both
/// softmaxes at `temperature`, averaged over rows. Writes d(total)/d(logits)
/// into `grad` when it is non-null.
template <typename T>
DistillLoss distill_loss(std::span<const T> student_logits, std::span<const double> teacher_probs,
                         std::span<const int> labels, int cols, double alpha, double temperature, T* grad);

/// Teacher softmax at `temperature` for every sample, [n][K].
std::vector<double> teacher_probabilities(const CnnSubmodel<float>& teacher, SampleRefs samples, Modality m,
                                          double temperature);

/// Trains a freshly initialized student of the teacher's architecture.
CnnSubmodel<float> distill_step(const CnnSubmodel<float>& teacher, SampleRefs samples,
                                std::span<const std::size_t> train_idx, std::span<const std::size_t> val_idx,
                                Modality m, const DistillConfig& cfg, std::uint64_t seed,
                                std::vector<EpochStats>* curve = nullptr);

struct GenerationRecord {
  int generation = 0;
  double val_amp = 0.0;
  double val_phd = 0.0;
  double val_combined = 0.0;
};

struct DistillLineage {
  std::vector<FeatureExtractor> models;
  std::vector<GenerationRecord> records;
  int chosen = 0;
};

/// Generations 1..K, each distilled from its predecessor. `split` is the
/// train/validation split used for generation 0.
DistillLineage distill_lineage(const FeatureExtractor& gen0, SampleRefs samples, const SplitIndices& split,
                               const DistillConfig& cfg);

enum class SelectCriterion { SourceVal, Explicit };

/// SourceVal: best combined validation accuracy, smallest index on ties.
int select_generation(const std::vector<GenerationRecord>& records, SelectCriterion criterion, int g = 0);
const FeatureExtractor& select_generation(const DistillLineage& lineage, SelectCriterion criterion, int g = 0);

/// gen{k}.ckpt per generation plus lineage.json.
void save_lineage(const DistillLineage& lineage, const DistillConfig& cfg, const nlohmann::json& train_config,
                  const std::filesystem::path& dir);
nlohmann::json load_lineage_index(const std::filesystem::path& dir);

}  // namespace dasecount::nn
