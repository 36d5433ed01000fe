#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dasecount/convnet.hpp"
#include "dasecount/preprocess.hpp"

namespace dasecount::nn {

enum class Modality { Amp, Phd, Both };

std::string_view to_string(Modality m);
Modality parse_modality(std::string_view s);

struct TrainConfig {
  int batch_size = 8;
  int epochs = 30;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// The amplitude and phase-difference submodels, trained independently.
struct FeatureExtractor {
  CnnSubmodel<float> amp;
  CnnSubmodel<float> phd;
  int generation = 0;

  const CnnSubmodel<float>& submodel(Modality m) const;
  int num_classes() const { return amp.spec().num_classes; }
};

using SampleRefs = std::span<const prep::Sample* const>;

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Per-class shuffle, then round(n * val_fraction) (at least one when a class
/// has two or more samples) goes to validation.
SplitIndices stratified_split(std::span<const int> labels, double val_fraction, std::uint64_t seed);

struct EpochStats {
  double loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
};

/// Builds a submodel with the default block structure for c_in input layers.
CnnSubmodel<float> build_submodel(int c_in, int num_classes, std::uint64_t seed, int in_h = 200, int in_w = 114);

/// Copies the chosen modality of the listed samples into a [B][C][H][W] buffer.
void gather_batch(SampleRefs samples, std::span<const std::size_t> idx, Modality m, std::vector<float>& out);

/// Batch loss: fills dlogits and returns the scalar loss. `rows` are the
/// positions (into the training index list) of the batch members.
using BatchLoss = std::function<double(std::span<const float> logits, std::span<const std::size_t> rows,
                                       std::span<const int> labels, float* dlogits)>;
using OptimizerStep = std::function<void(std::span<float> params, std::span<const float> grads)>;

/// Shared minibatch loop: per-epoch shuffle from derive_seed(seed, epoch),
/// training-mode forward/backward, optimizer step, then inference-mode
/// validation accuracy. Throws DivergenceError on a non-finite loss.
std::vector<EpochStats> fit_submodel(CnnSubmodel<float>& model, SampleRefs samples,
                                     std::span<const std::size_t> train_idx, std::span<const std::size_t> val_idx,
                                     Modality m, int epochs, int batch_size, std::uint64_t seed,
                                     const BatchLoss& loss, const OptimizerStep& step);

struct TrainResult {
  FeatureExtractor extractor;
  std::vector<EpochStats> amp_curve;
  std::vector<EpochStats> phd_curve;
  SplitIndices split;
  double val_amp = 0.0;
  double val_phd = 0.0;
  double val_combined = 0.0;
};

/// Stratified 9:1 split, then amplitude and phase-difference submodels are
/// trained separately with minibatch cross-entropy and Adam.
TrainResult train_extractor(SampleRefs samples, int num_classes, const TrainConfig& cfg);

/// Arg-max predictions in inference mode. Both = argmax of the mean of the
/// two submodels' softmax outputs.
std::vector<int> predict(const FeatureExtractor& fx, SampleRefs samples, Modality which);
/// Raw logits of one submodel, [n][num_classes].
std::vector<float> logits(const CnnSubmodel<float>& model, SampleRefs samples, Modality m);

double evaluate(const FeatureExtractor& fx, SampleRefs samples, Modality which);

/// Checkpoint container: "DCKPT1" magic, JSON header (architecture
/// fingerprints, generation, config), then little-endian float32 parameters
/// and running statistics for amp and phd.
void save_extractor(const FeatureExtractor& fx, const nlohmann::json& config, const std::filesystem::path& path);
struct LoadedExtractor {
  FeatureExtractor extractor;
  nlohmann::json config;
};
LoadedExtractor load_extractor(const std::filesystem::path& path);

}  // namespace dasecount::nn
