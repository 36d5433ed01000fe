#include "dasecount/distill.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dasecount/error.hpp"
#include "dasecount/json_util.hpp"

namespace dasecount::nn {

namespace fs = std::filesystem;

void DistillConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("distill.alpha must lie in [0, 1]");
  if (generations < 1) throw ConfigError("distill.generations must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("distill.temperature must be > 0");
  if (batch_size < 1) throw ConfigError("distill.batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("distill.epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("distill.learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("distill.momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("distill.weight_decay must be >= 0");
  if (!(val_fraction > 0 && val_fraction < 1)) throw ConfigError("distill.val_fraction must lie in (0, 1)");
}

nlohmann::json DistillConfig::to_json() const {
  return {{"alpha", alpha},           {"generations", generations}, {"batch_size", batch_size},
          {"epochs", epochs},         {"learning_rate", learning_rate}, {"momentum", momentum},
          {"weight_decay", weight_decay}, {"temperature", temperature}, {"val_fraction", val_fraction},
          {"seed", seed}};
}

DistillConfig DistillConfig::from_json(const nlohmann::json& j) {
  DistillConfig c;
  StrictObject o(j, "distill");
  o.get("alpha", c.alpha);
  o.get("generations", c.generations);
  o.get("batch_size", c.batch_size);
  o.get("epochs", c.epochs);
  o.get("learning_rate", c.learning_rate);
  o.get("momentum", c.momentum);
  o.get("weight_decay", c.weight_decay);
  o.get("temperature", c.temperature);
  o.get("val_fraction", c.val_fraction);
  o.get("seed", c.seed);
  o.finish();
  c.validate();
  return c;
}

template <typename T>
DistillLoss distill_loss(std::span<const T> student_logits, std::span<const double> teacher_probs,
                         std::span<const int> labels, int cols, double alpha, double temperature, T* grad) {
  const int rows = static_cast<int>(labels.size());
  if (student_logits.size() != static_cast<std::size_t>(rows) * cols || teacher_probs.size() != student_logits.size())
    throw ShapeError("distillation loss operands disagree in shape");
  auto q1 = kernels::softmax_rows(student_logits, rows, cols);
  auto qt = temperature == 1.0 ? q1 : kernels::softmax_rows(student_logits, rows, cols, temperature);
  DistillLoss out;
  for (int r = 0; r < rows; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * cols;
    out.ce -= std::log(std::max(q1[base + labels[r]], 1e-300));
    for (int c = 0; c < cols; ++c) {
      const double p = teacher_probs[base + c];
      if (p > 0.0) out.kl += p * (std::log(p) - std::log(std::max(qt[base + c], 1e-300)));
    }
    if (grad) {
      for (int c = 0; c < cols; ++c) {
        const double dce = q1[base + c] - (c == labels[r] ? 1.0 : 0.0);
        const double dkl = (qt[base + c] - teacher_probs[base + c]) / temperature;
        grad[base + c] = static_cast<T>((alpha * dce + (1.0 - alpha) * dkl) / rows);
      }
    }
  }
  out.ce /= rows;
  out.kl /= rows;
  out.total = alpha * out.ce + (1.0 - alpha) * out.kl;
  return out;
}

template DistillLoss distill_loss<float>(std::span<const float>, std::span<const double>, std::span<const int>, int,
                                         double, double, float*);
template DistillLoss distill_loss<double>(std::span<const double>, std::span<const double>, std::span<const int>,
                                          int, double, double, double*);

std::vector<double> teacher_probabilities(const CnnSubmodel<float>& teacher, SampleRefs samples, Modality m,
                                          double temperature) {
  auto z = logits(teacher, samples, m);
  return kernels::softmax_rows(std::span<const float>(z), static_cast<int>(samples.size()),
                               teacher.spec().num_classes, temperature);
}

CnnSubmodel<float> distill_step(const CnnSubmodel<float>& teacher, SampleRefs samples,
                                std::span<const std::size_t> train_idx, std::span<const std::size_t> val_idx,
                                Modality m, const DistillConfig& cfg, std::uint64_t seed,
                                std::vector<EpochStats>* curve) {
  cfg.validate();
  if (train_idx.empty()) throw TrainingError("distillation training set is empty");
  const int k = teacher.spec().num_classes;

  std::vector<const prep::Sample*> train;
  train.reserve(train_idx.size());
  for (auto i : train_idx) train.push_back(samples[i]);
  const auto soft = teacher_probabilities(teacher, train, m, cfg.temperature);

  CnnSubmodel<float> student(teacher.spec(), derive_seed(seed, "student-init"));
  std::vector<double> batch_soft;
  BatchLoss loss = [&](std::span<const float> z, std::span<const std::size_t> rows, std::span<const int> y,
                       float* g) {
    batch_soft.resize(rows.size() * k);
    for (std::size_t i = 0; i < rows.size(); ++i)
      std::copy_n(soft.begin() + static_cast<std::ptrdiff_t>(rows[i] * k), k,
                  batch_soft.begin() + static_cast<std::ptrdiff_t>(i * k));
    return distill_loss<float>(z, batch_soft, y, k, cfg.alpha, cfg.temperature, g).total;
  };
  Sgd<float> sgd(student.parameter_count(), cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  OptimizerStep step = [&sgd](std::span<float> p, std::span<const float> g) { sgd.step(p, g); };
  auto c = fit_submodel(student, samples, train_idx, val_idx, m, cfg.epochs, cfg.batch_size,
                        derive_seed(seed, "student-order"), loss, step);
  if (curve) *curve = std::move(c);
  return student;
}

namespace {

GenerationRecord record_for(const FeatureExtractor& fx, SampleRefs samples, const SplitIndices& split) {
  GenerationRecord r;
  r.generation = fx.generation;
  std::vector<const prep::Sample*> val;
  for (auto i : split.val) val.push_back(samples[i]);
  if (val.empty()) return r;
  r.val_amp = evaluate(fx, val, Modality::Amp);
  r.val_phd = evaluate(fx, val, Modality::Phd);
  r.val_combined = evaluate(fx, val, Modality::Both);
  return r;
}

}  // namespace

DistillLineage distill_lineage(const FeatureExtractor& gen0, SampleRefs samples, const SplitIndices& split,
                               const DistillConfig& cfg) {
  cfg.validate();
  DistillLineage lin;
  lin.models.push_back(gen0);
  lin.models.back().generation = 0;
  lin.records.push_back(record_for(lin.models.back(), samples, split));
  for (int g = 1; g <= cfg.generations; ++g) {
    const FeatureExtractor& teacher = lin.models.back();
    FeatureExtractor student;
    student.generation = g;
    try {
      const auto gs = static_cast<std::uint64_t>(g);
      student.amp = distill_step(teacher.amp, samples, split.train, split.val, Modality::Amp, cfg,
                                 derive_seed(cfg.seed, {gs, 0xA3u}));
      student.phd = distill_step(teacher.phd, samples, split.train, split.val, Modality::Phd, cfg,
                                 derive_seed(cfg.seed, {gs, 0x9Du}));
    } catch (const Error& e) {
      throw Error(e.category(), "generation " + std::to_string(g) + ": " + e.what());
    }
    lin.records.push_back(record_for(student, samples, split));
    lin.models.push_back(std::move(student));
  }
  lin.chosen = select_generation(lin.records, SelectCriterion::SourceVal);
  return lin;
}

int select_generation(const std::vector<GenerationRecord>& records, SelectCriterion criterion, int g) {
  if (records.empty()) throw ValidationError("lineage is empty");
  if (criterion == SelectCriterion::Explicit) {
    if (g < 0 || g >= static_cast<int>(records.size()))
      throw RangeError("generation " + std::to_string(g) + " outside lineage 0.." +
                       std::to_string(records.size() - 1));
    return g;
  }
  int best = 0;
  for (int i = 1; i < static_cast<int>(records.size()); ++i)
    if (records[i].val_combined > records[best].val_combined) best = i;
  return best;
}

const FeatureExtractor& select_generation(const DistillLineage& lineage, SelectCriterion criterion, int g) {
  return lineage.models.at(select_generation(lineage.records, criterion, g));
}

void save_lineage(const DistillLineage& lineage, const DistillConfig& cfg, const nlohmann::json& train_config,
                  const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json gens = nlohmann::json::array();
  for (std::size_t k = 0; k < lineage.models.size(); ++k) {
    const auto name = "gen" + std::to_string(k) + ".ckpt";
    save_extractor(lineage.models[k], {{"train", train_config}, {"distill", cfg.to_json()}}, dir / name);
    const auto& r = lineage.records[k];
    gens.push_back({{"generation", r.generation},
                    {"checkpoint", name},
                    {"val_amp", r.val_amp},
                    {"val_phd", r.val_phd},
                    {"val_combined", r.val_combined}});
  }
  write_json_file({{"generations", gens}, {"chosen", lineage.chosen}, {"config", cfg.to_json()}},
                  dir / "lineage.json");
}

nlohmann::json load_lineage_index(const fs::path& dir) { return read_json_file(dir / "lineage.json"); }

}  // namespace dasecount::nn
