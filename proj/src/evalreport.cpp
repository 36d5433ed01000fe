#include "dasecount/evalreport.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <tuple>

#include "dasecount/error.hpp"
#include "dasecount/json_util.hpp"
#include "dasecount/parallel.hpp"
#include "dasecount/rng.hpp"

namespace dasecount::eval {

namespace fs = std::filesystem;
using fewshot::FeatureMatrix;

void Protocol::validate() const {
  if (shots < 1) throw ConfigError("metatest.shots must be >= 1");
  if (queries_per_class < 1) throw ConfigError("metatest.queries_per_class must be >= 1");
  if (repeats < 1) throw ConfigError("metatest.repeats must be >= 1");
  classifier.validate();
}

nlohmann::json Protocol::to_json() const {
  return {{"shots", shots},
          {"queries_per_class", queries_per_class},
          {"repeats", repeats},
          {"tap", features.tap_name()},
          {"modality", nn::to_string(features.modality)},
          {"classifier", classifier.to_json()},
          {"seed", seed}};
}

std::uint64_t repeat_seed(std::uint64_t seed, int repeat) {
  return derive_seed(seed, {0x7E9Eu, static_cast<std::uint64_t>(repeat)});
}

nlohmann::json TaskReport::to_json() const {
  return {{"kind", "task_report"},
          {"task_id", task_id},
          {"motion_type", motion_type},
          {"shots", shots},
          {"tap", tap},
          {"modality", modality},
          {"classifier", classifier},
          {"accuracies", accuracies},
          {"mean_accuracy", mean_accuracy},
          {"std_accuracy", std_accuracy},
          {"confusion", confusion},
          {"protocol", protocol}};
}

TaskReport TaskReport::from_json(const nlohmann::json& j) {
  try {
    TaskReport r;
    r.task_id = j.at("task_id").get<std::string>();
    r.motion_type = j.at("motion_type").get<std::string>();
    r.shots = j.at("shots").get<int>();
    r.tap = j.at("tap").get<std::string>();
    r.modality = j.at("modality").get<std::string>();
    r.classifier = j.at("classifier").get<std::string>();
    r.accuracies = j.at("accuracies").get<std::vector<double>>();
    r.mean_accuracy = j.at("mean_accuracy").get<double>();
    r.std_accuracy = j.at("std_accuracy").get<double>();
    r.confusion = j.at("confusion").get<std::vector<std::vector<double>>>();
    r.protocol = j.at("protocol");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed task report: ") + e.what());
  }
}

namespace {

// Fails fast, before any feature extraction, when a class is too small.
void check_episode_feasible(const prep::SampleStore& store, const prep::TaskId& task, const Protocol& p) {
  fewshot::sample_episode(store, task, p.shots, p.queries_per_class, repeat_seed(p.seed, 0));
}

}  // namespace

TaskReport run_protocol(const prep::SampleStore& store, const prep::TaskId& task, const Protocol& protocol,
                        const FeatureMatrix& task_features, const EpisodePredictor& predictor,
                        const std::string& classifier_name) {
  protocol.validate();
  check_episode_feasible(store, task, protocol);
  const int c = store.num_classes;
  if (task_features.n() != store.task(task).size()) throw ShapeError("feature rows do not match the task samples");

  struct Outcome {
    double accuracy = 0.0;
    std::vector<std::vector<double>> counts;
  };
  std::vector<Outcome> outcomes(static_cast<std::size_t>(protocol.repeats));
  parallel_for(outcomes.size(), [&](std::size_t r) {
    try {
      auto ep = fewshot::sample_episode(store, task, protocol.shots, protocol.queries_per_class,
                                        repeat_seed(protocol.seed, static_cast<int>(r)));
      auto support = fewshot::take_rows(task_features, ep.support, ep.support_labels,
                                        protocol.classifier.duplication_factor);
      auto query = fewshot::take_rows(task_features, ep.query, ep.query_labels, 1);
      auto pred = predictor(support, query);
      if (pred.size() != ep.query_labels.size()) throw ShapeError("predictor returned the wrong number of labels");
      Outcome o;
      o.counts.assign(static_cast<std::size_t>(c), std::vector<double>(static_cast<std::size_t>(c), 0.0));
      std::size_t hit = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const int t = ep.query_labels[i], p = pred[i];
        if (p < 0 || p >= c) throw ValidationError("predicted label outside class set");
        o.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)] += 1.0;
        hit += t == p;
      }
      o.accuracy = static_cast<double>(hit) / static_cast<double>(pred.size());
      outcomes[r] = std::move(o);
    } catch (const Error& e) {
      throw Error(e.category(), "repeat " + std::to_string(r) + ": " + e.what());
    }
  });

  TaskReport rep;
  rep.task_id = task.str();
  rep.motion_type = std::string(to_string(task.motion));
  rep.shots = protocol.shots;
  rep.tap = protocol.features.tap_name();
  rep.modality = std::string(nn::to_string(protocol.features.modality));
  rep.classifier = classifier_name;
  rep.protocol = protocol.to_json();
  rep.confusion.assign(static_cast<std::size_t>(c), std::vector<double>(static_cast<std::size_t>(c), 0.0));
  double sum = 0.0;
  for (const auto& o : outcomes) {
    rep.accuracies.push_back(o.accuracy);
    sum += o.accuracy;
    for (int t = 0; t < c; ++t) {
      double row = 0.0;
      for (double v : o.counts[static_cast<std::size_t>(t)]) row += v;
      if (row <= 0.0) throw ValidationError("class " + std::to_string(t) + " has no queries");
      for (int p = 0; p < c; ++p)
        rep.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)] +=
            o.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)] / row;
    }
  }
  const double n = static_cast<double>(outcomes.size());
  rep.mean_accuracy = sum / n;
  for (auto& row : rep.confusion)
    for (auto& v : row) v /= n;
  if (outcomes.size() > 1) {
    double ss = 0.0;
    for (double a : rep.accuracies) ss += (a - rep.mean_accuracy) * (a - rep.mean_accuracy);
    rep.std_accuracy = std::sqrt(ss / (n - 1.0));
  }
  return rep;
}

namespace {

std::vector<const prep::Sample*> task_refs(const prep::SampleStore& store, const prep::TaskId& task) {
  std::vector<const prep::Sample*> out;
  for (const auto& s : store.task(task)) out.push_back(&s);
  return out;
}

EpisodePredictor classifier_predictor(int num_classes, const fewshot::ClassifierConfig& cfg) {
  return [num_classes, cfg](const FeatureMatrix& support, const FeatureMatrix& query) {
    auto clf = fewshot::train_classifier(support, num_classes, cfg);
    return fewshot::classify(clf, query).labels;
  };
}

std::vector<int> row_argmax(const FeatureMatrix& m) {
  std::vector<int> out(m.n());
  for (Eigen::Index i = 0; i < m.rows.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < m.rows.cols(); ++c)
      if (m.rows(i, c) > m.rows(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace

TaskReport run_metatest(const nn::FeatureExtractor& fx, const prep::SampleStore& store, const prep::TaskId& task,
                        const Protocol& protocol) {
  protocol.validate();
  if (fx.num_classes() != store.num_classes)
    throw ValidationError("extractor has " + std::to_string(fx.num_classes()) + " classes, store has " +
                          std::to_string(store.num_classes));
  check_episode_feasible(store, task, protocol);
  auto refs = task_refs(store, task);
  auto feats = fewshot::extract_features(fx, refs, protocol.features, 1);
  return run_protocol(store, task, protocol, feats, classifier_predictor(store.num_classes, protocol.classifier),
                      std::string(fewshot::to_string(protocol.classifier.kind)));
}

fewshot::Classifier fit_episode_classifier(const nn::FeatureExtractor& fx, const prep::SampleStore& store,
                                           const prep::TaskId& task, const Protocol& protocol, int repeat) {
  protocol.validate();
  if (repeat < 0 || repeat >= protocol.repeats)
    throw RangeError("repeat " + std::to_string(repeat) + " outside [0, " + std::to_string(protocol.repeats) + ")");
  auto ep = fewshot::sample_episode(store, task, protocol.shots, protocol.queries_per_class,
                                    repeat_seed(protocol.seed, repeat));
  auto feats = fewshot::extract_features(fx, task_refs(store, task), protocol.features, 1);
  auto support = fewshot::take_rows(feats, ep.support, ep.support_labels, protocol.classifier.duplication_factor);
  return fewshot::train_classifier(support, store.num_classes, protocol.classifier);
}

std::string_view to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::DirectTransferAmp: return "direct-amp";
    case BaselineKind::DirectTransferPhd: return "direct-phd";
    case BaselineKind::RawLR: return "raw-lr";
    case BaselineKind::AmpOnly: return "amp-only";
    case BaselineKind::PhdOnly: return "phd-only";
  }
  return "unknown";
}

BaselineKind parse_baseline(std::string_view s) {
  for (auto k : {BaselineKind::DirectTransferAmp, BaselineKind::DirectTransferPhd, BaselineKind::RawLR,
                 BaselineKind::AmpOnly, BaselineKind::PhdOnly})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown baseline kind '" + std::string(s) + "'");
}

TaskReport run_baseline(BaselineKind kind, const nn::FeatureExtractor& fx, const prep::SampleStore& store,
                        const prep::TaskId& task, const Protocol& protocol) {
  protocol.validate();
  check_episode_feasible(store, task, protocol);
  Protocol p = protocol;
  switch (kind) {
    case BaselineKind::AmpOnly:
      p.features.modality = nn::Modality::Amp;
      return run_metatest(fx, store, task, p);
    case BaselineKind::PhdOnly:
      p.features.modality = nn::Modality::Phd;
      return run_metatest(fx, store, task, p);
    case BaselineKind::DirectTransferAmp:
    case BaselineKind::DirectTransferPhd: {
      p.features = {false, nn::Tap::FC,
                    kind == BaselineKind::DirectTransferAmp ? nn::Modality::Amp : nn::Modality::Phd};
      if (fx.num_classes() != store.num_classes) throw ValidationError("extractor and store disagree on class count");
      auto feats = fewshot::extract_features(fx, task_refs(store, task), p.features, 1);
      return run_protocol(store, task, p, feats,
                          [](const FeatureMatrix&, const FeatureMatrix& q) { return row_argmax(q); }, "direct");
    }
    case BaselineKind::RawLR: {
      p.features = {true, nn::Tap::FC, nn::Modality::Both};
      auto feats = fewshot::raw_features(task_refs(store, task), nn::Modality::Both, 1);
      return run_protocol(store, task, p, feats, classifier_predictor(store.num_classes, p.classifier),
                          std::string(fewshot::to_string(p.classifier.kind)));
    }
  }
  throw ConfigError("unhandled baseline");
}

void sort_reports(std::vector<TaskReport>& reports) {
  std::stable_sort(reports.begin(), reports.end(), [](const TaskReport& a, const TaskReport& b) {
    return std::tie(a.task_id, a.shots, a.tap, a.modality, a.classifier) <
           std::tie(b.task_id, b.shots, b.tap, b.modality, b.classifier);
  });
}

std::string confusion_file_name(const TaskReport& r) {
  std::string task;
  for (char ch : r.task_id) task += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '-') ? ch : '_';
  return "confusion_" + task + "_k" + std::to_string(r.shots) + "_" + r.tap + "_" + r.modality + "_" + r.classifier +
         ".csv";
}

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

std::vector<fs::path> emit_report(std::vector<TaskReport> reports, const fs::path& out_dir,
                                  const ReportFormats& formats) {
  if (reports.empty()) throw ValidationError("no reports to emit");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create " + out_dir.string());
  sort_reports(reports);
  for (std::size_t i = 1; i < reports.size(); ++i)
    if (confusion_file_name(reports[i]) == confusion_file_name(reports[i - 1]))
      throw ValidationError("duplicate report for " + confusion_file_name(reports[i]));

  std::vector<fs::path> written;
  if (formats.csv) {
    std::string csv = "task_id,motion_type,shots,tap,modality,classifier,mean_acc,std_acc,repeats\n";
    for (const auto& r : reports)
      csv += r.task_id + "," + r.motion_type + "," + std::to_string(r.shots) + "," + r.tap + "," + r.modality + "," +
             r.classifier + "," + fixed6(r.mean_accuracy) + "," + fixed6(r.std_accuracy) + "," +
             std::to_string(r.accuracies.size()) + "\n";
    write_text(out_dir / "summary.csv", csv);
    written.push_back(out_dir / "summary.csv");
    for (const auto& r : reports) {
      std::string text = "true\\pred";
      for (std::size_t c = 0; c < r.confusion.size(); ++c) text += "," + std::to_string(c);
      text += "\n";
      for (std::size_t t = 0; t < r.confusion.size(); ++t) {
        text += std::to_string(t);
        for (double v : r.confusion[t]) text += "," + fixed6(v);
        text += "\n";
      }
      const auto path = out_dir / confusion_file_name(r);
      write_text(path, text);
      written.push_back(path);
    }
  }
  if (formats.json) {
    nlohmann::json all = nlohmann::json::array();
    for (const auto& r : reports) all.push_back(r.to_json());
    write_json_file({{"reports", all}}, out_dir / "summary.json");
    written.push_back(out_dir / "summary.json");
  }
  return written;
}

}  // namespace dasecount::eval
