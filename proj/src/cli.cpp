#include "dasecount/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "dasecount/json_util.hpp"
#include "dasecount/rng.hpp"

namespace dasecount::cli {

namespace fs = std::filesystem;

eval::Protocol MetatestSection::protocol(int shots) const {
  eval::Protocol p;
  p.shots = shots;
  p.queries_per_class = queries_per_class;
  p.repeats = repeats;
  p.features.raw = tap == "raw";
  if (!p.features.raw) p.features.tap = nn::parse_tap(tap);
  p.features.modality = nn::parse_modality(modality);
  p.classifier = classifier;
  p.seed = seed;
  return p;
}

std::vector<synth::SceneConfig> default_scenarios() {
  synth::SceneConfig a;
  a.scenario_id = "roomA-LOS";
  a.seed = 11;
  synth::SceneConfig b = a;
  b.scenario_id = "roomB-NLOS";
  b.seed = 22;
  b.los_gain = 0.0;
  b.background_gain = 0.5;
  b.room_delay_spread = 80e-9;
  b.room_width = 6.0;
  b.room_depth = 5.0;
  return {a, b};
}

namespace {

// Fills an absent section seed from the global one.
void fan_out_seed(json& section, const char* key, std::uint64_t global, std::string_view tag) {
  if (!section.contains(key)) section[key] = derive_seed(global, tag);
}

json section_or_empty(StrictObject& o, const char* key) {
  if (!o.has(key)) return json::object();
  const json& s = o.child(key);
  if (!s.is_object()) throw ConfigError(std::string(key) + ": expected a JSON object");
  return s;
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  StrictObject o(j, "config");
  o.get("seed", c.seed);
  o.get("source", c.source);
  o.get("target", c.target);

  if (o.has("paths")) {
    StrictObject p(o.child("paths"), "paths");
    p.get("data", c.paths.data);
    p.get("samples", c.paths.samples);
    p.get("model", c.paths.model);
    p.get("lineage", c.paths.lineage);
    p.get("results", c.paths.results);
    p.get("report", c.paths.report);
    p.finish();
  }

  json synth_j = section_or_empty(o, "synth");
  if (!synth_j.contains("scenarios")) {
    synth::DatasetGenConfig tmp;
    tmp.scenarios = default_scenarios();
    synth_j["scenarios"] = synth::dataset_config_to_json(tmp)["scenarios"];
  }
  fan_out_seed(synth_j, "base_seed", c.seed, "synth");
  c.synth = synth::dataset_config_from_json(synth_j);

  if (o.has("preprocess")) {
    StrictObject p(o.child("preprocess"), "preprocess");
    p.get("tw", c.preprocess.tw);
    p.get("ts", c.preprocess.ts);
    p.finish();
  }

  json train_j = section_or_empty(o, "train");
  fan_out_seed(train_j, "seed", c.seed, "train");
  c.train = nn::TrainConfig::from_json(train_j);

  json distill_j = section_or_empty(o, "distill");
  fan_out_seed(distill_j, "seed", c.seed, "distill");
  c.distill = nn::DistillConfig::from_json(distill_j);

  auto& m = c.metatest;
  m.seed = derive_seed(c.seed, "metatest");
  json clf_j = json::object();
  if (o.has("metatest")) {
    StrictObject p(o.child("metatest"), "metatest");
    if (p.has("shots") && !j.at("metatest").at("shots").is_array()) {
      int k = 0;
      p.get("shots", k);
      m.shots = {k};
    } else {
      p.get("shots", m.shots);
    }
    p.get("queries_per_class", m.queries_per_class);
    p.get("repeats", m.repeats);
    p.get("tap", m.tap);
    p.get("modality", m.modality);
    p.get("baselines", m.baselines);
    p.get("tasks", m.tasks);
    p.get("seed", m.seed);
    if (p.has("classifier")) clf_j = p.child("classifier");
    p.finish();
  }
  fan_out_seed(clf_j, "seed", m.seed, "classifier");
  m.classifier = fewshot::ClassifierConfig::from_json(clf_j);

  if (o.has("report")) {
    StrictObject p(o.child("report"), "report");
    std::vector<std::string> formats;
    p.get("format", formats);
    if (p.has("format")) {
      c.report.csv = std::ranges::count(formats, "csv") > 0;
      c.report.json = std::ranges::count(formats, "json") > 0;
      for (const auto& f : formats)
        if (f != "csv" && f != "json") throw ConfigError("report.format: unknown format '" + f + "'");
    }
    p.finish();
  }
  o.finish();
  c.validate();
  return c;
}

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["source"] = source;
  j["target"] = target;
  j["paths"] = {{"data", paths.data},         {"samples", paths.samples}, {"model", paths.model},
                {"lineage", paths.lineage},   {"results", paths.results}, {"report", paths.report}};
  j["synth"] = synth::dataset_config_to_json(synth);
  j["preprocess"] = {{"tw", preprocess.tw}, {"ts", preprocess.ts}};
  j["train"] = train.to_json();
  j["distill"] = distill.to_json();
  j["metatest"] = {{"shots", metatest.shots},
                   {"queries_per_class", metatest.queries_per_class},
                   {"repeats", metatest.repeats},
                   {"tap", metatest.tap},
                   {"modality", metatest.modality},
                   {"classifier", metatest.classifier.to_json()},
                   {"baselines", metatest.baselines},
                   {"tasks", metatest.tasks},
                   {"seed", metatest.seed}};
  json formats = json::array();
  if (report.csv) formats.push_back("csv");
  if (report.json) formats.push_back("json");
  j["report"] = {{"format", formats}};
  return j;
}

void RunConfig::validate() const {
  try {
    synth.validate();
    preprocess.validate();
    train.validate();
    distill.validate();
    if (metatest.shots.empty()) throw ConfigError("metatest.shots: at least one value required");
    for (int k : metatest.shots) metatest.protocol(k).validate();
    for (const auto& b : metatest.baselines) eval::parse_baseline(b);
    if (metatest.tasks != "all") prep::TaskId::parse(metatest.tasks);
    if (!report.csv && !report.json) throw ConfigError("report.format: nothing to write");
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (source == target) throw ConfigError("source and target scenarios must differ");
}

json read_config_file(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("file not found: " + path.string());
  return read_json_file(path);
}

namespace {

class Log {
 public:
  Log(std::ostream& os, bool quiet) : os_(os), quiet_(quiet) {}

  void operator()(const std::string& msg) const {
    if (quiet_) return;
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    localtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%H:%M:%S", &tm);
    os_ << "[" << buf << "] " << msg << '\n';
  }

 private:
  std::ostream& os_;
  bool quiet_;
};

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

// Flags patch the config JSON before parsing, so a flag and its config key
// follow the same validation path.
class Overrides {
 public:
  template <typename T>
  CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& pointer, const std::string& help) {
    auto value = std::make_shared<T>();
    auto* opt = app->add_option(flag, *value, help + " [" + pointer + "]");
    patches_.push_back([opt, value, pointer](json& j) {
      if (opt->count() > 0) j[json::json_pointer(pointer)] = *value;
    });
    return opt;
  }

  void apply(json& j) const {
    for (const auto& p : patches_) p(j);
  }

 private:
  std::vector<std::function<void(json&)>> patches_;
};

struct Context {
  RunConfig cfg;
  Log log;
};

fs::path ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw IoError("cannot create " + dir.string());
  return dir;
}

void do_synth(const Context& ctx, const fs::path& out) {
  ctx.log("synth: " + std::to_string(ctx.cfg.synth.scenarios.size()) + " scenarios -> " + out.string());
  auto manifest = synth::generate_dataset(ctx.cfg.synth, ensure_dir(out));
  ctx.log("synth: wrote " + std::to_string(manifest.recordings.size()) + " recordings");
}

void do_preprocess(const Context& ctx, const fs::path& in, const fs::path& out) {
  auto manifest = load_manifest(in);
  auto store = prep::preprocess_dataset(in, manifest, ctx.cfg.preprocess);
  prep::save_store(store, ctx.cfg.preprocess, ensure_dir(out));
  ctx.log("preprocess: " + std::to_string(store.size()) + " samples in " + std::to_string(store.tasks.size()) +
          " tasks");
}

json teacher_config(const Context& ctx) { return {{"train", ctx.cfg.train.to_json()}, {"source", ctx.cfg.source}}; }

std::vector<const prep::Sample*> source_samples(const prep::SampleStore& store, const std::string& scenario) {
  auto src = store.scenario_samples(scenario);
  if (src.empty()) throw ValidationError("no samples for source scenario '" + scenario + "'");
  return src;
}

void do_train(const Context& ctx, const fs::path& in, const fs::path& out) {
  auto store = prep::load_store(in);
  auto src = source_samples(store, ctx.cfg.source);
  ctx.log("train: " + std::to_string(src.size()) + " source samples, " + std::to_string(ctx.cfg.train.epochs) +
          " epochs");
  auto res = nn::train_extractor(src, store.num_classes, ctx.cfg.train);
  ensure_dir(out);
  nn::save_extractor(res.extractor, teacher_config(ctx), out / "teacher.ckpt");
  auto curve = [](const std::vector<nn::EpochStats>& c) {
    json a = json::array();
    for (const auto& e : c)
      a.push_back({{"loss", e.loss}, {"train_accuracy", e.train_accuracy}, {"val_accuracy", e.val_accuracy}});
    return a;
  };
  write_json_file({{"val_amp", res.val_amp},
                   {"val_phd", res.val_phd},
                   {"val_combined", res.val_combined},
                   {"amp_curve", curve(res.amp_curve)},
                   {"phd_curve", curve(res.phd_curve)},
                   {"config", teacher_config(ctx)}},
                  out / "train.json");
  ctx.log("train: source validation amp " + fmt3(res.val_amp) + " phd " + fmt3(res.val_phd) + " combined " +
          fmt3(res.val_combined));
}

void do_distill(const Context& ctx, const fs::path& teacher_path, const fs::path& in, const fs::path& out) {
  auto teacher = nn::load_extractor(teacher_path);
  // The split is recomputed from the teacher's own training config.
  nn::TrainConfig tc = ctx.cfg.train;
  std::string source = ctx.cfg.source;
  if (teacher.config.contains("train")) tc = nn::TrainConfig::from_json(teacher.config.at("train"));
  if (teacher.config.contains("source")) source = teacher.config.at("source").get<std::string>();
  auto store = prep::load_store(in);
  auto src = source_samples(store, source);
  std::vector<int> labels;
  for (const auto* s : src) labels.push_back(s->label);
  auto split = nn::stratified_split(labels, tc.val_fraction, tc.seed);
  ctx.log("distill: " + std::to_string(ctx.cfg.distill.generations) + " generations from " + teacher_path.string());
  auto lineage = nn::distill_lineage(teacher.extractor, src, split, ctx.cfg.distill);
  nn::save_lineage(lineage, ctx.cfg.distill, tc.to_json(), ensure_dir(out));
  std::string vals;
  for (const auto& r : lineage.records) vals += " " + fmt3(r.val_combined);
  ctx.log("distill: source validation per generation" + vals + "; chosen " + std::to_string(lineage.chosen));
}

nn::FeatureExtractor load_model(const fs::path& path, int generation) {
  if (fs::is_directory(path)) {
    auto index = nn::load_lineage_index(path);
    try {
      std::vector<nn::GenerationRecord> recs;
      for (const auto& g : index.at("generations"))
        recs.push_back({g.at("generation").get<int>(), g.at("val_amp").get<double>(), g.at("val_phd").get<double>(),
                        g.at("val_combined").get<double>()});
      const int chosen = generation >= 0 ? nn::select_generation(recs, nn::SelectCriterion::Explicit, generation)
                                         : index.at("chosen").get<int>();
      if (chosen < 0 || chosen >= static_cast<int>(recs.size()))
        throw RangeError("chosen generation " + std::to_string(chosen) + " not in lineage");
      return nn::load_extractor(path / index.at("generations").at(chosen).at("checkpoint").get<std::string>())
          .extractor;
    } catch (const json::exception& e) {
      throw FormatError("lineage index " + (path / "lineage.json").string() + ": " + e.what());
    }
  }
  if (generation > 0) throw ConfigError("--generation needs a lineage directory");
  return nn::load_extractor(path).extractor;
}

std::vector<prep::TaskId> select_tasks(const prep::SampleStore& store, const RunConfig& cfg) {
  std::vector<prep::TaskId> out;
  if (cfg.metatest.tasks != "all") {
    auto id = prep::TaskId::parse(cfg.metatest.tasks);
    store.task(id);
    out.push_back(id);
    return out;
  }
  for (const auto& [id, samples] : store.tasks)
    if (id.scenario_id == cfg.target) out.push_back(id);
  if (out.empty()) throw ValidationError("no tasks for target scenario '" + cfg.target + "'");
  return out;
}

std::string report_stem(const eval::TaskReport& r) {
  auto name = eval::confusion_file_name(r);
  return name.substr(std::string("confusion_").size(), name.size() - 14);
}

fs::path report_json_name(const eval::TaskReport& r) { return "report_" + report_stem(r) + ".json"; }

void write_reports(const std::vector<eval::TaskReport>& reports, const fs::path& out) {
  ensure_dir(out);
  for (const auto& r : reports) write_json_file(r.to_json(), out / report_json_name(r));
}

// kind empty = few-shot with the configured features and classifier.
void do_evaluate(const Context& ctx, const fs::path& model, int generation, const fs::path& target,
                 const std::vector<std::string>& kinds, const fs::path& out, const fs::path& export_dir = {}) {
  auto fx = load_model(model, generation);
  auto store = prep::load_store(target);
  auto tasks = select_tasks(store, ctx.cfg);
  std::vector<eval::TaskReport> reports;
  for (const auto& task : tasks)
    for (int k : ctx.cfg.metatest.shots)
      for (const auto& kind : kinds) {
        auto p = ctx.cfg.metatest.protocol(k);
        auto r = kind.empty() ? eval::run_metatest(fx, store, task, p)
                              : eval::run_baseline(eval::parse_baseline(kind), fx, store, task, p);
        ctx.log((kind.empty() ? std::string("metatest") : kind) + " " + task.str() + " k=" + std::to_string(k) +
                ": " + fmt3(r.mean_accuracy) + " +- " + fmt3(r.std_accuracy));
        if (kind.empty() && !export_dir.empty()) {
          auto clf = eval::fit_episode_classifier(fx, store, task, p, 0);
          write_json_file(fewshot::classifier_to_json(clf),
                          ensure_dir(export_dir) / ("classifier_" + report_stem(r) + ".json"));
        }
        reports.push_back(std::move(r));
      }
  write_reports(reports, out);
}

void do_report(const Context& ctx, const fs::path& in, const fs::path& out) {
  if (!fs::is_directory(in)) throw IoError("not a directory: " + in.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(in))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<eval::TaskReport> reports;
  for (const auto& f : files) {
    auto j = read_json_file(f);
    if (j.is_object() && j.value("kind", "") == "task_report") reports.push_back(eval::TaskReport::from_json(j));
  }
  if (reports.empty()) throw ValidationError("no task reports in " + in.string());
  auto written = eval::emit_report(reports, out, {ctx.cfg.report.csv, ctx.cfg.report.json});
  ctx.log("report: " + std::to_string(reports.size()) + " reports, " + std::to_string(written.size()) + " files in " +
          out.string());
}

fs::path pick(const std::string& flag, const std::string& fallback) { return flag.empty() ? fs::path(fallback) : fs::path(flag); }

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot WiFi CSI crowd counting"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, in, out_dir, teacher, model, target, kind;
  int generation = -1;
  bool quiet = false;
  bool dry_run = false;
  Overrides ov;
  app.add_option("--config", config_path, "JSON run config");
  app.add_flag("-q,--quiet", quiet, "suppress log lines");
  app.add_flag("--dry-run", dry_run, "print the effective config and exit");
  ov.add<std::uint64_t>(&app, "--global-seed", "/seed", "global seed");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--out", out_dir, "output directory");
  ov.add<std::uint64_t>(synth, "--seed", "/synth/base_seed", "dataset seed");

  auto* preprocess = app.add_subcommand("preprocess", "segment and preprocess recordings");
  preprocess->add_option("--in", in, "dataset directory");
  preprocess->add_option("--out", out_dir, "sample store directory");
  ov.add<int>(preprocess, "--tw", "/preprocess/tw", "window length");
  ov.add<int>(preprocess, "--ts", "/preprocess/ts", "window stride");

  auto* train = app.add_subcommand("train", "train the generation-0 extractor on the source scenario");
  train->add_option("--in", in, "sample store directory");
  train->add_option("--out", out_dir, "model directory");
  ov.add<int>(train, "--epochs", "/train/epochs", "epochs");
  ov.add<int>(train, "--batch", "/train/batch_size", "batch size");
  ov.add<double>(train, "--lr", "/train/learning_rate", "Adam learning rate");
  ov.add<std::uint64_t>(train, "--seed", "/train/seed", "seed");
  ov.add<std::string>(train, "--source", "/source", "source scenario id");

  auto* distill = app.add_subcommand("distill", "distill a lineage of generations");
  distill->add_option("--teacher", teacher, "generation-0 checkpoint");
  distill->add_option("--in", in, "sample store directory");
  distill->add_option("--out", out_dir, "lineage directory");
  ov.add<int>(distill, "--generations", "/distill/generations", "generations K");
  ov.add<double>(distill, "--alpha", "/distill/alpha", "hard-label weight");
  ov.add<int>(distill, "--epochs", "/distill/epochs", "epochs per generation");
  ov.add<int>(distill, "--batch", "/distill/batch_size", "batch size");
  ov.add<double>(distill, "--lr", "/distill/learning_rate", "SGD learning rate");
  ov.add<double>(distill, "--weight-decay", "/distill/weight_decay", "weight decay");
  ov.add<double>(distill, "--temperature", "/distill/temperature", "softmax temperature");
  ov.add<std::uint64_t>(distill, "--seed", "/distill/seed", "seed");

  auto add_eval_surface = [&](CLI::App* sc) {
    sc->add_option("--model", model, "checkpoint file or lineage directory");
    sc->add_option("--generation", generation, "lineage generation (default: chosen)");
    sc->add_option("--target", target, "sample store directory");
    sc->add_option("--out", out_dir, "results directory");
    ov.add<std::string>(sc, "--task", "/metatest/tasks", "task id scenario:motion, or all");
    ov.add<std::string>(sc, "--scenario", "/target", "target scenario for --task all");
    ov.add<std::vector<int>>(sc, "--shots", "/metatest/shots", "shots per class")->delimiter(',');
    ov.add<int>(sc, "--repeats", "/metatest/repeats", "episodes");
    ov.add<int>(sc, "--queries", "/metatest/queries_per_class", "queries per class");
    ov.add<std::string>(sc, "--tap", "/metatest/tap", "cnn1, cnn2, fc or raw");
    ov.add<std::string>(sc, "--modality", "/metatest/modality", "amp, phd or both");
    ov.add<std::string>(sc, "--classifier", "/metatest/classifier/kind", "lr, svm or nn");
    ov.add<int>(sc, "--dup", "/metatest/classifier/duplication_factor", "support duplication");
    ov.add<std::uint64_t>(sc, "--seed", "/metatest/seed", "episode seed");
  };
  auto* metatest = app.add_subcommand("metatest", "few-shot evaluation on target tasks");
  add_eval_surface(metatest);
  std::string export_dir;
  metatest->add_option("--export-classifier", export_dir, "also write the repeat-0 classifier of each setting here");
  auto* baseline = app.add_subcommand("baseline", "baseline evaluation on target tasks");
  add_eval_surface(baseline);
  baseline->add_option("--kind", kind, "direct-amp, direct-phd, raw-lr, amp-only, phd-only or configured")
      ->required();

  auto* report = app.add_subcommand("report", "collect task reports into summary files");
  report->add_option("--in", in, "results directory");
  report->add_option("--out", out_dir, "report directory");
  std::string formats;
  report->add_option("--format", formats, "csv,json");

  auto* run = app.add_subcommand("run", "full pipeline under one output root");
  run->add_option("--out", out_dir, "output root")->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "ERROR: usage: " << e.what() << '\n';
    return 2;
  }

  try {
    json j = config_path.empty() ? json::object() : read_config_file(config_path);
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    ov.apply(j);
    if (!formats.empty()) {
      json f = json::array();
      std::stringstream ss(formats);
      for (std::string tok; std::getline(ss, tok, ',');) f.push_back(tok);
      j["report"]["format"] = f;
    }
    Context ctx{RunConfig::from_json(j), Log(err, quiet)};
    if (*baseline && kind != "configured") eval::parse_baseline(kind);
    if (dry_run) {
      out << ctx.cfg.to_json().dump(2) << '\n';
      return 0;
    }
    const auto& p = ctx.cfg.paths;

    if (*synth) {
      do_synth(ctx, pick(out_dir, p.data));
    } else if (*preprocess) {
      do_preprocess(ctx, pick(in, p.data), pick(out_dir, p.samples));
    } else if (*train) {
      do_train(ctx, pick(in, p.samples), pick(out_dir, p.model));
    } else if (*distill) {
      do_distill(ctx, pick(teacher, (fs::path(p.model) / "teacher.ckpt").string()), pick(in, p.samples),
                 pick(out_dir, p.lineage));
    } else if (*metatest) {
      do_evaluate(ctx, pick(model, p.lineage), generation, pick(target, p.samples), {""}, pick(out_dir, p.results),
                  export_dir);
    } else if (*baseline) {
      std::vector<std::string> kinds =
          kind == "configured" ? ctx.cfg.metatest.baselines : std::vector<std::string>{kind};
      for (const auto& k : kinds) eval::parse_baseline(k);
      do_evaluate(ctx, pick(model, p.lineage), generation, pick(target, p.samples), kinds, pick(out_dir, p.results));
    } else if (*run) {
      const fs::path root = ensure_dir(out_dir);
      write_json_file(ctx.cfg.to_json(), root / "config.json");
      do_synth(ctx, root / p.data);
      do_preprocess(ctx, root / p.data, root / p.samples);
      do_train(ctx, root / p.samples, root / p.model);
      do_distill(ctx, root / p.model / "teacher.ckpt", root / p.samples, root / p.lineage);
      std::vector<std::string> kinds{""};
      kinds.insert(kinds.end(), ctx.cfg.metatest.baselines.begin(), ctx.cfg.metatest.baselines.end());
      do_evaluate(ctx, root / p.lineage, -1, root / p.samples, kinds, root / p.results);
      do_report(ctx, root / p.results, root / p.report);
    } else if (*report) {
      do_report(ctx, pick(in, p.results), pick(out_dir, p.report));
    }
    return 0;
  } catch (const Error& e) {
    err << "ERROR: " << e.category() << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "ERROR: internal: " << e.what() << '\n';
    return 1;
  }
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace dasecount::cli
