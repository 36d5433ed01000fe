#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "dasecount/cli.hpp"
#include "test_util.hpp"

using namespace dasecount;
namespace fs = std::filesystem;

namespace {

const std::string kSmoke = DASECOUNT_SOURCE_DIR "/configs/smoke.json";

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string last_line(const std::string& s) {
  auto t = s;
  while (!t.empty() && t.back() == '\n') t.pop_back();
  auto pos = t.rfind('\n');
  return pos == std::string::npos ? t : t.substr(pos + 1);
}

nlohmann::json dry(std::vector<std::string> args) {
  args.insert(args.begin(), {"--config", kSmoke, "--dry-run"});
  auto r = run_cli(args);
  EXPECT_EQ(r.code, 0) << r.err;
  return nlohmann::json::parse(r.out);
}

void expect_same_tree(const fs::path& a, const fs::path& b) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ASSERT_TRUE(fs::exists(b / e.path().filename())) << e.path().filename();
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path().filename();
    ++n;
  }
  EXPECT_GT(n, 0u);
}

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(testutil::temp_dir("cli_pipeline"));
    auto r = run_cli({"--config", kSmoke, "-q", "run", "--out", root_->string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { delete root_; }
  static fs::path* root_;
};

fs::path* Pipeline::root_ = nullptr;

}  // namespace

TEST(Cli, MissingConfigFile) {
  auto r = run_cli({"synth", "--config", "missing.json", "--out", "x"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(last_line(r.err).rfind("ERROR: config: file not found", 0), 0u) << r.err;
}

TEST(Cli, UnknownConfigKeysRejected) {
  auto dir = testutil::temp_dir("cli_unknown");
  for (const std::string body : {R"({"seed": 1, "bogus": 2})", R"({"train": {"epochs": 3, "epoch": 3}})",
                                 R"({"metatest": {"classifier": {"kind": "lr", "rate": 1}}})"}) {
    std::ofstream(dir / "c.json") << body;
    auto r = run_cli({"--config", (dir / "c.json").string(), "--dry-run", "train"});
    EXPECT_EQ(r.code, 2) << body;
    EXPECT_NE(r.err.find("ERROR: config:"), std::string::npos) << r.err;
    EXPECT_NE(r.err.find("unknown key"), std::string::npos) << r.err;
  }
}

TEST(Cli, InvalidValuesAreConfigErrors) {
  for (std::vector<std::string> args : {std::vector<std::string>{"metatest", "--tap", "bogus"},
                                        {"train", "--epochs", "-1"},
                                        {"distill", "--alpha", "1.5"},
                                        {"preprocess", "--tw", "0"},
                                        {"baseline", "--kind", "nope"}}) {
    args.insert(args.begin(), {"--config", kSmoke, "--dry-run"});
    auto r = run_cli(args);
    EXPECT_EQ(r.code, 2) << args[3];
    EXPECT_EQ(last_line(r.err).rfind("ERROR: ", 0), 0u) << r.err;
  }
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
  auto r = run_cli({"train", "--epochs", "many"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("ERROR: usage:", 0), 0u);
  EXPECT_EQ(run_cli({"--help"}).code, 0);
}

TEST(Cli, FlagsOverrideConfigKeys) {
  struct Case {
    std::vector<std::string> args;
    std::string pointer;
    nlohmann::json expected;
  };
  const std::vector<Case> cases = {
      {{"synth", "--seed", "77"}, "/synth/base_seed", 77},
      {{"preprocess", "--tw", "150"}, "/preprocess/tw", 150},
      {{"preprocess", "--ts", "25"}, "/preprocess/ts", 25},
      {{"train", "--epochs", "4"}, "/train/epochs", 4},
      {{"train", "--batch", "16"}, "/train/batch_size", 16},
      {{"train", "--lr", "0.002"}, "/train/learning_rate", 0.002},
      {{"train", "--seed", "9"}, "/train/seed", 9},
      {{"train", "--source", "roomC"}, "/source", "roomC"},
      {{"distill", "--generations", "3"}, "/distill/generations", 3},
      {{"distill", "--alpha", "0.25"}, "/distill/alpha", 0.25},
      {{"distill", "--epochs", "7"}, "/distill/epochs", 7},
      {{"distill", "--batch", "32"}, "/distill/batch_size", 32},
      {{"distill", "--lr", "0.05"}, "/distill/learning_rate", 0.05},
      {{"distill", "--weight-decay", "0.001"}, "/distill/weight_decay", 0.001},
      {{"distill", "--temperature", "2"}, "/distill/temperature", 2.0},
      {{"distill", "--seed", "4"}, "/distill/seed", 4},
      {{"metatest", "--task", "roomB-NLOS:mixed"}, "/metatest/tasks", "roomB-NLOS:mixed"},
      {{"metatest", "--scenario", "roomC"}, "/target", "roomC"},
      {{"metatest", "--shots", "5,1,3"}, "/metatest/shots", {5, 1, 3}},
      {{"metatest", "--repeats", "4"}, "/metatest/repeats", 4},
      {{"metatest", "--queries", "6"}, "/metatest/queries_per_class", 6},
      {{"metatest", "--tap", "cnn1"}, "/metatest/tap", "cnn1"},
      {{"metatest", "--modality", "amp"}, "/metatest/modality", "amp"},
      {{"metatest", "--classifier", "svm"}, "/metatest/classifier/kind", "svm"},
      {{"metatest", "--dup", "2"}, "/metatest/classifier/duplication_factor", 2},
      {{"baseline", "--kind", "raw-lr", "--seed", "12"}, "/metatest/seed", 12},
      {{"report", "--format", "csv"}, "/report/format", {"csv"}},
      {{"--global-seed", "99", "train"}, "/seed", 99},
  };
  auto base = dry({"train"});
  for (const auto& c : cases) {
    auto j = dry(c.args);
    const nlohmann::json::json_pointer p(c.pointer);
    EXPECT_EQ(j[p], c.expected) << c.pointer;
    if (c.pointer != "/seed") {
      EXPECT_NE(base[p], c.expected) << c.pointer << " flag must differ from the file value";
    }
  }
}

TEST(Cli, GlobalSeedFansOutToUnsetSections) {
  auto a = dry({"--global-seed", "1", "train"});
  auto b = dry({"--global-seed", "2", "train"});
  for (const char* p : {"/synth/base_seed", "/train/seed", "/distill/seed", "/metatest/seed",
                        "/metatest/classifier/seed"}) {
    const nlohmann::json::json_pointer ptr(p);
    EXPECT_NE(a[ptr], b[ptr]) << p;
  }
  EXPECT_NE(a["/train/seed"_json_pointer], a["/distill/seed"_json_pointer]);
  // Explicit section seeds are kept.
  auto c = dry({"--global-seed", "1", "train", "--seed", "5"});
  EXPECT_EQ(c["/train/seed"_json_pointer], 5);
  EXPECT_EQ(c["/distill/seed"_json_pointer], a["/distill/seed"_json_pointer]);
}

TEST_F(Pipeline, FullRunPopulatesReport) {
  const auto report = *root_ / "report";
  auto csv = slurp(report / "summary.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 17);
  EXPECT_TRUE(fs::exists(report / "summary.json"));
  EXPECT_TRUE(fs::exists(report / "confusion_roomB-NLOS_static_k2_cnn2_both_lr.csv"));
  EXPECT_TRUE(fs::exists(report / "confusion_roomB-NLOS_dynamic_k1_raw_both_lr.csv"));
  EXPECT_TRUE(fs::exists(*root_ / "lineage" / "gen1.ckpt"));
  EXPECT_TRUE(fs::exists(*root_ / "config.json"));
}

TEST_F(Pipeline, RerunIsByteIdentical) {
  auto again = testutil::temp_dir("cli_pipeline_again");
  auto r = run_cli({"--config", kSmoke, "-q", "run", "--out", again.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  expect_same_tree(*root_ / "report", again / "report");
  expect_same_tree(*root_ / "lineage", again / "lineage");
  expect_same_tree(*root_ / "samples", again / "samples");
}

TEST_F(Pipeline, SubcommandsMatchRun) {
  auto d = testutil::temp_dir("cli_steps");
  auto s = [&](const char* sub) { return (d / sub).string(); };
  auto step = [&](std::vector<std::string> args) {
    args.insert(args.begin(), {"--config", kSmoke, "-q"});
    auto r = run_cli(args);
    ASSERT_EQ(r.code, 0) << args[3] << ": " << r.err;
  };
  step({"synth", "--out", s("data")});
  step({"preprocess", "--in", s("data"), "--out", s("samples")});
  step({"train", "--in", s("samples"), "--out", s("model")});
  step({"distill", "--teacher", s("model") + "/teacher.ckpt", "--in", s("samples"), "--out", s("lineage")});
  step({"metatest", "--model", s("lineage"), "--target", s("samples"), "--task", "all", "--out", s("results")});
  step({"baseline", "--kind", "configured", "--model", s("lineage"), "--target", s("samples"), "--out",
        s("results")});
  step({"report", "--in", s("results"), "--out", s("report"), "--format", "csv,json"});
  expect_same_tree(*root_ / "report", d / "report");
}

TEST_F(Pipeline, ShortClassIsNamed) {
  auto d = testutil::temp_dir("cli_short");
  // A stride of 128 leaves 3 windows per recording.
  auto r = run_cli({"--config", kSmoke, "-q", "preprocess", "--in", (*root_ / "data").string(), "--out",
                (d / "samples").string(), "--ts", "128"});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run_cli({"--config", kSmoke, "-q", "metatest", "--model", (*root_ / "lineage").string(), "--target",
           (d / "samples").string(), "--task", "roomB-NLOS:static", "--shots", "5", "--out", (d / "res").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(last_line(r.err).rfind("ERROR: validation: class 0", 0), 0u) << r.err;
  EXPECT_NE(r.err.find("has 3 samples"), std::string::npos) << r.err;
}

TEST_F(Pipeline, ModelSelection) {
  auto d = testutil::temp_dir("cli_models");
  const auto lineage = (*root_ / "lineage").string();
  const auto samples = (*root_ / "samples").string();
  for (std::string g : {"0", "1"}) {
    auto r = run_cli({"--config", kSmoke, "-q", "metatest", "--model", lineage, "--generation", g, "--target", samples,
                  "--task", "roomB-NLOS:static", "--shots", "1", "--out", (d / g).string()});
    EXPECT_EQ(r.code, 0) << r.err;
  }
  auto r = run_cli({"--config", kSmoke, "-q", "metatest", "--model", lineage, "--generation", "5", "--target", samples,
                "--out", (d / "x").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(last_line(r.err).rfind("ERROR: range:", 0), 0u) << r.err;
  r = run_cli({"--config", kSmoke, "-q", "metatest", "--model", (*root_ / "model" / "teacher.ckpt").string(), "--target",
           samples, "--task", "roomB-NLOS:static", "--shots", "1", "--out", (d / "t").string()});
  EXPECT_EQ(r.code, 0) << r.err;
  // The teacher is generation 0 of the lineage.
  EXPECT_EQ(slurp(d / "t" / "report_roomB-NLOS_static_k1_cnn2_both_lr.json"),
            slurp(d / "0" / "report_roomB-NLOS_static_k1_cnn2_both_lr.json"));
  r = run_cli({"--config", kSmoke, "-q", "metatest", "--model", (d / "nothing.ckpt").string(), "--target", samples,
           "--out", (d / "y").string()});
  EXPECT_EQ(r.code, 2);
}

TEST_F(Pipeline, ReportWithoutInputsFails) {
  auto d = testutil::temp_dir("cli_empty_report");
  auto r = run_cli({"--config", kSmoke, "-q", "report", "--in", d.string(), "--out", (d / "out").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(last_line(r.err).rfind("ERROR: validation:", 0), 0u);
}

TEST_F(Pipeline, ExportedClassifierReproducesFirstRepeat) {
  auto d = testutil::temp_dir("cli_export");
  const auto teacher = *root_ / "model" / "teacher.ckpt";
  const auto samples = *root_ / "samples";
  auto r = run_cli({"--config", kSmoke, "-q", "metatest", "--model", teacher.string(), "--target", samples.string(),
                    "--task", "roomB-NLOS:dynamic", "--shots", "2", "--out", (d / "res").string(),
                    "--export-classifier", (d / "clf").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto cj = nlohmann::json::parse(slurp(d / "clf" / "classifier_roomB-NLOS_dynamic_k2_cnn2_both_lr.json"));
  EXPECT_EQ(cj.at("kind"), "lr");
  EXPECT_EQ(cj.at("tap"), "cnn2");
  EXPECT_EQ(cj.at("modality"), "both");
  EXPECT_EQ(cj.at("weights").size(), 3u);
  auto report = nlohmann::json::parse(slurp(d / "res" / "report_roomB-NLOS_dynamic_k2_cnn2_both_lr.json"));

  auto clf = fewshot::classifier_from_json(cj);
  auto fx = nn::load_extractor(teacher).extractor;
  auto store = prep::load_store(samples);
  auto task = prep::TaskId::parse("roomB-NLOS:dynamic");
  const auto& proto = report.at("protocol");
  auto ep = fewshot::sample_episode(store, task, 2, proto.at("queries_per_class").get<int>(),
                                    eval::repeat_seed(proto.at("seed").get<std::uint64_t>(), 0));
  std::vector<const prep::Sample*> refs;
  for (auto i : ep.query) refs.push_back(&store.task(task)[i]);
  auto q = fewshot::extract_features(fx, refs, clf.spec, 1);
  auto pred = fewshot::classify(clf, q).labels;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == ep.query_labels[i];
  EXPECT_DOUBLE_EQ(static_cast<double>(hit) / static_cast<double>(pred.size()),
                   report.at("accuracies").at(0).get<double>());
}
