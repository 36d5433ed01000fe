// Acceptance checks 1-10. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Usage: acceptance [criterion numbers...]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include "dasecount/cli.hpp"
#include "dasecount/csi.hpp"
#include "dasecount/distill.hpp"
#include "dasecount/fewshot.hpp"
#include "dasecount/json_util.hpp"
#include "dasecount/nn_kernels.hpp"
#include "dasecount/preprocess.hpp"
#include "dasecount/synth.hpp"
#include "dasecount/trainer.hpp"
#include "nn_fixtures.hpp"
#include "test_util.hpp"

using namespace dasecount;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

nn::ArchSpec tiny_arch(int c_in, int k) {
  nn::ArchSpec a;
  a.in_channels = c_in;
  a.num_classes = k;
  a.in_h = 8;
  a.in_w = 8;
  a.width = 4;
  a.pools = {{2, 2}, {2, 2}};
  return a;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Outcome c1_parameter_count() {
  const auto n = nn::build_submodel(6, 9, 1).parameter_count();
  return {n == 189513, "parameters " + std::to_string(n)};
}

Outcome c2_shape_chain() {
  auto amp = nn::build_submodel(6, 9, 1);
  auto phd = nn::build_submodel(4, 9, 2);
  std::vector<float> x(amp.input_size(), 0.5f);
  std::vector<std::pair<int, int>> trace;
  amp.forward(x, 1, nn::Tap::Logits, &trace);
  const std::vector<std::pair<int, int>> want = {{50, 57}, {25, 28}, {12, 14}, {6, 7}, {3, 3}, {1, 1}};
  std::string chain;
  for (auto [h, w] : trace) chain += std::to_string(h) + "x" + std::to_string(w) + " ";
  const auto tap = amp.forward(x, 1, nn::Tap::CNN2).size();

  nn::FeatureExtractor fx{amp, phd, 0};
  prep::SampleStore store;
  store.num_classes = 9;
  const prep::TaskId task{"target", MotionType::Static};
  store.tasks[task] = testutil::random_samples(9, 6, 6, 4, 200, 114, 3);
  std::string sizes;
  bool ok = trace == want && tap == 576;
  for (int k : {5, 1}) {
    auto ep = fewshot::sample_episode(store, task, k, 1, 1);
    std::vector<const prep::Sample*> support;
    for (auto i : ep.support) support.push_back(&store.task(task)[i]);
    auto m = fewshot::extract_features(fx, support, {false, nn::Tap::CNN2, nn::Modality::Both}, 5);
    sizes += std::to_string(m.n()) + "x" + std::to_string(m.dim()) + " ";
    ok = ok && m.n() == static_cast<std::size_t>(45 * k) && m.dim() == 1152;
  }
  return {ok, "chain " + chain + "tap " + std::to_string(tap) + " support " + sizes};
}

Outcome c3_gradient() {
  nn::CnnSubmodel<double> m(tiny_arch(4, 3), 12);
  const int batch = 3;
  Rng rng(2);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> x(batch * m.input_size());
  for (auto& v : x) v = g(rng);
  auto p = m.parameters();
  for (auto& v : p) v += 0.05 * g(rng);
  const std::vector<int> labels = {0, 2, 1};
  auto loss_at = [&] {
    nn::TrainCache<double> cache;
    auto z = m.forward_train(x, batch, cache, false);
    return nn::kernels::cross_entropy<double>(z, labels, 3, nullptr);
  };
  nn::TrainCache<double> cache;
  m.zero_grad();
  auto z = m.forward_train(x, batch, cache, false);
  std::vector<double> dz(z.size());
  nn::kernels::cross_entropy<double>(z, labels, 3, dz.data());
  m.backward(cache, dz);
  std::vector<double> analytic(m.gradients().begin(), m.gradients().end());
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double up = loss_at();
    p[i] = keep - h;
    const double down = loss_at();
    p[i] = keep;
    const double numeric = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(numeric - analytic[i]) /
                                std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6}));
  }
  return {worst <= 1e-3, std::to_string(analytic.size()) + " parameters, max rel err " + fmt("%.2e", worst)};
}

Outcome c4_preprocess() {
  Rng rng(44);
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::uniform_int_distribution<int> tlen(8, 60), sc(4, 40);
  double worst_mean = 0, worst_std = 0, worst_step = 0;
  for (int s = 0; s < 100; ++s) {
    auto rec = CsiRecording::zeros({tlen(rng), 3, 2, sc(rng)}, {"r", MotionType::Static, 0, 100.0, std::nullopt});
    for (auto& v : rec.data) v = {g(rng) * 3.0f + 1.0f, g(rng) * 3.0f};
    auto a = prep::amp_pipeline(rec);
    const std::size_t layer = static_cast<std::size_t>(a.d1) * a.d2;
    for (int l = 0; l < a.d0; ++l) {
      double m = 0, m2 = 0;
      for (std::size_t i = 0; i < layer; ++i) m += a.v[l * layer + i];
      m /= static_cast<double>(layer);
      for (std::size_t i = 0; i < layer; ++i) m2 += (a.v[l * layer + i] - m) * (a.v[l * layer + i] - m);
      worst_mean = std::max(worst_mean, std::abs(m));
      worst_std = std::max(worst_std, std::abs(std::sqrt(m2 / static_cast<double>(layer)) - 1.0));
    }
    std::vector<double> phase(static_cast<std::size_t>(rec.dims.nsc));
    for (int t = 0; t < rec.dims.t; ++t)
      for (int r = 0; r < rec.dims.nr; ++r) {
        for (int j = 0; j < rec.dims.nsc; ++j) phase[j] = std::arg(std::complex<double>(rec.at(t, r, 0, j)));
        prep::unwrap(phase);
        for (int j = 1; j < rec.dims.nsc; ++j) worst_step = std::max(worst_step, std::abs(phase[j] - phase[j - 1]));
      }
  }
  std::uniform_int_distribution<int> tw(1, 300), tt(0, 5000);
  int formula_bad = 0;
  for (int i = 0; i < 1000; ++i) {
    prep::SegmentationConfig cfg{tw(rng), 0};
    cfg.ts = std::uniform_int_distribution<int>(1, cfg.tw)(rng);
    const int t = tt(rng);
    const std::size_t want = t < cfg.tw ? 0 : static_cast<std::size_t>((t - cfg.tw) / cfg.ts + 1);
    if (prep::segment_count(t, cfg) != want) ++formula_bad;
    // Cross-check against the windows actually produced.
    if (i < 200 && t >= cfg.tw && t < 1500) {
      auto rec = CsiRecording::zeros({t, 2, 1, 1}, {"r", MotionType::Static, 0, 100.0, std::nullopt});
      if (prep::segment(rec, cfg).size() != want) ++formula_bad;
    }
  }
  const bool ok = worst_mean <= 1e-5 && worst_std <= 1e-4 && worst_step <= M_PI && formula_bad == 0;
  return {ok, "max |mean| " + fmt("%.1e", worst_mean) + ", max |std-1| " + fmt("%.1e", worst_std) +
                  ", max unwrap step " + fmt("%.3f", worst_step) + ", formula mismatches " +
                  std::to_string(formula_bad)};
}

Outcome c5_impairment() {
  synth::SceneConfig scene;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto on = synth::generate_recording(scene, {}, MotionType::Mixed, 4, 20, seed, {true, 0.02});
    auto off = synth::generate_recording(scene, {}, MotionType::Mixed, 4, 20, seed, {false, 0.02});
    auto a = prep::phd_pipeline(on), b = prep::phd_pipeline(off);
    if (a.v.size() != b.v.size()) return {false, "shape mismatch"};
    for (std::size_t i = 0; i < a.v.size(); ++i) worst = std::max(worst, std::abs(double(a.v[i]) - b.v[i]));
  }
  return {worst <= 1e-6, "max |delta phd| " + fmt("%.2e", worst) + " over 10 seeds"};
}

Outcome c6_distill() {
  Rng rng(6);
  std::normal_distribution<double> g(0.0, 2.0);
  const int n = 16, k = 9;
  std::vector<double> z(n * k), teacher(n * k);
  std::vector<int> labels(n);
  for (auto& v : z) v = g(rng);
  for (int i = 0; i < n; ++i) labels[i] = i % k;
  for (auto& v : teacher) v = std::abs(g(rng)) + 0.01;
  for (int i = 0; i < n; ++i) {
    double s = 0;
    for (int c = 0; c < k; ++c) s += teacher[i * k + c];
    for (int c = 0; c < k; ++c) teacher[i * k + c] /= s;
  }
  const double ce = nn::kernels::cross_entropy<double>(z, labels, k, nullptr);
  const auto a1 = nn::distill_loss<double>(z, teacher, labels, k, 1.0, 1.0, nullptr);
  const double d_ce = std::abs(a1.total - ce);

  auto self = nn::kernels::softmax_rows(std::span<const double>(z), n, k);
  std::vector<double> self_d(self.begin(), self.end());
  const double kl = std::abs(nn::distill_loss<double>(z, self_d, labels, k, 0.0, 1.0, nullptr).kl);

  prep::SampleStore store;
  auto samples = testutil::random_samples(3, 6, 6, 4, 8, 8, 9);
  auto refs = testutil::refs(samples);
  nn::FeatureExtractor gen0{nn::CnnSubmodel<float>(tiny_arch(6, 3), 1), nn::CnnSubmodel<float>(tiny_arch(4, 3), 2), 0};
  std::vector<int> lab;
  for (auto* s : refs) lab.push_back(s->label);
  nn::DistillConfig cfg;
  cfg.generations = 6;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  auto lineage = nn::distill_lineage(gen0, refs, nn::stratified_split(lab, 0.2, 1), cfg);
  bool equal_params = true;
  for (const auto& m : lineage.models)
    equal_params = equal_params && m.amp.parameter_count() == gen0.amp.parameter_count() &&
                   m.phd.parameter_count() == gen0.phd.parameter_count();
  const bool ok = d_ce <= 1e-9 && kl <= 1e-9 && lineage.models.size() == 7 && equal_params;
  return {ok, "|alpha=1 - CE| " + fmt("%.1e", d_ce) + ", KL(self) " + fmt("%.1e", kl) + ", lineage size " +
                  std::to_string(lineage.models.size()) + (equal_params ? ", equal sizes" : ", sizes differ")};
}

Outcome c7_duplication() {
  double worst = 0.0;
  for (int d : {20, 1152}) {
    Rng rng(7 + d);
    std::normal_distribution<double> g(0.0, 1.0);
    fewshot::FeatureMatrix base;
    base.rows.resize(45, d);
    for (int i = 0; i < 45; ++i) {
      base.labels.push_back(i % 9);
      for (int j = 0; j < d; ++j) base.rows(i, j) = g(rng) + (j % 9 == i % 9 ? 1.0 : 0.0);
    }
    std::vector<std::size_t> idx(45);
    for (std::size_t i = 0; i < 45; ++i) idx[i] = i;
    auto dup = fewshot::take_rows(base, idx, base.labels, 5);
    fewshot::ClassifierConfig cfg;
    cfg.max_iters = 500;
    cfg.duplication_factor = 1;
    auto a = fewshot::train_classifier(base, 9, cfg);
    cfg.duplication_factor = 5;
    auto b = fewshot::train_classifier(dup, 9, cfg);
    worst = std::max({worst, (a.weights - b.weights).cwiseAbs().maxCoeff(), (a.bias - b.bias).cwiseAbs().maxCoeff()});
  }
  return {worst <= 1e-9, "max |W1 - W5| " + fmt("%.2e", worst) + " (d = 20 and 1152)"};
}

std::map<std::string, double> read_summary(const fs::path& csv) {
  std::map<std::string, double> out;
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string tok; std::getline(ss, tok, ',');) f.push_back(tok);
    if (f.size() < 9) continue;
    out[f[0] + "|" + f[2] + "|" + f[3] + "|" + f[4] + "|" + f[5]] = std::stod(f[6]);
  }
  return out;
}

fs::path work_root() {
  if (const char* d = std::getenv("DASECOUNT_ACCEPT_DIR")) return d;
  return fs::temp_directory_path() / "dasecount_acceptance";
}

const std::string kBundled = DASECOUNT_SOURCE_DIR "/configs/bundled.json";

int run_bundled(const fs::path& out) {
  fs::remove_all(out);
  return cli::dispatch({"--config", kBundled, "run", "--out", out.string()}, std::cout, std::cerr);
}

Outcome c8_end_to_end() {
  const auto root = work_root() / "run1";
  const auto t0 = std::chrono::steady_clock::now();
  const int code = run_bundled(root);
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  if (code != 0) return {false, "pipeline exit code " + std::to_string(code)};

  auto train = read_json_file(root / "model" / "train.json");
  const double src_val = train.at("val_combined").get<double>();
  auto summary = read_summary(root / "report" / "summary.csv");
  auto cfg = cli::RunConfig::from_json(read_json_file(root / "config.json"));

  double few5 = 0, few1 = 0, direct = 0, raw = 0;
  int tasks = 0;
  bool ordered = true;
  std::string per_task;
  for (auto m : kAllMotions) {
    const std::string t = cfg.target + ":" + std::string(to_string(m));
    auto get = [&](int k, const char* tap, const char* mod, const char* clf) {
      auto it = summary.find(t + "|" + std::to_string(k) + "|" + tap + "|" + mod + "|" + clf);
      if (it == summary.end()) throw ValidationError("summary lacks a row for " + t);
      return it->second;
    };
    const double f5 = get(5, "cnn2", "both", "lr"), f1 = get(1, "cnn2", "both", "lr");
    const double dt = std::max(get(5, "fc", "amp", "direct"), get(5, "fc", "phd", "direct"));
    const double rl = get(5, "raw", "both", "lr");
    few5 += f5;
    few1 += f1;
    direct += dt;
    raw += rl;
    ordered = ordered && f5 >= f1;
    ++tasks;
    per_task += " " + std::string(to_string(m)) + "[5shot " + fmt("%.3f", f5) + " 1shot " + fmt("%.3f", f1) +
                " direct " + fmt("%.3f", dt) + " raw " + fmt("%.3f", rl) + "]";
  }
  few5 /= tasks;
  few1 /= tasks;
  direct /= tasks;
  raw /= tasks;
  const bool a = src_val >= 0.90;
  const bool b = few5 - direct >= 0.20 && few5 - raw >= 0.10;
  const bool c = ordered;
  const bool time_ok = minutes <= 30.0;
  std::string detail = std::string("(a) source val ") + fmt("%.3f", src_val) + (a ? " ok" : " LOW") +
                       "; (b) mean 5-shot " + fmt("%.3f", few5) + " vs direct " + fmt("%.3f", direct) + " raw " +
                       fmt("%.3f", raw) + (b ? " ok" : " MARGIN") + "; (c) 5-shot >= 1-shot per task" +
                       (c ? " ok" : " VIOLATED") + "; " + fmt("%.1f", minutes) + " min" + (time_ok ? "" : " SLOW") +
                       ";" + per_task;
  return {a && b && c && time_ok, detail};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome c9_determinism() {
  const auto first = work_root() / "run1" / "report";
  if (!fs::exists(first / "summary.csv")) {
    if (run_bundled(work_root() / "run1") != 0) return {false, "first run failed"};
  }
  const auto second_root = work_root() / "run2";
  if (run_bundled(second_root) != 0) return {false, "second run failed"};
  int compared = 0, differing = 0;
  for (const auto& e : fs::directory_iterator(first)) {
    if (e.path().extension() != ".csv") continue;
    ++compared;
    const auto other = second_root / "report" / e.path().filename();
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) ++differing;
  }
  return {compared > 1 && differing == 0,
          std::to_string(compared) + " csv files compared, " + std::to_string(differing) + " differ"};
}

Outcome c10_io() {
  Rng rng(10);
  const auto dir = work_root() / "io";
  fs::create_directories(dir);
  int bad = 0, subnormals = 0;
  for (int i = 0; i < 100; ++i) {
    auto rec = testutil::random_recording(rng, 12, 30);
    rec.data[0] = {std::numeric_limits<float>::denorm_min(), -std::numeric_limits<float>::denorm_min()};
    for (const auto& v : rec.data)
      subnormals += (std::fpclassify(v.real()) == FP_SUBNORMAL) + (std::fpclassify(v.imag()) == FP_SUBNORMAL);
    const auto path = dir / ("r" + std::to_string(i) + ".csir");
    save_recording(rec, path);
    auto back = load_recording(path);
    const bool same = back.dims == rec.dims && back.meta == rec.meta && back.data.size() == rec.data.size() &&
                      std::memcmp(back.data.data(), rec.data.data(), rec.data.size() * sizeof(rec.data[0])) == 0;
    bad += !same;
  }
  return {bad == 0, "100 recordings, " + std::to_string(bad) + " mismatches, " + std::to_string(subnormals) +
                        " subnormal values"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<Outcome()>> checks = {c1_parameter_count, c2_shape_chain, c3_gradient,
                                                        c4_preprocess,      c5_impairment,  c6_distill,
                                                        c7_duplication,     c8_end_to_end,  c9_determinism,
                                                        c10_io};
  std::vector<int> which;
  for (int i = 1; i < argc; ++i) which.push_back(std::atoi(argv[i]));
  if (which.empty())
    for (int i = 1; i <= 10; ++i) which.push_back(i);

  int failures = 0;
  for (int c : which) {
    if (c < 1 || c > 10) {
      std::fprintf(stderr, "no criterion %d\n", c);
      return 2;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = checks[static_cast<std::size_t>(c - 1)]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d: %s (%.1f s) %s\n", c, o.pass ? "PASS" : "FAIL", secs, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
