#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "dasecount/convnet.hpp"
#include "dasecount/error.hpp"
#include "dasecount/trainer.hpp"
#include "nn_fixtures.hpp"
#include "test_util.hpp"

using namespace dasecount;
using namespace dasecount::nn;

namespace {

ArchSpec tiny_arch(int c_in = 4, int k = 3) {
  ArchSpec a;
  a.in_channels = c_in;
  a.num_classes = k;
  a.in_h = 8;
  a.in_w = 8;
  a.width = 4;
  a.pools = {{2, 2}, {2, 2}};
  return a;
}

std::vector<float> random_input(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

std::size_t enumerate_parameters(const ArchSpec& a) {
  // One entry per tensor: conv weight, conv bias, gamma, beta per block; FC weight and bias.
  std::vector<std::size_t> tensors;
  int c = a.in_channels;
  for (int b = 0; b < a.blocks(); ++b) {
    tensors.push_back(static_cast<std::size_t>(a.width) * c * 3 * 3);
    tensors.push_back(a.width);
    tensors.push_back(a.width);
    tensors.push_back(a.width);
    c = a.width;
  }
  auto [h, w] = a.spatial_chain().back();
  tensors.push_back(static_cast<std::size_t>(a.width) * h * w * a.num_classes);
  tensors.push_back(a.num_classes);
  std::size_t n = 0;
  for (auto t : tensors) n += t;
  return n;
}

}  // namespace

TEST(CnnShape, ParameterCountDefaultArch) {
  EXPECT_EQ(build_submodel(6, 9, 1).parameter_count(), 189513u);
  EXPECT_EQ(build_submodel(4, 9, 1).parameter_count(), 188361u);
  EXPECT_EQ(default_arch(6, 9).parameter_count(), 189513u);
}

TEST(CnnShape, ParameterCountMatchesEnumeration) {
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const int c = std::uniform_int_distribution<int>(1, 12)(rng);
    const int k = std::uniform_int_distribution<int>(2, 20)(rng);
    auto a = default_arch(c, k);
    EXPECT_EQ(a.parameter_count(), enumerate_parameters(a));
    EXPECT_EQ(CnnSubmodel<float>(a, 1).parameter_count(), enumerate_parameters(a));
  }
}

TEST(CnnShape, SpatialChainForDefaultInput) {
  auto m = build_submodel(6, 9, 2);
  std::vector<std::pair<int, int>> trace;
  auto x = random_input(2 * m.input_size(), 3);
  auto logits = m.forward(x, 2, Tap::Logits, &trace);
  const std::vector<std::pair<int, int>> want = {{50, 57}, {25, 28}, {12, 14}, {6, 7}, {3, 3}, {1, 1}};
  EXPECT_EQ(trace, want);
  EXPECT_EQ(logits.size(), 2u * 9u);
  EXPECT_EQ(m.forward(x, 2, Tap::CNN2).size(), 2u * 576u);
  EXPECT_EQ(m.forward(x, 2, Tap::CNN1).size(), 2u * 64u);
  EXPECT_EQ(m.forward(x, 2, Tap::FC).size(), 2u * 9u);
}

TEST(CnnShape, WrongInputSizeIsShapeError) {
  auto m = build_submodel(6, 9, 2);
  std::vector<float> x(6 * 100 * 114);
  EXPECT_THROW(m.forward(x, 1, Tap::Logits), ShapeError);
  EXPECT_THROW(build_submodel(6, 9, 2, 100, 32), ShapeError);
  EXPECT_THROW(build_submodel(6, 1, 2), ShapeError);
}

TEST(CnnForward, InferenceIsPure) {
  auto m = build_submodel(4, 9, 5);
  auto x = random_input(3 * m.input_size(), 6);
  EXPECT_EQ(m.forward(x, 3, Tap::Logits), m.forward(x, 3, Tap::Logits));
  // Batch composition does not matter in inference mode.
  auto one = m.forward(std::span<const float>(x).first(m.input_size()), 1, Tap::Logits);
  auto all = m.forward(x, 3, Tap::Logits);
  for (int j = 0; j < 9; ++j) EXPECT_NEAR(one[j], all[j], 1e-5);
}

TEST(CnnForward, SameSeedSameWeights) {
  auto a = build_submodel(6, 9, 77), b = build_submodel(6, 9, 77), c = build_submodel(6, 9, 78);
  EXPECT_TRUE(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
  EXPECT_FALSE(std::equal(a.parameters().begin(), a.parameters().end(), c.parameters().begin()));
}

TEST(CnnForward, SoftmaxRowsSumToOne) {
  auto m = build_submodel(6, 9, 5);
  auto x = random_input(4 * m.input_size(), 1);
  auto z = m.forward(x, 4, Tap::Logits);
  auto p = kernels::softmax_rows(std::span<const float>(z), 4, 9);
  for (int r = 0; r < 4; ++r) {
    double s = 0;
    for (int c = 0; c < 9; ++c) s += p[r * 9 + c];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(CnnGradient, MatchesCentralDifferences) {
  CnnSubmodel<double> m(tiny_arch(), 12);
  const int batch = 3;
  Rng rng(2);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> x(batch * m.input_size());
  for (auto& v : x) v = g(rng);
  // Non-trivial batch-norm affine parameters.
  auto p = m.parameters();
  for (auto& v : p) v += 0.05 * g(rng);
  const std::vector<int> labels = {0, 2, 1};

  auto loss_at = [&](CnnSubmodel<double>& model) {
    TrainCache<double> cache;
    auto z = model.forward_train(x, batch, cache, false);
    return kernels::cross_entropy<double>(z, labels, 3, nullptr);
  };
  TrainCache<double> cache;
  m.zero_grad();
  auto z = m.forward_train(x, batch, cache, false);
  std::vector<double> dz(z.size());
  kernels::cross_entropy<double>(z, labels, 3, dz.data());
  m.backward(cache, dz);
  std::vector<double> analytic(m.gradients().begin(), m.gradients().end());

  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double up = loss_at(m);
    p[i] = keep - h;
    const double down = loss_at(m);
    p[i] = keep;
    const double numeric = (up - down) / (2 * h);
    const double rel = std::abs(numeric - analytic[i]) / std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
    worst = std::max(worst, rel);
  }
  EXPECT_LE(worst, 1e-3);
}

TEST(CnnGradient, InputGradientFlowsThroughAllBlocks) {
  CnnSubmodel<double> m(tiny_arch(), 3);
  std::vector<double> x(2 * m.input_size(), 0.1);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(0.37 * i);
  TrainCache<double> cache;
  m.zero_grad();
  auto z = m.forward_train(x, 2, cache, false);
  std::vector<double> dz(z.size(), 0.0);
  kernels::cross_entropy<double>(z, std::vector<int>{0, 1}, 3, dz.data());
  m.backward(cache, dz);
  double first_block = 0;
  for (std::size_t i = 0; i < 4 * 4 * 9; ++i) first_block += std::abs(m.gradients()[i]);
  EXPECT_GT(first_block, 0.0);
}

TEST(Trainer, EpochsZeroReturnsInitialization) {
  auto samples = testutil::random_samples(3, 10, 6, 4, 128, 64, 1);
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 9;
  auto res = train_extractor(testutil::refs(samples), 3, cfg);
  EXPECT_TRUE(res.amp_curve.empty());
  EXPECT_TRUE(res.phd_curve.empty());
  auto init = build_submodel(6, 3, derive_seed(9, "amp-init"), 128, 64);
  EXPECT_TRUE(std::equal(init.parameters().begin(), init.parameters().end(), res.extractor.amp.parameters().begin()));
}

TEST(Trainer, SingleClassIsTrainingError) {
  auto samples = testutil::random_samples(1, 5, 6, 4, 128, 64, 1);
  EXPECT_THROW(train_extractor(testutil::refs(samples), 9, {}), TrainingError);
}

TEST(Trainer, StratifiedSplitKeepsEveryClass) {
  std::vector<int> labels;
  for (int c = 0; c < 9; ++c)
    for (int i = 0; i < 20; ++i) labels.push_back(c);
  auto s = stratified_split(labels, 0.1, 4);
  EXPECT_EQ(s.train.size(), 162u);
  EXPECT_EQ(s.val.size(), 18u);
  std::set<int> seen;
  for (auto i : s.val) seen.insert(labels[i]);
  EXPECT_EQ(seen.size(), 9u);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  for (auto i : s.val) EXPECT_FALSE(all.count(i));
  EXPECT_EQ(s.val, stratified_split(labels, 0.1, 4).val);
}

TEST(Trainer, DeterministicWeights) {
  auto samples = testutil::random_samples(3, 6, 6, 4, 128, 64, 2);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 4;
  auto a = train_extractor(testutil::refs(samples), 3, cfg);
  auto b = train_extractor(testutil::refs(samples), 3, cfg);
  EXPECT_TRUE(std::equal(a.extractor.amp.parameters().begin(), a.extractor.amp.parameters().end(),
                         b.extractor.amp.parameters().begin()));
  EXPECT_TRUE(std::equal(a.extractor.phd.running_stats().begin(), a.extractor.phd.running_stats().end(),
                         b.extractor.phd.running_stats().begin()));
}

const TrainResult& toy_separable_run() {
  static const TrainResult res = [] {
    auto store = testutil::synth_store({0, 8}, 24, 128, 64, 31, 40.0);
    auto samples = store.all_samples();
    TrainConfig cfg;
    cfg.seed = 8;
    cfg.val_fraction = 0.2;
    return train_extractor(samples, 2, cfg);
  }();
  return res;
}

TEST(Trainer, ToySeparableSetReachesHighValidationAccuracy) {
  EXPECT_GE(toy_separable_run().val_combined, 0.95);
}

TEST(Trainer, ToySeparableSetLossNonIncreasingAfterEpochThree) {
  const auto& res = toy_separable_run();
  int violations = 0;
  std::string losses;
  for (const auto& e : res.amp_curve) losses += " " + std::to_string(e.loss);
  for (std::size_t e = 4; e < res.amp_curve.size(); ++e) violations += res.amp_curve[e].loss > res.amp_curve[e - 1].loss;
  EXPECT_LE(violations, 2) << "amplitude loss increased too often:" << losses;
}

TEST(Evaluate, ChanceLevelOnPermutedLabels) {
  auto samples = testutil::random_samples(9, 60, 4, 4, 8, 8, 3, 0.0);
  Rng rng(5);
  for (auto& s : samples) s.label = std::uniform_int_distribution<int>(0, 8)(rng);
  FeatureExtractor fx{CnnSubmodel<float>(tiny_arch(4, 9), 1), CnnSubmodel<float>(tiny_arch(4, 9), 2), 0};
  const double acc = evaluate(fx, testutil::refs(samples), Modality::Amp);
  EXPECT_NEAR(acc, 1.0 / 9.0, 0.1);
  EXPECT_EQ(acc, evaluate(fx, testutil::refs(samples), Modality::Amp));
}

TEST(Evaluate, MatchesArgmaxOfLogitsAndRejectsEmpty) {
  auto samples = testutil::random_samples(3, 10, 4, 4, 8, 8, 7);
  FeatureExtractor fx{CnnSubmodel<float>(tiny_arch(4, 3), 1), CnnSubmodel<float>(tiny_arch(4, 3), 2), 0};
  auto r = testutil::refs(samples);
  auto z = logits(fx.amp, r, Modality::Amp);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    int best = 0;
    for (int c = 1; c < 3; ++c)
      if (z[i * 3 + c] > z[i * 3 + best]) best = c;
    hit += best == r[i]->label;
  }
  EXPECT_DOUBLE_EQ(evaluate(fx, r, Modality::Amp), static_cast<double>(hit) / r.size());
  EXPECT_THROW(evaluate(fx, {}, Modality::Amp), ValidationError);
}

TEST(Evaluate, PerfectOracleScoresOne) {
  // Labels set to the model's own predictions: a memorizing oracle.
  auto samples = testutil::random_samples(3, 10, 4, 4, 8, 8, 8);
  FeatureExtractor fx{CnnSubmodel<float>(tiny_arch(4, 3), 1), CnnSubmodel<float>(tiny_arch(4, 3), 2), 0};
  auto pred = predict(fx, testutil::refs(samples), Modality::Phd);
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i].label = pred[i];
  EXPECT_DOUBLE_EQ(evaluate(fx, testutil::refs(samples), Modality::Phd), 1.0);
}

TEST(Checkpoint, RoundTripAndFingerprint) {
  auto dir = testutil::temp_dir("ckpt");
  FeatureExtractor fx{build_submodel(6, 9, 1, 128, 64), build_submodel(4, 9, 2, 128, 64), 3};
  fx.amp.running_stats()[5] = 0.25f;
  save_extractor(fx, {{"note", "x"}}, dir / "a.ckpt");
  auto back = load_extractor(dir / "a.ckpt");
  EXPECT_EQ(back.extractor.generation, 3);
  EXPECT_EQ(back.config["note"], "x");
  EXPECT_EQ(back.extractor.amp.spec(), fx.amp.spec());
  EXPECT_TRUE(std::equal(fx.amp.parameters().begin(), fx.amp.parameters().end(),
                         back.extractor.amp.parameters().begin()));
  EXPECT_TRUE(std::equal(fx.amp.running_stats().begin(), fx.amp.running_stats().end(),
                         back.extractor.amp.running_stats().begin()));

  // Tamper with the stored fingerprint.
  std::ifstream in(dir / "a.ckpt", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  const auto key = std::to_string(fx.amp.spec().fingerprint());
  const auto pos = bytes.find(key);
  ASSERT_NE(pos, std::string::npos);
  bytes[pos] = bytes[pos] == '1' ? '2' : '1';
  std::ofstream(dir / "b.ckpt", std::ios::binary) << bytes;
  EXPECT_THROW(load_extractor(dir / "b.ckpt"), FormatError);

  std::filesystem::copy_file(dir / "a.ckpt", dir / "c.ckpt");
  std::filesystem::resize_file(dir / "c.ckpt", std::filesystem::file_size(dir / "c.ckpt") - 10);
  EXPECT_THROW(load_extractor(dir / "c.ckpt"), CorruptionError);
  std::ofstream(dir / "d.ckpt") << "not a checkpoint";
  EXPECT_THROW(load_extractor(dir / "d.ckpt"), FormatError);
}

TEST(Names, TapAndModalityText) {
  EXPECT_EQ(parse_tap("cnn2"), Tap::CNN2);
  EXPECT_EQ(to_string(Tap::CNN1), "cnn1");
  EXPECT_EQ(parse_modality("both"), Modality::Both);
  EXPECT_THROW(parse_tap("cnn3"), ConfigError);
}
