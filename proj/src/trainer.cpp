#include "dasecount/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "dasecount/error.hpp"
#include "dasecount/json_util.hpp"
#include "dasecount/parallel.hpp"

namespace dasecount::nn {

namespace fs = std::filesystem;

std::string_view to_string(Tap t) {
  switch (t) {
    case Tap::Logits: return "logits";
    case Tap::FC: return "fc";
    case Tap::CNN1: return "cnn1";
    case Tap::CNN2: return "cnn2";
  }
  return "unknown";
}

Tap parse_tap(std::string_view s) {
  if (s == "fc") return Tap::FC;
  if (s == "cnn1") return Tap::CNN1;
  if (s == "cnn2") return Tap::CNN2;
  if (s == "logits") return Tap::Logits;
  throw ConfigError("unknown feature tap '" + std::string(s) + "'");
}

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::Amp: return "amp";
    case Modality::Phd: return "phd";
    case Modality::Both: return "both";
  }
  return "unknown";
}

Modality parse_modality(std::string_view s) {
  if (s == "amp") return Modality::Amp;
  if (s == "phd") return Modality::Phd;
  if (s == "both") return Modality::Both;
  throw ConfigError("unknown modality '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (!(val_fraction > 0 && val_fraction < 1)) throw ConfigError("train.val_fraction must lie in (0, 1)");
  if (!(learning_rate > 0)) throw ConfigError("train.learning_rate must be > 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size}, {"epochs", epochs},     {"learning_rate", learning_rate},
          {"beta1", beta1},           {"beta2", beta2},       {"adam_eps", adam_eps},
          {"val_fraction", val_fraction}, {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  StrictObject o(j, "train");
  o.get("batch_size", c.batch_size);
  o.get("epochs", c.epochs);
  o.get("learning_rate", c.learning_rate);
  o.get("beta1", c.beta1);
  o.get("beta2", c.beta2);
  o.get("adam_eps", c.adam_eps);
  o.get("val_fraction", c.val_fraction);
  o.get("seed", c.seed);
  o.finish();
  c.validate();
  return c;
}

const CnnSubmodel<float>& FeatureExtractor::submodel(Modality m) const {
  if (m == Modality::Amp) return amp;
  if (m == Modality::Phd) return phd;
  throw ConfigError("a single submodel needs modality amp or phd");
}

SplitIndices stratified_split(std::span<const int> labels, double val_fraction, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  SplitIndices out;
  for (auto& [label, idx] : by_class) {
    Rng rng(derive_seed(seed, {0x5711u, static_cast<std::uint64_t>(label)}));
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t n_val = static_cast<std::size_t>(std::llround(idx.size() * val_fraction));
    if (idx.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, idx.size() - 1);
    else n_val = 0;
    out.val.insert(out.val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    out.train.insert(out.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

CnnSubmodel<float> build_submodel(int c_in, int num_classes, std::uint64_t seed, int in_h, int in_w) {
  return CnnSubmodel<float>(default_arch(c_in, num_classes, in_h, in_w), seed);
}

namespace {

const prep::Tensor3& pick(const prep::Sample& s, Modality m) { return m == Modality::Amp ? s.amp : s.phd; }

std::vector<int> argmax_rows(std::span<const float> v, std::size_t rows, int cols) {
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* z = v.data() + r * cols;
    out[r] = static_cast<int>(std::max_element(z, z + cols) - z);
  }
  return out;
}

}  // namespace

void gather_batch(SampleRefs samples, std::span<const std::size_t> idx, Modality m, std::vector<float>& out) {
  if (idx.empty()) {
    out.clear();
    return;
  }
  const std::size_t per = pick(*samples[idx[0]], m).v.size();
  out.resize(per * idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& t = pick(*samples[idx[i]], m);
    if (t.v.size() != per) throw ShapeError("samples in one batch differ in shape");
    std::copy(t.v.begin(), t.v.end(), out.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
}

std::vector<float> logits(const CnnSubmodel<float>& model, SampleRefs samples, Modality m) {
  const std::size_t n = samples.size();
  const int k = model.spec().num_classes;
  std::vector<float> out(n * k);
  const std::size_t chunk = 32;
  const std::size_t jobs = (n + chunk - 1) / chunk;
  parallel_for(jobs, [&](std::size_t j) {
    std::vector<std::size_t> idx;
    for (std::size_t i = j * chunk; i < std::min(n, (j + 1) * chunk); ++i) idx.push_back(i);
    std::vector<float> buf;
    gather_batch(samples, idx, m, buf);
    auto z = model.forward(buf, static_cast<int>(idx.size()), Tap::Logits);
    std::copy(z.begin(), z.end(), out.begin() + static_cast<std::ptrdiff_t>(j * chunk * k));
  });
  return out;
}

std::vector<int> predict(const FeatureExtractor& fx, SampleRefs samples, Modality which) {
  const int k = fx.num_classes();
  if (which != Modality::Both) return argmax_rows(logits(fx.submodel(which), samples, which), samples.size(), k);
  auto za = logits(fx.amp, samples, Modality::Amp);
  auto zp = logits(fx.phd, samples, Modality::Phd);
  const int n = static_cast<int>(samples.size());
  auto pa = kernels::softmax_rows(std::span<const float>(za), n, k);
  auto pp = kernels::softmax_rows(std::span<const float>(zp), n, k);
  std::vector<float> avg(pa.size());
  for (std::size_t i = 0; i < avg.size(); ++i) avg[i] = static_cast<float>(0.5 * (pa[i] + pp[i]));
  return argmax_rows(avg, samples.size(), k);
}

double evaluate(const FeatureExtractor& fx, SampleRefs samples, Modality which) {
  if (samples.empty()) throw ValidationError("evaluation set is empty");
  auto pred = predict(fx, samples, which);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) hit += pred[i] == samples[i]->label;
  return static_cast<double>(hit) / static_cast<double>(samples.size());
}

std::vector<EpochStats> fit_submodel(CnnSubmodel<float>& model, SampleRefs samples,
                                     std::span<const std::size_t> train_idx, std::span<const std::size_t> val_idx,
                                     Modality m, int epochs, int batch_size, std::uint64_t seed,
                                     const BatchLoss& loss, const OptimizerStep& step) {
  std::vector<EpochStats> curve;
  const int k = model.spec().num_classes;
  std::vector<const prep::Sample*> val_samples;
  for (auto i : val_idx) val_samples.push_back(samples[i]);

  TrainCache<float> cache;
  std::vector<float> buf, grad;
  std::vector<std::size_t> order(train_idx.size());
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, {0xE70Cu, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += batch_size) {
      const std::size_t nb = std::min<std::size_t>(batch_size, order.size() - b0);
      std::span<const std::size_t> rows(order.data() + b0, nb);
      std::vector<std::size_t> idx(nb);
      std::vector<int> labels(nb);
      for (std::size_t i = 0; i < nb; ++i) {
        idx[i] = train_idx[rows[i]];
        labels[i] = samples[idx[i]]->label;
      }
      gather_batch(samples, idx, m, buf);
      model.zero_grad();
      auto z = model.forward_train(buf, static_cast<int>(nb), cache, true);
      grad.assign(z.size(), 0.0f);
      const double l = loss(z, rows, labels, grad.data());
      if (!std::isfinite(l)) throw DivergenceError("loss diverged at epoch " + std::to_string(epoch + 1));
      model.backward(cache, grad);
      step(model.parameters(), model.gradients());
      loss_sum += l * static_cast<double>(nb);
      auto pred = argmax_rows(z, nb, k);
      for (std::size_t i = 0; i < nb; ++i) hits += pred[i] == labels[i];
    }
    EpochStats st;
    st.loss = order.empty() ? 0.0 : loss_sum / static_cast<double>(order.size());
    st.train_accuracy = order.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(order.size());
    if (!val_samples.empty()) {
      auto pred = argmax_rows(logits(model, val_samples, m), val_samples.size(), k);
      std::size_t vh = 0;
      for (std::size_t i = 0; i < val_samples.size(); ++i) vh += pred[i] == val_samples[i]->label;
      st.val_accuracy = static_cast<double>(vh) / static_cast<double>(val_samples.size());
    }
    curve.push_back(st);
  }
  return curve;
}

TrainResult train_extractor(SampleRefs samples, int num_classes, const TrainConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw TrainingError("training set is empty");
  std::vector<int> labels;
  for (const auto* s : samples) labels.push_back(s->label);
  if (std::set<int>(labels.begin(), labels.end()).size() < 2)
    throw TrainingError("training set covers a single class");
  for (int l : labels)
    if (l < 0 || l >= num_classes) throw TrainingError("label " + std::to_string(l) + " outside the class set");

  const auto& first = *samples[0];
  TrainResult res;
  res.split = stratified_split(labels, cfg.val_fraction, cfg.seed);
  res.extractor.amp = build_submodel(first.amp.d0, num_classes, derive_seed(cfg.seed, "amp-init"), first.amp.d1,
                                     first.amp.d2);
  res.extractor.phd = build_submodel(first.phd.d0, num_classes, derive_seed(cfg.seed, "phd-init"), first.phd.d1,
                                     first.phd.d2);
  res.extractor.generation = 0;

  BatchLoss ce = [num_classes](std::span<const float> z, std::span<const std::size_t>, std::span<const int> y,
                               float* g) { return kernels::cross_entropy<float>(z, y, num_classes, g); };
  for (Modality m : {Modality::Amp, Modality::Phd}) {
    auto& model = m == Modality::Amp ? res.extractor.amp : res.extractor.phd;
    Adam<float> adam(model.parameter_count(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
    OptimizerStep step = [&adam](std::span<float> p, std::span<const float> g) { adam.step(p, g); };
    auto curve = fit_submodel(model, samples, res.split.train, res.split.val, m, cfg.epochs, cfg.batch_size,
                              derive_seed(cfg.seed, m == Modality::Amp ? "amp-order" : "phd-order"), ce, step);
    (m == Modality::Amp ? res.amp_curve : res.phd_curve) = std::move(curve);
  }

  std::vector<const prep::Sample*> val;
  for (auto i : res.split.val) val.push_back(samples[i]);
  if (!val.empty()) {
    res.val_amp = evaluate(res.extractor, val, Modality::Amp);
    res.val_phd = evaluate(res.extractor, val, Modality::Phd);
    res.val_combined = evaluate(res.extractor, val, Modality::Both);
  }
  return res;
}

namespace {

constexpr char kCkptMagic[8] = {'D', 'C', 'K', 'P', 'T', '1', 0, 0};

nlohmann::json arch_to_json(const ArchSpec& a) {
  nlohmann::json pools = nlohmann::json::array();
  for (const auto& p : a.pools) pools.push_back({p.h, p.w});
  return {{"in_channels", a.in_channels}, {"num_classes", a.num_classes}, {"in_h", a.in_h},
          {"in_w", a.in_w},               {"width", a.width},             {"pools", pools},
          {"layer_spec", a.layer_spec()}, {"fingerprint", a.fingerprint()}};
}

ArchSpec arch_from_json(const nlohmann::json& j) {
  ArchSpec a;
  a.in_channels = j.at("in_channels").get<int>();
  a.num_classes = j.at("num_classes").get<int>();
  a.in_h = j.at("in_h").get<int>();
  a.in_w = j.at("in_w").get<int>();
  a.width = j.at("width").get<int>();
  a.pools.clear();
  for (const auto& p : j.at("pools")) a.pools.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
  if (a.fingerprint() != j.at("fingerprint").get<std::uint64_t>())
    throw FormatError("checkpoint architecture fingerprint mismatch");
  return a;
}

void put_floats(std::ofstream& out, std::span<const float> v) {
  std::vector<unsigned char> b(v.size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    auto u = std::bit_cast<std::uint32_t>(v[i]);
    for (int k = 0; k < 4; ++k) b[4 * i + k] = static_cast<unsigned char>(u >> (8 * k));
  }
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<float> get_floats(std::ifstream& in, std::size_t n, const fs::path& path) {
  if (n > (std::size_t{1} << 28)) throw CorruptionError("implausible tensor size in " + path.string());
  std::vector<unsigned char> b(n * 4);
  in.read(reinterpret_cast<char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (in.gcount() != static_cast<std::streamsize>(b.size())) throw CorruptionError("truncated checkpoint " + path.string());
  std::vector<float> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t u = b[4 * i] | (b[4 * i + 1] << 8) | (b[4 * i + 2] << 16) |
                      (static_cast<std::uint32_t>(b[4 * i + 3]) << 24);
    v[i] = std::bit_cast<float>(u);
  }
  return v;
}

}  // namespace

void save_extractor(const FeatureExtractor& fx, const nlohmann::json& config, const fs::path& path) {
  nlohmann::json header;
  header["generation"] = fx.generation;
  header["config"] = config;
  header["amp"] = arch_to_json(fx.amp.spec());
  header["amp"]["parameters"] = fx.amp.parameter_count();
  header["amp"]["stats"] = fx.amp.running_stats().size();
  header["phd"] = arch_to_json(fx.phd.spec());
  header["phd"]["parameters"] = fx.phd.parameter_count();
  header["phd"]["stats"] = fx.phd.running_stats().size();
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kCkptMagic, 8);
  const std::uint64_t len = text.size();
  for (int k = 0; k < 8; ++k) out.put(static_cast<char>(len >> (8 * k)));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto* m : {&fx.amp, &fx.phd}) {
    put_floats(out, m->parameters());
    put_floats(out, m->running_stats());
  }
  if (!out) throw IoError("write failed for " + path.string());
}

LoadedExtractor load_extractor(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kCkptMagic, 8) != 0) throw FormatError("bad checkpoint magic in " + path.string());
  unsigned char lb[8];
  in.read(reinterpret_cast<char*>(lb), 8);
  std::uint64_t len = 0;
  for (int k = 0; k < 8; ++k) len |= static_cast<std::uint64_t>(lb[k]) << (8 * k);
  if (!in || len > (std::uint64_t{1} << 24)) throw CorruptionError("bad checkpoint header in " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    throw CorruptionError("bad checkpoint header in " + path.string());
  }
  LoadedExtractor out;
  try {
    out.extractor.generation = header.at("generation").get<int>();
    out.config = header.at("config");
    for (const char* name : {"amp", "phd"}) {
      ArchSpec arch = arch_from_json(header.at(name));
      auto params = get_floats(in, header.at(name).at("parameters").get<std::size_t>(), path);
      auto stats = get_floats(in, header.at(name).at("stats").get<std::size_t>(), path);
      auto model = CnnSubmodel<float>::from_tensors(arch, std::move(params), std::move(stats));
      (std::string(name) == "amp" ? out.extractor.amp : out.extractor.phd) = std::move(model);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CorruptionError("trailing bytes in checkpoint " + path.string());
  if (out.extractor.amp.spec().num_classes != out.extractor.phd.spec().num_classes)
    throw FormatError("submodels disagree on num_classes");
  return out;
}

}  // namespace dasecount::nn
