#include "dasecount/fewshot.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dasecount/error.hpp"
#include "dasecount/json_util.hpp"
#include "dasecount/parallel.hpp"
#include "dasecount/rng.hpp"

namespace dasecount::fewshot {

using nn::Modality;

Episode sample_episode(const prep::SampleStore& store, const prep::TaskId& task, int k, int q, std::uint64_t seed) {
  if (k < 1) throw ValidationError("shots must be >= 1");
  if (q < 1) throw ValidationError("queries per class must be >= 1");
  const auto& samples = store.task(task);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(store.num_classes));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int l = samples[i].label;
    if (l < 0 || l >= store.num_classes) throw ValidationError("label " + std::to_string(l) + " outside class set");
    by_class[static_cast<std::size_t>(l)].push_back(i);
  }
  Episode ep;
  ep.task = task;
  ep.seed = seed;
  ep.shots = k;
  for (int c = 0; c < store.num_classes; ++c) {
    auto& idx = by_class[static_cast<std::size_t>(c)];
    if (static_cast<int>(idx.size()) < k + q)
      throw ValidationError("class " + std::to_string(c) + " in task " + task.str() + " has " +
                            std::to_string(idx.size()) + " samples, needs " + std::to_string(k + q));
    Rng rng(derive_seed(seed, {0xE915u, static_cast<std::uint64_t>(c)}));
    for (int i = 0; i < k + q; ++i) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), idx.size() - 1);
      std::swap(idx[static_cast<std::size_t>(i)], idx[pick(rng)]);
    }
    for (int i = 0; i < k; ++i) {
      ep.support.push_back(idx[static_cast<std::size_t>(i)]);
      ep.support_labels.push_back(c);
    }
    for (int i = k; i < k + q; ++i) {
      ep.query.push_back(idx[static_cast<std::size_t>(i)]);
      ep.query_labels.push_back(c);
    }
  }
  return ep;
}

std::size_t feature_dim(const nn::FeatureExtractor& fx, const FeatureSpec& spec) {
  auto part = [&](const nn::CnnSubmodel<float>& m) { return spec.raw ? m.input_size() : m.tap_dim(spec.tap); };
  switch (spec.modality) {
    case Modality::Amp: return part(fx.amp);
    case Modality::Phd: return part(fx.phd);
    case Modality::Both: return part(fx.amp) + part(fx.phd);
  }
  return 0;
}

namespace {

void check_dup(int f) {
  if (f < 1) throw ValidationError("duplication factor must be >= 1");
}

FeatureMatrix duplicate(const Matrix& base, const std::vector<int>& labels, const FeatureSpec& spec, int factor) {
  FeatureMatrix out;
  out.spec = spec;
  out.duplication_factor = factor;
  out.rows.resize(base.rows() * factor, base.cols());
  for (Eigen::Index i = 0; i < base.rows(); ++i)
    for (int r = 0; r < factor; ++r) {
      out.rows.row(i * factor + r) = base.row(i);
      out.labels.push_back(labels[static_cast<std::size_t>(i)]);
    }
  return out;
}

std::vector<int> labels_of(nn::SampleRefs samples) {
  std::vector<int> l;
  for (const auto* s : samples) l.push_back(s->label);
  return l;
}

}  // namespace

FeatureMatrix extract_features(const nn::FeatureExtractor& fx, nn::SampleRefs samples, const FeatureSpec& spec,
                               int duplication_factor) {
  check_dup(duplication_factor);
  if (spec.raw) return raw_features(samples, spec.modality, duplication_factor);
  std::vector<const nn::CnnSubmodel<float>*> models;
  std::vector<Modality> mods;
  if (spec.modality != Modality::Phd) models.push_back(&fx.amp), mods.push_back(Modality::Amp);
  if (spec.modality != Modality::Amp) models.push_back(&fx.phd), mods.push_back(Modality::Phd);

  const std::size_t n = samples.size();
  Matrix base(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(feature_dim(fx, spec)));
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t m = 0; m < models.size(); ++m) {
      const auto& t = mods[m] == Modality::Amp ? samples[s]->amp : samples[s]->phd;
      if (t.v.size() != models[m]->input_size())
        throw ShapeError("sample shape does not match the " + std::string(nn::to_string(mods[m])) + " submodel");
    }

  constexpr std::size_t chunk = 16;
  const std::size_t jobs = (n + chunk - 1) / chunk;
  parallel_for(jobs, [&](std::size_t j) {
    std::vector<std::size_t> idx;
    for (std::size_t i = j * chunk; i < std::min(n, (j + 1) * chunk); ++i) idx.push_back(i);
    std::vector<float> buf;
    Eigen::Index col = 0;
    for (std::size_t m = 0; m < models.size(); ++m) {
      nn::gather_batch(samples, idx, mods[m], buf);
      auto f = models[m]->forward(buf, static_cast<int>(idx.size()), spec.tap);
      const auto d = static_cast<Eigen::Index>(models[m]->tap_dim(spec.tap));
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (Eigen::Index c = 0; c < d; ++c)
          base(static_cast<Eigen::Index>(idx[r]), col + c) = f[r * static_cast<std::size_t>(d) + c];
      col += d;
    }
  });
  return duplicate(base, labels_of(samples), spec, duplication_factor);
}

FeatureMatrix raw_features(nn::SampleRefs samples, Modality modality, int duplication_factor) {
  check_dup(duplication_factor);
  FeatureSpec spec{true, nn::Tap::FC, modality};
  if (samples.empty()) return duplicate(Matrix(0, 0), {}, spec, duplication_factor);
  auto width = [&](const prep::Sample& s) {
    return (modality != Modality::Phd ? s.amp.v.size() : 0) + (modality != Modality::Amp ? s.phd.v.size() : 0);
  };
  const std::size_t d = width(*samples[0]);
  Matrix base(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = *samples[i];
    if (width(s) != d) throw ShapeError("samples differ in shape");
    Eigen::Index c = 0;
    if (modality != Modality::Phd)
      for (float v : s.amp.v) base(static_cast<Eigen::Index>(i), c++) = v;
    if (modality != Modality::Amp)
      for (float v : s.phd.v) base(static_cast<Eigen::Index>(i), c++) = v;
  }
  return duplicate(base, labels_of(samples), spec, duplication_factor);
}

FeatureMatrix take_rows(const FeatureMatrix& source, std::span<const std::size_t> idx, std::span<const int> labels,
                        int duplication_factor) {
  check_dup(duplication_factor);
  if (idx.size() != labels.size()) throw ShapeError("row and label counts differ");
  Matrix base(static_cast<Eigen::Index>(idx.size()), source.rows.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= source.n()) throw ShapeError("row index out of range");
    base.row(static_cast<Eigen::Index>(i)) = source.rows.row(static_cast<Eigen::Index>(idx[i]));
  }
  return duplicate(base, std::vector<int>(labels.begin(), labels.end()), source.spec, duplication_factor);
}

std::string_view to_string(ClassifierKind k) {
  switch (k) {
    case ClassifierKind::LR: return "lr";
    case ClassifierKind::LinearSVM: return "svm";
    case ClassifierKind::NearestNeighbor: return "nn";
  }
  return "unknown";
}

ClassifierKind parse_classifier(std::string_view s) {
  if (s == "lr") return ClassifierKind::LR;
  if (s == "svm") return ClassifierKind::LinearSVM;
  if (s == "nn") return ClassifierKind::NearestNeighbor;
  throw ConfigError("unknown classifier '" + std::string(s) + "'");
}

void ClassifierConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("classifier.learning_rate must be > 0");
  if (max_iters < 0) throw ConfigError("classifier.max_iters must be >= 0");
  if (!(grad_tol >= 0)) throw ConfigError("classifier.grad_tol must be >= 0");
  if (!(l2_strength >= 0)) throw ConfigError("classifier.l2_strength must be >= 0");
  if (duplication_factor < 1) throw ConfigError("classifier.duplication_factor must be >= 1");
  if (k_neighbors < 1) throw ConfigError("classifier.k_neighbors must be >= 1");
}

nlohmann::json ClassifierConfig::to_json() const {
  return {{"kind", to_string(kind)},
          {"learning_rate", learning_rate},
          {"max_iters", max_iters},
          {"grad_tol", grad_tol},
          {"l2_strength", l2_strength},
          {"duplication_factor", duplication_factor},
          {"k_neighbors", k_neighbors},
          {"standardize", standardize},
          {"backtracking", backtracking},
          {"seed", seed}};
}

ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& j) {
  ClassifierConfig c;
  StrictObject o(j, "classifier");
  std::string kind(to_string(c.kind));
  o.get("kind", kind);
  c.kind = parse_classifier(kind);
  o.get("learning_rate", c.learning_rate);
  o.get("max_iters", c.max_iters);
  o.get("grad_tol", c.grad_tol);
  o.get("l2_strength", c.l2_strength);
  o.get("duplication_factor", c.duplication_factor);
  o.get("k_neighbors", c.k_neighbors);
  o.get("standardize", c.standardize);
  o.get("backtracking", c.backtracking);
  o.get("seed", c.seed);
  o.finish();
  c.validate();
  return c;
}

namespace {

Matrix scores(const Matrix& x, const Matrix& w, const Eigen::VectorXd& b) {
  Matrix z = x * w.transpose();
  z.rowwise() += b.transpose();
  return z;
}

void softmax_inplace(Matrix& z) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double mx = z.row(i).maxCoeff();
    z.row(i) = (z.row(i).array() - mx).exp();
    z.row(i) /= z.row(i).sum();
  }
}

// Mean loss over rows of the score matrix; `d` receives dLoss/dScores.
using ScoreLoss = double (*)(Matrix& s, std::span<const int> labels, Matrix* d);

double lr_score_loss(Matrix& p, std::span<const int> labels, Matrix* d) {
  const auto n = p.rows();
  softmax_inplace(p);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    loss -= std::log(std::max(p(i, y), 1e-300));
    p(i, y) -= 1.0;
  }
  if (d) *d = p / static_cast<double>(n);
  return loss / static_cast<double>(n);
}

// One-vs-rest hinge.
double svm_score_loss(Matrix& s, std::span<const int> labels, Matrix* d) {
  const auto n = s.rows();
  if (d) d->setZero(n, s.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
      const double y = labels[static_cast<std::size_t>(i)] == c ? 1.0 : -1.0;
      const double m = 1.0 - y * s(i, c);
      if (m > 0) {
        loss += m;
        if (d) (*d)(i, c) = -y / static_cast<double>(n);
      }
    }
  return loss / static_cast<double>(n);
}

double primal_objective(ScoreLoss fn, const Matrix& x, std::span<const int> labels, const Matrix& w,
                        const Eigen::VectorXd& b, double l2, std::size_t n_reg, Matrix* grad_w,
                        Eigen::VectorXd* grad_b) {
  Matrix s = scores(x, w, b);
  Matrix d;
  const double reg = l2 / static_cast<double>(n_reg);
  const double f = fn(s, labels, &d) + reg * w.squaredNorm();
  if (grad_w) *grad_w = d.transpose() * x + 2.0 * reg * w;
  if (grad_b) *grad_b = d.colwise().sum().transpose();
  return f;
}

int argmax_row(const Matrix& z, Eigen::Index i) {
  int best = 0;
  for (Eigen::Index c = 1; c < z.cols(); ++c)
    if (z(i, c) > z(i, best)) best = static_cast<int>(c);
  return best;
}

Matrix standardized(const Classifier& clf, const Matrix& x) {
  if (clf.shift.size() == 0) return x;
  Matrix out = x;
  out.rowwise() -= clf.shift;
  out.array().rowwise() /= clf.scale.array();
  return out;
}

}  // namespace

double lr_objective(const Matrix& x, std::span<const int> labels, const Matrix& w, const Eigen::VectorXd& b,
                    double l2, std::size_t n_reg, Matrix* grad_w, Eigen::VectorXd* grad_b) {
  return primal_objective(lr_score_loss, x, labels, w, b, l2, n_reg, grad_w, grad_b);
}

Classifier train_classifier(const FeatureMatrix& features, int num_classes, const ClassifierConfig& cfg) {
  cfg.validate();
  if (features.n() == 0) throw TrainingError("no training rows");
  if (static_cast<std::size_t>(features.labels.size()) != features.n()) throw ShapeError("row and label counts differ");
  if (!features.rows.allFinite()) throw ValidationError("non-finite feature value");
  std::vector<int> distinct(features.labels.begin(), features.labels.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 2) throw TrainingError("classifier needs at least two distinct labels");
  if (distinct.front() < 0 || distinct.back() >= num_classes) throw ValidationError("label outside class set");

  Classifier clf;
  clf.kind = cfg.kind;
  clf.spec = features.spec;
  clf.num_classes = num_classes;
  clf.dim = features.dim();
  clf.k_neighbors = cfg.k_neighbors;
  clf.config = cfg;
  if (cfg.standardize) {
    clf.shift = features.rows.colwise().mean();
    Matrix centered = features.rows.rowwise() - clf.shift;
    clf.scale = (centered.array().square().colwise().mean()).sqrt().matrix();
    for (Eigen::Index c = 0; c < clf.scale.size(); ++c)
      if (clf.scale(c) <= 0) clf.scale(c) = 1.0;
  }
  const Matrix x = standardized(clf, features.rows);

  if (cfg.kind == ClassifierKind::NearestNeighbor) {
    clf.stored = x;
    clf.stored_labels = features.labels;
    return clf;
  }

  const ScoreLoss loss = cfg.kind == ClassifierKind::LR ? lr_score_loss : svm_score_loss;
  const std::size_t n_reg = std::max<std::size_t>(1, features.unique_rows());
  const double reg = cfg.l2_strength / static_cast<double>(n_reg);
  const std::span<const int> labels(features.labels);

  // Gradient descent from zero keeps W inside the row span of X, so with
  // more columns than rows the iterates are tracked as W = B^T X using the
  // Gram matrix G = X X^T. Both paths produce the same iterates.
  const bool span_coords = x.cols() > x.rows();
  Matrix gram;
  if (span_coords) {
    gram = Matrix::Zero(x.rows(), x.rows());
    gram.selfadjointView<Eigen::Lower>().rankUpdate(x);
    gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
  }
  auto evaluate = [&](const Matrix& p, const Eigen::VectorXd& b, Matrix& gp, Eigen::VectorXd& gb) {
    if (!span_coords) return primal_objective(loss, x, labels, p, b, cfg.l2_strength, n_reg, &gp, &gb);
    const Matrix gb_prod = gram * p;  // [n x K], equals X W^T
    Matrix s = gb_prod;
    s.rowwise() += b.transpose();
    Matrix d;
    const double f = loss(s, labels, &d) + reg * p.cwiseProduct(gb_prod).sum();
    gp = d + 2.0 * reg * p;
    gb = d.colwise().sum().transpose();
    return f;
  };
  auto grad_norm = [&](const Matrix& gp, const Eigen::VectorXd& gb) {
    const double gw2 = span_coords ? gp.cwiseProduct(gram * gp).sum() : gp.squaredNorm();
    return std::sqrt(std::max(0.0, gw2) + gb.squaredNorm());
  };

  Matrix w = span_coords ? Matrix::Zero(x.rows(), num_classes) : Matrix::Zero(num_classes, x.cols());
  Eigen::VectorXd b = Eigen::VectorXd::Zero(num_classes);
  Matrix gw, gw_next;
  Eigen::VectorXd gb, gb_next;
  double f = evaluate(w, b, gw, gb);
  clf.loss_history.push_back(f);
  double eta = cfg.learning_rate;
  int it = 0;
  for (; it < cfg.max_iters; ++it) {
    if (grad_norm(gw, gb) < cfg.grad_tol) break;
    bool accepted = false;
    while (!accepted) {
      Matrix w_next = w - eta * gw;
      Eigen::VectorXd b_next = b - eta * gb;
      const double f_next = evaluate(w_next, b_next, gw_next, gb_next);
      if (!cfg.backtracking || f_next <= f) {
        if (!std::isfinite(f_next))
          throw DivergenceError("classifier objective diverged at iteration " + std::to_string(it + 1));
        w = std::move(w_next);
        b = std::move(b_next);
        gw.swap(gw_next);
        gb.swap(gb_next);
        f = f_next;
        accepted = true;
      } else {
        eta *= 0.5;
        if (eta < 1e-14) break;
      }
    }
    if (!accepted) break;
    clf.loss_history.push_back(f);
  }
  clf.iterations = it;
  clf.weights = span_coords ? Matrix(w.transpose() * x) : std::move(w);
  clf.bias = std::move(b);
  return clf;
}

Prediction classify(const Classifier& clf, const FeatureMatrix& query) {
  if (query.dim() != clf.dim)
    throw ShapeError("query feature dimension " + std::to_string(query.dim()) + " does not match classifier dimension " +
                     std::to_string(clf.dim));
  const Matrix x = standardized(clf, query.rows);
  Prediction out;
  out.labels.resize(query.n());
  if (clf.kind == ClassifierKind::NearestNeighbor) {
    const Eigen::VectorXd sn = clf.stored.rowwise().squaredNorm();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      Eigen::VectorXd d = sn - 2.0 * (clf.stored * x.row(i).transpose());
      std::vector<std::pair<double, std::size_t>> order;
      for (Eigen::Index r = 0; r < d.size(); ++r) order.emplace_back(d(r), static_cast<std::size_t>(r));
      const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(clf.k_neighbors), order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk), order.end());
      std::vector<int> votes(static_cast<std::size_t>(clf.num_classes), 0);
      for (std::size_t r = 0; r < kk; ++r) ++votes[static_cast<std::size_t>(clf.stored_labels[order[r].second])];
      out.labels[static_cast<std::size_t>(i)] =
          static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    }
    return out;
  }
  Matrix z = scores(x, clf.weights, clf.bias);
  for (Eigen::Index i = 0; i < z.rows(); ++i) out.labels[static_cast<std::size_t>(i)] = argmax_row(z, i);
  if (clf.kind == ClassifierKind::LR) {
    softmax_inplace(z);
    out.probabilities = std::move(z);
  }
  return out;
}

namespace {

nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(m.row(i).data(), m.row(i).data() + m.cols());
    rows.push_back(r);
  }
  return rows;
}

Matrix matrix_from(const nlohmann::json& j, std::size_t cols) {
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto r = j[i].get<std::vector<double>>();
    if (r.size() != cols) throw FormatError("classifier matrix row has wrong width");
    for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = r[c];
  }
  return m;
}

std::vector<double> vec(const Eigen::RowVectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

nlohmann::json classifier_to_json(const Classifier& clf) {
  nlohmann::json j = {{"kind", to_string(clf.kind)},
                      {"tap", clf.spec.tap_name()},
                      {"modality", nn::to_string(clf.spec.modality)},
                      {"dims", clf.dim},
                      {"num_classes", clf.num_classes},
                      {"config", clf.config.to_json()},
                      {"iterations", clf.iterations}};
  if (clf.kind == ClassifierKind::NearestNeighbor) {
    j["rows"] = matrix_json(clf.stored);
    j["labels"] = clf.stored_labels;
  } else {
    j["weights"] = matrix_json(clf.weights);
    j["bias"] = std::vector<double>(clf.bias.data(), clf.bias.data() + clf.bias.size());
  }
  if (clf.shift.size()) {
    j["shift"] = vec(clf.shift);
    j["scale"] = vec(clf.scale);
  }
  return j;
}

Classifier classifier_from_json(const nlohmann::json& j) {
  try {
    Classifier clf;
    clf.kind = parse_classifier(j.at("kind").get<std::string>());
    const auto tap = j.at("tap").get<std::string>();
    clf.spec.raw = tap == "raw";
    if (!clf.spec.raw) clf.spec.tap = nn::parse_tap(tap);
    clf.spec.modality = nn::parse_modality(j.at("modality").get<std::string>());
    clf.dim = j.at("dims").get<std::size_t>();
    clf.num_classes = j.at("num_classes").get<int>();
    clf.config = ClassifierConfig::from_json(j.at("config"));
    clf.k_neighbors = clf.config.k_neighbors;
    clf.iterations = j.value("iterations", 0);
    if (clf.kind == ClassifierKind::NearestNeighbor) {
      clf.stored = matrix_from(j.at("rows"), clf.dim);
      clf.stored_labels = j.at("labels").get<std::vector<int>>();
    } else {
      clf.weights = matrix_from(j.at("weights"), clf.dim);
      const auto b = j.at("bias").get<std::vector<double>>();
      clf.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
    }
    if (j.contains("shift")) {
      const auto s = j.at("shift").get<std::vector<double>>();
      const auto c = j.at("scale").get<std::vector<double>>();
      clf.shift = Eigen::Map<const Eigen::RowVectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
      clf.scale = Eigen::Map<const Eigen::RowVectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
    }
    return clf;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed classifier document: ") + e.what());
  }
}

}  // namespace dasecount::fewshot
