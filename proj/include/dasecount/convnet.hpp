#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dasecount/error.hpp"
#include "dasecount/nn_kernels.hpp"
#include "dasecount/rng.hpp"

namespace dasecount::nn {

struct PoolSize {
  int h = 2;
  int w = 2;
  bool operator==(const PoolSize&) const = default;
};

/// Shape of one CNN submodel: `pools.size()` blocks of
/// conv3x3(width) -> batch-norm -> ReLU -> max-pool, then a linear layer.
struct ArchSpec {
  int in_channels = 6;
  int num_classes = 9;
  int in_h = 200;  // time frames
  int in_w = 114;  // subcarriers
  int width = 64;
  std::vector<PoolSize> pools = {{4, 2}, {2, 2}, {2, 2}, {2, 2}, {2, 2}, {2, 2}};

  bool operator==(const ArchSpec&) const = default;

  int blocks() const { return static_cast<int>(pools.size()); }

  /// Spatial extent after each block (floor division at every pool).
  std::vector<std::pair<int, int>> spatial_chain() const {
    std::vector<std::pair<int, int>> out;
    int h = in_h, w = in_w;
    for (const auto& p : pools) {
      h /= p.h;
      w /= p.w;
      out.emplace_back(h, w);
    }
    return out;
  }

  void validate() const {
    if (in_channels < 1) throw ShapeError("in_channels must be >= 1");
    if (num_classes < 2) throw ShapeError("num_classes must be >= 2");
    if (width < 1 || pools.empty()) throw ShapeError("need at least one block of width >= 1");
    for (auto [h, w] : spatial_chain())
      if (h < 1 || w < 1)
        throw ShapeError("input " + std::to_string(in_h) + "x" + std::to_string(in_w) +
                         " does not survive the pooling chain");
  }

  std::size_t fc_inputs() const {
    auto [h, w] = spatial_chain().back();
    return static_cast<std::size_t>(width) * h * w;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    int c = in_channels;
    for (int b = 0; b < blocks(); ++b) {
      n += static_cast<std::size_t>(c) * width * 9 + width;  // conv weight + bias
      n += 2 * static_cast<std::size_t>(width);               // bn gamma + beta
      c = width;
    }
    return n + fc_inputs() * num_classes + num_classes;
  }

  std::string layer_spec() const {
    std::string s = "in" + std::to_string(in_h) + "x" + std::to_string(in_w) + ";w" + std::to_string(width);
    for (const auto& p : pools) s += ";p" + std::to_string(p.h) + "x" + std::to_string(p.w);
    return s;
  }

  std::uint64_t fingerprint() const {
    return derive_seed(fnv1a(layer_spec()), {static_cast<std::uint64_t>(in_channels),
                                             static_cast<std::uint64_t>(num_classes)});
  }
};

/// Default submodel for a given input: six conv blocks, (4,2) then (2,2) pooling.
inline ArchSpec default_arch(int in_channels, int num_classes, int in_h = 200, int in_w = 114) {
  ArchSpec a;
  a.in_channels = in_channels;
  a.num_classes = num_classes;
  a.in_h = in_h;
  a.in_w = in_w;
  return a;
}

/// Where features are read: FC = logits, CNN1 = last block, CNN2 = the block before it.
enum class Tap { Logits, FC, CNN1, CNN2 };

std::string_view to_string(Tap t);
Tap parse_tap(std::string_view s);

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <typename T>
struct BlockCache {
  int c = 0, h = 0, w = 0, ho = 0, wo = 0;
  std::vector<T> xhat;
  std::vector<T> invstd;
  std::vector<T> pooled;
  std::vector<std::int32_t> argmax;
};

/// Activations kept by a training-mode forward pass for the backward pass.
template <typename T>
struct TrainCache {
  int batch = 0;
  std::vector<T> input;  // channel-major copy of the batch
  std::vector<BlockCache<T>> blocks;
  std::vector<T> features;  // [B][fc_inputs]
  std::vector<T> col;
};

/// One CNN submodel with flat parameter/gradient storage.
template <typename T>
class CnnSubmodel {
 public:
  CnnSubmodel() = default;

  CnnSubmodel(ArchSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    layout();
    initialize(seed);
  }

  const ArchSpec& spec() const { return spec_; }
  std::size_t parameter_count() const { return params_.size(); }

  std::span<T> parameters() { return params_; }
  std::span<const T> parameters() const { return params_; }
  std::span<T> gradients() { return grads_; }
  std::span<const T> gradients() const { return grads_; }
  /// Running mean then running variance, per block.
  std::span<T> running_stats() { return stats_; }
  std::span<const T> running_stats() const { return stats_; }

  void zero_grad() { std::fill(grads_.begin(), grads_.end(), T(0)); }

  std::size_t tap_dim(Tap tap) const {
    auto chain = spec_.spatial_chain();
    switch (tap) {
      case Tap::Logits:
      case Tap::FC: return static_cast<std::size_t>(spec_.num_classes);
      case Tap::CNN1: return spec_.fc_inputs();
      case Tap::CNN2: {
        if (spec_.blocks() < 2) throw ShapeError("CNN2 tap needs at least two blocks");
        auto [h, w] = chain[chain.size() - 2];
        return static_cast<std::size_t>(spec_.width) * h * w;
      }
    }
    return 0;
  }

  std::size_t input_size() const {
    return static_cast<std::size_t>(spec_.in_channels) * spec_.in_h * spec_.in_w;
  }

  /// Inference-mode forward (running batch-norm statistics). `input` is
  /// [batch][C][H][W]; the result is [batch][tap_dim(tap)]. When `trace` is
  /// given, the spatial extent produced by every block is appended to it.
  std::vector<T> forward(std::span<const T> input, int batch, Tap tap,
                         std::vector<std::pair<int, int>>* trace = nullptr) const {
    check_input(input, batch);
    const std::size_t dim = tap_dim(tap);
    std::vector<T> out(static_cast<std::size_t>(batch) * dim);
    const int step = 16;
    std::vector<T> cur, next, col, scale(spec_.width), shift(spec_.width);
    for (int b0 = 0; b0 < batch; b0 += step) {
      const int nb = std::min(step, batch - b0);
      const std::size_t plane = static_cast<std::size_t>(spec_.in_h) * spec_.in_w;
      cur.resize(input_size() * nb);
      kernels::to_channel_major(input.data() + b0 * input_size(), cur.data(), nb, spec_.in_channels, plane);
      int c = spec_.in_channels, h = spec_.in_h, w = spec_.in_w;
      for (int blk = 0; blk < spec_.blocks(); ++blk) {
        const auto& off = blocks_[blk];
        const std::size_t n = static_cast<std::size_t>(nb) * h * w;
        next.resize(static_cast<std::size_t>(spec_.width) * n);
        kernels::conv_forward(cur.data(), c, nb, h, w, &params_[off.weight], &params_[off.bias], spec_.width,
                              next.data(), col);
        for (int f = 0; f < spec_.width; ++f) {
          const double inv = 1.0 / std::sqrt(static_cast<double>(stats_[off.var + f]) + kBatchNormEps);
          scale[f] = static_cast<T>(params_[off.gamma + f] * inv);
          shift[f] = static_cast<T>(params_[off.beta + f] - stats_[off.mean + f] * params_[off.gamma + f] * inv);
        }
        const int ph = spec_.pools[blk].h, pw = spec_.pools[blk].w;
        const int ho = h / ph, wo = w / pw;
        cur.resize(static_cast<std::size_t>(spec_.width) * nb * ho * wo);
        kernels::affine_relu_pool(next.data(), scale.data(), shift.data(), spec_.width, nb, h, w, ph, pw,
                                  cur.data(), static_cast<std::int32_t*>(nullptr));
        c = spec_.width;
        h = ho;
        w = wo;
        if (trace && b0 == 0) trace->emplace_back(h, w);
        const bool is_cnn2 = tap == Tap::CNN2 && blk == spec_.blocks() - 2;
        if (is_cnn2) {
          flatten(cur.data(), c, nb, static_cast<std::size_t>(h) * w, out.data() + b0 * dim);
          if (!trace) break;
        }
      }
      if (tap == Tap::CNN2) continue;
      std::vector<T> feats(static_cast<std::size_t>(nb) * spec_.fc_inputs());
      flatten(cur.data(), c, nb, static_cast<std::size_t>(h) * w, feats.data());
      if (tap == Tap::CNN1) {
        std::copy(feats.begin(), feats.end(), out.begin() + b0 * dim);
      } else {
        fc_forward(feats.data(), nb, out.data() + b0 * dim);
      }
    }
    return out;
  }

  /// Training-mode forward with batch statistics. Returns logits [batch][K].
  std::vector<T> forward_train(std::span<const T> input, int batch, TrainCache<T>& cache,
                               bool update_running_stats) {
    check_input(input, batch);
    cache.batch = batch;
    const std::size_t plane = static_cast<std::size_t>(spec_.in_h) * spec_.in_w;
    cache.input.resize(input_size() * batch);
    kernels::to_channel_major(input.data(), cache.input.data(), batch, spec_.in_channels, plane);
    cache.blocks.resize(spec_.blocks());
    int c = spec_.in_channels, h = spec_.in_h, w = spec_.in_w;
    const T* x = cache.input.data();
    std::vector<T> mean(spec_.width), var(spec_.width);
    for (int blk = 0; blk < spec_.blocks(); ++blk) {
      auto& bc = cache.blocks[blk];
      const auto& off = blocks_[blk];
      const int ph = spec_.pools[blk].h, pw = spec_.pools[blk].w;
      bc.c = c;
      bc.h = h;
      bc.w = w;
      bc.ho = h / ph;
      bc.wo = w / pw;
      const std::size_t n = static_cast<std::size_t>(batch) * h * w;
      bc.xhat.resize(static_cast<std::size_t>(spec_.width) * n);
      kernels::conv_forward(x, c, batch, h, w, &params_[off.weight], &params_[off.bias], spec_.width,
                            bc.xhat.data(), cache.col);
      bc.invstd.resize(spec_.width);
      kernels::batchnorm_normalize(bc.xhat.data(), spec_.width, n, static_cast<T>(kBatchNormEps), mean.data(),
                                   var.data(), bc.invstd.data());
      if (update_running_stats) {
        const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
        for (int f = 0; f < spec_.width; ++f) {
          T& rm = stats_[off.mean + f];
          T& rv = stats_[off.var + f];
          rm = static_cast<T>((1 - kBatchNormMomentum) * rm + kBatchNormMomentum * mean[f]);
          rv = static_cast<T>((1 - kBatchNormMomentum) * rv + kBatchNormMomentum * var[f] * unbias);
        }
      }
      const std::size_t pooled = static_cast<std::size_t>(spec_.width) * batch * bc.ho * bc.wo;
      bc.pooled.resize(pooled);
      bc.argmax.resize(pooled);
      kernels::affine_relu_pool(bc.xhat.data(), &params_[off.gamma], &params_[off.beta], spec_.width, batch, h, w,
                                ph, pw, bc.pooled.data(), bc.argmax.data());
      x = bc.pooled.data();
      c = spec_.width;
      h = bc.ho;
      w = bc.wo;
    }
    cache.features.resize(static_cast<std::size_t>(batch) * spec_.fc_inputs());
    flatten(x, c, batch, static_cast<std::size_t>(h) * w, cache.features.data());
    std::vector<T> logits(static_cast<std::size_t>(batch) * spec_.num_classes);
    fc_forward(cache.features.data(), batch, logits.data());
    return logits;
  }

  /// Accumulates parameter gradients given d(loss)/d(logits).
  void backward(TrainCache<T>& cache, std::span<const T> dlogits) {
    using kernels::RowMat;
    const int batch = cache.batch;
    const int k = spec_.num_classes;
    const auto d = static_cast<Eigen::Index>(spec_.fc_inputs());
    Eigen::Map<const RowMat<T>> g(dlogits.data(), batch, k);
    Eigen::Map<const RowMat<T>> feats(cache.features.data(), batch, d);
    Eigen::Map<const RowMat<T>> wfc(&params_[fc_weight_], k, d);
    Eigen::Map<RowMat<T>> dwfc(&grads_[fc_weight_], k, d);
    dwfc.noalias() += g.transpose() * feats;
    for (int j = 0; j < k; ++j) {
      double s = 0.0;
      for (int b = 0; b < batch; ++b) s += dlogits[static_cast<std::size_t>(b) * k + j];
      grads_[fc_bias_ + j] += static_cast<T>(s);
    }
    RowMat<T> dfeats = g * wfc;

    const auto& last = cache.blocks.back();
    std::vector<T> dp(static_cast<std::size_t>(spec_.width) * batch * last.ho * last.wo);
    unflatten(dfeats.data(), spec_.width, batch, static_cast<std::size_t>(last.ho) * last.wo, dp.data());

    std::vector<T> dz, dx;
    for (int blk = spec_.blocks() - 1; blk >= 0; --blk) {
      auto& bc = cache.blocks[blk];
      const auto& off = blocks_[blk];
      const std::size_t n = static_cast<std::size_t>(batch) * bc.h * bc.w;
      dz.resize(static_cast<std::size_t>(spec_.width) * n);
      kernels::pool_relu_backward(dp.data(), bc.pooled.data(), bc.argmax.data(), bc.pooled.size(), dz.data(),
                                  dz.size());
      kernels::batchnorm_backward(dz.data(), bc.xhat.data(), &params_[off.gamma], bc.invstd.data(), spec_.width, n,
                                  &grads_[off.gamma], &grads_[off.beta]);
      const T* x = blk == 0 ? cache.input.data() : cache.blocks[blk - 1].pooled.data();
      if (blk > 0) dx.resize(static_cast<std::size_t>(bc.c) * n);
      kernels::conv_backward(x, bc.c, batch, bc.h, bc.w, &params_[off.weight], spec_.width, dz.data(),
                             &grads_[off.weight], &grads_[off.bias], blk > 0 ? dx.data() : nullptr, cache.col);
      if (blk > 0) std::swap(dp, dx);
    }
  }

  /// Copies weights and statistics, converting scalar type.
  template <typename U>
  CnnSubmodel<U> cast() const {
    CnnSubmodel<U> out;
    out.spec_ = spec_;
    out.layout();
    std::transform(params_.begin(), params_.end(), out.params_.begin(), [](T v) { return static_cast<U>(v); });
    std::transform(stats_.begin(), stats_.end(), out.stats_.begin(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  /// Rebuilds a model from stored tensors (checkpoint loading).
  static CnnSubmodel from_tensors(ArchSpec spec, std::vector<T> params, std::vector<T> stats) {
    CnnSubmodel m;
    m.spec_ = std::move(spec);
    m.spec_.validate();
    m.layout();
    if (params.size() != m.params_.size() || stats.size() != m.stats_.size())
      throw ShapeError("tensor sizes do not match the architecture");
    m.params_ = std::move(params);
    m.stats_ = std::move(stats);
    return m;
  }

 private:
  template <typename U>
  friend class CnnSubmodel;

  struct BlockOffsets {
    std::size_t weight, bias, gamma, beta, mean, var;
  };

  void layout() {
    blocks_.clear();
    std::size_t p = 0, s = 0;
    int c = spec_.in_channels;
    for (int b = 0; b < spec_.blocks(); ++b) {
      BlockOffsets o{};
      o.weight = p;
      p += static_cast<std::size_t>(spec_.width) * c * 9;
      o.bias = p;
      p += spec_.width;
      o.gamma = p;
      p += spec_.width;
      o.beta = p;
      p += spec_.width;
      o.mean = s;
      s += spec_.width;
      o.var = s;
      s += spec_.width;
      blocks_.push_back(o);
      c = spec_.width;
    }
    fc_weight_ = p;
    p += spec_.fc_inputs() * spec_.num_classes;
    fc_bias_ = p;
    p += spec_.num_classes;
    params_.assign(p, T(0));
    grads_.assign(p, T(0));
    stats_.assign(s, T(0));
  }

  // He-normal convolutions, unit batch-norm gain, zero biases, LeCun-normal FC.
  void initialize(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "cnn-init"));
    std::normal_distribution<double> gauss(0.0, 1.0);
    int c = spec_.in_channels;
    for (const auto& o : blocks_) {
      const double sd = std::sqrt(2.0 / (9.0 * c));
      for (std::size_t i = 0; i < static_cast<std::size_t>(spec_.width) * c * 9; ++i)
        params_[o.weight + i] = static_cast<T>(sd * gauss(rng));
      for (int f = 0; f < spec_.width; ++f) {
        params_[o.gamma + f] = T(1);
        stats_[o.var + f] = T(1);
      }
      c = spec_.width;
    }
    const double sd = std::sqrt(1.0 / static_cast<double>(spec_.fc_inputs()));
    for (std::size_t i = 0; i < spec_.fc_inputs() * spec_.num_classes; ++i)
      params_[fc_weight_ + i] = static_cast<T>(sd * gauss(rng));
  }

  void check_input(std::span<const T> input, int batch) const {
    if (batch < 1) throw ShapeError("batch must be >= 1");
    if (input.size() != input_size() * batch)
      throw ShapeError("input holds " + std::to_string(input.size()) + " values, expected " +
                       std::to_string(batch) + " x " + std::to_string(spec_.in_channels) + " x " +
                       std::to_string(spec_.in_h) + " x " + std::to_string(spec_.in_w));
  }

  // [C][B][hw] -> [B][C*hw]
  static void flatten(const T* x, int c, int batch, std::size_t hw, T* out) {
    for (int ch = 0; ch < c; ++ch)
      for (int b = 0; b < batch; ++b)
        std::copy_n(x + (static_cast<std::size_t>(ch) * batch + b) * hw, hw,
                    out + static_cast<std::size_t>(b) * c * hw + ch * hw);
  }
  static void unflatten(const T* in, int c, int batch, std::size_t hw, T* x) {
    for (int ch = 0; ch < c; ++ch)
      for (int b = 0; b < batch; ++b)
        std::copy_n(in + static_cast<std::size_t>(b) * c * hw + ch * hw, hw,
                    x + (static_cast<std::size_t>(ch) * batch + b) * hw);
  }

  void fc_forward(const T* feats, int batch, T* logits) const {
    using kernels::RowMat;
    const auto d = static_cast<Eigen::Index>(spec_.fc_inputs());
    Eigen::Map<const RowMat<T>> x(feats, batch, d);
    Eigen::Map<const RowMat<T>> wfc(&params_[fc_weight_], spec_.num_classes, d);
    Eigen::Map<RowMat<T>> out(logits, batch, spec_.num_classes);
    out.noalias() = x * wfc.transpose();
    for (int b = 0; b < batch; ++b)
      for (int j = 0; j < spec_.num_classes; ++j) out(b, j) += params_[fc_bias_ + j];
  }

  ArchSpec spec_;
  std::vector<BlockOffsets> blocks_;
  std::size_t fc_weight_ = 0, fc_bias_ = 0;
  std::vector<T> params_;
  std::vector<T> grads_;
  std::vector<T> stats_;
};

/// Adam with bias correction.
template <typename T>
class Adam {
 public:
  Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<T> params, std::span<const T> grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grads[i];
      m_[i] = b1_ * m_[i] + (1 - b1_) * g;
      v_[i] = b2_ * v_[i] + (1 - b2_) * g * g;
      params[i] = static_cast<T>(params[i] - lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_));
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

/// SGD with optional heavy-ball momentum and L2 weight decay folded into the gradient.
template <typename T>
class Sgd {
 public:
  Sgd(std::size_t n, double lr, double momentum, double weight_decay)
      : lr_(lr), momentum_(momentum), wd_(weight_decay), buf_(n, 0.0) {}

  void step(std::span<T> params, std::span<const T> grads) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grads[i] + wd_ * params[i];
      buf_[i] = momentum_ * buf_[i] + g;
      params[i] = static_cast<T>(params[i] - lr_ * buf_[i]);
    }
  }

 private:
  double lr_, momentum_, wd_;
  std::vector<double> buf_;
};

}  // namespace dasecount::nn
