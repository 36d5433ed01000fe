#pragma once

// Building blocks for the CNN engine. Activations use a channel-major batch
// layout [C][B][H][W] so that a whole batch convolves as one GEMM per chunk
// and batch-norm statistics are contiguous per channel.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace dasecount::nn::kernels {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

inline constexpr std::size_t kColBudget = std::size_t{1} << 22;  // elements per im2col chunk

/// [B][C][H][W] -> [C][B][H][W]
template <typename T>
void to_channel_major(const T* in, T* out, int batch, int channels, std::size_t plane) {
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c)
      std::memcpy(out + (static_cast<std::size_t>(c) * batch + b) * plane,
                  in + (static_cast<std::size_t>(b) * channels + c) * plane, plane * sizeof(T));
}

/// 3x3, stride 1, zero padding 1. `col` is [C*9][nb*H*W].
template <typename T>
void im2col(const T* x, T* col, int channels, int batch, int b0, int nb, int h, int w) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const std::size_t cols = nb * hw;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        T* row = col + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * cols;
        for (int bl = 0; bl < nb; ++bl) {
          const T* plane = x + (static_cast<std::size_t>(c) * batch + b0 + bl) * hw;
          for (int y = 0; y < h; ++y) {
            T* dst = row + bl * hw + static_cast<std::size_t>(y) * w;
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= h) {
              std::fill(dst, dst + w, T(0));
              continue;
            }
            const T* src = plane + static_cast<std::size_t>(sy) * w;
            if (kx == 1) {
              std::memcpy(dst, src, w * sizeof(T));
            } else if (kx == 0) {
              dst[0] = T(0);
              std::memcpy(dst + 1, src, (w - 1) * sizeof(T));
            } else {
              std::memcpy(dst, src + 1, (w - 1) * sizeof(T));
              dst[w - 1] = T(0);
            }
          }
        }
      }
}

/// Accumulates `col` back into dx (the adjoint of im2col).
template <typename T>
void col2im_add(const T* col, T* dx, int channels, int batch, int b0, int nb, int h, int w) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const std::size_t cols = nb * hw;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const T* row = col + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * cols;
        for (int bl = 0; bl < nb; ++bl) {
          T* plane = dx + (static_cast<std::size_t>(c) * batch + b0 + bl) * hw;
          for (int y = 0; y < h; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= h) continue;
            const T* src = row + bl * hw + static_cast<std::size_t>(y) * w;
            T* dst = plane + static_cast<std::size_t>(sy) * w;
            const int shift = kx - 1;
            const int lo = std::max(0, -shift), hi = std::min(w, w - shift);
            for (int xx = lo; xx < hi; ++xx) dst[xx + shift] += src[xx];
          }
        }
      }
}

inline int chunk_samples(int channels, std::size_t hw, int batch) {
  std::size_t per = static_cast<std::size_t>(channels) * 9 * hw;
  return static_cast<int>(std::clamp<std::size_t>(kColBudget / std::max<std::size_t>(per, 1), 1, batch));
}

/// y[F][B*H*W] = weight[F][C*9] * im2col(x) + bias
template <typename T>
void conv_forward(const T* x, int channels, int batch, int h, int w, const T* weight, const T* bias,
                  int filters, T* y, std::vector<T>& col) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const std::size_t total = batch * hw;
  const int step = chunk_samples(channels, hw, batch);
  col.resize(static_cast<std::size_t>(channels) * 9 * step * hw);
  Eigen::Map<const RowMat<T>> wm(weight, filters, channels * 9);
  for (int b0 = 0; b0 < batch; b0 += step) {
    const int nb = std::min(step, batch - b0);
    im2col(x, col.data(), channels, batch, b0, nb, h, w);
    Eigen::Map<const RowMat<T>> cm(col.data(), channels * 9, nb * hw);
    StridedMap<T> ym(y + b0 * hw, filters, nb * hw, Eigen::OuterStride<>(total));
    ym.noalias() = wm * cm;
  }
  for (int f = 0; f < filters; ++f) {
    T* row = y + f * total;
    for (std::size_t i = 0; i < total; ++i) row[i] += bias[f];
  }
}

/// Accumulates weight/bias gradients; writes dx when non-null.
template <typename T>
void conv_backward(const T* x, int channels, int batch, int h, int w, const T* weight, int filters,
                   const T* dy, T* dweight, T* dbias, T* dx, std::vector<T>& col) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const std::size_t total = batch * hw;
  const int step = chunk_samples(channels, hw, batch);
  col.resize(static_cast<std::size_t>(channels) * 9 * step * hw);
  Eigen::Map<const RowMat<T>> wm(weight, filters, channels * 9);
  Eigen::Map<RowMat<T>> dwm(dweight, filters, channels * 9);
  if (dx) std::fill(dx, dx + static_cast<std::size_t>(channels) * total, T(0));
  for (int b0 = 0; b0 < batch; b0 += step) {
    const int nb = std::min(step, batch - b0);
    ConstStridedMap<T> dym(dy + b0 * hw, filters, nb * hw, Eigen::OuterStride<>(total));
    im2col(x, col.data(), channels, batch, b0, nb, h, w);
    Eigen::Map<RowMat<T>> cm(col.data(), channels * 9, nb * hw);
    dwm.noalias() += dym * cm.transpose();
    if (dx) {
      cm.noalias() = wm.transpose() * dym;
      col2im_add(col.data(), dx, channels, batch, b0, nb, h, w);
    }
  }
  for (int f = 0; f < filters; ++f) {
    const T* row = dy + f * total;
    double s = 0.0;
    for (std::size_t i = 0; i < total; ++i) s += row[i];
    dbias[f] += static_cast<T>(s);
  }
}

/// Batch statistics per channel; y is overwritten by the normalized values.
template <typename T>
void batchnorm_normalize(T* y, int channels, std::size_t n, T eps, T* mean_out, T* var_out, T* invstd_out) {
  for (int c = 0; c < channels; ++c) {
    T* row = y + c * n;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += row[i];
    const double mean = s / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (row[i] - mean) * (row[i] - mean);
    const double var = ss / static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) row[i] = static_cast<T>((row[i] - mean) * inv);
    mean_out[c] = static_cast<T>(mean);
    var_out[c] = static_cast<T>(var);
    invstd_out[c] = static_cast<T>(inv);
  }
}

/// z = scale[c] * x + shift[c]; r = relu(z); p = maxpool(r). Records the flat
/// index of each window's maximum when argmax is non-null.
template <typename T>
void affine_relu_pool(const T* x, const T* scale, const T* shift, int channels, int batch, int h, int w,
                      int ph, int pw, T* p, std::int32_t* argmax) {
  const int ho = h / ph, wo = w / pw;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const std::size_t ohw = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < channels; ++c) {
    const T s = scale[c], t = shift[c];
    for (int b = 0; b < batch; ++b) {
      const std::size_t in_base = (static_cast<std::size_t>(c) * batch + b) * hw;
      const std::size_t out_base = (static_cast<std::size_t>(c) * batch + b) * ohw;
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_idx = 0;
          for (int dy = 0; dy < ph; ++dy)
            for (int dx = 0; dx < pw; ++dx) {
              const std::size_t idx = in_base + static_cast<std::size_t>(oy * ph + dy) * w + ox * pw + dx;
              T v = s * x[idx] + t;
              if (v < T(0)) v = T(0);
              if (v > best) {
                best = v;
                best_idx = idx;
              }
            }
          p[out_base + static_cast<std::size_t>(oy) * wo + ox] = best;
          if (argmax) argmax[out_base + static_cast<std::size_t>(oy) * wo + ox] = static_cast<std::int32_t>(best_idx);
        }
    }
  }
}

/// Routes pooled gradients to the arg-max positions whose ReLU was active.
template <typename T>
void pool_relu_backward(const T* dp, const T* p, const std::int32_t* argmax, std::size_t pooled_count, T* dz,
                        std::size_t full_count) {
  std::fill(dz, dz + full_count, T(0));
  for (std::size_t i = 0; i < pooled_count; ++i)
    if (p[i] > T(0)) dz[argmax[i]] += dp[i];
}

/// In place: dz (gradient wrt gamma*xhat+beta) becomes the gradient wrt the
/// pre-normalization input.
template <typename T>
void batchnorm_backward(T* dz, const T* xhat, const T* gamma, const T* invstd, int channels, std::size_t n,
                        T* dgamma, T* dbeta) {
  for (int c = 0; c < channels; ++c) {
    T* d = dz + c * n;
    const T* xh = xhat + c * n;
    double sd = 0.0, sdx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sd += d[i];
      sdx += static_cast<double>(d[i]) * xh[i];
    }
    dbeta[c] += static_cast<T>(sd);
    dgamma[c] += static_cast<T>(sdx);
    const double k = static_cast<double>(gamma[c]) * invstd[c];
    const double md = sd / static_cast<double>(n), mdx = sdx / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = static_cast<T>(k * (d[i] - md - xh[i] * mdx));
  }
}

/// Row-wise softmax in double precision.
template <typename T>
std::vector<double> softmax_rows(std::span<const T> logits, int rows, int cols, double temperature = 1.0) {
  std::vector<double> out(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    const T* z = logits.data() + static_cast<std::size_t>(r) * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < cols; ++c) mx = std::max(mx, static_cast<double>(z[c]) / temperature);
    double s = 0.0;
    for (int c = 0; c < cols; ++c) {
      double e = std::exp(static_cast<double>(z[c]) / temperature - mx);
      out[static_cast<std::size_t>(r) * cols + c] = e;
      s += e;
    }
    for (int c = 0; c < cols; ++c) out[static_cast<std::size_t>(r) * cols + c] /= s;
  }
  return out;
}

/// Mean cross-entropy over rows; writes d(loss)/d(logits) when grad is non-null.
template <typename T>
double cross_entropy(std::span<const T> logits, std::span<const int> labels, int cols, T* grad) {
  const int rows = static_cast<int>(labels.size());
  auto p = softmax_rows(logits, rows, cols);
  double loss = 0.0;
  for (int r = 0; r < rows; ++r) {
    loss -= std::log(std::max(p[static_cast<std::size_t>(r) * cols + labels[r]], 1e-300));
    if (grad)
      for (int c = 0; c < cols; ++c)
        grad[static_cast<std::size_t>(r) * cols + c] =
            static_cast<T>((p[static_cast<std::size_t>(r) * cols + c] - (c == labels[r] ? 1.0 : 0.0)) / rows);
  }
  return loss / rows;
}

}  // namespace dasecount::nn::kernels
