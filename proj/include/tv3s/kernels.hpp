#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tv3s/mask.hpp"
#include "tv3s/tensor.hpp"

// Plain tensor kernels: forward passes plus hand-derived backward passes.
// The autograd tape wraps these; the inference path calls them directly.
// Every loop runs in a fixed order so results are bit-reproducible.
namespace tv3s::ops {

template <typename T>
inline T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
inline T softplus_scalar(T x) {
  // log(1 + e^x), written to avoid overflow for large |x|.
  if (x > T(0)) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

template <typename T>
inline T silu_scalar(T x) {
  return x * sigmoid_scalar(x);
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* what) {
  for (int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(t.data[static_cast<size_t>(i)]))
      throw NumericError(std::string(what) + ": non-finite value at flat index " + std::to_string(i));
}

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  Tensor<T> y(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) y.data[i] = silu_scalar(x.data[i]);
  return y;
}

// gx += gy * silu'(x)
template <typename T>
void silu_backward(const Tensor<T>& x, const Tensor<T>& gy, Tensor<T>& gx) {
  for (int64_t i = 0; i < x.numel(); ++i) {
    T s = sigmoid_scalar(x.data[i]);
    gx.data[i] += gy.data[i] * s * (T(1) + x.data[i] * (T(1) - s));
  }
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  Tensor<T> y(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) y.data[i] = softplus_scalar(x.data[i]);
  return y;
}

template <typename T>
void softplus_backward(const Tensor<T>& x, const Tensor<T>& gy, Tensor<T>& gx) {
  for (int64_t i = 0; i < x.numel(); ++i) gx.data[i] += gy.data[i] * sigmoid_scalar(x.data[i]);
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  Tensor<T> y(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) y.data[i] = std::exp(x.data[i]);
  return y;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw ShapeError("add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor<T> y(a.shape);
  for (int64_t i = 0; i < a.numel(); ++i) y.data[i] = a.data[i] + b.data[i];
  return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw ShapeError("mul: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor<T> y(a.shape);
  for (int64_t i = 0; i < a.numel(); ++i) y.data[i] = a.data[i] * b.data[i];
  return y;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> y(a.shape);
  for (int64_t i = 0; i < a.numel(); ++i) y.data[i] = a.data[i] * c;
  return y;
}

// ---------------------------------------------------------------- reshaping

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<int> s) {
  if (Tensor<T>::count(s) != x.numel())
    throw ShapeError("reshape: cannot view " + x.shape_str() + " as " + Tensor<T>::shape_str(s));
  Tensor<T> y;
  y.shape = std::move(s);
  y.data = x.data;
  return y;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
  require_ndim(x, 2, "transpose2d");
  int r = x.shape[0], c = x.shape[1];
  Tensor<T> y({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) y(j, i) = x(i, j);
  return y;
}

// ---------------------------------------------------------------- matmul

// [M,K] x [K,N] -> [M,N]; per output element the sum runs over ascending k.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_ndim(a, 2, "matmul lhs");
  require_ndim(b, 2, "matmul rhs");
  if (a.shape[1] != b.shape[0])
    throw ShapeError("matmul: inner extents differ, " + a.shape_str() + " x " + b.shape_str());
  int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor<T> c({m, n});
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      T aip = a(i, p);
      if (aip == T(0)) continue;
      const T* brow = b.ptr() + static_cast<size_t>(p) * n;
      T* crow = c.ptr() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  return c;
}

// a^T x b with a stored [K,M], b stored [K,N] -> [M,N].
template <typename T>
Tensor<T> matmul_at(const Tensor<T>& a, const Tensor<T>& b) {
  require_ndim(a, 2, "matmul_at lhs");
  require_ndim(b, 2, "matmul_at rhs");
  if (a.shape[0] != b.shape[0])
    throw ShapeError("matmul_at: leading extents differ, " + a.shape_str() + " x " + b.shape_str());
  int k = a.shape[0], m = a.shape[1], n = b.shape[1];
  Tensor<T> c({m, n});
  for (int p = 0; p < k; ++p) {
    const T* arow = a.ptr() + static_cast<size_t>(p) * m;
    const T* brow = b.ptr() + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      T aip = arow[i];
      if (aip == T(0)) continue;
      T* crow = c.ptr() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

// a x b^T with a stored [M,K], b stored [N,K] -> [M,N].
template <typename T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b) {
  require_ndim(a, 2, "matmul_bt lhs");
  require_ndim(b, 2, "matmul_bt rhs");
  if (a.shape[1] != b.shape[1])
    throw ShapeError("matmul_bt: trailing extents differ, " + a.shape_str() + " x " + b.shape_str());
  int m = a.shape[0], k = a.shape[1], n = b.shape[0];
  Tensor<T> c({m, n});
  for (int i = 0; i < m; ++i) {
    const T* arow = a.ptr() + static_cast<size_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const T* brow = b.ptr() + static_cast<size_t>(j) * k;
      T acc = T(0);
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c(i, j) = acc;
    }
  }
  return c;
}

// y = w x (+ bias per output row);  w [O,I], x [I,L], bias [O].
template <typename T>
Tensor<T> linear(const Tensor<T>& w, const Tensor<T>& x, const Tensor<T>* bias = nullptr) {
  Tensor<T> y = matmul(w, x);
  if (bias) {
    require_shape(*bias, {w.shape[0]}, "linear bias");
    int o = y.shape[0], l = y.shape[1];
    for (int i = 0; i < o; ++i) {
      T bi = bias->data[static_cast<size_t>(i)];
      T* row = y.ptr() + static_cast<size_t>(i) * l;
      for (int j = 0; j < l; ++j) row[j] += bi;
    }
  }
  return y;
}

// ---------------------------------------------------------------- layer norm

template <typename T>
struct LayerNormStash {
  Tensor<T> xhat;     // normalized input, same shape as x
  Tensor<T> inv_std;  // [rows]
};

// Normalizes each row of x [R,D] to zero mean / unit variance (biased
// variance), then applies per-column gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                     LayerNormStash<T>* stash = nullptr) {
  require_ndim(x, 2, "layer_norm");
  int r = x.shape[0], d = x.shape[1];
  require_shape(gamma, {d}, "layer_norm gamma");
  require_shape(beta, {d}, "layer_norm beta");
  Tensor<T> y(x.shape);
  if (stash) {
    stash->xhat = Tensor<T>(x.shape);
    stash->inv_std = Tensor<T>({r});
  }
  for (int i = 0; i < r; ++i) {
    const T* row = x.ptr() + static_cast<size_t>(i) * d;
    T mean = T(0);
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= T(d);
    T var = T(0);
    for (int j = 0; j < d; ++j) {
      T c = row[j] - mean;
      var += c * c;
    }
    var /= T(d);
    T inv = T(1) / std::sqrt(var + eps);
    T* yrow = y.ptr() + static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      T xh = (row[j] - mean) * inv;
      yrow[j] = gamma.data[static_cast<size_t>(j)] * xh + beta.data[static_cast<size_t>(j)];
      if (stash) stash->xhat(i, j) = xh;
    }
    if (stash) stash->inv_std(i) = inv;
  }
  return y;
}

template <typename T>
void layer_norm_backward(const LayerNormStash<T>& stash, const Tensor<T>& gamma, const Tensor<T>& gy,
                         Tensor<T>& gx, Tensor<T>& ggamma, Tensor<T>& gbeta) {
  int r = gy.shape[0], d = gy.shape[1];
  for (int i = 0; i < r; ++i) {
    const T* gyr = gy.ptr() + static_cast<size_t>(i) * d;
    const T* xhr = stash.xhat.ptr() + static_cast<size_t>(i) * d;
    T sum_g = T(0), sum_gx = T(0);
    for (int j = 0; j < d; ++j) {
      T gh = gyr[j] * gamma.data[static_cast<size_t>(j)];
      sum_g += gh;
      sum_gx += gh * xhr[j];
      ggamma.data[static_cast<size_t>(j)] += gyr[j] * xhr[j];
      gbeta.data[static_cast<size_t>(j)] += gyr[j];
    }
    T inv = stash.inv_std(i);
    T* gxr = gx.ptr() + static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      T gh = gyr[j] * gamma.data[static_cast<size_t>(j)];
      gxr[j] += inv * (gh - (sum_g + xhr[j] * sum_gx) / T(d));
    }
  }
}

// ------------------------------------------------- causal depthwise conv 1d

// y(d,l) = bias(d) + sum_j kernel(d,j) * x(d, l-K+1+j), zero-padded on the
// left. The pad is not carried between calls: each sequence starts cold.
template <typename T>
Tensor<T> dwconv1d_causal(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
  require_ndim(x, 2, "dwconv1d input");
  int d = x.shape[0], l = x.shape[1];
  require_ndim(kernel, 2, "dwconv1d kernel");
  if (kernel.shape[0] != d) throw ShapeError("dwconv1d: kernel channels != input channels");
  int k = kernel.shape[1];
  require_shape(bias, {d}, "dwconv1d bias");
  Tensor<T> y(x.shape);
  for (int c = 0; c < d; ++c) {
    const T* xr = x.ptr() + static_cast<size_t>(c) * l;
    const T* kr = kernel.ptr() + static_cast<size_t>(c) * k;
    T* yr = y.ptr() + static_cast<size_t>(c) * l;
    for (int t = 0; t < l; ++t) {
      T acc = bias.data[static_cast<size_t>(c)];
      for (int j = 0; j < k; ++j) {
        int src = t - (k - 1) + j;
        if (src >= 0) acc += kr[j] * xr[src];
      }
      yr[t] = acc;
    }
  }
  return y;
}

template <typename T>
void dwconv1d_causal_backward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& gy,
                              Tensor<T>& gx, Tensor<T>& gkernel, Tensor<T>& gbias) {
  int d = x.shape[0], l = x.shape[1], k = kernel.shape[1];
  for (int c = 0; c < d; ++c) {
    const T* xr = x.ptr() + static_cast<size_t>(c) * l;
    const T* kr = kernel.ptr() + static_cast<size_t>(c) * k;
    const T* gyr = gy.ptr() + static_cast<size_t>(c) * l;
    T* gxr = gx.ptr() + static_cast<size_t>(c) * l;
    T* gkr = gkernel.ptr() + static_cast<size_t>(c) * k;
    for (int t = 0; t < l; ++t) {
      T g = gyr[t];
      gbias.data[static_cast<size_t>(c)] += g;
      for (int j = 0; j < k; ++j) {
        int src = t - (k - 1) + j;
        if (src >= 0) {
          gkr[j] += g * xr[src];
          gxr[src] += g * kr[j];
        }
      }
    }
  }
}

// ------------------------------------------------------- bilinear upsampling

// Upsamples [C,H,W] by an integer factor. Source coordinates follow the
// half-pixel convention: src = (dst + 0.5)/factor - 0.5, clamped to the edge.
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int factor) {
  require_ndim(x, 3, "bilinear_upsample");
  if (factor < 1) throw ConfigError("bilinear_upsample: factor must be >= 1");
  int c = x.shape[0], h = x.shape[1], w = x.shape[2];
  int oh = h * factor, ow = w * factor;
  Tensor<T> y({c, oh, ow});
  for (int oy = 0; oy < oh; ++oy) {
    double sy = (oy + 0.5) / factor - 0.5;
    int y0 = static_cast<int>(std::floor(sy));
    double wy = sy - y0;
    int y0c = std::clamp(y0, 0, h - 1);
    int y1c = std::clamp(y0 + 1, 0, h - 1);
    for (int ox = 0; ox < ow; ++ox) {
      double sx = (ox + 0.5) / factor - 0.5;
      int x0 = static_cast<int>(std::floor(sx));
      double wx = sx - x0;
      int x0c = std::clamp(x0, 0, w - 1);
      int x1c = std::clamp(x0 + 1, 0, w - 1);
      T w00 = static_cast<T>((1.0 - wy) * (1.0 - wx));
      T w01 = static_cast<T>((1.0 - wy) * wx);
      T w10 = static_cast<T>(wy * (1.0 - wx));
      T w11 = static_cast<T>(wy * wx);
      for (int ch = 0; ch < c; ++ch)
        y(ch, oy, ox) = w00 * x(ch, y0c, x0c) + w01 * x(ch, y0c, x1c) + w10 * x(ch, y1c, x0c) +
                        w11 * x(ch, y1c, x1c);
    }
  }
  return y;
}

template <typename T>
void bilinear_upsample_backward(const Tensor<T>& gy, int h, int w, int factor, Tensor<T>& gx) {
  int c = gy.shape[0], oh = gy.shape[1], ow = gy.shape[2];
  for (int oy = 0; oy < oh; ++oy) {
    double sy = (oy + 0.5) / factor - 0.5;
    int y0 = static_cast<int>(std::floor(sy));
    double wy = sy - y0;
    int y0c = std::clamp(y0, 0, h - 1);
    int y1c = std::clamp(y0 + 1, 0, h - 1);
    for (int ox = 0; ox < ow; ++ox) {
      double sx = (ox + 0.5) / factor - 0.5;
      int x0 = static_cast<int>(std::floor(sx));
      double wx = sx - x0;
      int x0c = std::clamp(x0, 0, w - 1);
      int x1c = std::clamp(x0 + 1, 0, w - 1);
      T w00 = static_cast<T>((1.0 - wy) * (1.0 - wx));
      T w01 = static_cast<T>((1.0 - wy) * wx);
      T w10 = static_cast<T>(wy * (1.0 - wx));
      T w11 = static_cast<T>(wy * wx);
      for (int ch = 0; ch < c; ++ch) {
        T g = gy(ch, oy, ox);
        gx(ch, y0c, x0c) += w00 * g;
        gx(ch, y0c, x1c) += w01 * g;
        gx(ch, y1c, x0c) += w10 * g;
        gx(ch, y1c, x1c) += w11 * g;
      }
    }
  }
}

// ------------------------------------------------------------ patch embedding

// Non-overlapping P x P patches of img [Ci,H,W] are flattened and projected:
// out [D, H/P, W/P] with out(d,py,px) = b(d) + sum_i w(d,i) * patch_i.
// Patch element order is (channel, ky, kx), row-major.
template <typename T>
Tensor<T> patch_embed(const Tensor<T>& img, const Tensor<T>& w, const Tensor<T>& b, int patch) {
  require_ndim(img, 3, "patch_embed image");
  int ci = img.shape[0], h = img.shape[1], ww = img.shape[2];
  if (patch < 1 || h % patch != 0 || ww % patch != 0)
    throw ShapeError("patch_embed: image extents " + img.shape_str() + " not divisible by patch " +
                     std::to_string(patch));
  int hp = h / patch, wp = ww / patch;
  int in_features = ci * patch * patch;
  require_ndim(w, 2, "patch_embed weight");
  if (w.shape[1] != in_features)
    throw ShapeError("patch_embed: weight expects " + std::to_string(w.shape[1]) +
                     " inputs, patch provides " + std::to_string(in_features));
  int d = w.shape[0];
  require_shape(b, {d}, "patch_embed bias");
  Tensor<T> y({d, hp, wp});
  for (int py = 0; py < hp; ++py)
    for (int px = 0; px < wp; ++px) {
      for (int de = 0; de < d; ++de) {
        const T* wr = w.ptr() + static_cast<size_t>(de) * in_features;
        T acc = b.data[static_cast<size_t>(de)];
        int i = 0;
        for (int c = 0; c < ci; ++c)
          for (int ky = 0; ky < patch; ++ky)
            for (int kx = 0; kx < patch; ++kx)
              acc += wr[i++] * img(c, py * patch + ky, px * patch + kx);
        y(de, py, px) = acc;
      }
    }
  return y;
}

template <typename T>
void patch_embed_backward(const Tensor<T>& img, const Tensor<T>& w, int patch, const Tensor<T>& gy,
                          Tensor<T>* gimg, Tensor<T>& gw, Tensor<T>& gb) {
  int ci = img.shape[0];
  int hp = gy.shape[1], wp = gy.shape[2], d = gy.shape[0];
  int in_features = ci * patch * patch;
  for (int py = 0; py < hp; ++py)
    for (int px = 0; px < wp; ++px)
      for (int de = 0; de < d; ++de) {
        T g = gy(de, py, px);
        gb.data[static_cast<size_t>(de)] += g;
        T* gwr = gw.ptr() + static_cast<size_t>(de) * in_features;
        const T* wr = w.ptr() + static_cast<size_t>(de) * in_features;
        int i = 0;
        for (int c = 0; c < ci; ++c)
          for (int ky = 0; ky < patch; ++ky)
            for (int kx = 0; kx < patch; ++kx) {
              gwr[i] += g * img(c, py * patch + ky, px * patch + kx);
              if (gimg) (*gimg)(c, py * patch + ky, px * patch + kx) += g * wr[i];
              ++i;
            }
      }
}

// --------------------------------------------------- softmax cross entropy

template <typename T>
struct XentResult {
  T value = T(0);
  int64_t count = 0;  // pixels contributing to the mean
};

// Mean pixelwise cross entropy of logits [C,H,W] against integer labels.
// Pixels labelled ignore_label are excluded; a fully ignored frame yields
// value 0 with count 0. Per-pixel math runs in double so the reduction does
// not drift in float.
template <typename T>
XentResult<T> softmax_xent(const Tensor<T>& logits, const ClassMask& mask, int32_t ignore_label,
                           Tensor<T>* probs_stash = nullptr) {
  require_ndim(logits, 3, "softmax_xent logits");
  int c = logits.shape[0], h = logits.shape[1], w = logits.shape[2];
  if (mask.h != h || mask.w != w)
    throw ShapeError("softmax_xent: mask " + std::to_string(mask.h) + "x" + std::to_string(mask.w) +
                     " does not match logits " + logits.shape_str());
  if (probs_stash) *probs_stash = Tensor<T>(logits.shape);
  double sum = 0.0;
  int64_t count = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int32_t label = mask.at(y, x);
      bool ignored = (label == ignore_label);
      if (!ignored && (label < 0 || label >= c))
        throw ConfigError("softmax_xent: label " + std::to_string(label) + " outside [0," +
                          std::to_string(c) + ") at pixel (" + std::to_string(y) + "," +
                          std::to_string(x) + ")");
      double m = static_cast<double>(logits(0, y, x));
      for (int k = 1; k < c; ++k) m = std::max(m, static_cast<double>(logits(k, y, x)));
      double se = 0.0;
      for (int k = 0; k < c; ++k) se += std::exp(static_cast<double>(logits(k, y, x)) - m);
      double lse = m + std::log(se);
      if (probs_stash)
        for (int k = 0; k < c; ++k)
          (*probs_stash)(k, y, x) =
              static_cast<T>(std::exp(static_cast<double>(logits(k, y, x)) - lse));
      if (!ignored) {
        sum += lse - static_cast<double>(logits(label, y, x));
        ++count;
      }
    }
  XentResult<T> r;
  r.count = count;
  r.value = count ? static_cast<T>(sum / static_cast<double>(count)) : T(0);
  if (!std::isfinite(static_cast<double>(r.value)))
    throw NumericError("softmax_xent: non-finite loss");
  return r;
}

// g_logits += gout * (softmax - onehot)/count on contributing pixels.
template <typename T>
void softmax_xent_backward(const Tensor<T>& probs, const ClassMask& mask, int32_t ignore_label,
                           int64_t count, T gout, Tensor<T>& glogits) {
  if (count == 0) return;
  int c = probs.shape[0], h = probs.shape[1], w = probs.shape[2];
  T inv = gout / static_cast<T>(count);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int32_t label = mask.at(y, x);
      if (label == ignore_label) continue;
      for (int k = 0; k < c; ++k) {
        T p = probs(k, y, x);
        glogits(k, y, x) += inv * (k == label ? p - T(1) : p);
      }
    }
}

// Per-pixel argmax over the channel axis; ties go to the lower class index.
template <typename T>
ClassMask argmax_channel(const Tensor<T>& logits) {
  require_ndim(logits, 3, "argmax_channel");
  int c = logits.shape[0], h = logits.shape[1], w = logits.shape[2];
  ClassMask m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int best = 0;
      T bv = logits(0, y, x);
      for (int k = 1; k < c; ++k)
        if (logits(k, y, x) > bv) {
          bv = logits(k, y, x);
          best = k;
        }
      m.at(y, x) = best;
    }
  return m;
}

}  // namespace tv3s::ops
