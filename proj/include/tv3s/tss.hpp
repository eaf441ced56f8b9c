#pragma once

#include <functional>
#include <string>
#include <utility>

#include "tv3s/ssm.hpp"
#include "tv3s/tape.hpp"

// Temporal state-space unit applied to one patch sequence [D_embed, L]:
//   u = silu(causal_dwconv(W_in * layer_norm(x)))
//   (ys, h_out) = selective_scan(u, h_in)
//   y = x + W_out * ys
// The hidden state h [D_inner, N] is the only thing carried between frames;
// the conv pad restarts at every call.
namespace tv3s {

template <typename T>
struct TssWeights {
  int d_embed = 0, d_inner = 0, k = 0;
  T ln_eps = static_cast<T>(1e-6);
  Param<T> norm_gamma;  // [De]
  Param<T> norm_beta;   // [De]
  Param<T> w_in;        // [Di,De]
  Param<T> conv_kernel; // [Di,K]
  Param<T> conv_bias;   // [Di]
  SsmParams<T> ssm;     // over Di channels
  Param<T> w_out;       // [De,Di]

  void init(int de, int di, int kk, int n, int d_rank, Rng& rng, const std::string& prefix) {
    if (de < 1 || di < 1 || kk < 1) throw ConfigError("TssWeights: non-positive dimension");
    d_embed = de;
    d_inner = di;
    k = kk;
    norm_gamma = Param<T>(prefix + ".norm_gamma", Tensor<T>({de}, T(1)));
    norm_beta = Param<T>(prefix + ".norm_beta", Tensor<T>({de}, T(0)));
    auto scaled_normal = [&rng](std::vector<int> shape, int fan_in) {
      Tensor<T> t(std::move(shape));
      double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : t.data) v = static_cast<T>(s * rng.normal());
      return t;
    };
    w_in = Param<T>(prefix + ".w_in", scaled_normal({di, de}, de));
    conv_kernel = Param<T>(prefix + ".conv_kernel", scaled_normal({di, kk}, kk));
    conv_bias = Param<T>(prefix + ".conv_bias", Tensor<T>({di}, T(0)));
    ssm.init(di, n, d_rank, rng, prefix + ".ssm");
    w_out = Param<T>(prefix + ".w_out", scaled_normal({de, di}, di));
  }

  void for_each_param(const std::function<void(Param<T>&)>& fn) {
    fn(norm_gamma);
    fn(norm_beta);
    fn(w_in);
    fn(conv_kernel);
    fn(conv_bias);
    ssm.for_each_param(fn);
    fn(w_out);
  }

  Tensor<T> fresh_state() const { return Tensor<T>({d_inner, ssm.n}, T(0)); }
};

template <typename T>
struct TssOut {
  Tensor<T> y;      // [De,L]
  Tensor<T> h_out;  // [Di,N]
};

template <typename T>
TssOut<T> tss_forward(const TssWeights<T>& w, const Tensor<T>& x, const Tensor<T>& h_in,
                      int chunk = 0) {
  require_ndim(x, 2, "tss input");
  if (x.shape[0] != w.d_embed)
    throw ShapeError("tss: input channels " + std::to_string(x.shape[0]) + " != embed dim " +
                     std::to_string(w.d_embed));
  Tensor<T> xn = ops::layer_norm(ops::transpose2d(x), w.norm_gamma.value, w.norm_beta.value,
                                 w.ln_eps);
  Tensor<T> u = ops::matmul(w.w_in.value, ops::transpose2d(xn));
  u = ops::dwconv1d_causal(u, w.conv_kernel.value, w.conv_bias.value);
  u = ops::silu(u);
  auto pt = SsmTensors<T>::of(w.ssm);
  ScanOutput<T> s = chunk >= 1 ? selective_scan_chunked(pt, u, h_in, chunk)
                               : selective_scan_seq(pt, u, h_in);
  Tensor<T> y = ops::add(x, ops::matmul(w.w_out.value, s.y));
  return {std::move(y), std::move(s.h_out)};
}

// Tape leaves for one TSS unit, bound once per step.
struct TssVars {
  Var norm_gamma = kNoVar, norm_beta = kNoVar, w_in = kNoVar;
  Var conv_kernel = kNoVar, conv_bias = kNoVar, w_out = kNoVar;
  SsmVars ssm;
};

template <typename T>
TssVars bind_tss(ParamBind<T>& bind, TssWeights<T>& w) {
  TssVars v;
  v.norm_gamma = bind.bind(w.norm_gamma);
  v.norm_beta = bind.bind(w.norm_beta);
  v.w_in = bind.bind(w.w_in);
  v.conv_kernel = bind.bind(w.conv_kernel);
  v.conv_bias = bind.bind(w.conv_bias);
  v.ssm = bind_ssm(bind, w.ssm);
  v.w_out = bind.bind(w.w_out);
  return v;
}

namespace ag {

// Same pipeline on the tape; returns {y, h_out}.
template <typename T>
std::pair<Var, Var> tss_forward(Tape<T>& tp, const TssVars& v, const TssWeights<T>& w, Var x,
                                Var h_in, int chunk = 0) {
  Var xn = ag::layer_norm(tp, ag::transpose2d(tp, x), v.norm_gamma, v.norm_beta, w.ln_eps);
  Var u = ag::matmul(tp, v.w_in, ag::transpose2d(tp, xn));
  u = ag::dwconv1d_causal(tp, u, v.conv_kernel, v.conv_bias);
  u = ag::silu(tp, u);
  auto [ys, hout] =
      ag::selective_scan(tp, v.ssm, u, h_in, chunk, w.d_inner, w.ssm.n, w.ssm.d_rank);
  Var y = ag::add(tp, x, ag::matmul(tp, v.w_out, ys));
  return {y, hout};
}

}  // namespace ag

}  // namespace tv3s
