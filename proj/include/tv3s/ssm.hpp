#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tv3s/rng.hpp"
#include "tv3s/tape.hpp"
#include "tv3s/tensor.hpp"

// Selective state-space scan. Per channel d there are N latent states with
// input-dependent dynamics:
//   delta_t = softplus(W_dt * (W_dt_lo * x_t) + b_dt)        gate, [D]
//   B_t = W_b * x_t,  C_t = W_c * x_t                        [N]
//   Abar_t = exp(delta_t * A),  A = -exp(A_log)              [D,N]
//   h_t = Abar_t (.) h_{t-1} + (delta_t * B_t) * x_t[d]
//   y_t[d] = sum_n C_t[n] * h_t[d,n]
// The recurrence is linear in h given the inputs, which is what the chunked
// evaluation exploits: a span of steps composes into one affine map
// (a, b) with h_end = a (.) h_start + b.
namespace tv3s {

template <typename T>
struct SsmParams {
  int d = 0;       // channels
  int n = 0;       // states per channel
  int d_rank = 0;  // bottleneck width of the delta projection
  Param<T> a_log;    // [D,N]
  Param<T> w_b;      // [N,D]
  Param<T> w_c;      // [N,D]
  Param<T> w_dt_lo;  // [R,D]  down-projection
  Param<T> w_dt;     // [D,R]  up-projection
  Param<T> b_dt;     // [D]

  void init(int dd, int nn, int rank, Rng& rng, const std::string& prefix) {
    d = dd;
    n = nn;
    d_rank = rank;
    if (d < 1 || n < 1 || d_rank < 1) throw ConfigError("SsmParams: non-positive dimension");

    // A starts as -(1..N) per channel, stored through its log.
    Tensor<T> al({d, n});
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < n; ++j) al(i, j) = static_cast<T>(std::log(static_cast<double>(j + 1)));
    a_log = Param<T>(prefix + ".a_log", std::move(al));

    auto scaled_normal = [&rng](int rows, int cols) {
      Tensor<T> t({rows, cols});
      double s = 1.0 / std::sqrt(static_cast<double>(cols));
      for (auto& v : t.data) v = static_cast<T>(s * rng.normal());
      return t;
    };
    w_b = Param<T>(prefix + ".w_b", scaled_normal(n, d));
    w_c = Param<T>(prefix + ".w_c", scaled_normal(n, d));
    w_dt_lo = Param<T>(prefix + ".w_dt_lo", scaled_normal(d_rank, d));
    w_dt = Param<T>(prefix + ".w_dt", scaled_normal(d, d_rank));

    // Bias chosen so the initial delta = softplus(b) is log-uniform in
    // [1e-3, 1e-1]: b = log(exp(delta) - 1).
    Tensor<T> bd({d});
    for (int i = 0; i < d; ++i) {
      double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
      bd(i) = static_cast<T>(std::log(std::expm1(dt)));
    }
    b_dt = Param<T>(prefix + ".b_dt", std::move(bd));
  }

  void for_each_param(const std::function<void(Param<T>&)>& fn) {
    fn(a_log);
    fn(w_b);
    fn(w_c);
    fn(w_dt_lo);
    fn(w_dt);
    fn(b_dt);
  }
};

// Raw tensor views of the scan inputs, so the same kernels serve both the
// Param-based inference path and the tape path (whose values live on tape).
template <typename T>
struct SsmTensors {
  const Tensor<T>* a_log = nullptr;
  const Tensor<T>* w_b = nullptr;
  const Tensor<T>* w_c = nullptr;
  const Tensor<T>* w_dt_lo = nullptr;
  const Tensor<T>* w_dt = nullptr;
  const Tensor<T>* b_dt = nullptr;
  int d = 0, n = 0, d_rank = 0;

  static SsmTensors of(const SsmParams<T>& p) {
    return SsmTensors{&p.a_log.value, &p.w_b.value, &p.w_c.value,
                      &p.w_dt_lo.value, &p.w_dt.value, &p.b_dt.value,
                      p.d, p.n, p.d_rank};
  }
};

template <typename T>
struct ScanOutput {
  Tensor<T> y;      // [D,L]
  Tensor<T> h_out;  // [D,N]
};

// Intermediates kept for the backward pass.
template <typename T>
struct ScanStash {
  Tensor<T> q;          // [R,L]
  Tensor<T> delta_raw;  // [D,L]
  Tensor<T> delta;      // [D,L]
  Tensor<T> bs;         // [N,L]
  Tensor<T> cs;         // [N,L]
  Tensor<T> h_all;      // [L,D,N] state after each step
};

namespace detail {

template <typename T>
struct ScanPre {
  Tensor<T> q, delta_raw, delta, bs, cs, a;
};

template <typename T>
ScanPre<T> scan_projections(const SsmTensors<T>& p, const Tensor<T>& x) {
  require_ndim(x, 2, "selective_scan input");
  if (x.shape[0] != p.d)
    throw ShapeError("selective_scan: input channels " + std::to_string(x.shape[0]) +
                     " != configured " + std::to_string(p.d));
  ScanPre<T> pre;
  pre.q = ops::matmul(*p.w_dt_lo, x);
  pre.delta_raw = ops::linear(*p.w_dt, pre.q, p.b_dt);
  pre.delta = ops::softplus(pre.delta_raw);
  pre.bs = ops::matmul(*p.w_b, x);
  pre.cs = ops::matmul(*p.w_c, x);
  pre.a = Tensor<T>({p.d, p.n});
  for (int64_t i = 0; i < pre.a.numel(); ++i) pre.a.data[i] = -std::exp(p.a_log->data[i]);
  return pre;
}

template <typename T>
void fill_stash(ScanStash<T>& st, ScanPre<T>& pre, int l, int d, int n) {
  st.q = std::move(pre.q);
  st.delta_raw = std::move(pre.delta_raw);
  st.delta = pre.delta;  // still needed by the recurrence, copy
  st.bs = pre.bs;
  st.cs = pre.cs;
  st.h_all = Tensor<T>({l, d, n});
}

}  // namespace detail

// Reference evaluation: one fused pass over time. h0 must be [D,N].
template <typename T>
ScanOutput<T> selective_scan_seq(const SsmTensors<T>& p, const Tensor<T>& x, const Tensor<T>& h0,
                                 ScanStash<T>* stash = nullptr) {
  auto pre = detail::scan_projections(p, x);
  int d = p.d, n = p.n, l = x.shape[1];
  require_shape(h0, {d, n}, "selective_scan h0");

  ScanOutput<T> out;
  out.y = Tensor<T>({d, l});
  out.h_out = h0;
  if (stash) detail::fill_stash(*stash, pre, l, d, n);

  Tensor<T>& h = out.h_out;
  for (int t = 0; t < l; ++t) {
    for (int i = 0; i < d; ++i) {
      T dl = pre.delta(i, t);
      T xd = x(i, t);
      const T* arow = pre.a.ptr() + static_cast<size_t>(i) * n;
      T* hrow = h.ptr() + static_cast<size_t>(i) * n;
      T acc = T(0);
      for (int j = 0; j < n; ++j) {
        T abar = std::exp(dl * arow[j]);
        T dbx = (dl * pre.bs(j, t)) * xd;
        T hv = abar * hrow[j] + dbx;
        hrow[j] = hv;
        acc += pre.cs(j, t) * hv;
      }
      if (!std::isfinite(static_cast<double>(acc)))
        throw NumericError("selective_scan: non-finite output at position " + std::to_string(t) +
                           ", channel " + std::to_string(i));
      out.y(i, t) = acc;
    }
    if (stash)
      std::copy(h.data.begin(), h.data.end(),
                stash->h_all.data.begin() + static_cast<size_t>(t) * d * n);
  }
  ops::check_finite(out.h_out, "selective_scan carried state");
  return out;
}

// Chunked evaluation. Steps inside a chunk are summarized (independently per
// chunk) as the affine map (a, b); the per-chunk start states then follow
// from the short sequential composition
//   h_start[c+1] = a_c (.) h_start[c] + b_c
// after which every chunk replays its steps from its start state. Chunks are
// independent in both passes, which is where parallel workers could attach;
// evaluation order here is fixed and serial so results stay reproducible.
template <typename T>
ScanOutput<T> selective_scan_chunked(const SsmTensors<T>& p, const Tensor<T>& x, const Tensor<T>& h0,
                                     int chunk, ScanStash<T>* stash = nullptr) {
  if (chunk < 1) throw ConfigError("selective_scan: chunk must be >= 1");
  auto pre = detail::scan_projections(p, x);
  int d = p.d, n = p.n, l = x.shape[1];
  require_shape(h0, {d, n}, "selective_scan h0");
  int num_chunks = (l + chunk - 1) / chunk;

  // Precompute the per-step coefficients once; both passes reuse them so the
  // replayed arithmetic is identical to a fused evaluation.
  Tensor<T> abar_all({l, d, n});
  Tensor<T> dbx_all({l, d, n});
  for (int t = 0; t < l; ++t)
    for (int i = 0; i < d; ++i) {
      T dl = pre.delta(i, t);
      T xd = x(i, t);
      const T* arow = pre.a.ptr() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        abar_all(t, i, j) = std::exp(dl * arow[j]);
        dbx_all(t, i, j) = (dl * pre.bs(j, t)) * xd;
      }
    }

  // Pass 1: per-chunk affine summary (decay product, zero-state response).
  std::vector<Tensor<T>> ca(static_cast<size_t>(num_chunks));
  std::vector<Tensor<T>> cb(static_cast<size_t>(num_chunks));
  for (int c = 0; c < num_chunks; ++c) {
    Tensor<T> a({d, n}, T(1));
    Tensor<T> b({d, n}, T(0));
    int lo = c * chunk, hi = std::min(l, lo + chunk);
    for (int t = lo; t < hi; ++t)
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < n; ++j) {
          T ab = abar_all(t, i, j);
          a(i, j) = a(i, j) * ab;
          b(i, j) = ab * b(i, j) + dbx_all(t, i, j);
        }
    ca[static_cast<size_t>(c)] = std::move(a);
    cb[static_cast<size_t>(c)] = std::move(b);
  }

  // Compose: start state of each chunk.
  std::vector<Tensor<T>> hstart(static_cast<size_t>(num_chunks));
  hstart[0] = h0;
  for (int c = 1; c < num_chunks; ++c) {
    Tensor<T> h({d, n});
    for (int64_t i = 0; i < h.numel(); ++i)
      h.data[i] = ca[static_cast<size_t>(c - 1)].data[i] * hstart[static_cast<size_t>(c - 1)].data[i] +
                  cb[static_cast<size_t>(c - 1)].data[i];
    hstart[static_cast<size_t>(c)] = std::move(h);
  }

  ScanOutput<T> out;
  out.y = Tensor<T>({d, l});
  if (stash) detail::fill_stash(*stash, pre, l, d, n);

  // Pass 2: replay each chunk from its start state.
  Tensor<T> hlast;
  for (int c = 0; c < num_chunks; ++c) {
    Tensor<T> h = hstart[static_cast<size_t>(c)];
    int lo = c * chunk, hi = std::min(l, lo + chunk);
    for (int t = lo; t < hi; ++t) {
      for (int i = 0; i < d; ++i) {
        T* hrow = h.ptr() + static_cast<size_t>(i) * n;
        T acc = T(0);
        for (int j = 0; j < n; ++j) {
          T hv = abar_all(t, i, j) * hrow[j] + dbx_all(t, i, j);
          hrow[j] = hv;
          acc += pre.cs(j, t) * hv;
        }
        if (!std::isfinite(static_cast<double>(acc)))
          throw NumericError("selective_scan: non-finite output at position " + std::to_string(t) +
                             ", channel " + std::to_string(i));
        out.y(i, t) = acc;
      }
      if (stash)
        std::copy(h.data.begin(), h.data.end(),
                  stash->h_all.data.begin() + static_cast<size_t>(t) * d * n);
    }
    if (c == num_chunks - 1) hlast = std::move(h);
  }
  out.h_out = l > 0 ? std::move(hlast) : h0;
  ops::check_finite(out.h_out, "selective_scan carried state");
  return out;
}

// Gradient buffers the backward pass accumulates into (all +=).
template <typename T>
struct ScanGrads {
  Tensor<T>* x = nullptr;
  Tensor<T>* h0 = nullptr;
  Tensor<T>* a_log = nullptr;
  Tensor<T>* w_b = nullptr;
  Tensor<T>* w_c = nullptr;
  Tensor<T>* w_dt_lo = nullptr;
  Tensor<T>* w_dt = nullptr;
  Tensor<T>* b_dt = nullptr;
};

// Reverse pass through the recurrence. mu_t is the adjoint of h_t:
//   mu_{L-1} = gh_out + gy[:,L-1] (x) C_{L-1}
//   mu_t     = Abar_{t+1} (.) mu_{t+1} + gy[:,t] (x) C_t
// from which the parameter gradients follow by the product rule. Abar is
// recomputed from the stashed delta rather than stored.
template <typename T>
void selective_scan_backward(const SsmTensors<T>& p, const Tensor<T>& x, const Tensor<T>& h0,
                             const ScanStash<T>& st, const Tensor<T>& gy, const Tensor<T>& gh_out,
                             const ScanGrads<T>& g) {
  int d = p.d, n = p.n, l = x.shape[1];
  Tensor<T> a({d, n});
  for (int64_t i = 0; i < a.numel(); ++i) a.data[i] = -std::exp(p.a_log->data[i]);

  Tensor<T> mu = gh_out;  // adjoint of h at the current step
  Tensor<T> gdelta({d, l});
  Tensor<T> gbs({p.n, l});
  Tensor<T> gcs({p.n, l});
  Tensor<T> ga({d, n});

  for (int t = l - 1; t >= 0; --t) {
    const T* hl = st.h_all.ptr() + static_cast<size_t>(t) * d * n;
    const T* hp = t > 0 ? st.h_all.ptr() + static_cast<size_t>(t - 1) * d * n : h0.ptr();
    for (int i = 0; i < d; ++i) {
      T gyd = gy(i, t);
      T dl = st.delta(i, t);
      T xd = x(i, t);
      const T* arow = a.ptr() + static_cast<size_t>(i) * n;
      T* murow = mu.ptr() + static_cast<size_t>(i) * n;
      T gdl = T(0);
      for (int j = 0; j < n; ++j) {
        size_t off = static_cast<size_t>(i) * n + j;
        T mu_dn = murow[j] + gyd * st.cs(j, t);
        gcs(j, t) += gyd * hl[off];
        T abar = std::exp(dl * arow[j]);
        T gabar = mu_dn * hp[off];
        gdl += gabar * arow[j] * abar;
        ga(i, j) += gabar * dl * abar;
        T bsjt = st.bs(j, t);
        gdl += mu_dn * bsjt * xd;
        gbs(j, t) += (mu_dn * dl) * xd;
        (*g.x)(i, t) += (mu_dn * dl) * bsjt;
        murow[j] = mu_dn * abar;
      }
      gdelta(i, t) = gdl;
    }
  }

  // After the loop mu = Abar_0 (.) mu_0, the adjoint of the incoming state.
  ag::accumulate(*g.h0, mu);

  // a_log via a = -exp(a_log): da/da_log = a.
  for (int64_t i = 0; i < ga.numel(); ++i) g.a_log->data[i] += ga.data[i] * a.data[i];

  // delta = softplus(delta_raw).
  Tensor<T> gdraw({d, l});
  for (int64_t i = 0; i < gdraw.numel(); ++i)
    gdraw.data[i] = gdelta.data[i] * ops::sigmoid_scalar(st.delta_raw.data[i]);

  for (int i = 0; i < d; ++i)
    for (int t = 0; t < l; ++t) g.b_dt->data[static_cast<size_t>(i)] += gdraw(i, t);
  ag::accumulate(*g.w_dt, ops::matmul_bt(gdraw, st.q));
  Tensor<T> gq = ops::matmul_at(*p.w_dt, gdraw);
  ag::accumulate(*g.w_dt_lo, ops::matmul_bt(gq, x));
  ag::accumulate(*g.x, ops::matmul_at(*p.w_dt_lo, gq));
  ag::accumulate(*g.w_b, ops::matmul_bt(gbs, x));
  ag::accumulate(*g.x, ops::matmul_at(*p.w_b, gbs));
  ag::accumulate(*g.w_c, ops::matmul_bt(gcs, x));
  ag::accumulate(*g.x, ops::matmul_at(*p.w_c, gcs));
}

// ------------------------------------------------------------- tape wrapper

// Scan parameters as tape vars.
struct SsmVars {
  Var a_log = kNoVar, w_b = kNoVar, w_c = kNoVar, w_dt_lo = kNoVar, w_dt = kNoVar, b_dt = kNoVar;
};

template <typename T>
SsmVars bind_ssm(ParamBind<T>& bind, SsmParams<T>& p) {
  SsmVars v;
  v.a_log = bind.bind(p.a_log);
  v.w_b = bind.bind(p.w_b);
  v.w_c = bind.bind(p.w_c);
  v.w_dt_lo = bind.bind(p.w_dt_lo);
  v.w_dt = bind.bind(p.w_dt);
  v.b_dt = bind.bind(p.b_dt);
  return v;
}

namespace ag {

// Differentiable scan. Returns {y, h_out}. chunk = 0 runs the fused
// sequential path; chunk >= 1 the chunked one.
//
// The op has two outputs but a single joint backward. The h_out node is
// pushed first and the y node second, so in the reverse sweep the y closure
// runs once every consumer of either output has deposited its gradient (all
// consumers have higher indices than y). The shared `done` flag makes the
// backward run exactly once even when only one of the outputs reaches the
// loss: whichever closure fires first does the whole job, treating the other
// output's (absent) gradient as zero.
template <typename T>
std::pair<Var, Var> selective_scan(Tape<T>& tp, const SsmVars& pv, Var x, Var h0, int chunk,
                                   int d, int n, int d_rank) {
  SsmTensors<T> pt{&tp.val(pv.a_log), &tp.val(pv.w_b), &tp.val(pv.w_c),
                   &tp.val(pv.w_dt_lo), &tp.val(pv.w_dt), &tp.val(pv.b_dt),
                   d, n, d_rank};
  auto stash = std::make_shared<ScanStash<T>>();
  ScanOutput<T> out = chunk >= 1
                          ? selective_scan_chunked(pt, tp.val(x), tp.val(h0), chunk,
                                                   tp.recording ? stash.get() : nullptr)
                          : selective_scan_seq(pt, tp.val(x), tp.val(h0),
                                               tp.recording ? stash.get() : nullptr);
  int len = tp.val(x).shape[1];
  auto done = std::make_shared<bool>(false);
  auto vars = std::make_shared<std::pair<Var, Var>>(kNoVar, kNoVar);  // {y, hout}

  auto run_backward = [pv, x, h0, d, n, d_rank, len, stash, done, vars](Tape<T>& t) {
    if (*done) return;
    *done = true;
    SsmTensors<T> ptb{&t.val(pv.a_log), &t.val(pv.w_b), &t.val(pv.w_c),
                      &t.val(pv.w_dt_lo), &t.val(pv.w_dt), &t.val(pv.b_dt),
                      d, n, d_rank};
    Tensor<T> gy_zero, gh_zero;
    const Tensor<T>* gy = t.has_grad(vars->first) ? &t.grad(vars->first)
                                                  : (gy_zero = Tensor<T>({d, len}), &gy_zero);
    const Tensor<T>* gh = t.has_grad(vars->second) ? &t.grad(vars->second)
                                                   : (gh_zero = Tensor<T>({d, n}), &gh_zero);
    ScanGrads<T> g;
    g.x = &t.grad(x);
    g.h0 = &t.grad(h0);
    g.a_log = &t.grad(pv.a_log);
    g.w_b = &t.grad(pv.w_b);
    g.w_c = &t.grad(pv.w_c);
    g.w_dt_lo = &t.grad(pv.w_dt_lo);
    g.w_dt = &t.grad(pv.w_dt);
    g.b_dt = &t.grad(pv.b_dt);
    selective_scan_backward(ptb, t.val(x), t.val(h0), *stash, *gy, *gh, g);
  };

  Var hout = tp.push(std::move(out.h_out), [run_backward](Tape<T>& t, Var) { run_backward(t); });
  Var yv = tp.push(std::move(out.y), [run_backward](Tape<T>& t, Var) { run_backward(t); });
  vars->first = yv;
  vars->second = hout;
  return {yv, hout};
}

}  // namespace ag

}  // namespace tv3s
