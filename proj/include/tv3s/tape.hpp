#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tv3s/kernels.hpp"
#include "tv3s/tensor.hpp"

namespace tv3s {

// Handle to a tape node. kNoVar means "absent" (e.g. an optional bias).
using Var = int32_t;
inline constexpr Var kNoVar = -1;

// Reverse-mode autodiff tape. Each op pushes a node holding its output value
// and a closure that scatters the node's gradient into its inputs' gradients.
// backward(root) seeds the (scalar) root with 1 and replays the closures in
// reverse creation order; nodes whose gradient was never touched are skipped,
// so untraversed sub-graphs cost nothing.
//
// A tape is built per training step and thrown away. With recording=false the
// wrappers still compute values but record no closures, which is what the
// finite-difference re-evaluations in grad_check rely on.
template <typename T>
class Tape {
 public:
  bool recording = true;

  Var leaf(Tensor<T> v) { return push_node(std::move(v), nullptr); }

  Var push(Tensor<T> v, std::function<void(Tape&, Var)> back) {
    return push_node(std::move(v), recording ? std::move(back) : nullptr);
  }

  const Tensor<T>& val(Var v) const { return nodes_[check(v)].value; }

  // Gradient buffer of a node, allocated (zeroed) on first touch.
  Tensor<T>& grad(Var v) {
    Node& n = nodes_[check(v)];
    if (n.grad.numel() == 0) n.grad = Tensor<T>(n.value.shape, T(0));
    return n.grad;
  }

  bool has_grad(Var v) const { return nodes_[check(v)].grad.numel() != 0; }

  void backward(Var root) {
    if (nodes_[check(root)].value.numel() != 1)
      throw ShapeError("backward: root must be scalar, got " + nodes_[root].value.shape_str());
    grad(root).data[0] = T(1);
    for (int32_t i = root; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.back && n.grad.numel() != 0) n.back(*this, i);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until touched
    std::function<void(Tape&, Var)> back;
  };

  size_t check(Var v) const {
    if (v < 0 || static_cast<size_t>(v) >= nodes_.size())
      throw ConfigError("tape: invalid var id " + std::to_string(v));
    return static_cast<size_t>(v);
  }

  Var push_node(Tensor<T> v, std::function<void(Tape&, Var)> back) {
    nodes_.push_back(Node{std::move(v), Tensor<T>{}, std::move(back)});
    return static_cast<Var>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

// Ties a set of Params to their tape leaves for one step: bind copies values
// in, harvest adds the tape gradients back onto Param::grad.
template <typename T>
struct ParamBind {
  Tape<T>* tape = nullptr;
  std::vector<std::pair<Param<T>*, Var>> items;

  explicit ParamBind(Tape<T>& tp) : tape(&tp) {}

  Var bind(Param<T>& p) {
    auto it = index_.find(&p);
    if (it != index_.end()) return it->second;
    Var v = tape->leaf(p.value);
    index_.emplace(&p, v);
    items.emplace_back(&p, v);
    return v;
  }

  Var operator[](Param<T>& p) { return bind(p); }

  void harvest() {
    for (auto& [p, v] : items) {
      if (!tape->has_grad(v)) continue;
      const Tensor<T>& g = tape->grad(v);
      for (int64_t i = 0; i < g.numel(); ++i) p->grad.data[i] += g.data[i];
    }
  }

 private:
  std::unordered_map<const Param<T>*, Var> index_;
};

// Differentiable op wrappers. Each computes the forward value with the plain
// kernel and records a closure applying the matching backward kernel.
namespace ag {

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  for (int64_t i = 0; i < dst.numel(); ++i) dst.data[i] += src.data[i];
}

template <typename T>
Var add(Tape<T>& tp, Var a, Var b) {
  return tp.push(ops::add(tp.val(a), tp.val(b)), [a, b](Tape<T>& t, Var self) {
    const Tensor<T>& gy = t.grad(self);
    accumulate(t.grad(a), gy);
    accumulate(t.grad(b), gy);
  });
}

template <typename T>
Var mul(Tape<T>& tp, Var a, Var b) {
  return tp.push(ops::mul(tp.val(a), tp.val(b)), [a, b](Tape<T>& t, Var self) {
    const Tensor<T>& gy = t.grad(self);
    accumulate(t.grad(a), ops::mul(gy, t.val(b)));
    accumulate(t.grad(b), ops::mul(gy, t.val(a)));
  });
}

template <typename T>
Var scale(Tape<T>& tp, Var a, T c) {
  return tp.push(ops::scale(tp.val(a), c), [a, c](Tape<T>& t, Var self) {
    accumulate(t.grad(a), ops::scale(t.grad(self), c));
  });
}

template <typename T>
Var silu(Tape<T>& tp, Var a) {
  return tp.push(ops::silu(tp.val(a)), [a](Tape<T>& t, Var self) {
    ops::silu_backward(t.val(a), t.grad(self), t.grad(a));
  });
}

template <typename T>
Var reshape(Tape<T>& tp, Var a, std::vector<int> shape) {
  std::vector<int> old = tp.val(a).shape;
  return tp.push(ops::reshape(tp.val(a), std::move(shape)), [a, old](Tape<T>& t, Var self) {
    accumulate(t.grad(a), ops::reshape(t.grad(self), old));
  });
}

template <typename T>
Var transpose2d(Tape<T>& tp, Var a) {
  return tp.push(ops::transpose2d(tp.val(a)), [a](Tape<T>& t, Var self) {
    accumulate(t.grad(a), ops::transpose2d(t.grad(self)));
  });
}

template <typename T>
Var matmul(Tape<T>& tp, Var a, Var b) {
  return tp.push(ops::matmul(tp.val(a), tp.val(b)), [a, b](Tape<T>& t, Var self) {
    const Tensor<T>& gy = t.grad(self);
    accumulate(t.grad(a), ops::matmul_bt(gy, t.val(b)));
    accumulate(t.grad(b), ops::matmul_at(t.val(a), gy));
  });
}

// w [O,I] applied to x [I,L], optional bias [O] added per output row.
template <typename T>
Var linear(Tape<T>& tp, Var w, Var x, Var bias = kNoVar) {
  const Tensor<T>* bt = bias == kNoVar ? nullptr : &tp.val(bias);
  return tp.push(ops::linear(tp.val(w), tp.val(x), bt), [w, x, bias](Tape<T>& t, Var self) {
    const Tensor<T>& gy = t.grad(self);
    accumulate(t.grad(w), ops::matmul_bt(gy, t.val(x)));
    accumulate(t.grad(x), ops::matmul_at(t.val(w), gy));
    if (bias != kNoVar) {
      Tensor<T>& gb = t.grad(bias);
      int o = gy.shape[0], l = gy.shape[1];
      for (int i = 0; i < o; ++i) {
        const T* row = gy.ptr() + static_cast<size_t>(i) * l;
        for (int j = 0; j < l; ++j) gb.data[static_cast<size_t>(i)] += row[j];
      }
    }
  });
}

template <typename T>
Var layer_norm(Tape<T>& tp, Var x, Var gamma, Var beta, T eps) {
  auto stash = std::make_shared<ops::LayerNormStash<T>>();
  Tensor<T> y = ops::layer_norm(tp.val(x), tp.val(gamma), tp.val(beta), eps,
                                tp.recording ? stash.get() : nullptr);
  return tp.push(std::move(y), [x, gamma, beta, stash](Tape<T>& t, Var self) {
    ops::layer_norm_backward(*stash, t.val(gamma), t.grad(self), t.grad(x), t.grad(gamma),
                             t.grad(beta));
  });
}

template <typename T>
Var dwconv1d_causal(Tape<T>& tp, Var x, Var kernel, Var bias) {
  return tp.push(ops::dwconv1d_causal(tp.val(x), tp.val(kernel), tp.val(bias)),
                 [x, kernel, bias](Tape<T>& t, Var self) {
                   ops::dwconv1d_causal_backward(t.val(x), t.val(kernel), t.grad(self), t.grad(x),
                                                 t.grad(kernel), t.grad(bias));
                 });
}

template <typename T>
Var bilinear_upsample(Tape<T>& tp, Var x, int factor) {
  int h = tp.val(x).shape[1], w = tp.val(x).shape[2];
  return tp.push(ops::bilinear_upsample(tp.val(x), factor), [x, h, w, factor](Tape<T>& t, Var self) {
    ops::bilinear_upsample_backward(t.grad(self), h, w, factor, t.grad(x));
  });
}

template <typename T>
Var patch_embed(Tape<T>& tp, Var img, Var w, Var b, int patch) {
  return tp.push(ops::patch_embed(tp.val(img), tp.val(w), tp.val(b), patch),
                 [img, w, b, patch](Tape<T>& t, Var self) {
                   Tensor<T>& gimg = t.grad(img);
                   ops::patch_embed_backward(t.val(img), t.val(w), patch, t.grad(self), &gimg,
                                             t.grad(w), t.grad(b));
                 });
}

// Mean cross entropy as a [1] tensor. pixel_count receives the number of
// contributing pixels (0 for a fully ignored mask, in which case the loss is
// a constant zero).
template <typename T>
Var softmax_xent(Tape<T>& tp, Var logits, ClassMask mask, int32_t ignore_label,
                 int64_t* pixel_count = nullptr) {
  auto probs = std::make_shared<Tensor<T>>();
  ops::XentResult<T> r =
      ops::softmax_xent(tp.val(logits), mask, ignore_label, tp.recording ? probs.get() : nullptr);
  if (pixel_count) *pixel_count = r.count;
  Tensor<T> out({1});
  out.data[0] = r.value;
  int64_t count = r.count;
  return tp.push(std::move(out),
                 [logits, probs, mask = std::move(mask), ignore_label, count](Tape<T>& t, Var self) {
                   ops::softmax_xent_backward(*probs, mask, ignore_label, count,
                                              t.grad(self).data[0], t.grad(logits));
                 });
}

// Weighted sum of scalar vars: sum_i coef_i * v_i as a [1] tensor.
template <typename T>
Var scalar_combine(Tape<T>& tp, const std::vector<std::pair<T, Var>>& terms) {
  if (terms.empty()) throw ConfigError("scalar_combine: no terms");
  Tensor<T> out({1});
  for (auto& [c, v] : terms) {
    if (tp.val(v).numel() != 1)
      throw ShapeError("scalar_combine: term is not scalar, shape " + tp.val(v).shape_str());
    out.data[0] += c * tp.val(v).data[0];
  }
  return tp.push(std::move(out), [terms](Tape<T>& t, Var self) {
    T g = t.grad(self).data[0];
    for (auto& [c, v] : terms) t.grad(v).data[0] += c * g;
  });
}

// Fixed-weight contraction to a scalar: sum_i w_i * x_i. Used by tests to
// give multi-output ops a scalar loss that exercises every output element.
template <typename T>
Var weighted_sum(Tape<T>& tp, Var x, Tensor<T> weights) {
  const Tensor<T>& xv = tp.val(x);
  if (!xv.same_shape(weights))
    throw ShapeError("weighted_sum: weights " + weights.shape_str() + " vs value " + xv.shape_str());
  Tensor<T> out({1});
  double acc = 0.0;
  for (int64_t i = 0; i < xv.numel(); ++i)
    acc += static_cast<double>(weights.data[i]) * static_cast<double>(xv.data[i]);
  out.data[0] = static_cast<T>(acc);
  auto wp = std::make_shared<Tensor<T>>(std::move(weights));
  return tp.push(std::move(out), [x, wp](Tape<T>& t, Var self) {
    T g = t.grad(self).data[0];
    Tensor<T>& gx = t.grad(x);
    for (int64_t i = 0; i < gx.numel(); ++i) gx.data[i] += g * wp->data[i];
  });
}

}  // namespace ag

// --------------------------------------------------------------- grad check

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

// A differentiable scalar function of a set of parameters: build() binds the
// params it uses through the given ParamBind, assembles the graph, and returns
// the scalar loss var.
struct GradCheckSpec {
  std::vector<Param<double>*> params;
  std::function<Var(Tape<double>&, ParamBind<double>&)> build;
};

// Central-difference check of every coordinate of every parameter against the
// tape gradient. Relative error uses max(1, |analytic|) in the denominator so
// near-zero gradients are compared absolutely.
inline GradCheckResult grad_check(const GradCheckSpec& spec, double h) {
  for (Param<double>* p : spec.params) p->zero_grad();

  {
    Tape<double> tp;
    ParamBind<double> bind(tp);
    Var loss = spec.build(tp, bind);
    tp.backward(loss);
    bind.harvest();
  }

  auto eval = [&spec]() {
    Tape<double> tp;
    tp.recording = false;
    ParamBind<double> bind(tp);
    return tp.val(spec.build(tp, bind)).data[0];
  };

  GradCheckResult res;
  for (Param<double>* p : spec.params) {
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      double keep = p->value.data[static_cast<size_t>(i)];
      p->value.data[static_cast<size_t>(i)] = keep + h;
      double fp = eval();
      p->value.data[static_cast<size_t>(i)] = keep - h;
      double fm = eval();
      p->value.data[static_cast<size_t>(i)] = keep;
      double numeric = (fp - fm) / (2.0 * h);
      double analytic = p->grad.data[static_cast<size_t>(i)];
      if (!std::isfinite(numeric) || !std::isfinite(analytic))
        throw NumericError("grad_check: non-finite derivative for " + p->name + "[" +
                           std::to_string(i) + "]");
      double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = p->name;
        res.worst_index = i;
        res.analytic = analytic;
        res.numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace tv3s
