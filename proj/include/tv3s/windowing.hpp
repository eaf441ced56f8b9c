#pragma once

#include <string>
#include <vector>

#include "tv3s/tape.hpp"
#include "tv3s/tensor.hpp"

namespace tv3s {

// Axis-aligned rectangle on the feature map, in feature-map coordinates.
struct Rect {
  int top = 0, left = 0, height = 0, width = 0;
  int area() const { return height * width; }
  bool operator==(const Rect&) const = default;
};

// A tiling of an H x W feature map into rectangular patches, each of which is
// scanned as one sequence. The unshifted plan is the regular window grid; the
// shifted plan moves the grid origin by (shift, shift) and keeps the uncovered
// border as smaller rectangles instead of wrapping them around, so no pixels
// are rolled to the opposite side of the map.
struct PatchPlan {
  int map_h = 0, map_w = 0;
  int window = 0, shift = 0;
  bool shifted = false;
  std::vector<Rect> rects;  // row-major by (top, left)

  int slot_count() const { return static_cast<int>(rects.size()); }
};

// Preconditions: window >= 1, map extents positive multiples of window, and
// 0 < shift < window for shifted plans. Violations throw ConfigError.
PatchPlan build_plan(int map_h, int map_w, int window, int shift, bool shifted);

// Flattens one rect of e [C,H,W] into a sequence [C, rect.area()], scanning
// the rect row-major.
template <typename T>
Tensor<T> extract_flatten(const Tensor<T>& e, const Rect& r) {
  require_ndim(e, 3, "extract_flatten");
  int c = e.shape[0], h = e.shape[1], w = e.shape[2];
  if (r.top < 0 || r.left < 0 || r.top + r.height > h || r.left + r.width > w || r.area() <= 0)
    throw ConfigError("extract_flatten: rect out of bounds for map " + e.shape_str());
  Tensor<T> seq({c, r.area()});
  for (int ch = 0; ch < c; ++ch) {
    int i = 0;
    for (int y = r.top; y < r.top + r.height; ++y)
      for (int x = r.left; x < r.left + r.width; ++x) seq(ch, i++) = e(ch, y, x);
  }
  return seq;
}

template <typename T>
void scatter_one(Tensor<T>& e, const Rect& r, const Tensor<T>& seq) {
  int c = e.shape[0];
  require_shape(seq, {c, r.area()}, "scatter_one sequence");
  for (int ch = 0; ch < c; ++ch) {
    int i = 0;
    for (int y = r.top; y < r.top + r.height; ++y)
      for (int x = r.left; x < r.left + r.width; ++x) e(ch, y, x) = seq(ch, i++);
  }
}

// Reassembles per-slot sequences into a [C,H,W] map. The plan's rects cover
// the map exactly once, so this is a bijection with extract_flatten.
template <typename T>
Tensor<T> scatter_unflatten(const std::vector<Tensor<T>>& seqs, const PatchPlan& plan, int channels) {
  if (static_cast<int>(seqs.size()) != plan.slot_count())
    throw ConfigError("scatter_unflatten: got " + std::to_string(seqs.size()) + " sequences for " +
                      std::to_string(plan.slot_count()) + " slots");
  Tensor<T> e({channels, plan.map_h, plan.map_w});
  for (int k = 0; k < plan.slot_count(); ++k) scatter_one(e, plan.rects[static_cast<size_t>(k)], seqs[static_cast<size_t>(k)]);
  return e;
}

// ------------------------------------------------------------ tape wrappers

namespace ag {

template <typename T>
Var extract_flatten(Tape<T>& tp, Var e, Rect r) {
  return tp.push(tv3s::extract_flatten(tp.val(e), r), [e, r](Tape<T>& t, Var self) {
    const Tensor<T>& gseq = t.grad(self);
    Tensor<T>& ge = t.grad(e);
    int c = gseq.shape[0];
    for (int ch = 0; ch < c; ++ch) {
      int i = 0;
      for (int y = r.top; y < r.top + r.height; ++y)
        for (int x = r.left; x < r.left + r.width; ++x) ge(ch, y, x) += gseq(ch, i++);
    }
  });
}

template <typename T>
Var scatter_unflatten(Tape<T>& tp, const std::vector<Var>& seqs, const PatchPlan& plan) {
  if (static_cast<int>(seqs.size()) != plan.slot_count())
    throw ConfigError("scatter_unflatten: slot count mismatch");
  int channels = seqs.empty() ? 0 : tp.val(seqs[0]).shape[0];
  Tensor<T> e({channels, plan.map_h, plan.map_w});
  for (int k = 0; k < plan.slot_count(); ++k)
    scatter_one(e, plan.rects[static_cast<size_t>(k)], tp.val(seqs[static_cast<size_t>(k)]));
  std::vector<Rect> rects = plan.rects;
  return tp.push(std::move(e), [seqs, rects](Tape<T>& t, Var self) {
    const Tensor<T>& ge = t.grad(self);
    for (size_t k = 0; k < seqs.size(); ++k) {
      const Rect& r = rects[k];
      Tensor<T>& gs = t.grad(seqs[k]);
      int c = gs.shape[0];
      for (int ch = 0; ch < c; ++ch) {
        int i = 0;
        for (int y = r.top; y < r.top + r.height; ++y)
          for (int x = r.left; x < r.left + r.width; ++x) gs(ch, i++) += ge(ch, y, x);
      }
    }
  });
}

}  // namespace ag

}  // namespace tv3s
