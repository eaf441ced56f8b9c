#include "tv3s/windowing.hpp"

#include <string>

#include "tv3s/errors.hpp"

namespace tv3s {

namespace {

// Segment lengths along one axis. Unshifted: n equal windows. Shifted: the
// grid origin moves by `shift`, leaving a leading segment of `shift` and a
// trailing segment of window - shift.
std::vector<int> axis_segments(int extent, int window, int shift, bool shifted) {
  int n = extent / window;
  std::vector<int> segs;
  if (!shifted) {
    segs.assign(static_cast<size_t>(n), window);
    return segs;
  }
  segs.push_back(shift);
  for (int i = 0; i < n - 1; ++i) segs.push_back(window);
  segs.push_back(window - shift);
  return segs;
}

}  // namespace

PatchPlan build_plan(int map_h, int map_w, int window, int shift, bool shifted) {
  if (window < 1) throw ConfigError("build_plan: window must be >= 1, got " + std::to_string(window));
  if (map_h < window || map_w < window || map_h % window != 0 || map_w % window != 0)
    throw ConfigError("build_plan: map " + std::to_string(map_h) + "x" + std::to_string(map_w) +
                      " is not a positive multiple of window " + std::to_string(window));
  if (shifted && (shift <= 0 || shift >= window))
    throw ConfigError("build_plan: shift " + std::to_string(shift) +
                      " must satisfy 0 < shift < window (" + std::to_string(window) + ")");

  PatchPlan plan;
  plan.map_h = map_h;
  plan.map_w = map_w;
  plan.window = window;
  plan.shift = shift;
  plan.shifted = shifted;

  std::vector<int> rows = axis_segments(map_h, window, shift, shifted);
  std::vector<int> cols = axis_segments(map_w, window, shift, shifted);
  int top = 0;
  for (int rh : rows) {
    int left = 0;
    for (int cw : cols) {
      plan.rects.push_back(Rect{top, left, rh, cw});
      left += cw;
    }
    top += rh;
  }
  return plan;
}

}  // namespace tv3s
