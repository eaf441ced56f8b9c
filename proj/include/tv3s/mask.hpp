#pragma once

#include <cstdint>
#include <vector>

#include "tv3s/errors.hpp"

namespace tv3s {

// Label that marks pixels excluded from losses and metrics.
inline constexpr int32_t kIgnoreLabel = 255;

// Per-pixel integer class labels for one frame.
struct ClassMask {
  int h = 0;
  int w = 0;
  std::vector<int32_t> v;

  ClassMask() = default;
  ClassMask(int hh, int ww, int32_t fill = 0) : h(hh), w(ww) {
    if (hh <= 0 || ww <= 0) throw ShapeError("ClassMask: non-positive extents");
    v.assign(static_cast<size_t>(hh) * ww, fill);
  }

  int32_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  int32_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }

  bool same_shape(const ClassMask& o) const { return h == o.h && w == o.w; }
};

}  // namespace tv3s
