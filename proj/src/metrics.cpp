#include "tv3s/metrics.hpp"

#include <cmath>
#include <limits>

namespace tv3s {

namespace {
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
}

ConfusionMatrix::ConfusionMatrix(int c) : num_classes(c) {
  if (c < 1) throw ConfigError("confusion matrix needs at least one class");
  counts.assign(static_cast<size_t>(c) * static_cast<size_t>(c), 0);
}

void ConfusionMatrix::update(const ClassMask& truth, const ClassMask& pred) {
  if (truth.h != pred.h || truth.w != pred.w)
    throw ConfigError("confusion update: truth is " + std::to_string(truth.h) + "x" +
                      std::to_string(truth.w) + ", prediction is " + std::to_string(pred.h) + "x" +
                      std::to_string(pred.w));
  for (size_t i = 0; i < truth.v.size(); ++i) {
    int32_t t = truth.v[i];
    if (t == kIgnoreLabel) continue;
    int32_t p = pred.v[i];
    if (t < 0 || t >= num_classes)
      throw ConfigError("truth label " + std::to_string(t) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    if (p < 0 || p >= num_classes)
      throw ConfigError("predicted label " + std::to_string(p) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    ++at(t, p);
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes)
    throw ConfigError("cannot merge confusion matrices with " + std::to_string(num_classes) +
                      " and " + std::to_string(other.num_classes) + " classes");
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

int64_t ConfusionMatrix::total() const {
  int64_t n = 0;
  for (int64_t c : counts) n += c;
  return n;
}

std::vector<double> per_class_iou(const ConfusionMatrix& cm) {
  std::vector<double> iou(static_cast<size_t>(cm.num_classes), kNan);
  for (int c = 0; c < cm.num_classes; ++c) {
    int64_t diag = cm.at(c, c), row = 0, col = 0;
    for (int j = 0; j < cm.num_classes; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    int64_t uni = row + col - diag;
    if (uni > 0) iou[static_cast<size_t>(c)] = static_cast<double>(diag) / static_cast<double>(uni);
  }
  return iou;
}

MetricValue miou(const ConfusionMatrix& cm) {
  double sum = 0.0;
  int defined = 0;
  for (double v : per_class_iou(cm))
    if (!std::isnan(v)) {
      sum += v;
      ++defined;
    }
  if (defined == 0) return {kNan, false};
  return {sum / defined, true};
}

MetricValue vc_n(const std::vector<ClassMask>& truth, const std::vector<ClassMask>& preds, int n,
                 bool strict) {
  if (n < 1) throw ConfigError("consistency window must be >= 1, got " + std::to_string(n));
  if (truth.size() != preds.size())
    throw ConfigError("vc_n: " + std::to_string(truth.size()) + " truth frames vs " +
                      std::to_string(preds.size()) + " prediction frames");
  int frames = static_cast<int>(truth.size());
  if (frames < n)
    throw ConfigError("vc_n: video has " + std::to_string(frames) + " frames, window needs " +
                      std::to_string(n));
  int h = truth[0].h, w = truth[0].w;
  for (int t = 0; t < frames; ++t)
    if (truth[static_cast<size_t>(t)].h != h || truth[static_cast<size_t>(t)].w != w ||
        preds[static_cast<size_t>(t)].h != h || preds[static_cast<size_t>(t)].w != w)
      throw ConfigError("vc_n: frame " + std::to_string(t) + " extents differ from frame 0");

  size_t pixels = static_cast<size_t>(h) * static_cast<size_t>(w);
  std::vector<int32_t> g(pixels), q(pixels);  // window-stable labels, -1 = unstable
  double sum = 0.0;
  int used = 0;
  for (int i = 0; i + n <= frames; ++i) {
    g = truth[static_cast<size_t>(i)].v;
    q = preds[static_cast<size_t>(i)].v;
    for (int t = 1; t < n; ++t) {
      const auto& gt = truth[static_cast<size_t>(i + t)].v;
      const auto& pt = preds[static_cast<size_t>(i + t)].v;
      for (size_t p = 0; p < pixels; ++p) {
        if (g[p] != gt[p]) g[p] = -1;
        if (q[p] != pt[p]) q[p] = -1;
      }
    }
    int64_t den = 0, num = 0;
    for (size_t p = 0; p < pixels; ++p) {
      if (g[p] < 0 || g[p] == kIgnoreLabel) continue;
      ++den;
      if (q[p] >= 0 && (!strict || q[p] == g[p])) ++num;
    }
    if (den > 0) {
      sum += static_cast<double>(num) / static_cast<double>(den);
      ++used;
    }
  }
  if (used == 0) return {kNan, false};
  return {sum / used, true};
}

MvcResult mvc(const std::vector<std::vector<ClassMask>>& truth,
              const std::vector<std::vector<ClassMask>>& preds, int n, bool strict) {
  if (truth.size() != preds.size())
    throw ConfigError("mvc: " + std::to_string(truth.size()) + " truth videos vs " +
                      std::to_string(preds.size()) + " prediction videos");
  MvcResult r;
  double sum = 0.0;
  for (size_t v = 0; v < truth.size(); ++v) {
    if (static_cast<int>(truth[v].size()) < n) {
      ++r.videos_skipped;
      continue;
    }
    MetricValue vc = vc_n(truth[v], preds[v], n, strict);
    if (!vc.defined) {
      ++r.videos_skipped;
      continue;
    }
    sum += vc.value;
    ++r.videos_used;
  }
  if (r.videos_used == 0) {
    r.value = kNan;
    return r;
  }
  r.value = sum / r.videos_used;
  r.defined = true;
  return r;
}

}  // namespace tv3s
