#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tv3s/errors.hpp"
#include "tv3s/mask.hpp"

// Segmentation quality (mean IoU over a confusion matrix) and temporal
// consistency (VC_n: per n-frame window, the jointly label-stable predicted
// region divided by the label-stable ground-truth region).
namespace tv3s {

struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<int64_t> counts;  // [C*C], row = truth, col = prediction

  explicit ConfusionMatrix(int c);

  int64_t& at(int truth, int pred) { return counts[static_cast<size_t>(truth) * static_cast<size_t>(num_classes) + static_cast<size_t>(pred)]; }
  int64_t at(int truth, int pred) const { return counts[static_cast<size_t>(truth) * static_cast<size_t>(num_classes) + static_cast<size_t>(pred)]; }

  // Accumulates one frame. Pixels whose truth is the ignore label are
  // excluded; out-of-range labels are refused.
  void update(const ClassMask& truth, const ClassMask& pred);
  void merge(const ConfusionMatrix& other);
  int64_t total() const;
};

// A metric that may be undefined (e.g. empty matrix): value is NaN exactly
// when defined is false.
struct MetricValue {
  double value = 0.0;
  bool defined = false;
};

// Per-class intersection-over-union; NaN for classes absent from both truth
// and prediction.
std::vector<double> per_class_iou(const ConfusionMatrix& cm);

// Mean of the defined per-class IoUs.
MetricValue miou(const ConfusionMatrix& cm);

// Temporal consistency over windows of n consecutive frames. For each window:
// denominator = pixels whose truth label is constant across the window (and
// not ignore), numerator = those of them whose prediction is also constant
// across the window — and, when strict, equal to the truth label. Windows
// with an empty denominator are skipped; the result is the mean over the
// remaining windows (undefined if none remain).
MetricValue vc_n(const std::vector<ClassMask>& truth, const std::vector<ClassMask>& preds, int n,
                 bool strict = true);

struct MvcResult {
  double value = 0.0;
  bool defined = false;
  int videos_used = 0;
  int videos_skipped = 0;  // too short for the window, or all windows empty
};

// Unweighted mean of per-video VC_n. Videos shorter than n (or with no
// scoreable window) are skipped and counted.
MvcResult mvc(const std::vector<std::vector<ClassMask>>& truth,
              const std::vector<std::vector<ClassMask>>& preds, int n, bool strict = true);

}  // namespace tv3s
