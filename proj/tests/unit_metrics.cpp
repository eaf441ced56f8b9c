#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "tv3s/metrics.hpp"
#include "tv3s/rng.hpp"

using namespace tv3s;

namespace {

ClassMask mask_of(int h, int w, std::vector<int32_t> vals) {
  ClassMask m(h, w);
  REQUIRE(m.v.size() == vals.size());
  m.v = std::move(vals);
  return m;
}

// Independent per-pixel re-derivation of the windowed consistency ratio,
// written against the definition rather than sharing the bitmap sweep.
double vc_brute(const std::vector<ClassMask>& gt, const std::vector<ClassMask>& pr, int n,
                bool strict, bool* defined = nullptr) {
  int frames = static_cast<int>(gt.size());
  double sum = 0;
  int used = 0;
  for (int i = 0; i + n <= frames; ++i) {
    int64_t den = 0, num = 0;
    for (int y = 0; y < gt[0].h; ++y)
      for (int x = 0; x < gt[0].w; ++x) {
        int32_t g = gt[static_cast<size_t>(i)].at(y, x);
        bool g_stable = g != kIgnoreLabel;
        for (int t = 1; t < n; ++t)
          if (gt[static_cast<size_t>(i + t)].at(y, x) != g) g_stable = false;
        if (!g_stable) continue;
        ++den;
        int32_t q = pr[static_cast<size_t>(i)].at(y, x);
        bool q_stable = true;
        for (int t = 1; t < n; ++t)
          if (pr[static_cast<size_t>(i + t)].at(y, x) != q) q_stable = false;
        if (q_stable && (!strict || q == g)) ++num;
      }
    if (den > 0) {
      sum += static_cast<double>(num) / static_cast<double>(den);
      ++used;
    }
  }
  if (defined) *defined = used > 0;
  return used > 0 ? sum / used : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

TEST_CASE("confusion matrix bookkeeping") {
  ConfusionMatrix cm(3);
  ClassMask truth = mask_of(2, 2, {0, 255, 1, 2});
  ClassMask pred = mask_of(2, 2, {0, 1, 2, 2});
  cm.update(truth, pred);
  CHECK(cm.total() == 3);  // the ignore pixel is dropped
  CHECK(cm.at(0, 0) == 1);
  CHECK(cm.at(1, 2) == 1);
  CHECK(cm.at(2, 2) == 1);

  ConfusionMatrix other(3);
  other.update(truth, pred);
  cm.merge(other);
  CHECK(cm.total() == 6);
  CHECK(cm.at(1, 2) == 2);

  CHECK_THROWS_AS(cm.merge(ConfusionMatrix(2)), ConfigError);
  CHECK_THROWS_AS(cm.update(mask_of(1, 1, {0}), mask_of(1, 2, {0, 0})), ConfigError);
  CHECK_THROWS_AS(cm.update(mask_of(1, 1, {3}), mask_of(1, 1, {0})), ConfigError);
  CHECK_THROWS_AS(cm.update(mask_of(1, 1, {0}), mask_of(1, 1, {7})), ConfigError);
  CHECK_THROWS_AS(ConfusionMatrix(0), ConfigError);
}

TEST_CASE("mean IoU endpoints and hand-counted case") {
  // Perfect two-class prediction.
  ConfusionMatrix perfect(2);
  perfect.update(mask_of(1, 4, {0, 0, 1, 1}), mask_of(1, 4, {0, 0, 1, 1}));
  CHECK(miou(perfect).defined);
  CHECK(miou(perfect).value == 1.0);

  // Everything wrong: both classes have zero intersection.
  ConfusionMatrix wrong(2);
  wrong.update(mask_of(1, 2, {0, 0}), mask_of(1, 2, {1, 1}));
  CHECK(miou(wrong).defined);
  CHECK(miou(wrong).value == 0.0);

  // truth [0,0,1,1], pred [0,1,1,1]: IoU0 = 1/2, IoU1 = 2/3, mean = 7/12.
  ConfusionMatrix hand(2);
  hand.update(mask_of(2, 2, {0, 0, 1, 1}), mask_of(2, 2, {0, 1, 1, 1}));
  auto iou = per_class_iou(hand);
  CHECK(iou[0] == 0.5);
  CHECK(iou[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(miou(hand).value == doctest::Approx(7.0 / 12.0).epsilon(1e-15));

  // A class absent from both truth and prediction is excluded from the mean.
  ConfusionMatrix partial(3);
  partial.update(mask_of(2, 2, {0, 0, 1, 1}), mask_of(2, 2, {0, 1, 1, 1}));
  CHECK(std::isnan(per_class_iou(partial)[2]));
  CHECK(miou(partial).value == doctest::Approx(7.0 / 12.0).epsilon(1e-15));

  // A class predicted but never true still counts (as zero IoU).
  ConfusionMatrix spurious(3);
  spurious.update(mask_of(1, 2, {0, 0}), mask_of(1, 2, {0, 2}));
  // IoU0 = 1/2, IoU2 = 0, class 1 undefined.
  CHECK(miou(spurious).value == doctest::Approx(0.25).epsilon(1e-15));

  ConfusionMatrix empty(4);
  CHECK_FALSE(miou(empty).defined);
  CHECK(std::isnan(miou(empty).value));
}

TEST_CASE("consistency hand example: flickering pixel scores one half") {
  std::vector<ClassMask> gt = {mask_of(1, 2, {0, 0}), mask_of(1, 2, {0, 0}),
                               mask_of(1, 2, {0, 0})};
  std::vector<ClassMask> pr = {mask_of(1, 2, {0, 0}), mask_of(1, 2, {0, 1}),
                               mask_of(1, 2, {0, 0})};
  MetricValue r = vc_n(gt, pr, 2);
  CHECK(r.defined);
  CHECK(r.value == 0.5);
  CHECK(vc_n(gt, pr, 2, false).value == 0.5);

  // Over the full 3-frame window only the steady pixel survives.
  CHECK(vc_n(gt, pr, 3).value == 0.5);
}

TEST_CASE("consistency endpoints") {
  Rng rng(7);
  std::vector<ClassMask> gt;
  for (int t = 0; t < 4; ++t) {
    ClassMask m(3, 3);
    for (auto& v : m.v) v = static_cast<int32_t>(rng.uniform_int(0, 2));
    gt.push_back(m);
  }
  // Predictions identical to truth give a perfect score whenever some pixel
  // is stable in every window; with one constant pixel this always holds.
  for (auto& m : gt) m.at(0, 0) = 1;
  CHECK(vc_n(gt, gt, 2).value == 1.0);
  CHECK(vc_n(gt, gt, 4).value == 1.0);

  // n=1 windows reduce to per-frame accuracy over valid pixels.
  std::vector<ClassMask> pr = gt;
  pr[0].at(1, 1) = static_cast<int32_t>((gt[0].at(1, 1) + 1) % 3);
  MetricValue r1 = vc_n(gt, pr, 1);
  double acc0 = 8.0 / 9.0;
  CHECK(r1.value == doctest::Approx((acc0 + 3.0) / 4.0).epsilon(1e-15));

  CHECK_THROWS_AS(vc_n(gt, pr, 5), ConfigError);
  CHECK_THROWS_AS(vc_n(gt, pr, 0), ConfigError);
  pr.pop_back();
  CHECK_THROWS_AS(vc_n(gt, pr, 2), ConfigError);
  pr.push_back(ClassMask(2, 2, 0));
  CHECK_THROWS_AS(vc_n(gt, pr, 2), ConfigError);
}

TEST_CASE("all-ignore truth leaves the metric undefined") {
  std::vector<ClassMask> gt(3, ClassMask(2, 2, kIgnoreLabel));
  std::vector<ClassMask> pr(3, ClassMask(2, 2, 0));
  MetricValue r = vc_n(gt, pr, 2);
  CHECK_FALSE(r.defined);
  CHECK(std::isnan(r.value));
}

TEST_CASE("strict vs loose numerator") {
  // Prediction is stable over time but systematically the wrong class.
  std::vector<ClassMask> gt(3, ClassMask(1, 2, 0));
  std::vector<ClassMask> pr(3, ClassMask(1, 2, 1));
  CHECK(vc_n(gt, pr, 2, true).value == 0.0);
  CHECK(vc_n(gt, pr, 2, false).value == 1.0);
}

TEST_CASE("label permutation invariance") {
  Rng rng(11);
  std::vector<ClassMask> gt, pr;
  for (int t = 0; t < 5; ++t) {
    ClassMask g(4, 3), p(4, 3);
    for (auto& v : g.v) v = static_cast<int32_t>(rng.uniform_int(0, 2));
    for (auto& v : p.v) v = static_cast<int32_t>(rng.uniform_int(0, 2));
    gt.push_back(g);
    pr.push_back(p);
  }
  int32_t perm[3] = {2, 0, 1};
  auto apply = [&](std::vector<ClassMask> ms) {
    for (auto& m : ms)
      for (auto& v : m.v) v = perm[v];
    return ms;
  };
  for (int n : {1, 2, 3, 5})
    CHECK(vc_n(gt, pr, n).value == vc_n(apply(gt), apply(pr), n).value);
}

TEST_CASE("more corrupted pixels never score higher") {
  // Constant-in-time truth; corrupt the first k pixels of the odd frames, so
  // growing k shrinks the temporally stable predicted region of every window.
  std::vector<ClassMask> gt(4, ClassMask(4, 4, 1));
  double prev = 2.0;
  for (int k = 0; k <= 16; k += 2) {
    std::vector<ClassMask> pr = gt;
    for (int p = 0; p < k; ++p) {
      pr[1].v[static_cast<size_t>(p)] = 0;
      pr[3].v[static_cast<size_t>(p)] = 0;
    }
    double v = vc_n(gt, pr, 2).value;
    CHECK(v <= prev);
    prev = v;
  }
  CHECK(prev == 0.0);
}

TEST_CASE("bitmap sweep matches per-pixel re-derivation on random tiny videos") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    int h = static_cast<int>(rng.uniform_int(1, 4));
    int w = static_cast<int>(rng.uniform_int(1, 4));
    int frames = static_cast<int>(rng.uniform_int(2, 5));
    int classes = static_cast<int>(rng.uniform_int(2, 3));
    std::vector<ClassMask> gt, pr;
    for (int t = 0; t < frames; ++t) {
      ClassMask g(h, w), p(h, w);
      for (auto& v : g.v)
        v = rng.uniform() < 0.15 ? kIgnoreLabel
                                 : static_cast<int32_t>(rng.uniform_int(0, classes - 1));
      for (auto& v : p.v) v = static_cast<int32_t>(rng.uniform_int(0, classes - 1));
      gt.push_back(g);
      pr.push_back(p);
    }
    for (int n = 1; n <= frames; ++n)
      for (bool strict : {true, false}) {
        bool brute_defined = false;
        double brute = vc_brute(gt, pr, n, strict, &brute_defined);
        MetricValue got = vc_n(gt, pr, n, strict);
        CHECK(got.defined == brute_defined);
        if (brute_defined) CHECK(got.value == brute);
      }
  }
}

TEST_CASE("dataset mean skips short videos and reports them") {
  // Video A scores 1.0, video B scores 0.5, video C is too short.
  std::vector<ClassMask> a(3, ClassMask(1, 2, 0));
  std::vector<ClassMask> ap = a;
  std::vector<ClassMask> b = {mask_of(1, 2, {0, 0}), mask_of(1, 2, {0, 0}),
                              mask_of(1, 2, {0, 0})};
  std::vector<ClassMask> bp = {mask_of(1, 2, {0, 0}), mask_of(1, 2, {0, 1}),
                               mask_of(1, 2, {0, 0})};
  std::vector<ClassMask> c(1, ClassMask(1, 2, 0));

  MvcResult r = mvc({a, b, c}, {ap, bp, c}, 2);
  CHECK(r.defined);
  CHECK(r.value == 0.75);
  CHECK(r.videos_used == 2);
  CHECK(r.videos_skipped == 1);

  MvcResult one = mvc({b}, {bp}, 2);
  CHECK(one.value == vc_n(b, bp, 2).value);

  MvcResult none = mvc({c}, {c}, 2);
  CHECK_FALSE(none.defined);
  CHECK(none.videos_skipped == 1);

  // Undefined per-video scores (all-ignore truth) are also skipped.
  std::vector<ClassMask> ig(3, ClassMask(1, 2, kIgnoreLabel));
  MvcResult mixed = mvc({a, ig}, {ap, bp}, 2);
  CHECK(mixed.value == 1.0);
  CHECK(mixed.videos_skipped == 1);

  CHECK_THROWS_AS(mvc({a}, {}, 2), ConfigError);
}
