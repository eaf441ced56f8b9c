#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "tv3s/rng.hpp"
#include "tv3s/windowing.hpp"

using namespace tv3s;

namespace {

// Histogram of rect sizes (height, width) -> count.
std::map<std::pair<int, int>, int> size_census(const PatchPlan& p) {
  std::map<std::pair<int, int>, int> c;
  for (const Rect& r : p.rects) c[{r.height, r.width}]++;
  return c;
}

// Every map cell must be covered by exactly one rect.
void check_exact_cover(const PatchPlan& p) {
  Tensor<int> cover({1, p.map_h, p.map_w}, 0);
  for (const Rect& r : p.rects)
    for (int y = r.top; y < r.top + r.height; ++y)
      for (int x = r.left; x < r.left + r.width; ++x) cover(0, y, x)++;
  for (auto v : cover.data) CHECK(v == 1);
}

}  // namespace

TEST_CASE("unshifted plan is the regular grid") {
  PatchPlan p = build_plan(8, 12, 4, 2, false);
  CHECK(p.slot_count() == 6);
  for (const Rect& r : p.rects) {
    CHECK(r.height == 4);
    CHECK(r.width == 4);
    CHECK(r.top % 4 == 0);
    CHECK(r.left % 4 == 0);
  }
  // Row-major slot order.
  CHECK(p.rects[0] == Rect{0, 0, 4, 4});
  CHECK(p.rects[1] == Rect{0, 4, 4, 4});
  CHECK(p.rects[3] == Rect{4, 0, 4, 4});
  check_exact_cover(p);
}

TEST_CASE("shifted plan keeps borders as smaller rects") {
  // Single window per axis: the shifted plan degenerates to four quarters.
  PatchPlan p1 = build_plan(4, 4, 4, 2, true);
  CHECK(p1.slot_count() == 4);
  auto c1 = size_census(p1);
  CHECK(c1[{2, 2}] == 4);
  check_exact_cover(p1);

  // Two windows per axis: census must be one full window, two wide halves,
  // two tall halves and four quarters.
  PatchPlan p2 = build_plan(8, 8, 4, 2, true);
  CHECK(p2.slot_count() == 9);
  auto c2 = size_census(p2);
  CHECK(c2[{4, 4}] == 1);
  CHECK(c2[{2, 4}] == 2);
  CHECK(c2[{4, 2}] == 2);
  CHECK(c2[{2, 2}] == 4);
  check_exact_cover(p2);

  // General n x m case: (n-1)(m-1) full windows.
  PatchPlan p3 = build_plan(12, 16, 4, 2, true);
  auto c3 = size_census(p3);
  CHECK(c3[{4, 4}] == 2 * 3);
  CHECK(c3[{2, 4}] == 2 * 3);
  CHECK(c3[{4, 2}] == 2 * 2);
  CHECK(c3[{2, 2}] == 4);
  check_exact_cover(p3);
}

TEST_CASE("no pixels wrap to the opposite side") {
  // In a rolled (cyclic) layout some rect would span both border rows; here
  // every rect must be contiguous, inside the map.
  PatchPlan p = build_plan(8, 8, 4, 2, true);
  for (const Rect& r : p.rects) {
    CHECK(r.top >= 0);
    CHECK(r.left >= 0);
    CHECK(r.top + r.height <= 8);
    CHECK(r.left + r.width <= 8);
  }
}

TEST_CASE("plan construction is deterministic") {
  PatchPlan a = build_plan(40, 60, 20, 10, true);
  PatchPlan b = build_plan(40, 60, 20, 10, true);
  REQUIRE(a.slot_count() == b.slot_count());
  for (int i = 0; i < a.slot_count(); ++i) CHECK(a.rects[static_cast<size_t>(i)] == b.rects[static_cast<size_t>(i)]);
}

TEST_CASE("invalid geometry is rejected") {
  CHECK_THROWS_AS(build_plan(10, 8, 4, 2, false), ConfigError);   // 10 % 4 != 0
  CHECK_THROWS_AS(build_plan(8, 8, 0, 0, false), ConfigError);    // window < 1
  CHECK_THROWS_AS(build_plan(4, 8, 8, 4, false), ConfigError);    // map smaller than window
  CHECK_THROWS_AS(build_plan(8, 8, 4, 0, true), ConfigError);     // shift out of range
  CHECK_THROWS_AS(build_plan(8, 8, 4, 4, true), ConfigError);
  CHECK_NOTHROW(build_plan(8, 8, 4, 1, true));                    // any 0 < s < w is legal
}

TEST_CASE("extract and scatter round trip bit-exactly") {
  Rng rng(11);
  Tensor<float> e({3, 8, 8});
  for (auto& v : e.data) v = static_cast<float>(rng.normal());

  for (bool shifted : {false, true}) {
    PatchPlan p = build_plan(8, 8, 4, 2, shifted);
    std::vector<Tensor<float>> seqs;
    for (const Rect& r : p.rects) seqs.push_back(extract_flatten(e, r));
    Tensor<float> back = scatter_unflatten(seqs, p, 3);
    REQUIRE(back.shape == e.shape);
    for (int64_t i = 0; i < e.numel(); ++i) CHECK(back.data[i] == e.data[i]);
  }
}

TEST_CASE("flattening scans each rect row-major") {
  Tensor<int> e({1, 4, 4});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) e(0, y, x) = 10 * y + x;
  Rect r{1, 2, 2, 2};
  Tensor<int> seq = extract_flatten(e, r);
  CHECK(seq.shape == std::vector<int>{1, 4});
  CHECK(seq(0, 0) == 12);
  CHECK(seq(0, 1) == 13);
  CHECK(seq(0, 2) == 22);
  CHECK(seq(0, 3) == 23);
  CHECK_THROWS_AS(extract_flatten(e, Rect{3, 3, 2, 2}), ConfigError);
}

TEST_CASE("tape extract and scatter gradients") {
  Rng rng(12);
  Param<double> e{"e", Tensor<double>({2, 4, 4})};
  for (auto& v : e.value.data) v = rng.normal();
  PatchPlan plan = build_plan(4, 4, 2, 1, true);

  Tensor<double> cw({2, 4, 4});
  for (auto& v : cw.data) v = rng.uniform(-1.0, 1.0);

  GradCheckSpec spec;
  spec.params = {&e};
  spec.build = [&](Tape<double>& tp, ParamBind<double>& bind) {
    Var ev = bind.bind(e);
    std::vector<Var> seqs;
    for (const Rect& r : plan.rects) {
      Var s = ag::extract_flatten(tp, ev, r);
      seqs.push_back(ag::silu(tp, s));
    }
    Var out = ag::scatter_unflatten(tp, seqs, plan);
    return ag::weighted_sum(tp, out, cw);
  };
  CHECK(grad_check(spec, 1e-6).max_rel_err < 1e-8);
}
