#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tv3s/rng.hpp"
#include "tv3s/tss.hpp"

using namespace tv3s;

namespace {

TssWeights<double> make_tss(uint64_t seed, int de = 6, int di = 12, int k = 4, int n = 3,
                            int r = 2) {
  TssWeights<double> w;
  Rng rng(seed);
  w.init(de, di, k, n, r, rng, "tss");
  return w;
}

template <typename T>
Tensor<T> randn(Rng& rng, std::vector<int> shape, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(scale * rng.normal());
  return t;
}

}  // namespace

TEST_CASE("output shapes and state shape") {
  auto w = make_tss(1);
  Rng rng(2);
  auto x = randn<double>(rng, {6, 9});
  auto out = tss_forward(w, x, w.fresh_state());
  CHECK(out.y.shape == std::vector<int>{6, 9});
  CHECK(out.h_out.shape == std::vector<int>{12, 3});
  CHECK_THROWS_AS(tss_forward(w, randn<double>(rng, {5, 9}), w.fresh_state()), ShapeError);
}

TEST_CASE("zero output projection reduces to the identity") {
  auto w = make_tss(3);
  for (auto& v : w.w_out.value.data) v = 0.0;
  Rng rng(4);
  auto x = randn<double>(rng, {6, 7});
  auto out = tss_forward(w, x, w.fresh_state());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(out.y.data[i] == x.data[i]);
}

TEST_CASE("conv padding does not leak between calls") {
  // Two calls with the same input and a forced zero incoming state must give
  // identical output no matter what was processed before: the only carrier
  // across frames is h, never the conv window.
  auto w = make_tss(5);
  Rng rng(6);
  auto first = randn<double>(rng, {6, 8});
  auto second = randn<double>(rng, {6, 8});
  auto a = tss_forward(w, second, w.fresh_state());
  (void)tss_forward(w, first, w.fresh_state());
  auto b = tss_forward(w, second, w.fresh_state());
  for (int64_t i = 0; i < a.y.numel(); ++i) CHECK(a.y.data[i] == b.y.data[i]);
}

TEST_CASE("carried state changes the next frame") {
  auto w = make_tss(7);
  Rng rng(8);
  auto f1 = randn<double>(rng, {6, 8});
  auto f2 = randn<double>(rng, {6, 8});
  auto s1 = tss_forward(w, f1, w.fresh_state());
  auto cold = tss_forward(w, f2, w.fresh_state());
  auto warm = tss_forward(w, f2, s1.h_out);
  double diff = 0;
  for (int64_t i = 0; i < cold.y.numel(); ++i)
    diff = std::max(diff, std::abs(cold.y.data[i] - warm.y.data[i]));
  CHECK(diff > 1e-8);
}

TEST_CASE("plain and tape forward produce identical values") {
  auto w = make_tss(9);
  Rng rng(10);
  auto x = randn<double>(rng, {6, 10});
  auto h = randn<double>(rng, {12, 3}, 0.2);

  auto plain = tss_forward(w, x, h, 0);

  Tape<double> tp;
  ParamBind<double> bind(tp);
  TssVars v = bind_tss(bind, w);
  auto [yv, hv] = ag::tss_forward(tp, v, w, tp.leaf(x), tp.leaf(h), 0);
  for (int64_t i = 0; i < plain.y.numel(); ++i) CHECK(tp.val(yv).data[i] == plain.y.data[i]);
  for (int64_t i = 0; i < plain.h_out.numel(); ++i)
    CHECK(tp.val(hv).data[i] == plain.h_out.data[i]);
}

TEST_CASE("chunked evaluation stays close to sequential through the block") {
  auto w = make_tss(11);
  Rng rng(12);
  auto x = randn<double>(rng, {6, 21});
  auto h = randn<double>(rng, {12, 3}, 0.3);
  auto ref = tss_forward(w, x, h, 0);
  for (int chunk : {1, 4, 21}) {
    auto got = tss_forward(w, x, h, chunk);
    for (int64_t i = 0; i < ref.y.numel(); ++i)
      CHECK(got.y.data[i] == doctest::Approx(ref.y.data[i]).epsilon(1e-10));
  }
}

TEST_CASE("tss gradients agree with central differences") {
  auto w = make_tss(13, 4, 8, 3, 2, 2);
  Rng rng(14);
  Param<double> x{"x", randn<double>(rng, {4, 6}, 0.8)};
  Param<double> h{"h", randn<double>(rng, {8, 2}, 0.3)};

  Tensor<double> cwy({4, 6});
  for (auto& v : cwy.data) v = rng.uniform(-1.0, 1.0);
  Tensor<double> cwh({8, 2});
  for (auto& v : cwh.data) v = rng.uniform(-1.0, 1.0);

  GradCheckSpec spec;
  spec.params = {&x, &h};
  w.for_each_param([&](Param<double>& p) { spec.params.push_back(&p); });
  spec.build = [&](Tape<double>& tp, ParamBind<double>& bind) {
    TssVars v = bind_tss(bind, w);
    auto [yv, hv] = ag::tss_forward(tp, v, w, bind.bind(x), bind.bind(h), 0);
    Var ly = ag::weighted_sum(tp, yv, cwy);
    Var lh = ag::weighted_sum(tp, hv, cwh);
    return ag::scalar_combine(tp, {{1.0, ly}, {0.7, lh}});
  };
  auto res = grad_check(spec, 1e-6);
  INFO("worst: ", res.worst_param, " analytic=", res.analytic, " numeric=", res.numeric);
  CHECK(res.max_rel_err < 1e-6);
}
