#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "tagv/highlight.hpp"
#include "tagv/optim.hpp"
#include "tagv/rng.hpp"

using namespace tagv;
using Catch::Approx;

using T = Tensor<double>;

namespace {

T rand_tensor(Shape dims, std::uint64_t seed) {
  RngState rng(seed);
  std::vector<double> v(shape_size(dims));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return T::constant(std::move(dims), std::move(v));
}

}  // namespace

TEST_CASE("highlight: question pooling matches a hand softmax") {
  const std::size_t m = 4, d = 3;
  const T q = rand_tensor({m, d}, 1);
  const T u = rand_tensor({d}, 2);
  const T pooled = pool_question(q, u);
  REQUIRE(pooled.dims() == Shape{d});

  std::vector<double> scores(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t c = 0; c < d; ++c) scores[j] += q.value()[j * d + c] * u.value()[c];
  }
  double mx = scores[0];
  for (double v : scores) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : scores) z += std::exp(v - mx);
  for (std::size_t c = 0; c < d; ++c) {
    double want = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      want += std::exp(scores[j] - mx) / z * q.value()[j * d + c];
    }
    CHECK(pooled.value()[c] == Approx(want).margin(1e-12));
  }
  CHECK_THROWS_AS(pool_question(q, rand_tensor({d + 1}, 3)), ShapeError);
}

TEST_CASE("highlight: pooled vector is a convex combination of rows") {
  const T q = rand_tensor({6, 5}, 4);
  const T u = rand_tensor({5}, 5);
  const T pooled = pool_question(q, u);
  for (std::size_t c = 0; c < 5; ++c) {
    double lo = q.value()[c], hi = q.value()[c];
    for (std::size_t j = 1; j < 6; ++j) {
      lo = std::min(lo, q.value()[j * 5 + c]);
      hi = std::max(hi, q.value()[j * 5 + c]);
    }
    CHECK(pooled.value()[c] >= lo - 1e-12);
    CHECK(pooled.value()[c] <= hi + 1e-12);
  }
}

TEST_CASE("highlight: scores are probabilities from a conv over [q ; fused]") {
  const std::size_t n = 9, d = 4;
  const T pooled = rand_tensor({d}, 11);
  const T fused = rand_tensor({n, d}, 12);
  const T kernel = rand_tensor({7, 2 * d, 1}, 13);
  const T bias = rand_tensor({1}, 14);
  const T s = highlight_scores(pooled, fused, kernel, bias);
  REQUIRE(s.dims() == Shape{n});
  for (double v : s.value()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  // oracle: zero-padded width-7 conv over the concatenated rows, sigmoid
  const std::size_t cin = 2 * d;
  for (std::size_t t = 0; t < n; ++t) {
    double acc = bias.value()[0];
    for (std::size_t j = 0; j < 7; ++j) {
      const std::ptrdiff_t uu = static_cast<std::ptrdiff_t>(t + j) - 3;
      if (uu < 0 || uu >= static_cast<std::ptrdiff_t>(n)) continue;
      for (std::size_t c = 0; c < cin; ++c) {
        const double x = c < d ? pooled.value()[c]
                               : fused.value()[static_cast<std::size_t>(uu) * d + (c - d)];
        acc += x * kernel.value()[j * cin + c];
      }
    }
    CHECK(s.value()[t] == Approx(1.0 / (1.0 + std::exp(-acc))).margin(1e-12));
  }
}

TEST_CASE("highlight: extended mask frozen cases") {
  // duration 10, n 10: frame i covers instant i + 0.5
  SECTION("alpha = 0 keeps the answer span") {
    const HighlightMask m = build_extended_mask({4.0, 6.0}, 10.0, 10, 0.0);
    CHECK(m.bits == std::vector<std::uint8_t>{0, 0, 0, 0, 1, 1, 0, 0, 0, 0});
    CHECK(m.t_highlight == 2.0);
    CHECK(m.t_extend == 2.0);
  }
  SECTION("alpha = 1 doubles it symmetrically") {
    const HighlightMask m = build_extended_mask({4.0, 6.0}, 10.0, 10, 1.0);
    // extended window [3, 7]: instants 3.5, 4.5, 5.5, 6.5
    CHECK(m.bits == std::vector<std::uint8_t>{0, 0, 0, 1, 1, 1, 1, 0, 0, 0});
    CHECK(m.t_extend == 4.0);
  }
  SECTION("closed interval includes exact boundary instants") {
    // window [1.5, 3.5] hits instants 1.5, 2.5, 3.5 exactly
    const HighlightMask m = build_extended_mask({1.5, 3.5}, 10.0, 10, 0.0);
    CHECK(m.bits == std::vector<std::uint8_t>{0, 1, 1, 1, 0, 0, 0, 0, 0, 0});
  }
  SECTION("extension clips at the video edges") {
    const HighlightMask m = build_extended_mask({0.0, 2.0}, 10.0, 10, 3.0);
    // t_extend = 8 about center 1 gives [-3, 5] -> [0, 5]
    CHECK(m.bits == std::vector<std::uint8_t>{1, 1, 1, 1, 1, 0, 0, 0, 0, 0});
    const HighlightMask r = build_extended_mask({8.0, 10.0}, 10.0, 10, 3.0);
    CHECK(r.bits == std::vector<std::uint8_t>{0, 0, 0, 0, 0, 1, 1, 1, 1, 1});
  }
  SECTION("degenerate inputs throw") {
    CHECK_THROWS_AS(build_extended_mask({1.0, 2.0}, 10.0, 0, 0.25), Error);
    CHECK_THROWS_AS(build_extended_mask({1.0, 2.0}, 0.0, 8, 0.25), Error);
    CHECK_THROWS_AS(build_extended_mask({1.0, 2.0}, 10.0, 8, -0.1), Error);
    CHECK_THROWS_AS(build_extended_mask({3.0, 2.0}, 10.0, 8, 0.25), Error);
  }
}

TEST_CASE("highlight: mask grows monotonically with alpha") {
  RngState rng(99);
  for (int iter = 0; iter < 200; ++iter) {
    const double duration = rng.uniform(5.0, 120.0);
    double a = rng.uniform(0.0, duration);
    double b = rng.uniform(0.0, duration);
    if (b < a) std::swap(a, b);
    const std::size_t n = rng.uniform_int(1, 256);
    const double alpha1 = rng.uniform(0.0, 2.0);
    const double alpha2 = alpha1 + rng.uniform(0.0, 2.0);
    const HighlightMask m1 = build_extended_mask({a, b}, duration, n, alpha1);
    const HighlightMask m2 = build_extended_mask({a, b}, duration, n, alpha2);
    REQUIRE(m1.bits.size() == n);
    for (std::size_t i = 0; i < n; ++i)

      REQUIRE(m1.bits[i] <= m2.bits[i]);  // larger alpha never turns a frame off
    // the mask is one contiguous run (possibly empty only for tiny spans)
    int transitions = 0;
    for (std::size_t i = 1; i < n; ++i) transitions += m1.bits[i] != m1.bits[i - 1];
    CHECK(transitions <= 2);
  }
}

TEST_CASE("highlight: loss equals hand-computed binary cross entropy") {
  const T scores = T::constant({4}, {0.9, 0.1, 0.5, 0.8});
  HighlightMask mask;
  mask.bits = {1, 0, 1, 0};
  const double want = -(std::log(0.9) + std::log(0.9) + std::log(0.5) + std::log(0.2)) / 4.0;
  CHECK(highlight_loss(scores, mask).item() == Approx(want).margin(1e-12));

  HighlightMask bad;
  bad.bits = {1, 0};
  CHECK_THROWS_AS(highlight_loss(scores, bad), ShapeError);
}

TEST_CASE("highlight: prompt projection shape and frozen value") {
  // scores [2], w [[1,10],[100,1000]], b [0.5, -0.5]
  const T scores = T::constant({2}, {2.0, 3.0});
  const T w = T::constant({2, 2}, {1.0, 10.0, 100.0, 1000.0});
  const T b = T::constant({2}, {0.5, -0.5});
  const T prompt = project_prompt_token(scores, w, b);
  REQUIRE(prompt.dims() == Shape{2});
  CHECK(prompt.value()[0] == Approx(2.0 * 1.0 + 3.0 * 100.0 + 0.5).margin(1e-12));
  CHECK(prompt.value()[1] == Approx(2.0 * 10.0 + 3.0 * 1000.0 - 0.5).margin(1e-12));
  CHECK_THROWS_AS(project_prompt_token(scores, T::constant({3, 2}, {1, 2, 3, 4, 5, 6}), b),
                  ShapeError);
}

TEST_CASE("highlight: head gradients certified end to end") {
  const std::size_t n = 8, d = 4, dm = 6;
  RngState rng(7);
  ParamStore<double> store;
  const auto addp = [&](const char* name, Shape dims) {
    std::vector<double> init(shape_size(dims));
    for (auto& x : init) x = rng.uniform(-1.0, 1.0);
    store.add(name, std::move(dims), std::move(init));
  };
  addp("q", {3, d});
  addp("u", {d});
  addp("fused", {n, d});
  addp("ck", {7, 2 * d, 1});
  addp("cb", {1});
  addp("pw", {n, dm});
  addp("pb", {dm});

  HighlightMask mask;
  mask.bits = {1, 1, 0, 0, 0, 0, 1, 1};
  const T weights = rand_tensor({dm}, 70);
  const auto loss_fn = [&](const Leaves<double>& lv) {
    const T pooled = pool_question(lv.at("q"), lv.at("u"));
    const T s = highlight_scores(pooled, lv.at("fused"), lv.at("ck"), lv.at("cb"));
    const T prompt = project_prompt_token(s, lv.at("pw"), lv.at("pb"));
    return add(highlight_loss(s, mask), sum_all(mul(prompt, weights)));
  };
  const GradCheckResult res = grad_check(store, loss_fn, 1e-5, 0);
  INFO("worst " << res.worst_param << "[" << res.worst_index << "]: " << res.worst_analytic
                << " vs " << res.worst_numeric);
  CHECK(res.max_rel_err < 1e-7);
}
