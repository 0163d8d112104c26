#include <catch2/catch_amalgamated.hpp>

#include "tagv/rng.hpp"
#include "tagv/selection.hpp"
#include "tagv/synthetic.hpp"

using namespace tagv;

namespace {

SubtitleTrack make_track(std::initializer_list<std::pair<double, double>> spans) {
  SubtitleTrack t;
  int idx = 1;
  for (const auto& [s, e] : spans) {
    SubtitleCue cue;
    cue.index = idx++;
    cue.span.start_s = s;
    cue.span.end_s = e;
    cue.text = "cue";
    t.cues.push_back(cue);
  }
  return t;
}

SubtitleTrack random_track(RngState& rng, bool quantized) {
  SubtitleTrack t;
  const int n = static_cast<int>(rng.uniform_int(1, 15));
  double time = 0.0;
  for (int i = 0; i < n; ++i) {
    SubtitleCue cue;
    cue.index = i + 1;
    time += rng.uniform(0.0, 3.0);
    cue.span.start_s = quantized ? detail::quantize_ms(time) : time;
    time += rng.uniform(0.5, 6.0);
    cue.span.end_s = quantized ? detail::quantize_ms(time) : time;
    if (cue.span.end_s <= cue.span.start_s) cue.span.end_s = cue.span.start_s + 0.001;
    time = cue.span.end_s;
    t.cues.push_back(cue);
  }
  return t;
}

}  // namespace

TEST_CASE("selection: nearest boundaries on a hand-built track") {
  // starts:  2, 6.5, 14.91, 21
  // ends:    5, 9,   19.21, 26
  const SubtitleTrack t = make_track({{2, 5}, {6.5, 9}, {14.91, 19.21}, {21, 26}});
  const SelectedSpan sel = select_subtitle_span(t, 15.2, 19.0);
  CHECK(sel.start_cue == 3);
  CHECK(sel.end_cue == 3);
  CHECK(sel.r_s == 14.91);
  CHECK(sel.r_e == 19.21);

  // answer spanning two cues
  const SelectedSpan wide = select_subtitle_span(t, 6.0, 20.0);
  CHECK(wide.start_cue == 2);
  CHECK(wide.end_cue == 3);
  CHECK(wide.r_s == 6.5);
  CHECK(wide.r_e == 19.21);
}

TEST_CASE("selection: tie-breaking is first-for-start, last-for-end") {
  // starts {0, 10, 20}: tau_s = 15 is 5 away from both cue 2 and cue 3
  // ends   {5, 15, 25}: tau_e = 20 is 5 away from both cue 2 and cue 3
  const SubtitleTrack t = make_track({{0, 5}, {10, 15}, {20, 25}});
  const SelectedSpan sel = select_subtitle_span(t, 15.0, 20.0);
  CHECK(sel.start_cue == 2);  // first of the tied pair
  CHECK(sel.r_s == 10.0);
  CHECK(sel.end_cue == 3);  // last of the tied pair
  CHECK(sel.r_e == 25.0);

  const SelectedSpan os = oracle_select(t, 15.0, 20.0);
  CHECK(os.start_cue == sel.start_cue);
  CHECK(os.end_cue == sel.end_cue);
}

TEST_CASE("selection: crossed result is returned unmodified") {
  const SubtitleTrack t = make_track({{0, 2}, {10, 12}, {20, 22}});
  // start snaps to cue 3 (20), end snaps to cue 1 (2): r_e < r_s
  const SelectedSpan sel = select_subtitle_span(t, 19.0, 2.1);
  CHECK(sel.start_cue == 3);
  CHECK(sel.end_cue == 1);
  CHECK(sel.r_e < sel.r_s);
}

TEST_CASE("selection: degenerate inputs") {
  CHECK_THROWS_AS(select_subtitle_span(SubtitleTrack{}, 0.0, 1.0), Error);
  CHECK_THROWS_AS(oracle_select(SubtitleTrack{}, 0.0, 1.0), Error);
  const SubtitleTrack t = make_track({{0, 1}});
  CHECK_THROWS_AS(select_subtitle_span(t, std::numeric_limits<double>::quiet_NaN(), 1.0), Error);
  const SelectedSpan sel = select_subtitle_span(t, -100.0, 100.0);
  CHECK(sel.start_cue == 1);
  CHECK(sel.end_cue == 1);
}

TEST_CASE("selection: matches the exhaustive oracle on random tracks") {
  RngState rng(2024);
  int tie_hits = 0;
  for (int iter = 0; iter < 1000; ++iter) {
    // quantized times make exact distance ties common, which is the point
    SubtitleTrack t = random_track(rng, iter % 2 == 0);
    double tau_s, tau_e;
    if (iter % 3 == 0) {
      // aim exactly between two boundaries to force ties
      const std::size_t a = rng.uniform_int(0, t.cues.size() - 1);
      const std::size_t b = rng.uniform_int(0, t.cues.size() - 1);
      tau_s = 0.5 * (t.cues[a].span.start_s + t.cues[b].span.start_s);
      tau_e = 0.5 * (t.cues[a].span.end_s + t.cues[b].span.end_s);
      if (a != b) ++tie_hits;
    } else {
      const double horizon = t.cues.back().span.end_s;
      tau_s = rng.uniform(-1.0, horizon + 1.0);
      tau_e = rng.uniform(tau_s, horizon + 1.0);
    }
    const SelectedSpan got = select_subtitle_span(t, tau_s, tau_e);
    const SelectedSpan want = oracle_select(t, tau_s, tau_e);
    REQUIRE(got.start_cue == want.start_cue);
    REQUIRE(got.end_cue == want.end_cue);
    REQUIRE(got.r_s == want.r_s);
    REQUIRE(got.r_e == want.r_e);
  }
  CHECK(tie_hits > 100);  // the adversarial branch actually exercised ties
}

TEST_CASE("selection: synthetic answers snap to their own cues") {
  const Corpus corpus = generate_synthetic_corpus(16, 7, GenConfig{}, Split::train);
  for (const Sample& s : corpus.samples) {
    const SelectedSpan sel = select_subtitle_span(s.track, s.answer.start_s, s.answer.end_s);
    // generator aligns answers with cue boundaries, so selection is exact
    CHECK(sel.r_s == s.answer.start_s);
    CHECK(sel.r_e == s.answer.end_s);
    CHECK(sel.start_cue <= sel.end_cue);
  }
}
