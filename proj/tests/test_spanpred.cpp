#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "tagv/gradcheck.hpp"
#include "tagv/model.hpp"
#include "tagv/rng.hpp"
#include "tagv/spanpred.hpp"

using namespace tagv;
using Catch::Approx;

namespace {

// A sequence with a given segment layout and chosen start/end probabilities
// placed directly, for exercising the decoder in isolation.
struct DecodeFixture {
  TokenSequence ts;
  SpanLogits<double> logits;
  SubtitleTrack track;
};

DecodeFixture make_fixture(const std::vector<int>& seg, const std::vector<double>& start_logit,
                           const std::vector<double>& end_logit) {
  DecodeFixture f;
  f.ts.seg = seg;
  f.ts.ids.assign(seg.size(), 0);
  int max_cue = 0;
  for (int s : seg) max_cue = std::max(max_cue, s);
  for (int k = 0; k < max_cue; ++k) {
    SubtitleCue cue;
    cue.index = k + 1;
    cue.span.start_s = 10.0 * k;
    cue.span.end_s = 10.0 * k + 8.0;
    cue.text = "cue";
    f.track.cues.push_back(cue);
  }
  std::vector<std::uint8_t> valid(seg.size());
  for (std::size_t i = 0; i < seg.size(); ++i) valid[i] = seg[i] >= 1;
  const auto t1 = Tensor<double>::constant({seg.size()}, start_logit);
  const auto t2 = Tensor<double>::constant({seg.size()}, end_logit);
  f.logits.valid = valid;
  f.logits.start_logp = masked_log_softmax(t1, valid);
  f.logits.end_logp = masked_log_softmax(t2, valid);
  return f;
}

// Exhaustive reference for joint decoding: scan every ordered pair, strict
// improvement only, which leaves the lexicographically smallest maximizer.
std::pair<std::size_t, std::size_t> oracle_joint(const SpanLogits<double>& lg,
                                                 std::size_t window) {
  const std::size_t len = lg.valid.size();
  std::size_t bs = 0, be = 0;
  double best = -1.0;
  for (std::size_t s = 0; s < len; ++s) {
    if (!lg.valid[s]) continue;
    for (std::size_t e = s; e < len; ++e) {
      if (!lg.valid[e]) continue;
      if (window > 0 && e - s > window) break;
      const double score =
          std::exp(lg.start_logp.value()[s]) * std::exp(lg.end_logp.value()[e]);
      if (score > best) {
        best = score;
        bs = s;
        be = e;
      }
    }
  }
  return {bs, be};
}

}  // namespace

TEST_CASE("spanpred: tokenizer rules") {
  CHECK(tokenize("Hello World") == std::vector<std::string>{"hello", "world"});
  CHECK(tokenize("what is this?") == std::vector<std::string>{"what", "is", "this", "?"});
  CHECK(tokenize("a,b") == std::vector<std::string>{"a", ",", "b"});
  CHECK(tokenize("  spaced\tout\n") == std::vector<std::string>{"spaced", "out"});
  CHECK(tokenize("") == std::vector<std::string>{});
  CHECK(tokenize("x2 3y") == std::vector<std::string>{"x2", "3y"});
  // brackets split, so "[CLS]" from raw text can never collide with specials
  CHECK(tokenize("[CLS]") == std::vector<std::string>{"[", "cls", "]"});
  // bytes >= 0x80 stay inside words untouched
  CHECK(tokenize("caf\xC3\xA9 au lait") ==
        std::vector<std::string>{"caf\xC3\xA9", "au", "lait"});
}

TEST_CASE("spanpred: vocabulary layout and lookup") {
  Corpus corpus;
  Sample s;
  s.id = "v-0";
  s.duration_s = 10.0;
  s.question = "where is the gauze ?";
  SubtitleCue cue;
  cue.index = 1;
  cue.span = {0.0, 10.0};
  cue.text = "the gauze sits here";
  s.track.cues.push_back(cue);
  s.answer = {0.0, 10.0};
  corpus.samples.push_back(s);

  const Vocabulary vocab = build_vocabulary(corpus);
  CHECK(vocab.text_of(Vocabulary::kPad) == "[PAD]");
  CHECK(vocab.text_of(Vocabulary::kUnk) == "[UNK]");
  CHECK(vocab.text_of(Vocabulary::kCls) == "[CLS]");
  CHECK(vocab.text_of(Vocabulary::kSep) == "[SEP]");
  CHECK(vocab.text_of(Vocabulary::kVis) == "[VIS]");
  // regular tokens are sorted and deduplicated ("the" appears once)
  const auto regular = vocab.regular_tokens();
  CHECK(std::is_sorted(regular.begin(), regular.end()));
  CHECK(std::count(regular.begin(), regular.end(), "the") == 1);
  CHECK(vocab.lookup("gauze") >= Vocabulary::kFirstRegular);
  CHECK(vocab.lookup("zebra") == Vocabulary::kUnk);
  // rebuilding from the regular list reproduces the exact vocabulary
  const Vocabulary back = Vocabulary::from_regular_tokens(regular);
  CHECK(back.tokens == vocab.tokens);
  CHECK_THROWS_AS(vocab.text_of(-1), Error);
  CHECK_THROWS_AS(vocab.text_of(static_cast<int>(vocab.size())), Error);
}

TEST_CASE("spanpred: input assembly layout") {
  const Sample s = micro_sample();
  const Vocabulary vocab = micro_vocabulary();
  const TokenSequence ts = assemble_input(s, vocab, 200);

  // [CLS] how to secure the splint ? [SEP] [VIS] [SEP] = 10 framing tokens
  REQUIRE(ts.ids.size() == 10 + 7 + 7);  // + two cues of 6 tokens + [SEP]
  CHECK(ts.ids[0] == Vocabulary::kCls);
  CHECK(ts.seg[0] == kSegSpecial);
  for (std::size_t i = 1; i <= 6; ++i) CHECK(ts.seg[i] == kSegQuestion);
  CHECK(ts.ids[7] == Vocabulary::kSep);
  CHECK(ts.vis_pos == 8);
  CHECK(ts.ids[8] == Vocabulary::kVis);
  CHECK(ts.ids[9] == Vocabulary::kSep);
  for (std::size_t i = 10; i < 16; ++i) CHECK(ts.seg[i] == 1);
  CHECK(ts.ids[16] == Vocabulary::kSep);
  CHECK(ts.seg[16] == kSegSpecial);
  for (std::size_t i = 17; i < 23; ++i) CHECK(ts.seg[i] == 2);
  CHECK(ts.ids[23] == Vocabulary::kSep);
  CHECK_FALSE(ts.truncated);

  SECTION("cue truncation is all-or-nothing") {
    // framing is 10 tokens, cue 1 needs 7 more; a budget of 20 fits cue 1
    // (17) but not cue 2 (24), and cue 2 must not appear partially
    const TokenSequence cut = assemble_input(s, vocab, 20);
    CHECK(cut.truncated);
    CHECK(cut.ids.size() == 17);
    for (int seg : cut.seg) CHECK(seg <= 1);
    // a budget of 23 still cannot take half of cue 2
    const TokenSequence cut2 = assemble_input(s, vocab, 23);
    CHECK(cut2.ids.size() == 17);
    CHECK(cut2.truncated);
  }
  SECTION("framing that cannot fit is an error") {
    CHECK_THROWS_AS(assemble_input(s, vocab, 9), Error);
    Sample empty_q = s;
    empty_q.question = "  ";
    CHECK_THROWS_AS(assemble_input(empty_q, vocab, 100), Error);
  }
  SECTION("unknown words map to [UNK]") {
    Sample odd = s;
    odd.question = "how to zzzz the splint ?";
    const TokenSequence t2 = assemble_input(odd, vocab, 200);
    CHECK(t2.ids[3] == Vocabulary::kUnk);
  }
}

TEST_CASE("spanpred: sinusoidal positions") {
  const auto pe = sinusoid_positions<double>(4, 6);
  REQUIRE(pe.size() == 24);
  // position 0: sin(0) = 0, cos(0) = 1 alternating
  for (std::size_t i = 0; i < 6; i += 2) {
    CHECK(pe[i] == 0.0);
    CHECK(pe[i + 1] == 1.0);
  }
  // position 2, pair 0: angle = 2
  CHECK(pe[2 * 6 + 0] == Approx(std::sin(2.0)).margin(1e-12));
  CHECK(pe[2 * 6 + 1] == Approx(std::cos(2.0)).margin(1e-12));
  // pair 2: angle = 2 / 10000^(2/6)
  const double angle = 2.0 / std::pow(10000.0, 2.0 / 6.0);
  CHECK(pe[2 * 6 + 2] == Approx(std::sin(angle)).margin(1e-12));
  CHECK(pe[2 * 6 + 3] == Approx(std::cos(angle)).margin(1e-12));
}

TEST_CASE("spanpred: encoder is deterministic and prompt-sensitive") {
  const TrainConfig cfg = micro_config();
  Model<double> model(cfg, micro_vocabulary());
  model.init_params();
  const PreparedSample<double> ps = model.prepare(micro_sample(cfg.d_v));
  const Leaves<double> leaves = Leaves<double>::from_store(model.params(), false);

  const auto prompt_a = Tensor<double>::constant({cfg.d_model},
                                                 std::vector<double>(cfg.d_model, 0.1));
  const Tensor<double> h1 = encode_sequence(ps.tokens, prompt_a, leaves, cfg, nullptr, false);
  const Tensor<double> h2 = encode_sequence(ps.tokens, prompt_a, leaves, cfg, nullptr, false);
  REQUIRE(h1.dims() == Shape{ps.tokens.ids.size(), cfg.d_model});
  CHECK(h1.value() == h2.value());  // eval mode: bitwise repeatable

  // a different prompt must change the states (it is the only video input)
  const auto prompt_b = Tensor<double>::constant({cfg.d_model},
                                                 std::vector<double>(cfg.d_model, -0.7));
  const Tensor<double> h3 = encode_sequence(ps.tokens, prompt_b, leaves, cfg, nullptr, false);
  CHECK(h1.value() != h3.value());

  // dropout in train mode needs an rng
  CHECK_THROWS_AS(encode_sequence(ps.tokens, prompt_a, leaves, cfg, nullptr, true), Error);
}

TEST_CASE("spanpred: span logits mask everything but cue tokens") {
  const TrainConfig cfg = micro_config();
  Model<double> model(cfg, micro_vocabulary());
  model.init_params();
  const PreparedSample<double> ps = model.prepare(micro_sample(cfg.d_v));
  const Leaves<double> lv = Leaves<double>::from_store(model.params(), false);
  const auto prompt = Tensor<double>::constant({cfg.d_model},
                                               std::vector<double>(cfg.d_model, 0.0));
  const Tensor<double> h = encode_sequence(ps.tokens, prompt, lv, cfg, nullptr, false);
  const SpanLogits<double> lg = span_logits(h, ps.tokens, lv.at("span.w1"), lv.at("span.b1"),
                                            lv.at("span.w2"), lv.at("span.b2"));
  double total = 0.0;
  for (std::size_t i = 0; i < lg.valid.size(); ++i) {
    CHECK(lg.valid[i] == (ps.tokens.seg[i] >= 1 ? 1 : 0));
    if (lg.valid[i]) {
      total += std::exp(lg.start_logp.value()[i]);
    } else {
      CHECK(lg.start_logp.value()[i] < -1e29);
    }
  }
  CHECK(total == Approx(1.0).epsilon(1e-9));

  // a sequence with no cue tokens cannot host span heads
  TokenSequence bare;
  bare.ids = {Vocabulary::kCls, Vocabulary::kSep};
  bare.seg = {kSegSpecial, kSegSpecial};
  const auto h2 = Tensor<double>::constant({2, cfg.d_model},
                                           std::vector<double>(2 * cfg.d_model, 0.3));
  CHECK_THROWS_AS(span_logits(h2, bare, lv.at("span.w1"), lv.at("span.b1"), lv.at("span.w2"),
                              lv.at("span.b2")),
                  Error);
}

TEST_CASE("spanpred: decoding picks the right cues") {
  // layout: [CLS] q q [SEP] [VIS] [SEP] c1 c1 [SEP] c2 c2 [SEP]
  const std::vector<int> seg = {0, -1, -1, 0, 0, 0, 1, 1, 0, 2, 2, 0};
  std::vector<double> s_logit(seg.size(), 0.0);
  std::vector<double> e_logit(seg.size(), 0.0);

  SECTION("clear peaks") {
    s_logit[6] = 8.0;   // start on first token of cue 1
    e_logit[10] = 8.0;  // end on last token of cue 2
    const DecodeFixture f = make_fixture(seg, s_logit, e_logit);
    for (DecodeMode mode : {DecodeMode::joint, DecodeMode::paper_argmax}) {
      const SpanPrediction p = decode_span(f.logits, f.ts, f.track, mode);
      CHECK(p.s == 6);
      CHECK(p.e == 10);
      CHECK(p.start_cue == 1);
      CHECK(p.end_cue == 2);
      CHECK(p.start_s == 0.0);
      CHECK(p.end_s == 18.0);
    }
  }
  SECTION("paper mode falls back to joint when argmaxes cross") {
    s_logit[9] = 8.0;  // independent start argmax on cue 2...
    e_logit[7] = 8.0;  // ...but end argmax earlier, on cue 1
    const DecodeFixture f = make_fixture(seg, s_logit, e_logit);
    const SpanPrediction p = decode_span(f.logits, f.ts, f.track, DecodeMode::paper_argmax);
    CHECK(p.s <= p.e);  // repaired
    const auto [os, oe] = oracle_joint(f.logits, 0);
    CHECK(p.s == os);
    CHECK(p.e == oe);
  }
  SECTION("uniform probabilities tie-break to the smallest start then end") {
    const DecodeFixture f = make_fixture(seg, s_logit, e_logit);
    const SpanPrediction p = decode_span(f.logits, f.ts, f.track, DecodeMode::joint);
    CHECK(p.s == 6);
    CHECK(p.e == 6);
  }
  SECTION("window restricts the pair") {
    s_logit[6] = 8.0;
    e_logit[10] = 8.0;
    const DecodeFixture f = make_fixture(seg, s_logit, e_logit);
    const SpanPrediction p = decode_span(f.logits, f.ts, f.track, DecodeMode::joint, 2);
    CHECK(p.e - p.s <= 2);
    const auto [os, oe] = oracle_joint(f.logits, 2);
    CHECK(p.s == os);
    CHECK(p.e == oe);
  }
}

TEST_CASE("spanpred: joint decode matches the exhaustive oracle on random inputs") {
  RngState rng(777);
  for (int iter = 0; iter < 300; ++iter) {
    // random segment layout: framing + 1..5 cues of 1..4 tokens
    std::vector<int> seg = {0, -1, 0, 0, 0};
    const int n_cues = static_cast<int>(rng.uniform_int(1, 5));
    for (int k = 1; k <= n_cues; ++k) {
      const int len = static_cast<int>(rng.uniform_int(1, 4));
      for (int t = 0; t < len; ++t) seg.push_back(k);
      seg.push_back(0);
    }
    std::vector<double> s_logit(seg.size()), e_logit(seg.size());
    for (auto& v : s_logit) v = rng.uniform(-3.0, 3.0);
    for (auto& v : e_logit) v = rng.uniform(-3.0, 3.0);
    // occasional exact ties
    if (iter % 4 == 0 && seg.size() > 8) {
      s_logit[6] = s_logit[5];
      e_logit[7] = e_logit[6];
    }
    const DecodeFixture f = make_fixture(seg, s_logit, e_logit);
    const std::size_t window = iter % 3 == 0 ? rng.uniform_int(1, 6) : 0;
    const SpanPrediction got = decode_span(f.logits, f.ts, f.track, DecodeMode::joint, window);
    const auto [os, oe] = oracle_joint(f.logits, window);
    REQUIRE(got.s == os);
    REQUIRE(got.e == oe);
  }
}

TEST_CASE("spanpred: targets map cues to token positions") {
  const Sample s = micro_sample();
  const Vocabulary vocab = micro_vocabulary();
  const TokenSequence ts = assemble_input(s, vocab, 200);

  SECTION("normal selection") {
    SelectedSpan sel;
    sel.start_cue = 1;
    sel.end_cue = 2;
    const SpanTargets t = span_targets(ts, sel);
    CHECK_FALSE(t.skip);
    CHECK(t.s == 10);  // first token of cue 1
    CHECK(t.e == 22);  // last token of cue 2
    CHECK(ts.seg[t.s] == 1);
    CHECK(ts.seg[t.e] == 2);
    CHECK(ts.seg[t.s - 1] == kSegSpecial);
    CHECK(ts.seg[t.e + 1] == kSegSpecial);
  }
  SECTION("crossed selection is swapped") {
    SelectedSpan sel;
    sel.start_cue = 2;
    sel.end_cue = 1;
    const SpanTargets t = span_targets(ts, sel);
    CHECK_FALSE(t.skip);
    CHECK(ts.seg[t.s] == 1);
    CHECK(ts.seg[t.e] == 2);
    CHECK(t.s <= t.e);
  }
  SECTION("truncated-away cue skips the sample") {
    const TokenSequence cut = assemble_input(s, vocab, 20);  // cue 2 dropped
    SelectedSpan sel;
    sel.start_cue = 1;
    sel.end_cue = 2;
    const SpanTargets t = span_targets(cut, sel);
    CHECK(t.skip);
  }
}

TEST_CASE("spanpred: span loss at a one-hot optimum is near zero") {
  const std::vector<int> seg = {0, -1, 0, 1, 1, 2, 0};
  std::vector<double> s_logit(seg.size(), 0.0), e_logit(seg.size(), 0.0);
  s_logit[3] = 40.0;
  e_logit[5] = 40.0;
  const DecodeFixture f = make_fixture(seg, s_logit, e_logit);
  CHECK(span_loss(f.logits, 3, 5).item() == Approx(0.0).margin(1e-12));
  // uniform over 3 cue tokens costs ln 3
  const DecodeFixture u = make_fixture(seg, std::vector<double>(seg.size(), 0.0),
                                       std::vector<double>(seg.size(), 0.0));
  CHECK(span_loss(u.logits, 3, 5).item() == Approx(std::log(3.0)).epsilon(1e-9));
  CHECK_THROWS_AS(span_loss(f.logits, 0, 5), Error);   // masked position
  CHECK_THROWS_AS(span_loss(f.logits, 3, 99), Error);  // out of range
}
