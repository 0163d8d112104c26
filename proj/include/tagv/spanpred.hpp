#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tagv/config.hpp"
#include "tagv/corpus.hpp"
#include "tagv/error.hpp"
#include "tagv/optim.hpp"
#include "tagv/selection.hpp"
#include "tagv/tensor.hpp"

namespace tagv {

// ---------------------------------------------------------------------------
// Vocabulary and tokenization
// ---------------------------------------------------------------------------

// Fixed special ids; regular tokens start at 5 and are stored sorted, so a
// vocabulary is a pure function of its token set.
struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kVis = 4;
  static constexpr int kFirstRegular = 5;

  std::vector<std::string> tokens;  // id -> text, specials included
  std::unordered_map<std::string, int> ids;

  std::size_t size() const { return tokens.size(); }

  int lookup(const std::string& tok) const {
    const auto it = ids.find(tok);
    return it == ids.end() ? kUnk : it->second;
  }

  const std::string& text_of(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens.size()) {
      throw Error("vocabulary: id " + std::to_string(id) + " out of range");
    }
    return tokens[static_cast<std::size_t>(id)];
  }

  static Vocabulary from_regular_tokens(const std::vector<std::string>& regular) {
    Vocabulary v;
    v.tokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[VIS]"};
    for (const auto& t : regular) v.tokens.push_back(t);
    for (std::size_t i = 0; i < v.tokens.size(); ++i) {
      if (!v.ids.emplace(v.tokens[i], static_cast<int>(i)).second) {
        throw Error("vocabulary: duplicate token '" + v.tokens[i] + "'");
      }
    }
    return v;
  }

  std::vector<std::string> regular_tokens() const {
    return std::vector<std::string>(tokens.begin() + kFirstRegular, tokens.end());
  }
};

// Lowercase, split on whitespace, and break out ASCII punctuation as
// single-character tokens. Brackets count as punctuation, so no input text
// can smuggle a "[CLS]"-style token past the specials.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  const auto flush = [&]() {
    if (!word.empty()) {
      out.push_back(word);
      word.clear();
    }
  };
  for (char raw : text) {
    unsigned char c = static_cast<unsigned char>(raw);
    if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
    const bool space = (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v');
    const bool punct = (c < 0x80) && !space && !(c >= 'a' && c <= 'z') && !(c >= '0' && c <= '9');
    if (space) {
      flush();
    } else if (punct) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      word.push_back(static_cast<char>(c));
    }
  }
  flush();
  return out;
}

// Collect every question and cue token in a corpus, sorted and deduplicated.
inline Vocabulary build_vocabulary(const Corpus& corpus) {
  std::set<std::string> uniq;
  for (const Sample& s : corpus.samples) {
    for (auto& t : tokenize(s.question)) uniq.insert(std::move(t));
    for (const SubtitleCue& cue : s.track.cues) {
      for (auto& t : tokenize(cue.text)) uniq.insert(std::move(t));
    }
  }
  return Vocabulary::from_regular_tokens(std::vector<std::string>(uniq.begin(), uniq.end()));
}

// ---------------------------------------------------------------------------
// Encoder input assembly
// ---------------------------------------------------------------------------

// Per-token provenance: specials, question words, or 1-based cue ordinal.
inline constexpr int kSegSpecial = 0;
inline constexpr int kSegQuestion = -1;

struct TokenSequence {
  std::vector<int> ids;
  std::vector<int> seg;      // kSegSpecial / kSegQuestion / cue ordinal >= 1
  std::size_t vis_pos = 0;   // index of the [VIS] placeholder
  bool truncated = false;    // tail cues dropped to honor max_tokens
};

// Layout: [CLS] q_1..q_m [SEP] [VIS] [SEP] cue_1 tokens [SEP] cue_2 tokens
// [SEP] ...  The sequence is cut at max_tokens (tail truncation); if even
// the question plus framing does not fit, that is an error.
inline TokenSequence assemble_input(const Sample& sample, const Vocabulary& vocab,
                                    std::size_t max_tokens) {
  TokenSequence ts;
  const auto push = [&ts](int id, int seg) {
    ts.ids.push_back(id);
    ts.seg.push_back(seg);
  };
  push(Vocabulary::kCls, kSegSpecial);
  const auto q_tokens = tokenize(sample.question);
  if (q_tokens.empty()) throw Error("assemble_input: question of sample '" + sample.id + "' is empty");
  for (const auto& t : q_tokens) push(vocab.lookup(t), kSegQuestion);
  push(Vocabulary::kSep, kSegSpecial);
  ts.vis_pos = ts.ids.size();
  push(Vocabulary::kVis, kSegSpecial);
  push(Vocabulary::kSep, kSegSpecial);
  if (ts.ids.size() > max_tokens) {
    throw Error("assemble_input: question of sample '" + sample.id + "' exceeds max_tokens " +
                std::to_string(max_tokens) + " before any cue fits");
  }
  // Cues are appended whole (tokens plus their [SEP]) or not at all, so any
  // cue ordinal present in the sequence refers to a complete cue.
  for (std::size_t k = 0; k < sample.track.cues.size(); ++k) {
    const auto cue_tokens = tokenize(sample.track.cues[k].text);
    if (ts.ids.size() + cue_tokens.size() + 1 > max_tokens) {
      ts.truncated = true;
      break;
    }
    const int seg = static_cast<int>(k) + 1;
    for (const auto& t : cue_tokens) push(vocab.lookup(t), seg);
    push(Vocabulary::kSep, kSegSpecial);
  }
  return ts;
}

// ---------------------------------------------------------------------------
// Encoder with prompt injection
// ---------------------------------------------------------------------------

template <class Real>
struct EncoderTrace {
  std::size_t seq_len = 0;
  std::size_t n_heads = 0;
  // One row-major seq_len x seq_len matrix per (layer, head), layer-major.
  std::vector<std::vector<Real>> attn;
};

// Classic fixed sinusoidal position table, [len x d].
template <class Real>
std::vector<Real> sinusoid_positions(std::size_t len, std::size_t d) {
  std::vector<Real> pe(len * d);
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe[pos * d + i] = static_cast<Real>(std::sin(angle));
      if (i + 1 < d) pe[pos * d + i + 1] = static_cast<Real>(std::cos(angle));
    }
  }
  return pe;
}

// Pre-norm transformer encoder over the assembled sequence. The [VIS]
// placeholder's embedding is replaced by `prompt` after the embedding
// lookup, which is the only place video information enters the encoder.
template <class Real>
Tensor<Real> encode_sequence(const TokenSequence& ts, const Tensor<Real>& prompt,
                             const Leaves<Real>& leaves, const TrainConfig& cfg, RngState* rng,
                             bool train, EncoderTrace<Real>* trace = nullptr) {
  if (ts.ids.empty()) throw Error("encode_sequence: empty token sequence");
  const std::size_t len = ts.ids.size();
  const std::size_t d = cfg.d_model;

  Tensor<Real> x = embed_rows(leaves.at("enc.embed"), ts.ids);
  x = replace_row(x, ts.vis_pos, prompt);
  x = add(x, Tensor<Real>::constant({len, d}, sinusoid_positions<Real>(len, d)));
  if (train && cfg.dropout > 0.0) {
    if (!rng) throw Error("encode_sequence: dropout requires an rng in training mode");
    x = dropout(x, cfg.dropout, *rng, train);
  }

  if (trace) {
    trace->seq_len = len;
    trace->n_heads = cfg.n_heads;
    trace->attn.clear();
  }

  for (std::size_t layer = 0; layer < cfg.n_layers; ++layer) {
    const std::string p = "enc.l" + std::to_string(layer) + ".";
    MhaParams<Real> mha{leaves.at(p + "attn.wq"), leaves.at(p + "attn.bq"),
                        leaves.at(p + "attn.wk"), leaves.at(p + "attn.bk"),
                        leaves.at(p + "attn.wv"), leaves.at(p + "attn.bv"),
                        leaves.at(p + "attn.wo"), leaves.at(p + "attn.bo")};
    Tensor<Real> h = layer_norm(x, leaves.at(p + "ln1.g"), leaves.at(p + "ln1.b"));
    Tensor<Real> a = multi_head_attention(h, h, h, mha, cfg.n_heads, nullptr,
                                          trace ? &trace->attn : nullptr);
    if (train && cfg.dropout > 0.0) a = dropout(a, cfg.dropout, *rng, train);
    x = add(x, a);
    Tensor<Real> f = layer_norm(x, leaves.at(p + "ln2.g"), leaves.at(p + "ln2.b"));
    f = linear(f, leaves.at(p + "ffn.w1"), leaves.at(p + "ffn.b1"));
    f = gelu(f);
    f = linear(f, leaves.at(p + "ffn.w2"), leaves.at(p + "ffn.b2"));
    if (train && cfg.dropout > 0.0) f = dropout(f, cfg.dropout, *rng, train);
    x = add(x, f);
  }
  return layer_norm(x, leaves.at("enc.final_ln.g"), leaves.at("enc.final_ln.b"));
}

// ---------------------------------------------------------------------------
// Span heads, decoding, targets, loss
// ---------------------------------------------------------------------------

template <class Real>
struct SpanLogits {
  Tensor<Real> start_logp;          // masked log-softmax over the sequence
  Tensor<Real> end_logp;
  std::vector<std::uint8_t> valid;  // 1 where the position is a cue token
};

// Project encoder states [len x d] to start/end distributions restricted to
// cue tokens. Positions outside cues get probability exactly zero.
template <class Real>
SpanLogits<Real> span_logits(const Tensor<Real>& h, const TokenSequence& ts,
                             const Tensor<Real>& w1, const Tensor<Real>& b1,
                             const Tensor<Real>& w2, const Tensor<Real>& b2) {
  detail::require_matrix("span_logits", h);
  const std::size_t len = h.dim(0), d = h.dim(1);
  if (ts.seg.size() != len) {
    throw ShapeError("span_logits: sequence length " + std::to_string(ts.seg.size()) +
                     " vs encoder states " + std::to_string(len));
  }
  SpanLogits<Real> out;
  out.valid.resize(len);
  std::size_t n_cue = 0;
  for (std::size_t i = 0; i < len; ++i) {
    out.valid[i] = ts.seg[i] >= 1 ? 1 : 0;
    n_cue += out.valid[i];
  }
  if (n_cue == 0) {
    throw Error("span_logits: sequence contains no cue tokens to point at");
  }
  const Tensor<Real> l1 = reshape(linear(h, reshape(w1, {d, 1}), b1), {len});
  const Tensor<Real> l2 = reshape(linear(h, reshape(w2, {d, 1}), b2), {len});
  out.start_logp = masked_log_softmax(l1, out.valid);
  out.end_logp = masked_log_softmax(l2, out.valid);
  return out;
}

struct SpanPrediction {
  std::size_t s = 0;        // token indices into the sequence
  std::size_t e = 0;
  double start_s = 0.0;     // cue-boundary timestamps
  double end_s = 0.0;
  int start_cue = 0;        // 1-based cue ordinals
  int end_cue = 0;
  bool truncated = false;
};

// Turn start/end distributions into a token span and cue timestamps.
//
//   paper: independent argmaxes of the two distributions; if they cross,
//          fall back to the joint rule below.
//   joint: maximize p_start[s] * p_end[e] over ordered pairs s <= e,
//          optionally within a window (e - s <= max_span_tokens when > 0).
//
// Ties resolve to the smallest s, then smallest e. The returned timestamps
// are the start of the cue containing s and the end of the cue containing e.
template <class Real>
SpanPrediction decode_span(const SpanLogits<Real>& logits, const TokenSequence& ts,
                           const SubtitleTrack& track, DecodeMode mode,
                           std::size_t max_span_tokens = 0) {
  const std::size_t len = logits.valid.size();
  if (ts.seg.size() != len) throw ShapeError("decode_span: sequence/logits length mismatch");
  std::vector<double> p1(len, 0.0), p2(len, 0.0);
  for (std::size_t i = 0; i < len; ++i) {
    if (logits.valid[i]) {
      p1[i] = std::exp(static_cast<double>(logits.start_logp.value()[i]));
      p2[i] = std::exp(static_cast<double>(logits.end_logp.value()[i]));
    }
  }

  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  const auto joint_pick = [&]() -> std::pair<std::size_t, std::size_t> {
    // Unwindowed: suffix argmax of p2 makes this O(len); ties keep the
    // smallest index, so scanning downward uses >=.
    std::vector<std::size_t> best_end_from;
    if (max_span_tokens == 0) {
      best_end_from.assign(len, kNone);
      std::size_t best = kNone;
      for (std::size_t i = len; i-- > 0;) {
        if (logits.valid[i] && (best == kNone || p2[i] >= p2[best])) best = i;
        best_end_from[i] = best;
      }
    }
    std::size_t bs = 0, be = 0;
    double best_score = -1.0;
    for (std::size_t s = 0; s < len; ++s) {
      if (!logits.valid[s]) continue;
      std::size_t e;
      if (max_span_tokens == 0) {
        e = best_end_from[s];
      } else {
        e = kNone;
        const std::size_t hi = std::min(len - 1, s + max_span_tokens);
        for (std::size_t j = s; j <= hi; ++j) {
          if (logits.valid[j] && (e == kNone || p2[j] > p2[e])) e = j;
        }
      }
      if (e == kNone) continue;
      const double score = p1[s] * p2[e];
      if (score > best_score) {
        best_score = score;
        bs = s;
        be = e;
      }
    }
    if (best_score < 0.0) throw Error("decode_span: no admissible span");
    return {bs, be};
  };

  std::size_t s = 0, e = 0;
  if (mode == DecodeMode::joint) {
    std::tie(s, e) = joint_pick();
  } else {
    // independent argmaxes over cue tokens, first maximum wins
    double b1 = -1.0, b2 = -1.0;
    for (std::size_t i = 0; i < len; ++i) {
      if (!logits.valid[i]) continue;
      if (p1[i] > b1) {
        b1 = p1[i];
        s = i;
      }
      if (p2[i] > b2) {
        b2 = p2[i];
        e = i;
      }
    }
    if (b1 < 0.0) throw Error("decode_span: no cue tokens to decode");
    if (e < s) std::tie(s, e) = joint_pick();
  }

  SpanPrediction pred;
  pred.s = s;
  pred.e = e;
  pred.truncated = ts.truncated;
  pred.start_cue = ts.seg[s];
  pred.end_cue = ts.seg[e];
  if (pred.start_cue < 1 || pred.end_cue < 1) {
    throw Error("decode_span: decoded position is not a cue token");
  }
  if (static_cast<std::size_t>(pred.end_cue) > track.cues.size()) {
    throw Error("decode_span: cue ordinal exceeds track");
  }
  pred.start_s = track.cues[static_cast<std::size_t>(pred.start_cue) - 1].span.start_s;
  pred.end_s = track.cues[static_cast<std::size_t>(pred.end_cue) - 1].span.end_s;
  return pred;
}

struct SpanTargets {
  std::size_t s = 0;  // first token of the selected start cue
  std::size_t e = 0;  // last token of the selected end cue
  bool skip = false;  // a target cue fell off the truncated sequence
};

// Map a cue-level selection onto token positions. A crossed selection
// (end cue before start cue) is repaired by swapping. If truncation removed
// a target cue, the sample cannot supervise span prediction and is skipped.
inline SpanTargets span_targets(const TokenSequence& ts, const SelectedSpan& sel) {
  int start_cue = sel.start_cue;
  int end_cue = sel.end_cue;
  if (end_cue < start_cue) std::swap(start_cue, end_cue);
  SpanTargets t;
  bool found_s = false, found_e = false;
  for (std::size_t i = 0; i < ts.seg.size(); ++i) {
    if (ts.seg[i] == start_cue && !found_s) {
      t.s = i;
      found_s = true;
    }
    if (ts.seg[i] == end_cue) {
      t.e = i;
      found_e = true;
    }
  }
  t.skip = !(found_s && found_e);
  return t;
}

// Mean of the start and end cross-entropies at the target positions.
template <class Real>
Tensor<Real> span_loss(const SpanLogits<Real>& logits, std::size_t s_star, std::size_t e_star) {
  if (s_star >= logits.valid.size() || e_star >= logits.valid.size()) {
    throw Error("span_loss: target outside the sequence");
  }
  if (!logits.valid[s_star] || !logits.valid[e_star]) {
    throw Error("span_loss: target sits on a masked position");
  }
  const Tensor<Real> nll_s = neg(pick(logits.start_logp, s_star));
  const Tensor<Real> nll_e = neg(pick(logits.end_logp, e_star));
  return scale(add(nll_s, nll_e), 0.5);
}

}  // namespace tagv
