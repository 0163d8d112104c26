#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tagv/config.hpp"
#include "tagv/corpus.hpp"
#include "tagv/crossmodal.hpp"
#include "tagv/highlight.hpp"
#include "tagv/optim.hpp"
#include "tagv/selection.hpp"
#include "tagv/spanpred.hpp"
#include "tagv/synthetic.hpp"
#include "tagv/tensor.hpp"

namespace tagv {

// ---------------------------------------------------------------------------
// Whole pipeline wired together:
//   frames --conv--> V --\
//                         trilinear S --CQA--> fused --conv+sigmoid--> s_h
//   question --embed--> Q /                                  |
//                                                     prompt = W s_h
//   [CLS] q [SEP] [VIS] [SEP] cues... --encoder(prompt at [VIS])--> states
//   states --two heads + cue mask--> start/end distributions
// ---------------------------------------------------------------------------

// Everything about one sample that is independent of the parameters.
template <class Real>
struct PreparedSample {
  Sample src;  // owned copy; prepared samples outlive their corpus
  TokenSequence tokens;
  std::vector<int> question_ids;
  std::vector<Real> frames;     // resampled features, n x d_v
  HighlightMask mask;
  SelectedSpan selected;
  SpanTargets targets;
};

template <class Real>
PreparedSample<Real> prepare_sample(const Sample& sample, const Vocabulary& vocab,
                                    const TrainConfig& cfg) {
  PreparedSample<Real> ps;
  ps.src = sample;
  ps.tokens = assemble_input(sample, vocab, cfg.max_tokens);
  for (std::size_t i = 0; i < ps.tokens.ids.size(); ++i) {
    if (ps.tokens.seg[i] == kSegQuestion) ps.question_ids.push_back(ps.tokens.ids[i]);
  }
  if (sample.features.d_v != cfg.d_v) {
    throw ConfigError("sample '" + sample.id + "': feature channels " +
                      std::to_string(sample.features.d_v) + " but config d_v " +
                      std::to_string(cfg.d_v));
  }
  const VisualFeatures resampled = resample_features(sample.features, cfg.n);
  ps.frames.assign(resampled.data.begin(), resampled.data.end());
  ps.mask = build_extended_mask(sample.answer, sample.duration_s, cfg.n, cfg.alpha);
  ps.selected = select_subtitle_span(sample.track, sample.answer.start_s, sample.answer.end_s);
  ps.targets = span_targets(ps.tokens, ps.selected);
  return ps;
}

// Optional capture of intermediate attention surfaces for inspection.
template <class Real>
struct ModelTrace {
  std::vector<Real> s_row;  // frame-over-token attention, n x m
  std::size_t s_row_n = 0, s_row_m = 0;
  std::vector<Real> s_h;    // highlight scores, n
  EncoderTrace<Real> encoder;
};

template <class Real>
struct ForwardResult {
  Tensor<Real> total;     // lambda * highlight + span (undefined when skipped)
  Tensor<Real> span;      // undefined when skipped
  Tensor<Real> highlight;
  Tensor<Real> scores;    // highlight probabilities, n
  SpanLogits<Real> logits;
  bool skipped = false;   // truncation removed a span target
};

template <class Real>
class Model {
 public:
  Model(TrainConfig cfg, Vocabulary vocab) : cfg_(std::move(cfg)), vocab_(std::move(vocab)) {
    validate_config(cfg_);
    register_params();
  }

  const TrainConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParamStore<Real>& params() { return store_; }
  const ParamStore<Real>& params() const { return store_; }

  PreparedSample<Real> prepare(const Sample& sample) const {
    return prepare_sample<Real>(sample, vocab_, cfg_);
  }

  // Build the full loss graph for one sample on the given leaves.
  // `prompt_override`, when set, replaces the computed prompt embedding at
  // injection time (the highlight path is still evaluated).
  ForwardResult<Real> forward(const PreparedSample<Real>& ps, const Leaves<Real>& leaves,
                              bool train, RngState* rng,
                              const std::vector<Real>* prompt_override = nullptr,
                              ModelTrace<Real>* trace = nullptr) const {
    ForwardResult<Real> out;

    // question tokens -> shared space
    Tensor<Real> q = embed_rows(leaves.at("cm.text_embed"), ps.question_ids);
    q = text_projection(q, leaves.at("cm.text_proj.w"), leaves.at("cm.text_proj.b"));

    // frames -> shared space
    const Tensor<Real> frames =
        Tensor<Real>::constant({cfg_.n, cfg_.d_v}, ps.frames);
    const Tensor<Real> v = visual_projection(frames, leaves.at("cm.vis_conv.k"),
                                             leaves.at("cm.vis_conv.b"), cfg_.dropout, rng, train);

    // cross-modal fusion
    const SimilarityMatrix<Real> sim = trilinear_similarity(v, q, leaves.at("cm.w_s"));
    const Tensor<Real> fused =
        context_query_attention(v, q, sim, leaves.at("cm.cqa.w"), leaves.at("cm.cqa.b"));

    // highlight scores and prompt
    const Tensor<Real> pooled = pool_question(q, leaves.at("hl.pool_u"));
    out.scores = highlight_scores(pooled, fused, leaves.at("hl.conv.k"), leaves.at("hl.conv.b"));
    Tensor<Real> prompt =
        project_prompt_token(out.scores, leaves.at("hl.prompt.w"), leaves.at("hl.prompt.b"));
    if (prompt_override) {
      if (prompt_override->size() != cfg_.d_model) {
        throw ShapeError("forward: prompt override size mismatch");
      }
      prompt = Tensor<Real>::constant({cfg_.d_model}, *prompt_override);
    }

    if (trace) {
      trace->s_row = sim.s_row.value();
      trace->s_row_n = sim.s_row.dim(0);
      trace->s_row_m = sim.s_row.dim(1);
      trace->s_h = out.scores.value();
    }

    // encoder + span heads
    const Tensor<Real> states =
        encode_sequence(ps.tokens, prompt, leaves, cfg_, rng, train,
                        trace ? &trace->encoder : nullptr);
    out.logits = span_logits(states, ps.tokens, leaves.at("span.w1"), leaves.at("span.b1"),
                             leaves.at("span.w2"), leaves.at("span.b2"));

    // losses
    out.highlight = highlight_loss(out.scores, ps.mask);
    out.skipped = ps.targets.skip;
    if (!out.skipped) {
      out.span = span_loss(out.logits, ps.targets.s, ps.targets.e);
      out.total = add(scale(out.highlight, cfg_.lambda), out.span);
    }
    return out;
  }

  // Evaluation-mode prediction straight from the store (constant leaves, no
  // gradient bookkeeping, no dropout).
  SpanPrediction predict(const PreparedSample<Real>& ps, DecodeMode mode,
                         ModelTrace<Real>* trace = nullptr) const {
    const Leaves<Real> leaves = Leaves<Real>::from_store(store_, /*requires_grad=*/false);
    const ForwardResult<Real> fr = forward(ps, leaves, /*train=*/false, nullptr, nullptr, trace);
    return decode_span(fr.logits, ps.tokens, ps.src.track, mode);
  }

  // Seeded uniform init; draw order is registration order, so a seed pins
  // every initial value.
  void init_params() {
    RngState rng = RngState::derive(cfg_.seed, 0x1A17u);
    for (const auto& name : store_.names()) {
      auto& e = store_.at(name);
      fill_init(name, e, rng);
    }
  }

 private:
  void register_params() {
    const std::size_t d = cfg_.d_model;
    const std::size_t vsz = vocab_.size();
    const auto zeros = [](std::size_t n) { return std::vector<Real>(n, Real(0)); };

    store_.add("cm.text_embed", {vsz, d}, zeros(vsz * d));
    store_.add("cm.text_proj.w", {d, d}, zeros(d * d));
    store_.add("cm.text_proj.b", {d}, zeros(d));
    store_.add("cm.vis_conv.k", {kConvKernel, cfg_.d_v, d}, zeros(kConvKernel * cfg_.d_v * d));
    store_.add("cm.vis_conv.b", {d}, zeros(d));
    store_.add("cm.w_s", {3 * d}, zeros(3 * d));
    store_.add("cm.cqa.w", {4 * d, d}, zeros(4 * d * d));
    store_.add("cm.cqa.b", {d}, zeros(d));
    store_.add("hl.pool_u", {d}, zeros(d));
    store_.add("hl.conv.k", {kConvKernel, 2 * d, 1}, zeros(kConvKernel * 2 * d));
    store_.add("hl.conv.b", {1}, zeros(1));
    store_.add("hl.prompt.w", {cfg_.n, d}, zeros(cfg_.n * d));
    store_.add("hl.prompt.b", {d}, zeros(d));
    store_.add("enc.embed", {vsz, d}, zeros(vsz * d));
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      const std::string p = "enc.l" + std::to_string(l) + ".";
      store_.add(p + "attn.wq", {d, d}, zeros(d * d));
      store_.add(p + "attn.bq", {d}, zeros(d));
      store_.add(p + "attn.wk", {d, d}, zeros(d * d));
      store_.add(p + "attn.bk", {d}, zeros(d));
      store_.add(p + "attn.wv", {d, d}, zeros(d * d));
      store_.add(p + "attn.bv", {d}, zeros(d));
      store_.add(p + "attn.wo", {d, d}, zeros(d * d));
      store_.add(p + "attn.bo", {d}, zeros(d));
      store_.add(p + "ln1.g", {d}, zeros(d));
      store_.add(p + "ln1.b", {d}, zeros(d));
      store_.add(p + "ffn.w1", {d, cfg_.ffn_dim}, zeros(d * cfg_.ffn_dim));
      store_.add(p + "ffn.b1", {cfg_.ffn_dim}, zeros(cfg_.ffn_dim));
      store_.add(p + "ffn.w2", {cfg_.ffn_dim, d}, zeros(cfg_.ffn_dim * d));
      store_.add(p + "ffn.b2", {d}, zeros(d));
      store_.add(p + "ln2.g", {d}, zeros(d));
      store_.add(p + "ln2.b", {d}, zeros(d));
    }
    store_.add("enc.final_ln.g", {d}, zeros(d));
    store_.add("enc.final_ln.b", {d}, zeros(d));
    store_.add("span.w1", {d}, zeros(d));
    store_.add("span.b1", {1}, zeros(1));
    store_.add("span.w2", {d}, zeros(d));
    store_.add("span.b2", {1}, zeros(1));
  }

  static bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  }

  void fill_init(const std::string& name, ParamEntry<Real>& e, RngState& rng) const {
    // Layer-norm gains start at one, every bias at zero; matrices get
    // Xavier-uniform ranges from their fan-in/fan-out.
    if (ends_with(name, "ln1.g") || ends_with(name, "ln2.g") || ends_with(name, "final_ln.g")) {
      std::fill(e.value.begin(), e.value.end(), Real(1));
      return;
    }
    if (ends_with(name, ".b") || ends_with(name, ".b1") || ends_with(name, ".b2") ||
        ends_with(name, ".bq") || ends_with(name, ".bk") || ends_with(name, ".bv") ||
        ends_with(name, ".bo")) {
      return;  // stays zero
    }

    double fan_in = 0.0, fan_out = 0.0;
    if (e.dims.size() == 3) {  // conv kernel k x c_in x c_out
      fan_in = static_cast<double>(e.dims[0] * e.dims[1]);
      fan_out = static_cast<double>(e.dims[0] * e.dims[2]);
    } else if (e.dims.size() == 2) {
      fan_in = static_cast<double>(e.dims[0]);
      fan_out = static_cast<double>(e.dims[1]);
    } else {  // vectors: scoring/weight vectors reduce to one output
      fan_in = static_cast<double>(e.dims[0]);
      fan_out = 1.0;
    }
    double a = std::sqrt(6.0 / (fan_in + fan_out));
    if (name == "cm.text_embed" || name == "enc.embed") {
      // embeddings: uniform with std 1/sqrt(d)
      a = std::sqrt(3.0 / static_cast<double>(e.dims[1]));
    }
    for (auto& x : e.value) x = static_cast<Real>(rng.uniform(-a, a));
  }

  TrainConfig cfg_;
  Vocabulary vocab_;
  ParamStore<Real> store_;
};

}  // namespace tagv
