#pragma once

#include <cstdint>

#include "tagv/model.hpp"
#include "tagv/optim.hpp"

namespace tagv {

// ---------------------------------------------------------------------------
// End-to-end gradient certification on a deliberately tiny fixture: small
// widths keep the 2-evaluations-per-probe cost of central differences down
// to fractions of a second, while still exercising every parameter group of
// the real pipeline (projections, similarity, fusion, highlight head,
// prompt, encoder, span heads).
// ---------------------------------------------------------------------------

inline TrainConfig micro_config(std::uint64_t seed = 7) {
  TrainConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.ffn_dim = 32;
  cfg.n = 8;
  cfg.d_v = 4;
  cfg.alpha = 0.25;
  cfg.lambda = 0.1;
  cfg.warmup_steps = 1;
  cfg.dropout = 0.1;  // irrelevant here: certification runs in eval mode
  cfg.batch_size = 1;
  cfg.max_tokens = 64;
  cfg.max_steps = 10;
  cfg.seed = seed;
  return cfg;
}

// Fixed two-cue sample with a six-token question. Channel 0 carries the
// usual answer signature; the rest is seeded noise.
inline Sample micro_sample(std::size_t d_v = 4) {
  Sample s;
  s.id = "micro-0000";
  s.duration_s = 20.0;
  s.question = "how to secure the splint ?";
  {
    SubtitleCue c1;
    c1.index = 1;
    c1.span = {1.0, 8.5};
    c1.text = "now we secure the splint gently";
    SubtitleCue c2;
    c2.index = 2;
    c2.span = {9.0, 18.0};
    c2.text = "then the gauze is set aside";
    s.track.cues = {c1, c2};
  }
  s.answer = {1.0, 8.5};
  s.features.n_src = 16;
  s.features.d_v = d_v;
  s.features.data.resize(s.features.n_src * d_v);
  RngState rng(3);
  for (std::size_t r = 0; r < s.features.n_src; ++r) {
    const double center = (static_cast<double>(r) + 0.5) / 16.0 * s.duration_s;
    const bool inside = center >= s.answer.start_s && center <= s.answer.end_s;
    s.features.data[r * d_v] = inside ? 2.0f : 0.0f;
    for (std::size_t c = 1; c < d_v; ++c) {
      s.features.data[r * d_v + c] = static_cast<float>(rng.uniform(-0.5, 0.5));
    }
  }
  return s;
}

inline Vocabulary micro_vocabulary() {
  Corpus c;
  c.samples.push_back(micro_sample());
  return build_vocabulary(c);
}

// Certify the full-model gradient at the given precision. The loss is the
// combined objective on the micro sample in eval mode (dropout off), so
// repeated evaluations are deterministic and finite differences are honest.
template <class Real>
GradCheckResult run_model_grad_check(const TrainConfig& cfg, double h,
                                     std::size_t probes_per_param = 32) {
  Model<Real> model(cfg, micro_vocabulary());
  model.init_params();
  const Sample sample = micro_sample(cfg.d_v);
  const PreparedSample<Real> ps = model.prepare(sample);
  if (ps.targets.skip) throw Error("gradcheck: micro sample lost its targets");
  const auto loss_fn = [&](const Leaves<Real>& leaves) {
    const ForwardResult<Real> fr =
        model.forward(ps, leaves, /*train=*/false, nullptr);
    return fr.total;
  };
  return grad_check(model.params(), loss_fn, h, probes_per_param);
}

// Default step sizes per precision: big enough to clear arithmetic noise in
// the loss evaluation, small enough to keep truncation error negligible.
inline double default_fd_step(bool f64) { return f64 ? 1e-4 : 1e-2; }
inline double grad_check_tolerance(bool f64) { return f64 ? 1e-5 : 1e-3; }

}  // namespace tagv
