#pragma once

#include <cstdint>
#include <vector>

#include "tagv/corpus.hpp"
#include "tagv/crossmodal.hpp"
#include "tagv/error.hpp"
#include "tagv/tensor.hpp"

namespace tagv {

// ---------------------------------------------------------------------------
// Highlight head: turn the fused frame sequence into per-frame relevance
// probabilities, supervise them with an extended answer mask, and squeeze
// them into a single prompt embedding for the encoder.
// ---------------------------------------------------------------------------

// Attention-pool question tokens [m x d] into one vector [d] using a learned
// scoring vector u: h = softmax(Q u)^T Q.
template <class Real>
Tensor<Real> pool_question(const Tensor<Real>& q, const Tensor<Real>& u) {
  detail::require_matrix("pool_question", q);
  detail::require_vector("pool_question", u);
  const std::size_t m = q.dim(0), d = q.dim(1);
  if (u.dim(0) != d) {
    throw ShapeError("pool_question: score vector size " + std::to_string(u.dim(0)) +
                     " for width " + std::to_string(d));
  }
  const Tensor<Real> scores = reshape(matmul(q, reshape(u, {d, 1})), {m});
  const Tensor<Real> attn = softmax(scores, 0);
  return reshape(matmul(reshape(attn, {1, m}), q), {d});
}

// Per-frame highlight probabilities in (0, 1): concatenate the pooled
// question onto every frame, run a width-7 conv down to one channel, squash.
template <class Real>
Tensor<Real> highlight_scores(const Tensor<Real>& pooled_q, const Tensor<Real>& fused,
                              const Tensor<Real>& kernel, const Tensor<Real>& bias) {
  detail::require_matrix("highlight_scores", fused);
  const std::size_t n = fused.dim(0);
  const Tensor<Real> cat = concat<Real>({repeat_row(pooled_q, n), fused}, 1);
  const Tensor<Real> logits = conv1d_same(cat, kernel, bias);
  return sigmoid(reshape(logits, {n}));
}

// Binary supervision target for the highlight scores.
struct HighlightMask {
  std::vector<std::uint8_t> bits;  // one per frame
  double t_highlight = 0.0;        // answer span length (seconds)
  double t_extend = 0.0;           // extended span length (seconds)
  double alpha = 0.0;
};

// Frame i covers the instant (i + 0.5) / n * duration. The answer span is
// stretched to (alpha + 1) times its length, symmetrically about its center
// and clipped to the video, and frames whose instant falls inside the closed
// extended window get a 1.
inline HighlightMask build_extended_mask(TimeSpan answer, double duration_s, std::size_t n,
                                         double alpha) {
  if (n == 0) throw Error("build_extended_mask: n must be >= 1");
  if (!(duration_s > 0.0)) throw Error("build_extended_mask: duration must be positive");
  if (alpha < 0.0) throw Error("build_extended_mask: alpha must be >= 0");
  if (!(answer.start_s <= answer.end_s)) {
    throw Error("build_extended_mask: answer start exceeds end");
  }
  HighlightMask mask;
  mask.alpha = alpha;
  mask.t_highlight = answer.length();
  mask.t_extend = mask.t_highlight * (alpha + 1.0);
  const double center = 0.5 * (answer.start_s + answer.end_s);
  const double lo = std::max(0.0, center - 0.5 * mask.t_extend);
  const double hi = std::min(duration_s, center + 0.5 * mask.t_extend);
  mask.bits.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = (static_cast<double>(i) + 0.5) / static_cast<double>(n) * duration_s;
    mask.bits[i] = (t >= lo && t <= hi) ? 1 : 0;
  }
  return mask;
}

// Binary cross-entropy between highlight probabilities and the mask.
template <class Real>
Tensor<Real> highlight_loss(const Tensor<Real>& scores, const HighlightMask& mask) {
  detail::require_vector("highlight_loss", scores);
  if (scores.dim(0) != mask.bits.size()) {
    throw ShapeError("highlight_loss: " + std::to_string(scores.dim(0)) + " scores vs " +
                     std::to_string(mask.bits.size()) + " mask bits");
  }
  std::vector<Real> targets(mask.bits.size());
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = static_cast<Real>(mask.bits[i]);
  return binary_cross_entropy(scores, targets);
}

// Affine map from the n highlight scores to one d_model-sized embedding, the
// visual prompt token injected into the encoder input.
template <class Real>
Tensor<Real> project_prompt_token(const Tensor<Real>& scores, const Tensor<Real>& w,
                                  const Tensor<Real>& b) {
  detail::require_vector("project_prompt_token", scores);
  detail::require_matrix("project_prompt_token", w);
  const std::size_t n = scores.dim(0);
  if (w.dim(0) != n) {
    throw ShapeError("project_prompt_token: weight rows " + std::to_string(w.dim(0)) +
                     " vs " + std::to_string(n) + " scores");
  }
  const std::size_t d = w.dim(1);
  return reshape(linear(reshape(scores, {1, n}), w, b), {d});
}

}  // namespace tagv
