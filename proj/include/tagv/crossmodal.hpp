#pragma once

#include <vector>

#include "tagv/tensor.hpp"

namespace tagv {

// Temporal convolution over kernel windows of this many frames/tokens; the
// width used by both the visual projection and the highlight head.
inline constexpr std::size_t kConvKernel = 7;

// ---------------------------------------------------------------------------
// Modality projections into the shared d-dimensional space
// ---------------------------------------------------------------------------

// Frame features [n x d_v] -> [n x d] through a width-7 temporal convolution
// followed by dropout.
template <class Real>
Tensor<Real> visual_projection(const Tensor<Real>& feats, const Tensor<Real>& kernel,
                               const Tensor<Real>& bias, double dropout_p, RngState* rng,
                               bool train) {
  Tensor<Real> v = conv1d_same(feats, kernel, bias);
  if (train && dropout_p > 0.0) {
    if (!rng) throw Error("visual_projection: dropout requires an rng in training mode");
    v = dropout(v, dropout_p, *rng, train);
  }
  return v;
}

// Token embeddings [m x d] -> [m x d], a learned affine map.
template <class Real>
Tensor<Real> text_projection(const Tensor<Real>& tokens, const Tensor<Real>& w,
                             const Tensor<Real>& b) {
  return linear(tokens, w, b);
}

// ---------------------------------------------------------------------------
// Trilinear similarity
// ---------------------------------------------------------------------------

// S[i][j] = w . [v_i ; q_j ; v_i*q_j] with w of size 3d, split into three
// d-sized blocks. Fused into one node: the three terms share loops, and the
// backward writes each operand's gradient directly.
template <class Real>
Tensor<Real> trilinear_scores(const Tensor<Real>& v, const Tensor<Real>& q,
                              const Tensor<Real>& w) {
  detail::require_matrix("trilinear_scores", v);
  detail::require_matrix("trilinear_scores", q);
  detail::require_vector("trilinear_scores", w);
  const std::size_t n = v.dim(0), d = v.dim(1), m = q.dim(0);
  if (q.dim(1) != d) {
    throw ShapeError("trilinear_scores: width mismatch " + shape_str(v.dims()) + " vs " +
                     shape_str(q.dims()));
  }
  if (w.dim(0) != 3 * d) {
    throw ShapeError("trilinear_scores: weight size " + std::to_string(w.dim(0)) +
                     ", expected " + std::to_string(3 * d));
  }
  const Real* wv = w.value().data();      // v block
  const Real* wq = wv + d;                // q block
  const Real* wc = wv + 2 * d;            // elementwise product block
  std::vector<Real> sv(n, Real(0));       // per-frame bias  w_v . v_i
  std::vector<Real> sq(m, Real(0));       // per-token bias  w_q . q_j
  for (std::size_t i = 0; i < n; ++i) {
    const Real* row = v.value().data() + i * d;
    for (std::size_t c = 0; c < d; ++c) sv[i] += wv[c] * row[c];
  }
  for (std::size_t j = 0; j < m; ++j) {
    const Real* row = q.value().data() + j * d;
    for (std::size_t c = 0; c < d; ++c) sq[j] += wq[c] * row[c];
  }
  std::vector<Real> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    const Real* vrow = v.value().data() + i * d;
    for (std::size_t j = 0; j < m; ++j) {
      const Real* qrow = q.value().data() + j * d;
      Real cross = Real(0);
      for (std::size_t c = 0; c < d; ++c) cross += wc[c] * vrow[c] * qrow[c];
      out[i * m + j] = sv[i] + sq[j] + cross;
    }
  }
  return detail::make_op<Real>(
      "trilinear_scores", Shape{n, m}, std::move(out), {v, q, w},
      [pv = v.node(), pq = q.node(), pw = w.node(), n, m, d](TensorNode<Real>* self) {
        return [self, pv, pq, pw, n, m, d]() {
          const Real* g = self->grad.data();
          const Real* wv = pw->value.data();
          const Real* wq = wv + d;
          const Real* wc = wv + 2 * d;
          // row/column sums of the incoming gradient
          std::vector<Real> grow(n, Real(0)), gcol(m, Real(0));
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
              grow[i] += g[i * m + j];
              gcol[j] += g[i * m + j];
            }
          }
          if (pw->requires_grad) {
            pw->ensure_grad();
            Real* dw = pw->grad.data();
            for (std::size_t c = 0; c < d; ++c) {
              Real acc_v = Real(0), acc_q = Real(0), acc_c = Real(0);
              for (std::size_t i = 0; i < n; ++i) acc_v += grow[i] * pv->value[i * d + c];
              for (std::size_t j = 0; j < m; ++j) acc_q += gcol[j] * pq->value[j * d + c];
              for (std::size_t i = 0; i < n; ++i) {
                const Real vid = pv->value[i * d + c];
                for (std::size_t j = 0; j < m; ++j) {
                  acc_c += g[i * m + j] * vid * pq->value[j * d + c];
                }
              }
              dw[c] += acc_v;
              dw[d + c] += acc_q;
              dw[2 * d + c] += acc_c;
            }
          }
          if (pv->requires_grad) {
            pv->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
              for (std::size_t c = 0; c < d; ++c) {
                Real acc = wv[c] * grow[i];
                for (std::size_t j = 0; j < m; ++j) {
                  acc += wc[c] * g[i * m + j] * pq->value[j * d + c];
                }
                pv->grad[i * d + c] += acc;
              }
            }
          }
          if (pq->requires_grad) {
            pq->ensure_grad();
            for (std::size_t j = 0; j < m; ++j) {
              for (std::size_t c = 0; c < d; ++c) {
                Real acc = wq[c] * gcol[j];
                for (std::size_t i = 0; i < n; ++i) {
                  acc += wc[c] * g[i * m + j] * pv->value[i * d + c];
                }
                pq->grad[j * d + c] += acc;
              }
            }
          }
        };
      });
}

// Raw similarity plus its two normalizations: s_row softmaxes each frame's
// row over question tokens, s_col softmaxes each token's column over frames.
template <class Real>
struct SimilarityMatrix {
  Tensor<Real> s;      // [n x m]
  Tensor<Real> s_row;  // rows sum to 1
  Tensor<Real> s_col;  // columns sum to 1
};

template <class Real>
SimilarityMatrix<Real> trilinear_similarity(const Tensor<Real>& v, const Tensor<Real>& q,
                                            const Tensor<Real>& w) {
  SimilarityMatrix<Real> sim;
  sim.s = trilinear_scores(v, q, w);
  sim.s_row = softmax(sim.s, 1);
  sim.s_col = softmax(sim.s, 0);
  return sim;
}

// ---------------------------------------------------------------------------
// Context-query attention
// ---------------------------------------------------------------------------

// Fuse question context into the frame sequence:
//   A = S_row Q                  (question summary per frame)
//   B = S_row S_col^T V          (frame summary routed through the question)
//   out = FFN([V ; A ; V*A ; V*B])   with FFN a single affine 4d -> d map.
template <class Real>
Tensor<Real> context_query_attention(const Tensor<Real>& v, const Tensor<Real>& q,
                                     const SimilarityMatrix<Real>& sim, const Tensor<Real>& ffn_w,
                                     const Tensor<Real>& ffn_b) {
  const Tensor<Real> a = matmul(sim.s_row, q);
  const Tensor<Real> b = matmul(matmul(sim.s_row, transpose(sim.s_col)), v);
  const Tensor<Real> cat = concat<Real>({v, a, mul(v, a), mul(v, b)}, 1);
  return linear(cat, ffn_w, ffn_b);
}

}  // namespace tagv
