#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "tagv/checkpoint.hpp"
#include "tagv/corpus.hpp"
#include "tagv/error.hpp"
#include "tagv/model.hpp"
#include "tagv/rng.hpp"

namespace tagv {

// ---------------------------------------------------------------------------
// Interval metrics
// ---------------------------------------------------------------------------

// Interval intersection-over-union; 0 when the union has zero length.
inline double iou(TimeSpan a, TimeSpan b) {
  const double inter = std::max(0.0, std::min(a.end_s, b.end_s) - std::max(a.start_s, b.start_s));
  const double uni = a.length() + b.length() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline double miou_pct(const std::vector<double>& ious) {
  if (ious.empty()) throw Error("miou: no samples");
  double sum = 0.0;
  for (double v : ious) sum += v;
  return 100.0 * sum / static_cast<double>(ious.size());
}

// Percentage of samples whose IoU reaches mu. The conventional boundary is
// inclusive (iou >= mu counts); strict mode is available for comparisons.
inline double recall_at_iou_pct(const std::vector<double>& ious, double mu, bool strict = false) {
  if (ious.empty()) throw Error("recall_at_iou: no samples");
  std::size_t hits = 0;
  for (double v : ious) hits += strict ? (v > mu) : (v >= mu);
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ious.size());
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline constexpr std::array<double, 3> kRecallThresholds = {0.3, 0.5, 0.7};

struct SampleEval {
  std::string id;
  double iou = 0.0;
  SpanPrediction pred;
};

struct MetricsReport {
  std::vector<SampleEval> per_sample;
  double miou = 0.0;
  std::array<double, 3> recall = {0.0, 0.0, 0.0};  // at kRecallThresholds
};

inline MetricsReport make_report(std::vector<SampleEval> rows) {
  MetricsReport rep;
  rep.per_sample = std::move(rows);
  std::vector<double> ious;
  ious.reserve(rep.per_sample.size());
  for (const auto& r : rep.per_sample) ious.push_back(r.iou);
  rep.miou = miou_pct(ious);
  for (std::size_t i = 0; i < kRecallThresholds.size(); ++i) {
    rep.recall[i] = recall_at_iou_pct(ious, kRecallThresholds[i]);
  }
  return rep;
}

inline std::string format_prediction_fields(const std::string& id, const SpanPrediction& p) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s\t%zu\t%zu\t%.3f\t%.3f\t%d\t%d\t%d", id.c_str(), p.s, p.e,
                p.start_s, p.end_s, p.start_cue, p.end_cue, p.truncated ? 1 : 0);
  return buf;
}

// Fixed text layout: aggregate block, then one tab-separated row per sample.
inline std::string format_report(const MetricsReport& rep) {
  char buf[128];
  std::string out;
  out += "n\t" + std::to_string(rep.per_sample.size()) + "\n";
  std::snprintf(buf, sizeof(buf), "mIoU\t%.2f\n", rep.miou);
  out += buf;
  for (std::size_t i = 0; i < kRecallThresholds.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "R@1,IoU=%.1f\t%.2f\n", kRecallThresholds[i], rep.recall[i]);
    out += buf;
  }
  out += "# id\ts\te\tstart_s\tend_s\tstart_cue\tend_cue\ttruncated\tiou\n";
  for (const auto& r : rep.per_sample) {
    char ioubuf[32];
    std::snprintf(ioubuf, sizeof(ioubuf), "\t%.6f\n", r.iou);
    out += format_prediction_fields(r.id, r.pred);
    out += ioubuf;
  }
  return out;
}

inline void write_report(const std::filesystem::path& path, const MetricsReport& rep) {
  write_file_bytes(path, format_report(rep));
}

// ---------------------------------------------------------------------------
// Model evaluation
// ---------------------------------------------------------------------------

// Greedy decode of every prepared sample against the answer spans.
template <class Real>
MetricsReport evaluate_prepared(const Model<Real>& model,
                                const std::vector<PreparedSample<Real>>& samples,
                                DecodeMode mode) {
  if (samples.empty()) throw Error("evaluate: no samples");
  std::vector<SampleEval> rows;
  rows.reserve(samples.size());
  for (const auto& ps : samples) {
    SampleEval row;
    row.id = ps.src.id;
    row.pred = model.predict(ps, mode);
    row.iou = iou({row.pred.start_s, row.pred.end_s}, ps.src.answer);
    rows.push_back(std::move(row));
  }
  return make_report(std::move(rows));
}

// Rebuild the model a checkpoint describes. The stored tensors must line up
// exactly with what the config+vocabulary register.
inline Model<float> model_from_checkpoint(const CheckpointContent& ckpt) {
  Model<float> model(ckpt.config, ckpt.vocab);
  const auto& expect = model.params().names();
  if (expect != ckpt.params.names()) {
    throw IncompatibleCheckpointError("checkpoint tensors do not match the model architecture");
  }
  for (const auto& name : expect) {
    if (model.params().at(name).dims != ckpt.params.at(name).dims) {
      throw IncompatibleCheckpointError("checkpoint tensor '" + name + "' has shape " +
                                        shape_str(ckpt.params.at(name).dims) + ", expected " +
                                        shape_str(model.params().at(name).dims));
    }
  }
  model.params() = ckpt.params;
  return model;
}

// Evaluate a checkpointed model on a corpus.
inline MetricsReport evaluate_model(const Corpus& corpus, const CheckpointContent& ckpt,
                                    DecodeMode mode) {
  const Model<float> model = model_from_checkpoint(ckpt);
  std::vector<PreparedSample<float>> prepared;
  prepared.reserve(corpus.samples.size());
  for (const Sample& s : corpus.samples) prepared.push_back(model.prepare(s));
  return evaluate_prepared(model, prepared, mode);
}

// Chance reference: per sample, draw two uniform times in [0, duration],
// sort them, and score that interval against the answer.
inline MetricsReport random_guess_baseline(const Corpus& corpus, std::uint64_t seed) {
  if (corpus.samples.empty()) throw Error("random_guess_baseline: no samples");
  std::vector<SampleEval> rows;
  rows.reserve(corpus.samples.size());
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    const Sample& s = corpus.samples[i];
    RngState rng = RngState::derive(seed, RngState::combine(0xBA5Eull, i));
    double t1 = rng.uniform(0.0, s.duration_s);
    double t2 = rng.uniform(0.0, s.duration_s);
    if (t2 < t1) std::swap(t1, t2);
    SampleEval row;
    row.id = s.id;
    row.pred.start_s = t1;
    row.pred.end_s = t2;
    row.iou = iou({t1, t2}, s.answer);
    rows.push_back(std::move(row));
  }
  return make_report(std::move(rows));
}

// ---------------------------------------------------------------------------
// Attention dumps
// ---------------------------------------------------------------------------

namespace detail {

inline void write_csv_matrix(const std::filesystem::path& path, const std::vector<float>& data,
                             std::size_t rows, std::size_t cols) {
  std::string out;
  out.reserve(rows * cols * 18);
  char buf[40];
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      std::snprintf(buf, sizeof(buf), "%.9e", static_cast<double>(data[i * cols + j]));
      if (j) out += ',';
      out += buf;
    }
    out += '\n';
  }
  write_file_bytes(path, out);
}

}  // namespace detail

// Run one sample and dump every attention surface as CSV into out_dir:
//   tokens.tsv                 index, token text, provenance tag
//   sim_row.csv                frame-over-token attention (n x m)
//   highlight.csv              highlight scores (n x 1)
//   enc_l<L>_h<H>.csv          encoder attention per layer and head
inline void dump_attention(const CheckpointContent& ckpt, const Sample& sample,
                           const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const Model<float> model = model_from_checkpoint(ckpt);
  const PreparedSample<float> ps = model.prepare(sample);
  ModelTrace<float> trace;
  (void)model.predict(ps, ckpt.config.decode_mode, &trace);

  {
    std::string out = "# index\ttoken\tsegment\n";
    for (std::size_t i = 0; i < ps.tokens.ids.size(); ++i) {
      out += std::to_string(i);
      out += '\t';
      out += ckpt.vocab.text_of(ps.tokens.ids[i]);
      out += '\t';
      const int seg = ps.tokens.seg[i];
      if (i == ps.tokens.vis_pos) {
        out += "prompt";
      } else if (seg == kSegQuestion) {
        out += "question";
      } else if (seg == kSegSpecial) {
        out += "special";
      } else {
        out += "cue" + std::to_string(seg);
      }
      out += '\n';
    }
    write_file_bytes(out_dir / "tokens.tsv", out);
  }

  detail::write_csv_matrix(out_dir / "sim_row.csv", trace.s_row, trace.s_row_n, trace.s_row_m);
  detail::write_csv_matrix(out_dir / "highlight.csv", trace.s_h, trace.s_h.size(), 1);
  const std::size_t heads = trace.encoder.n_heads;
  for (std::size_t idx = 0; idx < trace.encoder.attn.size(); ++idx) {
    const std::size_t layer = idx / heads;
    const std::size_t head = idx % heads;
    char name[48];
    std::snprintf(name, sizeof(name), "enc_l%zu_h%zu.csv", layer, head);
    detail::write_csv_matrix(out_dir / name, trace.encoder.attn[idx], trace.encoder.seq_len,
                             trace.encoder.seq_len);
  }
}

}  // namespace tagv
