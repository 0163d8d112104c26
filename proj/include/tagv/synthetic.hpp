#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tagv/corpus.hpp"
#include "tagv/rng.hpp"

namespace tagv {

// ---------------------------------------------------------------------------
// Synthetic instructional-video corpus. Each sample is a timeline of cues,
// one contiguous run of which answers a templated question about a "topic".
// The answer is recoverable from both modalities:
//   * text: answer cues mention the sample's topic, distractors never do
//   * video: feature channel 0 steps up inside the answer span
// Everything is a pure function of (n_samples, seed, cfg, split), so two
// generations with the same arguments are byte-identical on disk.
// ---------------------------------------------------------------------------

struct GenConfig {
  double duration_min = 40.0;
  double duration_max = 90.0;
  int min_cues = 4;
  int max_cues = 20;
  double min_cue_len = 3.0;   // seconds
  double max_gap = 0.5;       // between consecutive cues
  int answer_max_cues = 2;    // answer spans 1..this many cues
  std::size_t d_v = 16;       // feature channels
  double feature_hz = 2.0;    // source feature rate
  double signature_shift = 2.0;  // channel-0 step height inside the answer
};

namespace detail {

inline constexpr std::array<const char*, 10> kTopics = {
    "airway", "bandage", "dosage", "elbow",  "forceps",
    "gauze",  "incision", "ligament", "splint", "suture"};

inline constexpr std::array<const char*, 5> kVerbs = {"examine", "clean", "measure", "wrap",
                                                      "secure"};

inline constexpr std::array<const char*, 3> kQuestionForms = {
    "how do you %V the %T ?",
    "what is the correct way to %V the %T ?",
    "show me how to %V the %T .",
};

inline constexpr std::array<const char*, 3> kAnswerForms = {
    "now we %V the %T gently",
    "%V the %T exactly as shown here",
    "hold the %T steady while we %V it",
};

inline constexpr std::array<const char*, 4> kDistractorForms = {
    "next the %O is set aside for later",
    "this step only checks the %O briefly",
    "remember to keep the %O area visible",
    "the %O stays in place for now",
};

inline std::string fill_template(const char* form, const std::string& verb,
                                 const std::string& topic) {
  std::string out;
  for (const char* p = form; *p; ++p) {
    if (*p == '%' && (p[1] == 'V' || p[1] == 'T' || p[1] == 'O')) {
      out += (p[1] == 'V') ? verb : topic;
      ++p;
    } else {
      out += *p;
    }
  }
  return out;
}

inline double quantize_ms(double seconds) {
  return static_cast<double>(static_cast<std::int64_t>(std::llround(seconds * 1000.0))) / 1000.0;
}

}  // namespace detail

inline Corpus generate_synthetic_corpus(std::size_t n_samples, std::uint64_t seed,
                                        const GenConfig& cfg = {}, Split split = Split::train) {
  if (cfg.min_cues < 1 || cfg.max_cues < cfg.min_cues) {
    throw ConfigError("generate_synthetic_corpus: bad cue count range");
  }
  if (!(cfg.duration_min > 0.0) || cfg.duration_max < cfg.duration_min) {
    throw ConfigError("generate_synthetic_corpus: bad duration range");
  }
  if (cfg.answer_max_cues < 1) throw ConfigError("generate_synthetic_corpus: answer_max_cues < 1");
  if (cfg.d_v == 0) throw ConfigError("generate_synthetic_corpus: d_v must be >= 1");
  if (!(cfg.min_cue_len > 0.0) || !(cfg.max_gap > 0.0) || !(cfg.feature_hz > 0.0)) {
    throw ConfigError("generate_synthetic_corpus: lengths and rates must be positive");
  }

  Corpus corpus;
  corpus.split = split;
  const std::uint64_t split_salt = static_cast<std::uint64_t>(split) + 1;

  for (std::size_t i = 0; i < n_samples; ++i) {
    RngState rng = RngState::derive(seed, RngState::combine(split_salt, i));
    Sample s;
    {
      char idbuf[32];
      std::snprintf(idbuf, sizeof(idbuf), "%s-%04zu", split_name(split), i);
      s.id = idbuf;
    }
    s.duration_s = detail::quantize_ms(rng.uniform(cfg.duration_min, cfg.duration_max));

    // Cue count capped so min-length cues, worst-case gaps, and a trailing
    // margin always fit inside the duration.
    const int fit = static_cast<int>((s.duration_s - 2.0) / (cfg.min_cue_len + cfg.max_gap));
    const int hi_cues = std::max(cfg.min_cues, std::min(cfg.max_cues, fit));
    const int n_cues =
        static_cast<int>(rng.uniform_int(cfg.min_cues, hi_cues));

    // Leading gap + inter-cue gaps, then spread the leftover length over the
    // cues proportionally to random weights.
    std::vector<double> gaps(static_cast<std::size_t>(n_cues));
    double gap_total = 0.0;
    for (auto& g : gaps) {
      g = rng.uniform(0.1, cfg.max_gap);
      gap_total += g;
    }
    const double trailing = rng.uniform(0.5, 1.5);
    std::vector<double> weights(static_cast<std::size_t>(n_cues));
    double weight_total = 0.0;
    for (auto& w : weights) {
      w = rng.uniform(0.2, 1.0);
      weight_total += w;
    }
    const double extra =
        s.duration_s - trailing - gap_total - cfg.min_cue_len * static_cast<double>(n_cues);

    double t = 0.0;
    const std::size_t topic_idx = i % detail::kTopics.size();
    const std::string topic = detail::kTopics[topic_idx];
    const std::string verb = detail::kVerbs[i % detail::kVerbs.size()];

    const int answer_len = static_cast<int>(
        rng.uniform_int(1, std::min(cfg.answer_max_cues, n_cues)));
    const int answer_first = static_cast<int>(rng.uniform_int(0, n_cues - answer_len));

    for (int k = 0; k < n_cues; ++k) {
      t += gaps[static_cast<std::size_t>(k)];
      const double len =
          cfg.min_cue_len + std::max(0.0, extra) * weights[static_cast<std::size_t>(k)] / weight_total;
      SubtitleCue cue;
      cue.index = k + 1;
      cue.span.start_s = detail::quantize_ms(t);
      t += len;
      cue.span.end_s = detail::quantize_ms(t);
      const bool in_answer = (k >= answer_first && k < answer_first + answer_len);
      if (in_answer) {
        const char* form = detail::kAnswerForms[(i + static_cast<std::size_t>(k)) %
                                                detail::kAnswerForms.size()];
        cue.text = detail::fill_template(form, verb, topic);
      } else {
        // Distractor topic offset in 1..size-1 never collides with the topic.
        const std::size_t other_idx =
            (topic_idx + 1 + static_cast<std::size_t>(k) % (detail::kTopics.size() - 1)) %
            detail::kTopics.size();
        const char* form = detail::kDistractorForms[(i * 7 + static_cast<std::size_t>(k)) %
                                                    detail::kDistractorForms.size()];
        cue.text = detail::fill_template(form, verb, detail::kTopics[other_idx]);
      }
      s.track.cues.push_back(std::move(cue));
    }

    s.question = detail::fill_template(detail::kQuestionForms[i % detail::kQuestionForms.size()],
                                       verb, topic);
    s.answer.start_s = s.track.cues[static_cast<std::size_t>(answer_first)].span.start_s;
    s.answer.end_s =
        s.track.cues[static_cast<std::size_t>(answer_first + answer_len - 1)].span.end_s;

    // Features: channel 0 carries the answer signature exactly (no noise),
    // remaining channels are uniform noise.
    s.features.d_v = cfg.d_v;
    s.features.n_src = static_cast<std::size_t>(
        std::max<std::int64_t>(16, std::llround(s.duration_s * cfg.feature_hz)));
    s.features.data.resize(s.features.n_src * s.features.d_v);
    for (std::size_t r = 0; r < s.features.n_src; ++r) {
      const double center = (static_cast<double>(r) + 0.5) /
                            static_cast<double>(s.features.n_src) * s.duration_s;
      const bool inside = (center >= s.answer.start_s && center <= s.answer.end_s);
      s.features.data[r * s.features.d_v] =
          inside ? static_cast<float>(cfg.signature_shift) : 0.0f;
      for (std::size_t c = 1; c < s.features.d_v; ++c) {
        s.features.data[r * s.features.d_v + c] = static_cast<float>(rng.uniform(-0.5, 0.5));
      }
    }

    corpus.samples.push_back(std::move(s));
  }
  return corpus;
}

}  // namespace tagv
