#pragma once

#include <cmath>
#include <limits>

#include "tagv/corpus.hpp"
#include "tagv/error.hpp"

namespace tagv {

// Answer span snapped onto subtitle cue boundaries.
struct SelectedSpan {
  double r_s = 0.0;   // chosen cue start time
  double r_e = 0.0;   // chosen cue end time
  int start_cue = 0;  // 1-based cue ordinals
  int end_cue = 0;
};

// Snap (tau_s, tau_e) onto cue boundaries: r_s comes from the cue whose start
// is nearest tau_s, r_e from the cue whose end is nearest tau_e. Ties resolve
// to the FIRST cue for the start (strict improvement required) and the LAST
// cue for the end (non-strict update). A crossed result (r_e < r_s) is
// returned as-is; the caller decides how to treat it.
inline SelectedSpan select_subtitle_span(const SubtitleTrack& track, double tau_s, double tau_e) {
  if (track.cues.empty()) throw Error("select_subtitle_span: track has no cues");
  if (!std::isfinite(tau_s) || !std::isfinite(tau_e)) {
    throw Error("select_subtitle_span: non-finite target time");
  }
  double best_s = std::numeric_limits<double>::infinity();
  double best_e = std::numeric_limits<double>::infinity();
  SelectedSpan out;
  for (std::size_t i = 0; i < track.cues.size(); ++i) {
    const SubtitleCue& cue = track.cues[i];
    const double ds = std::fabs(cue.span.start_s - tau_s);
    if (ds < best_s) {
      best_s = ds;
      out.r_s = cue.span.start_s;
      out.start_cue = static_cast<int>(i) + 1;
    }
    const double de = std::fabs(cue.span.end_s - tau_e);
    if (de <= best_e) {
      best_e = de;
      out.r_e = cue.span.end_s;
      out.end_cue = static_cast<int>(i) + 1;
    }
  }
  return out;
}

// Reference implementation by exhaustive scan: find the minimum distances
// first, then take the first/last cue achieving them. Used to cross-check
// the single-pass version; must agree exactly, ties included.
inline SelectedSpan oracle_select(const SubtitleTrack& track, double tau_s, double tau_e) {
  if (track.cues.empty()) throw Error("oracle_select: track has no cues");
  if (!std::isfinite(tau_s) || !std::isfinite(tau_e)) {
    throw Error("oracle_select: non-finite target time");
  }
  const std::size_t n = track.cues.size();
  double min_s = std::numeric_limits<double>::infinity();
  double min_e = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    min_s = std::min(min_s, std::fabs(track.cues[i].span.start_s - tau_s));
    min_e = std::min(min_e, std::fabs(track.cues[i].span.end_s - tau_e));
  }
  SelectedSpan out;
  for (std::size_t i = 0; i < n; ++i) {  // first achiever wins
    if (std::fabs(track.cues[i].span.start_s - tau_s) == min_s) {
      out.r_s = track.cues[i].span.start_s;
      out.start_cue = static_cast<int>(i) + 1;
      break;
    }
  }
  for (std::size_t i = n; i-- > 0;) {  // last achiever wins
    if (std::fabs(track.cues[i].span.end_s - tau_e) == min_e) {
      out.r_e = track.cues[i].span.end_s;
      out.end_cue = static_cast<int>(i) + 1;
      break;
    }
  }
  return out;
}

}  // namespace tagv
