#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tagv/binio.hpp"
#include "tagv/error.hpp"

namespace tagv {

// ---------------------------------------------------------------------------
// Core data types
// ---------------------------------------------------------------------------

struct TimeSpan {
  double start_s = 0.0;
  double end_s = 0.0;

  double length() const { return end_s - start_s; }
};

struct SubtitleCue {
  int index = 0;  // 1-based position in the track
  TimeSpan span;
  std::string text;
};

struct SubtitleTrack {
  std::vector<SubtitleCue> cues;
};

// Frame-level features, row-major n_src x d_v, 32-bit floats.
struct VisualFeatures {
  std::size_t n_src = 0;
  std::size_t d_v = 0;
  std::vector<float> data;

  float at(std::size_t row, std::size_t col) const { return data[row * d_v + col]; }
};

struct Sample {
  std::string id;
  double duration_s = 0.0;
  std::string question;
  TimeSpan answer;
  SubtitleTrack track;
  VisualFeatures features;
};

enum class Split { train, valid, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    default: return "test";
  }
}

inline Split split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "valid") return Split::valid;
  if (name == "test") return Split::test;
  throw FormatError("unknown split name: '" + name + "'");
}

struct Corpus {
  Split split = Split::train;
  std::vector<Sample> samples;
};

// Warning sink for recoverable oddities (out-of-order cues, clipped spans).
using WarnFn = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// SRT subtitle files
// ---------------------------------------------------------------------------

namespace detail {

// Times are carried as seconds but quantized to milliseconds on disk; keep
// the quantization in one place so write -> parse is exact.
inline std::int64_t to_ms(double seconds) {
  return static_cast<std::int64_t>(std::llround(seconds * 1000.0));
}

inline std::string format_srt_time(double seconds) {
  std::int64_t ms = to_ms(seconds);
  const std::int64_t msec = ms % 1000;
  ms /= 1000;
  const std::int64_t sec = ms % 60;
  ms /= 60;
  const std::int64_t min = ms % 60;
  const std::int64_t hour = ms / 60;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%02lld:%02lld:%02lld,%03lld",
                static_cast<long long>(hour), static_cast<long long>(min),
                static_cast<long long>(sec), static_cast<long long>(msec));
  return buf;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

// "HH:MM:SS,mmm" with 1+ hour digits and 1-3 millisecond digits.
inline double parse_srt_time(std::string_view s, int line_no) {
  const auto fail = [line_no](const std::string& why) {
    throw FormatError("SRT line " + std::to_string(line_no) + ": " + why);
  };
  std::size_t i = 0;
  const auto read_int = [&](std::size_t min_digits, std::size_t max_digits) -> std::int64_t {
    std::size_t start = i;
    std::int64_t v = 0;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9' && (i - start) < max_digits) {
      v = v * 10 + (s[i] - '0');
      ++i;
    }
    if (i - start < min_digits) fail("bad timestamp '" + std::string(s) + "'");
    return v;
  };
  const auto expect = [&](char c) {
    if (i >= s.size() || s[i] != c) fail("bad timestamp '" + std::string(s) + "'");
    ++i;
  };
  const std::int64_t h = read_int(1, 6);
  expect(':');
  const std::int64_t m = read_int(2, 2);
  expect(':');
  const std::int64_t sec = read_int(2, 2);
  expect(',');
  std::size_t ms_start = i;
  std::int64_t ms = read_int(1, 3);
  // Fewer than three digits read as a decimal fraction: ",5" is 500ms.
  for (std::size_t d = i - ms_start; d < 3; ++d) ms *= 10;
  if (i != s.size()) fail("trailing characters in timestamp '" + std::string(s) + "'");
  if (m >= 60 || sec >= 60) fail("timestamp field out of range '" + std::string(s) + "'");
  const std::int64_t total_ms = ((h * 60 + m) * 60 + sec) * 1000 + ms;
  return static_cast<double>(total_ms) / 1000.0;
}

}  // namespace detail

struct SrtParseResult {
  SubtitleTrack track;
  bool reordered = false;  // cues arrived out of start-time order and were sorted
};

// Parse SRT text: blocks of "index / start --> end / text+" separated by
// blank lines. Cues are re-sorted by start time if needed (stable) and
// re-indexed 1..N. Structural problems throw FormatError with a line number.
inline SrtParseResult parse_srt(std::string_view bytes) {
  // Strip a UTF-8 BOM if present.
  if (bytes.size() >= 3 && static_cast<unsigned char>(bytes[0]) == 0xEF &&
      static_cast<unsigned char>(bytes[1]) == 0xBB && static_cast<unsigned char>(bytes[2]) == 0xBF) {
    bytes.remove_prefix(3);
  }

  std::vector<std::string> lines;
  {
    std::size_t start = 0;
    for (std::size_t i = 0; i <= bytes.size(); ++i) {
      if (i == bytes.size() || bytes[i] == '\n') {
        lines.push_back(detail::trim(bytes.substr(start, i - start)));
        start = i + 1;
      }
    }
  }

  SrtParseResult out;
  std::size_t i = 0;
  while (i < lines.size()) {
    if (lines[i].empty()) {
      ++i;
      continue;
    }
    const int index_line = static_cast<int>(i) + 1;
    // Cue counter line: digits only.
    {
      const std::string& s = lines[i];
      for (char c : s) {
        if (c < '0' || c > '9') {
          throw FormatError("SRT line " + std::to_string(index_line) +
                            ": expected cue counter, got '" + s + "'");
        }
      }
    }
    ++i;
    if (i >= lines.size() || lines[i].empty()) {
      throw FormatError("SRT line " + std::to_string(index_line) + ": cue is missing its timestamp line");
    }
    const int time_line = static_cast<int>(i) + 1;
    const std::string& ts = lines[i];
    const std::size_t arrow = ts.find("-->");
    if (arrow == std::string::npos) {
      throw FormatError("SRT line " + std::to_string(time_line) + ": missing '-->' separator");
    }
    SubtitleCue cue;
    cue.span.start_s = detail::parse_srt_time(detail::trim(ts.substr(0, arrow)), time_line);
    cue.span.end_s = detail::parse_srt_time(detail::trim(ts.substr(arrow + 3)), time_line);
    if (!(cue.span.end_s > cue.span.start_s)) {
      throw FormatError("SRT line " + std::to_string(time_line) + ": cue end does not follow start");
    }
    ++i;
    std::string text;
    while (i < lines.size() && !lines[i].empty()) {
      if (!text.empty()) text += ' ';
      text += lines[i];
      ++i;
    }
    if (text.empty()) {
      throw FormatError("SRT line " + std::to_string(time_line) + ": cue has no text");
    }
    cue.text = std::move(text);
    out.track.cues.push_back(std::move(cue));
  }

  if (out.track.cues.empty()) throw FormatError("SRT: no cues found");

  for (std::size_t k = 1; k < out.track.cues.size(); ++k) {
    if (out.track.cues[k].span.start_s < out.track.cues[k - 1].span.start_s) {
      out.reordered = true;
      break;
    }
  }
  if (out.reordered) {
    std::stable_sort(out.track.cues.begin(), out.track.cues.end(),
                     [](const SubtitleCue& a, const SubtitleCue& b) {
                       return a.span.start_s < b.span.start_s;
                     });
  }
  for (std::size_t k = 0; k < out.track.cues.size(); ++k) {
    out.track.cues[k].index = static_cast<int>(k) + 1;
  }
  return out;
}

// Canonical SRT serialization: 1-based counters, ms-precision timestamps,
// one text line per cue, blank line after every block.
inline std::string write_srt(const SubtitleTrack& track) {
  std::string out;
  for (std::size_t k = 0; k < track.cues.size(); ++k) {
    const SubtitleCue& cue = track.cues[k];
    out += std::to_string(k + 1);
    out += '\n';
    out += detail::format_srt_time(cue.span.start_s);
    out += " --> ";
    out += detail::format_srt_time(cue.span.end_s);
    out += '\n';
    out += cue.text;
    out += "\n\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary feature files: "TAGVFEAT" magic, u32 n_src, u32 d_v, f32 row-major.
// ---------------------------------------------------------------------------

inline constexpr char kFeatureMagic[8] = {'T', 'A', 'G', 'V', 'F', 'E', 'A', 'T'};

inline void save_features(const std::filesystem::path& path, const VisualFeatures& f) {
  if (f.n_src == 0 || f.d_v == 0) throw Error("save_features: empty feature matrix");
  if (f.data.size() != f.n_src * f.d_v) throw Error("save_features: data size does not match n_src*d_v");
  ByteWriter w;
  w.put_bytes(kFeatureMagic, sizeof(kFeatureMagic));
  w.put_u32(static_cast<std::uint32_t>(f.n_src));
  w.put_u32(static_cast<std::uint32_t>(f.d_v));
  for (float v : f.data) w.put_f32(v);
  write_file_bytes(path, w.bytes());
}

inline VisualFeatures load_features_bytes(const std::string& bytes, const std::string& origin) {
  ByteReader r(bytes);
  char magic[8];
  try {
    r.get_bytes(magic, sizeof(magic));
  } catch (const TruncatedError&) {
    throw BadMagicError(origin + ": too short to hold a feature header");
  }
  if (std::memcmp(magic, kFeatureMagic, sizeof(magic)) != 0) {
    throw BadMagicError(origin + ": bad magic, not a feature file");
  }
  VisualFeatures f;
  try {
    f.n_src = r.get_u32();
    f.d_v = r.get_u32();
    if (f.n_src == 0 || f.d_v == 0) throw FormatError(origin + ": zero-sized feature matrix");
    f.data.resize(f.n_src * f.d_v);
    for (auto& v : f.data) v = r.get_f32();
  } catch (const TruncatedError&) {
    throw TruncatedError(origin + ": feature payload is truncated");
  }
  if (r.remaining() != 0) {
    throw FormatError(origin + ": trailing bytes after feature payload");
  }
  for (float v : f.data) {
    if (!std::isfinite(v)) throw NonFiniteError(origin + ": non-finite feature value");
  }
  return f;
}

inline VisualFeatures load_features(const std::filesystem::path& path) {
  return load_features_bytes(read_file_bytes(path), path.string());
}

// ---------------------------------------------------------------------------
// Temporal resampling to a fixed number of rows (linear interpolation).
// ---------------------------------------------------------------------------

// Row j of the output samples source position p = j*(n_src-1)/(n-1); for
// n == 1 the single row sits at the source midpoint. Endpoints are copied
// bit-exactly, and n == n_src reproduces the input.
inline VisualFeatures resample_features(const VisualFeatures& f, std::size_t n) {
  if (n == 0) throw Error("resample_features: n must be >= 1");
  if (f.n_src == 0 || f.d_v == 0) throw Error("resample_features: empty input");
  VisualFeatures out;
  out.n_src = n;
  out.d_v = f.d_v;
  out.data.resize(n * f.d_v);
  for (std::size_t j = 0; j < n; ++j) {
    const double p = (n == 1) ? static_cast<double>(f.n_src - 1) / 2.0
                              : static_cast<double>(j) * static_cast<double>(f.n_src - 1) /
                                    static_cast<double>(n - 1);
    std::size_t i0 = static_cast<std::size_t>(p);
    if (i0 >= f.n_src - 1 && f.n_src > 1) i0 = f.n_src - 2;
    if (f.n_src == 1) i0 = 0;
    const std::size_t i1 = (f.n_src == 1) ? 0 : i0 + 1;
    const double frac = p - static_cast<double>(i0);
    for (std::size_t c = 0; c < f.d_v; ++c) {
      const double a = f.data[i0 * f.d_v + c];
      const double b = f.data[i1 * f.d_v + c];
      out.data[j * f.d_v + c] = static_cast<float>((1.0 - frac) * a + frac * b);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus manifests: <dir>/<split>.json referencing srt/ and feat/ files.
// ---------------------------------------------------------------------------

inline std::filesystem::path manifest_path(const std::filesystem::path& dir, Split split) {
  return dir / (std::string(split_name(split)) + ".json");
}

inline nlohmann::ordered_json sample_to_manifest(const Sample& s,
                                                 const std::string& srt_rel,
                                                 const std::string& feat_rel) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["duration_s"] = s.duration_s;
  j["question"] = s.question;
  j["answer"] = {{"start_s", s.answer.start_s}, {"end_s", s.answer.end_s}};
  j["srt_path"] = srt_rel;
  j["feat_path"] = feat_rel;
  return j;
}

// Reads one manifest entry and pulls in its SRT and feature files. Answer
// spans that overshoot the stated duration are clipped with a warning.
inline Sample load_manifest_entry(const nlohmann::json& j, const std::filesystem::path& base_dir,
                                  const WarnFn& warn = {}) {
  Sample s;
  try {
    s.id = j.at("id").get<std::string>();
    s.duration_s = j.at("duration_s").get<double>();
    s.question = j.at("question").get<std::string>();
    s.answer.start_s = j.at("answer").at("start_s").get<double>();
    s.answer.end_s = j.at("answer").at("end_s").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest entry: ") + e.what());
  }
  if (!(s.duration_s > 0.0)) throw FormatError("sample '" + s.id + "': duration must be positive");
  if (!(s.answer.start_s <= s.answer.end_s)) {
    throw FormatError("sample '" + s.id + "': answer start exceeds end");
  }
  if (s.answer.start_s < 0.0) throw FormatError("sample '" + s.id + "': negative answer start");
  if (s.answer.end_s > s.duration_s) {
    if (warn) {
      warn("sample '" + s.id + "': answer end " + std::to_string(s.answer.end_s) +
           " clipped to duration " + std::to_string(s.duration_s));
    }
    s.answer.end_s = s.duration_s;
    s.answer.start_s = std::min(s.answer.start_s, s.answer.end_s);
  }

  const std::string srt_rel = j.at("srt_path").get<std::string>();
  const std::string feat_rel = j.at("feat_path").get<std::string>();
  const auto srt_path = base_dir / srt_rel;
  SrtParseResult parsed = parse_srt(read_file_bytes(srt_path));
  if (parsed.reordered && warn) {
    warn("sample '" + s.id + "': cues were out of order and have been sorted");
  }
  s.track = std::move(parsed.track);
  s.features = load_features(base_dir / feat_rel);
  return s;
}

inline Corpus load_corpus(const std::filesystem::path& dir, Split split, const WarnFn& warn = {}) {
  const auto path = manifest_path(dir, split);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_bytes(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  Corpus corpus;
  try {
    corpus.split = split_from_name(j.at("split").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (corpus.split != split) {
    throw FormatError(path.string() + ": manifest says split '" +
                      std::string(split_name(corpus.split)) + "'");
  }
  if (!j.contains("samples") || !j["samples"].is_array()) {
    throw FormatError(path.string() + ": missing 'samples' array");
  }
  for (const auto& entry : j["samples"]) {
    corpus.samples.push_back(load_manifest_entry(entry, dir, warn));
  }
  // Duplicate ids would make reports ambiguous.
  for (std::size_t a = 0; a < corpus.samples.size(); ++a) {
    for (std::size_t b = a + 1; b < corpus.samples.size(); ++b) {
      if (corpus.samples[a].id == corpus.samples[b].id) {
        throw FormatError(path.string() + ": duplicate sample id '" + corpus.samples[a].id + "'");
      }
    }
  }
  return corpus;
}

// Writes manifest + per-sample SRT/feature files under dir. Layout:
//   dir/<split>.json, dir/srt/<id>.srt, dir/feat/<id>.feat
inline void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "srt");
  fs::create_directories(dir / "feat");
  nlohmann::ordered_json manifest;
  manifest["split"] = split_name(corpus.split);
  manifest["samples"] = nlohmann::ordered_json::array();
  for (const Sample& s : corpus.samples) {
    const std::string srt_rel = "srt/" + s.id + ".srt";
    const std::string feat_rel = "feat/" + s.id + ".feat";
    write_file_bytes(dir / srt_rel, write_srt(s.track));
    save_features(dir / feat_rel, s.features);
    manifest["samples"].push_back(sample_to_manifest(s, srt_rel, feat_rel));
  }
  write_file_bytes(manifest_path(dir, corpus.split), manifest.dump(2) + "\n");
}

}  // namespace tagv
