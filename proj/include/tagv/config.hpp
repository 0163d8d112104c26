#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "tagv/binio.hpp"
#include "tagv/error.hpp"

namespace tagv {

enum class DecodeMode { paper_argmax, joint };

inline const char* decode_mode_name(DecodeMode m) {
  return m == DecodeMode::joint ? "joint" : "paper";
}

inline DecodeMode decode_mode_from_name(const std::string& s) {
  if (s == "joint") return DecodeMode::joint;
  if (s == "paper") return DecodeMode::paper_argmax;
  throw ConfigError("decode_mode must be 'paper' or 'joint', got '" + s + "'");
}

// Every knob of a run. Defaults are the desk-scale recipe: small enough to
// train on a laptop core in minutes, big enough to ground the synthetic
// corpus reliably.
struct TrainConfig {
  std::size_t d_model = 64;     // shared hidden width
  std::size_t n_layers = 2;     // encoder depth
  std::size_t n_heads = 2;      // attention heads (head size 32)
  std::size_t ffn_dim = 128;    // encoder feed-forward width
  std::size_t n = 128;          // video frames after resampling
  std::size_t d_v = 16;         // raw visual feature channels
  double alpha = 0.25;          // highlight span extension ratio
  double lambda = 0.1;          // highlight loss weight
  double lr = 1e-3;             // peak learning rate
  std::size_t warmup_steps = 100;
  double clip_norm = 1.0;       // global gradient norm cap, 0 disables
  double dropout = 0.1;
  std::size_t batch_size = 4;
  std::size_t max_tokens = 1800;  // encoder input length cap
  std::size_t max_steps = 2000;
  std::uint64_t seed = 7;
  DecodeMode decode_mode = DecodeMode::joint;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

inline double parse_double_field(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError("config: bad numeric value for '" + key + "': '" + s + "'");
  }
  return v;
}

inline std::uint64_t parse_uint_field(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError("config: bad integer value for '" + key + "': '" + s + "'");
  }
  return v;
}

}  // namespace detail

// Canonical "key = value" text, one field per line, fixed order. Used for
// config files on disk and verbatim as the checkpoint's config snapshot, so
// serialize(parse(serialize(c))) is byte-stable.
inline std::string serialize_config(const TrainConfig& c) {
  std::string out;
  const auto put = [&out](const char* key, const std::string& value) {
    out += key;
    out += " = ";
    out += value;
    out += '\n';
  };
  put("d_model", std::to_string(c.d_model));
  put("n_layers", std::to_string(c.n_layers));
  put("n_heads", std::to_string(c.n_heads));
  put("ffn_dim", std::to_string(c.ffn_dim));
  put("n", std::to_string(c.n));
  put("d_v", std::to_string(c.d_v));
  put("alpha", detail::format_double(c.alpha));
  put("lambda", detail::format_double(c.lambda));
  put("lr", detail::format_double(c.lr));
  put("warmup_steps", std::to_string(c.warmup_steps));
  put("clip_norm", detail::format_double(c.clip_norm));
  put("dropout", detail::format_double(c.dropout));
  put("batch_size", std::to_string(c.batch_size));
  put("max_tokens", std::to_string(c.max_tokens));
  put("max_steps", std::to_string(c.max_steps));
  put("seed", std::to_string(c.seed));
  put("decode_mode", decode_mode_name(c.decode_mode));
  return out;
}

inline void validate_config(const TrainConfig& c) {
  const auto positive = [](const char* key, std::size_t v) {
    if (v == 0) throw ConfigError(std::string("config: ") + key + " must be positive");
  };
  positive("d_model", c.d_model);
  positive("n_layers", c.n_layers);
  positive("n_heads", c.n_heads);
  positive("ffn_dim", c.ffn_dim);
  positive("n", c.n);
  positive("d_v", c.d_v);
  positive("batch_size", c.batch_size);
  positive("max_steps", c.max_steps);
  if (c.max_tokens < 8) throw ConfigError("config: max_tokens must be at least 8");
  if (c.d_model % c.n_heads != 0) {
    throw ConfigError("config: d_model " + std::to_string(c.d_model) +
                      " is not divisible by n_heads " + std::to_string(c.n_heads));
  }
  if (!(c.alpha >= 0.0)) throw ConfigError("config: alpha must be >= 0");
  if (!(c.lambda >= 0.0)) throw ConfigError("config: lambda must be >= 0");
  if (!(c.lr > 0.0)) throw ConfigError("config: lr must be positive");
  if (!(c.clip_norm >= 0.0)) throw ConfigError("config: clip_norm must be >= 0");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) {
    throw ConfigError("config: dropout must lie in [0, 1)");
  }
  if (c.warmup_steps >= c.max_steps) {
    throw ConfigError("config: warmup_steps must be smaller than max_steps");
  }
}

// Parse "key = value" lines over the defaults. '#' starts a comment; blank
// lines are fine; unknown or repeated keys are errors.
inline TrainConfig parse_config_text(std::string_view text) {
  TrainConfig c;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = std::min(text.find('\n', pos), text.size());
    std::string line(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    const auto is_ws = [](char ch) { return ch == ' ' || ch == '\t' || ch == '\r'; };
    std::size_t b = 0, e = line.size();
    while (b < e && is_ws(line[b])) ++b;
    while (e > b && is_ws(line[e - 1])) --e;
    line = line.substr(b, e - b);
    if (line.empty()) continue;

    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    while (!key.empty() && is_ws(key.back())) key.pop_back();
    std::size_t vb = 0;
    while (vb < value.size() && is_ws(value[vb])) ++vb;
    value = value.substr(vb);
    if (key.empty() || value.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    if (!seen.insert(key).second) {
      throw ConfigError("config line " + std::to_string(line_no) + ": repeated key '" + key + "'");
    }

    if (key == "d_model") c.d_model = detail::parse_uint_field(key, value);
    else if (key == "n_layers") c.n_layers = detail::parse_uint_field(key, value);
    else if (key == "n_heads") c.n_heads = detail::parse_uint_field(key, value);
    else if (key == "ffn_dim") c.ffn_dim = detail::parse_uint_field(key, value);
    else if (key == "n") c.n = detail::parse_uint_field(key, value);
    else if (key == "d_v") c.d_v = detail::parse_uint_field(key, value);
    else if (key == "alpha") c.alpha = detail::parse_double_field(key, value);
    else if (key == "lambda") c.lambda = detail::parse_double_field(key, value);
    else if (key == "lr") c.lr = detail::parse_double_field(key, value);
    else if (key == "warmup_steps") c.warmup_steps = detail::parse_uint_field(key, value);
    else if (key == "clip_norm") c.clip_norm = detail::parse_double_field(key, value);
    else if (key == "dropout") c.dropout = detail::parse_double_field(key, value);
    else if (key == "batch_size") c.batch_size = detail::parse_uint_field(key, value);
    else if (key == "max_tokens") c.max_tokens = detail::parse_uint_field(key, value);
    else if (key == "max_steps") c.max_steps = detail::parse_uint_field(key, value);
    else if (key == "seed") c.seed = detail::parse_uint_field(key, value);
    else if (key == "decode_mode") c.decode_mode = decode_mode_from_name(value);
    else throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  validate_config(c);
  return c;
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  return parse_config_text(read_file_bytes(path));
}

}  // namespace tagv
