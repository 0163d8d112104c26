#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>

#include "tagv/corpus.hpp"
#include "tagv/rng.hpp"
#include "tagv/synthetic.hpp"

namespace fs = std::filesystem;
using namespace tagv;

namespace {

// Random track with millisecond-quantized, sorted, non-overlapping cues and
// single-line text: the canonical form write_srt emits.
SubtitleTrack random_canonical_track(RngState& rng) {
  SubtitleTrack track;
  const int n = static_cast<int>(rng.uniform_int(1, 12));
  double t = rng.uniform(0.0, 5.0);
  for (int i = 0; i < n; ++i) {
    SubtitleCue cue;
    cue.index = i + 1;
    t += rng.uniform(0.05, 2.0);
    cue.span.start_s = detail::quantize_ms(t);
    t += rng.uniform(0.4, 8.0);
    cue.span.end_s = detail::quantize_ms(t);
    if (cue.span.end_s <= cue.span.start_s) cue.span.end_s = cue.span.start_s + 0.001;
    const int words = static_cast<int>(rng.uniform_int(1, 7));
    for (int w = 0; w < words; ++w) {
      if (w) cue.text += ' ';
      cue.text += "word" + std::to_string(rng.uniform_int(0, 99));
    }
    track.cues.push_back(std::move(cue));
  }
  return track;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tagv_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("srt: canonical example parses exactly") {
  const std::string text =
      "1\n00:00:14,910 --> 00:00:19,210\nhello world\n\n"
      "2\n00:01:02,000 --> 00:01:05,500\nsecond cue\nwith two lines\n\n";
  const SrtParseResult res = parse_srt(text);
  REQUIRE(res.track.cues.size() == 2);
  CHECK_FALSE(res.reordered);
  CHECK(res.track.cues[0].span.start_s == 14.910);
  CHECK(res.track.cues[0].span.end_s == 19.210);
  CHECK(res.track.cues[0].text == "hello world");
  CHECK(res.track.cues[1].span.start_s == 62.0);
  CHECK(res.track.cues[1].span.end_s == 65.5);
  // multi-line text joins with a space
  CHECK(res.track.cues[1].text == "second cue with two lines");
  CHECK(res.track.cues[0].index == 1);
  CHECK(res.track.cues[1].index == 2);
}

TEST_CASE("srt: tolerant inputs") {
  SECTION("BOM, CRLF, short milliseconds") {
    const std::string text = "\xEF\xBB\xBF" "1\r\n00:00:01,5 --> 00:00:02,25\r\nok\r\n\r\n";
    const SrtParseResult res = parse_srt(text);
    REQUIRE(res.track.cues.size() == 1);
    CHECK(res.track.cues[0].span.start_s == 1.5);
    CHECK(res.track.cues[0].span.end_s == 2.25);
  }
  SECTION("out-of-order cues are sorted and flagged") {
    const std::string text =
        "1\n00:00:10,000 --> 00:00:12,000\nlate\n\n"
        "2\n00:00:01,000 --> 00:00:03,000\nearly\n\n";
    const SrtParseResult res = parse_srt(text);
    REQUIRE(res.reordered);
    REQUIRE(res.track.cues.size() == 2);
    CHECK(res.track.cues[0].text == "early");
    CHECK(res.track.cues[0].index == 1);
    CHECK(res.track.cues[1].text == "late");
  }
  SECTION("missing trailing blank line") {
    const SrtParseResult res = parse_srt("1\n00:00:01,000 --> 00:00:02,000\nend");
    REQUIRE(res.track.cues.size() == 1);
  }
}

TEST_CASE("srt: malformed inputs carry line numbers") {
  CHECK_THROWS_AS(parse_srt(""), FormatError);
  CHECK_THROWS_AS(parse_srt("x\n00:00:01,000 --> 00:00:02,000\nhi\n"), FormatError);
  CHECK_THROWS_AS(parse_srt("1\n00:00:01,000 -> 00:00:02,000\nhi\n"), FormatError);
  CHECK_THROWS_AS(parse_srt("1\n00:00:61,000 --> 00:01:02,000\nhi\n"), FormatError);
  CHECK_THROWS_AS(parse_srt("1\n00:00:05,000 --> 00:00:03,000\nhi\n"), FormatError);
  CHECK_THROWS_AS(parse_srt("1\n00:00:01,000 --> 00:00:02,000\n\n"), FormatError);
  try {
    parse_srt("1\nbroken time line\nhi\n");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("srt: write -> parse round trip is exact on random canonical tracks") {
  RngState rng(101);
  for (int iter = 0; iter < 100; ++iter) {
    const SubtitleTrack track = random_canonical_track(rng);
    const std::string bytes = write_srt(track);
    const SrtParseResult back = parse_srt(bytes);
    REQUIRE(back.track.cues.size() == track.cues.size());
    CHECK_FALSE(back.reordered);
    for (std::size_t i = 0; i < track.cues.size(); ++i) {
      // bitwise: both sides are exact multiples of 1ms
      CHECK(back.track.cues[i].span.start_s == track.cues[i].span.start_s);
      CHECK(back.track.cues[i].span.end_s == track.cues[i].span.end_s);
      CHECK(back.track.cues[i].text == track.cues[i].text);
    }
    // parse -> write reproduces the bytes too
    CHECK(write_srt(back.track) == bytes);
  }
}

TEST_CASE("features: save -> load round trip is bitwise") {
  const fs::path dir = temp_dir("feat");
  RngState rng(55);
  for (int iter = 0; iter < 100; ++iter) {
    VisualFeatures f;
    f.n_src = static_cast<std::size_t>(rng.uniform_int(1, 40));
    f.d_v = static_cast<std::size_t>(rng.uniform_int(1, 12));
    f.data.resize(f.n_src * f.d_v);
    for (auto& v : f.data) v = static_cast<float>(rng.uniform(-100.0, 100.0));
    const fs::path p = dir / ("f" + std::to_string(iter) + ".feat");
    save_features(p, f);
    const VisualFeatures back = load_features(p);
    REQUIRE(back.n_src == f.n_src);
    REQUIRE(back.d_v == f.d_v);
    REQUIRE(back.data == f.data);  // float equality: bit-for-bit copies
    // saving the loaded copy reproduces the file bytes
    const std::string bytes1 = read_file_bytes(p);
    const fs::path p2 = dir / "copy.feat";
    save_features(p2, back);
    CHECK(read_file_bytes(p2) == bytes1);
  }
}

TEST_CASE("features: load failures are distinct") {
  const fs::path dir = temp_dir("featerr");
  SECTION("bad magic") {
    write_file_bytes(dir / "bad.feat", "NOTMAGIC????????");
    CHECK_THROWS_AS(load_features(dir / "bad.feat"), BadMagicError);
  }
  SECTION("truncated payload") {
    VisualFeatures f;
    f.n_src = 4;
    f.d_v = 3;
    f.data.assign(12, 1.0f);
    save_features(dir / "ok.feat", f);
    std::string bytes = read_file_bytes(dir / "ok.feat");
    bytes.resize(bytes.size() - 5);
    write_file_bytes(dir / "cut.feat", bytes);
    CHECK_THROWS_AS(load_features(dir / "cut.feat"), TruncatedError);
  }
  SECTION("non-finite values") {
    VisualFeatures f;
    f.n_src = 2;
    f.d_v = 2;
    f.data = {1.0f, 2.0f, std::numeric_limits<float>::infinity(), 4.0f};
    // writer takes anything; the loader must reject it
    ByteWriter w;
    w.put_bytes(kFeatureMagic, 8);
    w.put_u32(2);
    w.put_u32(2);
    for (float v : f.data) w.put_f32(v);
    write_file_bytes(dir / "inf.feat", w.bytes());
    CHECK_THROWS_AS(load_features(dir / "inf.feat"), NonFiniteError);
  }
  SECTION("trailing garbage") {
    VisualFeatures f;
    f.n_src = 1;
    f.d_v = 1;
    f.data = {0.5f};
    save_features(dir / "ok2.feat", f);
    std::string bytes = read_file_bytes(dir / "ok2.feat") + "junk";
    write_file_bytes(dir / "long.feat", bytes);
    CHECK_THROWS_AS(load_features(dir / "long.feat"), FormatError);
  }
}

TEST_CASE("resample: frozen cases") {
  VisualFeatures f;
  f.n_src = 4;
  f.d_v = 1;
  f.data = {0.0f, 1.0f, 2.0f, 3.0f};

  SECTION("n = 2 keeps the endpoints") {
    const VisualFeatures out = resample_features(f, 2);
    REQUIRE(out.n_src == 2);
    CHECK(out.data[0] == 0.0f);
    CHECK(out.data[1] == 3.0f);
  }
  SECTION("n = 1 sits at the midpoint") {
    const VisualFeatures out = resample_features(f, 1);
    REQUIRE(out.n_src == 1);
    CHECK(out.data[0] == 1.5f);
  }
  SECTION("n = n_src is the identity, bitwise") {
    const VisualFeatures out = resample_features(f, 4);
    CHECK(out.data == f.data);
  }
  SECTION("n = 7 interpolates halves") {
    const VisualFeatures out = resample_features(f, 7);
    const float expect[7] = {0.0f, 0.5f, 1.0f, 1.5f, 2.0f, 2.5f, 3.0f};
    for (int i = 0; i < 7; ++i) CHECK(out.data[i] == expect[i]);
  }
  SECTION("upsampling keeps endpoints bitwise") {
    RngState rng(9);
    VisualFeatures g;
    g.n_src = 5;
    g.d_v = 3;
    g.data.resize(15);
    for (auto& v : g.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
    const VisualFeatures out = resample_features(g, 11);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(out.data[c] == g.data[c]);
      CHECK(out.data[10 * 3 + c] == g.data[4 * 3 + c]);
    }
  }
  CHECK_THROWS_AS(resample_features(f, 0), Error);
}

TEST_CASE("synthetic corpus: structural invariants and determinism") {
  const GenConfig gc;
  const Corpus a = generate_synthetic_corpus(12, 42, gc, Split::train);
  const Corpus b = generate_synthetic_corpus(12, 42, gc, Split::train);
  REQUIRE(a.samples.size() == 12);

  std::set<std::string> ids;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const Sample& s = a.samples[i];
    ids.insert(s.id);
    REQUIRE(!s.track.cues.empty());
    CHECK(s.track.cues.size() >= 4);
    CHECK(s.track.cues.size() <= 20);
    CHECK(s.duration_s >= gc.duration_min - 1e-9);
    CHECK(s.duration_s <= gc.duration_max + 1e-9);
    // cues tile the timeline: ordered, non-overlapping, inside the video
    double prev_end = 0.0;
    for (const auto& cue : s.track.cues) {
      CHECK(cue.span.start_s >= prev_end);
      CHECK(cue.span.end_s > cue.span.start_s);
      CHECK(cue.span.end_s - cue.span.start_s >= gc.min_cue_len - 0.01);
      prev_end = cue.span.end_s;
    }
    CHECK(prev_end <= s.duration_s);
    // answer aligns with cue boundaries and stays inside the video
    CHECK(s.answer.start_s >= 0.0);
    CHECK(s.answer.end_s <= s.duration_s);
    CHECK(s.answer.end_s > s.answer.start_s);
    bool starts_on_cue = false, ends_on_cue = false;
    for (const auto& cue : s.track.cues) {
      starts_on_cue = starts_on_cue || cue.span.start_s == s.answer.start_s;
      ends_on_cue = ends_on_cue || cue.span.end_s == s.answer.end_s;
    }
    CHECK(starts_on_cue);
    CHECK(ends_on_cue);
    // channel 0 is the exact answer signature
    for (std::size_t r = 0; r < s.features.n_src; ++r) {
      const double center =
          (static_cast<double>(r) + 0.5) / static_cast<double>(s.features.n_src) * s.duration_s;
      const bool inside = center >= s.answer.start_s && center <= s.answer.end_s;
      CHECK(s.features.data[r * s.features.d_v] == (inside ? 2.0f : 0.0f));
    }
    // generation is a pure function of its arguments
    CHECK(b.samples[i].question == s.question);
    CHECK(b.samples[i].features.data == s.features.data);
    CHECK(b.samples[i].answer.start_s == s.answer.start_s);
  }
  CHECK(ids.size() == a.samples.size());
  // different splits differ
  const Corpus v = generate_synthetic_corpus(12, 42, gc, Split::valid);
  CHECK(v.samples[0].duration_s != a.samples[0].duration_s);
}

TEST_CASE("corpus: write -> load round trip and byte-stable regeneration") {
  const GenConfig gc;
  const Corpus corpus = generate_synthetic_corpus(5, 9, gc, Split::train);
  const fs::path dir1 = temp_dir("corpus1");
  const fs::path dir2 = temp_dir("corpus2");
  write_corpus(dir1, corpus);
  write_corpus(dir2, generate_synthetic_corpus(5, 9, gc, Split::train));

  // identical regeneration means identical bytes, file by file
  for (const auto& entry : fs::recursive_directory_iterator(dir1)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), dir1);
    CHECK(read_file_bytes(entry.path()) == read_file_bytes(dir2 / rel));
  }

  const Corpus back = load_corpus(dir1, Split::train);
  REQUIRE(back.samples.size() == corpus.samples.size());
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    CHECK(back.samples[i].id == corpus.samples[i].id);
    CHECK(back.samples[i].question == corpus.samples[i].question);
    CHECK(back.samples[i].duration_s == corpus.samples[i].duration_s);
    CHECK(back.samples[i].answer.start_s == corpus.samples[i].answer.start_s);
    CHECK(back.samples[i].answer.end_s == corpus.samples[i].answer.end_s);
    REQUIRE(back.samples[i].track.cues.size() == corpus.samples[i].track.cues.size());
    for (std::size_t k = 0; k < corpus.samples[i].track.cues.size(); ++k) {
      CHECK(back.samples[i].track.cues[k].span.start_s ==
            corpus.samples[i].track.cues[k].span.start_s);
      CHECK(back.samples[i].track.cues[k].text == corpus.samples[i].track.cues[k].text);
    }
    CHECK(back.samples[i].features.data == corpus.samples[i].features.data);
  }
}

TEST_CASE("corpus: manifest oddities") {
  const fs::path dir = temp_dir("manifest");
  Corpus corpus = generate_synthetic_corpus(2, 3, GenConfig{}, Split::train);

  SECTION("overlong answer is clipped with a warning") {
    corpus.samples[0].answer.end_s = corpus.samples[0].duration_s + 5.0;
    write_corpus(dir, corpus);
    int warnings = 0;
    const Corpus back = load_corpus(dir, Split::train, [&](const std::string&) { ++warnings; });
    CHECK(warnings >= 1);
    CHECK(back.samples[0].answer.end_s == back.samples[0].duration_s);
  }
  SECTION("duplicate ids are rejected") {
    corpus.samples[1].id = corpus.samples[0].id;
    // write_corpus would collide on file names; build the manifest by hand
    write_corpus(dir, corpus);
    CHECK_THROWS_AS(load_corpus(dir, Split::train), FormatError);
  }
  SECTION("wrong split name in manifest") {
    write_corpus(dir, corpus);
    std::string manifest = read_file_bytes(manifest_path(dir, Split::train));
    const auto pos = manifest.find("\"train\"");
    REQUIRE(pos != std::string::npos);
    manifest.replace(pos, 7, "\"valid\"");
    write_file_bytes(manifest_path(dir, Split::train), manifest);
    CHECK_THROWS_AS(load_corpus(dir, Split::train), FormatError);
  }
}
