// Command-line front end: generate corpora, train, evaluate, predict,
// inspect. Exit codes: 0 ok, 1 runtime failure, 2 usage error.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tagv/checkpoint.hpp"
#include "tagv/config.hpp"
#include "tagv/corpus.hpp"
#include "tagv/eval.hpp"
#include "tagv/gradcheck.hpp"
#include "tagv/model.hpp"
#include "tagv/selection.hpp"
#include "tagv/synthetic.hpp"
#include "tagv/trainer.hpp"

namespace fs = std::filesystem;

namespace {

void warn_to_stderr(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

tagv::Split parse_split_flag(const std::string& s) { return tagv::split_from_name(s); }

int run_gen(const fs::path& out_dir, std::size_t n_train, std::uint64_t seed,
            const tagv::GenConfig& gc) {
  const std::size_t n_eval = std::max<std::size_t>(1, n_train / 2);
  const tagv::Corpus train =
      tagv::generate_synthetic_corpus(n_train, seed, gc, tagv::Split::train);
  const tagv::Corpus valid =
      tagv::generate_synthetic_corpus(n_eval, seed, gc, tagv::Split::valid);
  const tagv::Corpus test = tagv::generate_synthetic_corpus(n_eval, seed, gc, tagv::Split::test);
  tagv::write_corpus(out_dir, train);
  tagv::write_corpus(out_dir, valid);
  tagv::write_corpus(out_dir, test);
  std::cout << "wrote " << train.samples.size() << " train / " << valid.samples.size()
            << " valid / " << test.samples.size() << " test samples to " << out_dir.string()
            << "\n";
  return 0;
}

int run_train(const fs::path& corpus_dir, const std::string& config_path, const fs::path& out_ckpt,
              const std::string& log_path, std::size_t threads) {
  tagv::TrainConfig cfg;
  if (!config_path.empty()) cfg = tagv::load_config(config_path);
  tagv::validate_config(cfg);

  const tagv::Corpus train_corpus = tagv::load_corpus(corpus_dir, tagv::Split::train, warn_to_stderr);
  tagv::Corpus valid_corpus;
  if (fs::exists(tagv::manifest_path(corpus_dir, tagv::Split::valid))) {
    valid_corpus = tagv::load_corpus(corpus_dir, tagv::Split::valid, warn_to_stderr);
  }

  tagv::Model<float> model(cfg, tagv::build_vocabulary(train_corpus));
  model.init_params();

  std::vector<tagv::PreparedSample<float>> train_ps, valid_ps;
  for (const auto& s : train_corpus.samples) train_ps.push_back(model.prepare(s));
  for (const auto& s : valid_corpus.samples) valid_ps.push_back(model.prepare(s));

  std::ostringstream log;
  const tagv::TrainOutcome<float> outcome =
      tagv::train_loop(model, train_ps, valid_ps, threads, &log);
  if (!log_path.empty()) tagv::write_file_bytes(log_path, log.str());

  model.params() = outcome.best_params;
  tagv::save_checkpoint(out_ckpt, cfg, model.vocab(), model.params(), /*with_opt_state=*/false);

  char buf[160];
  std::snprintf(buf, sizeof(buf), "steps %zu, best valid mIoU %.2f at epoch %zu\n", outcome.steps,
                outcome.best_valid_miou, outcome.best_epoch);
  std::cout << buf;
  return 0;
}

int run_eval(const fs::path& corpus_dir, const std::string& split_name, const fs::path& ckpt_path,
             const std::string& report_path, const std::string& decode_flag, bool strict_recall) {
  const tagv::CheckpointContent ckpt = tagv::load_checkpoint(ckpt_path);
  const tagv::Corpus corpus =
      tagv::load_corpus(corpus_dir, parse_split_flag(split_name), warn_to_stderr);
  const tagv::DecodeMode mode = decode_flag.empty() ? ckpt.config.decode_mode
                                                    : tagv::decode_mode_from_name(decode_flag);
  tagv::MetricsReport rep = tagv::evaluate_model(corpus, ckpt, mode);
  if (strict_recall) {
    std::vector<double> ious;
    for (const auto& r : rep.per_sample) ious.push_back(r.iou);
    for (std::size_t i = 0; i < tagv::kRecallThresholds.size(); ++i) {
      rep.recall[i] = tagv::recall_at_iou_pct(ious, tagv::kRecallThresholds[i], /*strict=*/true);
    }
  }
  const std::string text = tagv::format_report(rep);
  if (!report_path.empty()) tagv::write_file_bytes(report_path, text);
  std::cout << text;
  return 0;
}

tagv::Sample load_single_sample(const fs::path& sample_json) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(tagv::read_file_bytes(sample_json));
  } catch (const nlohmann::json::exception& e) {
    throw tagv::FormatError(sample_json.string() + ": " + e.what());
  }
  return tagv::load_manifest_entry(j, sample_json.parent_path(), warn_to_stderr);
}

int run_predict(const fs::path& ckpt_path, const fs::path& sample_json,
                const std::string& out_path, const std::string& decode_flag) {
  const tagv::CheckpointContent ckpt = tagv::load_checkpoint(ckpt_path);
  const tagv::Sample sample = load_single_sample(sample_json);
  const tagv::Model<float> model = tagv::model_from_checkpoint(ckpt);
  const tagv::PreparedSample<float> ps = model.prepare(sample);
  const tagv::DecodeMode mode = decode_flag.empty() ? ckpt.config.decode_mode
                                                    : tagv::decode_mode_from_name(decode_flag);
  const tagv::SpanPrediction pred = model.predict(ps, mode);
  const std::string text = tagv::format_prediction_fields(sample.id, pred) + "\n";
  if (!out_path.empty()) tagv::write_file_bytes(out_path, text);
  std::cout << text;
  return 0;
}

int run_select(const fs::path& srt_path, double start, double end) {
  const tagv::SrtParseResult parsed = tagv::parse_srt(tagv::read_file_bytes(srt_path));
  if (parsed.reordered) warn_to_stderr(srt_path.string() + ": cues were out of order, sorted");
  const tagv::SelectedSpan sel = tagv::select_subtitle_span(parsed.track, start, end);
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%.3f\t%.3f\t%d\t%d\n", sel.r_s, sel.r_e, sel.start_cue,
                sel.end_cue);
  std::cout << buf;
  return 0;
}

int run_gradcheck(const fs::path& config, bool f64, double h_flag, std::size_t probes,
                  std::uint64_t seed) {
  const tagv::TrainConfig cfg =
      config.empty() ? tagv::micro_config(seed) : tagv::load_config(config);
  const double h = (h_flag > 0.0) ? h_flag : tagv::default_fd_step(f64);
  const double tol = tagv::grad_check_tolerance(f64);
  const tagv::GradCheckResult res =
      f64 ? tagv::run_model_grad_check<double>(cfg, h, probes)
          : tagv::run_model_grad_check<float>(cfg, h, probes);
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "%s precision: %zu probes, max rel err %.3e (tolerance %.0e)\n"
                "worst: %s[%zu] analytic %.6e vs numeric %.6e\n",
                f64 ? "64-bit" : "32-bit", res.probes, res.max_rel_err, tol,
                res.worst_param.c_str(), res.worst_index, res.worst_analytic, res.worst_numeric);
  std::cout << buf;
  if (res.max_rel_err >= tol) {
    std::cerr << "error: gradient check failed\n";
    return 1;
  }
  return 0;
}

int run_dump_attn(const fs::path& ckpt_path, const fs::path& sample_json, const fs::path& out_dir) {
  const tagv::CheckpointContent ckpt = tagv::load_checkpoint(ckpt_path);
  const tagv::Sample sample = load_single_sample(sample_json);
  tagv::dump_attention(ckpt, sample, out_dir);
  std::cout << "wrote attention dumps to " << out_dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"temporal answer grounding in videos: desk-scale engine"};
  app.require_subcommand(1);

  std::size_t threads = 1;
  app.add_option("--threads", threads, "worker threads for training")
      ->envname("TAGV_THREADS")
      ->check(CLI::Range(std::size_t{1}, std::size_t{256}));

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
  fs::path gen_out;
  std::size_t gen_n = 8;
  std::uint64_t gen_seed = 7;
  tagv::GenConfig gc;
  gen->add_option("--out", gen_out, "output corpus directory")->required();
  gen->add_option("--n", gen_n, "number of train samples (valid/test get half each)");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--duration-min", gc.duration_min, "minimum video length (s)");
  gen->add_option("--duration-max", gc.duration_max, "maximum video length (s)");
  gen->add_option("--min-cues", gc.min_cues, "minimum cues per video");
  gen->add_option("--max-cues", gc.max_cues, "maximum cues per video");
  gen->add_option("--answer-max-cues", gc.answer_max_cues, "longest answer in cues");
  gen->add_option("--d-v", gc.d_v, "feature channels");
  gen->add_option("--feature-hz", gc.feature_hz, "feature rows per second");
  gen->add_option("--signature-shift", gc.signature_shift, "channel-0 step inside the answer");

  // train
  auto* train = app.add_subcommand("train", "train a model on a corpus");
  fs::path train_corpus, train_ckpt;
  std::string train_config, train_log;
  train->add_option("--corpus", train_corpus, "corpus directory")->required();
  train->add_option("--config", train_config, "config file (defaults when omitted)");
  train->add_option("--out-ckpt", train_ckpt, "checkpoint output path")->required();
  train->add_option("--log", train_log, "per-step loss log path");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a corpus split");
  fs::path eval_corpus, eval_ckpt;
  std::string eval_split = "test", eval_report, eval_decode;
  bool eval_strict = false;
  eval->add_option("--corpus", eval_corpus, "corpus directory")->required();
  eval->add_option("--split", eval_split, "train | valid | test");
  eval->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--report", eval_report, "write the report here as well");
  eval->add_option("--decode", eval_decode, "decode mode override: paper | joint");
  eval->add_flag("--strict-recall", eval_strict, "count iou > threshold instead of >=");

  // predict
  auto* predict = app.add_subcommand("predict", "answer one sample with a checkpoint");
  fs::path pred_ckpt, pred_sample;
  std::string pred_out, pred_decode;
  predict->add_option("--ckpt", pred_ckpt, "checkpoint path")->required();
  predict->add_option("--sample", pred_sample, "single-sample manifest JSON")->required();
  predict->add_option("--out", pred_out, "write the prediction record here as well");
  predict->add_option("--decode", pred_decode, "decode mode override: paper | joint");

  // select
  auto* select = app.add_subcommand("select", "snap a time interval onto subtitle cues");
  fs::path sel_srt;
  double sel_start = 0.0, sel_end = 0.0;
  select->add_option("--srt", sel_srt, "subtitle file")->required();
  select->add_option("--start", sel_start, "target start time (s)")->required();
  select->add_option("--end", sel_end, "target end time (s)")->required();

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "certify gradients by central differences");
  bool gc_f64 = false;
  double gc_h = 0.0;
  std::size_t gc_probes = 32;
  std::uint64_t gc_seed = 7;
  fs::path gc_config;
  gradcheck->add_option("--config", gc_config, "config file (tiny built-in fixture when omitted)");
  gradcheck->add_flag("--f64", gc_f64, "run at 64-bit precision");
  gradcheck->add_option("--fd-step", gc_h, "finite difference step (default per precision)");
  gradcheck->add_option("--probes", gc_probes, "probed coordinates per tensor (0 = all)");
  gradcheck->add_option("--seed", gc_seed, "initialization seed");

  // dump-attn
  auto* dump = app.add_subcommand("dump-attn", "dump attention surfaces for one sample");
  fs::path dump_ckpt, dump_sample, dump_out;
  dump->add_option("--ckpt", dump_ckpt, "checkpoint path")->required();
  dump->add_option("--sample", dump_sample, "single-sample manifest JSON")->required();
  dump->add_option("--out", dump_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exit 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return run_gen(gen_out, gen_n, gen_seed, gc);
    if (train->parsed()) return run_train(train_corpus, train_config, train_ckpt, train_log, threads);
    if (eval->parsed()) return run_eval(eval_corpus, eval_split, eval_ckpt, eval_report, eval_decode, eval_strict);
    if (predict->parsed()) return run_predict(pred_ckpt, pred_sample, pred_out, pred_decode);
    if (select->parsed()) return run_select(sel_srt, sel_start, sel_end);
    if (gradcheck->parsed()) return run_gradcheck(gc_config, gc_f64, gc_h, gc_probes, gc_seed);
    if (dump->parsed()) return run_dump_attn(dump_ckpt, dump_sample, dump_out);
  } catch (const tagv::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
