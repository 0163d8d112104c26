#pragma once

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "tagv/config.hpp"
#include "tagv/eval.hpp"
#include "tagv/model.hpp"
#include "tagv/optim.hpp"

namespace tagv {

// ---------------------------------------------------------------------------
// Learning-rate schedule: linear warmup from zero to the peak at
// warmup_steps, then linear decay to zero at max_steps.
// ---------------------------------------------------------------------------

inline double lr_at(const TrainConfig& cfg, std::size_t step) {
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (step >= cfg.max_steps) return 0.0;
  const double t = static_cast<double>(step - cfg.warmup_steps) /
                   static_cast<double>(cfg.max_steps - cfg.warmup_steps);
  return cfg.lr * (1.0 - t);
}

// Combined objective on plain numbers, used for logging and step diagnostics
// (the graph applies the identical formula).
inline double total_loss(double span, double highlight, double lambda) {
  return lambda * highlight + span;
}

struct StepStats {
  std::size_t step = 0;  // 0-based
  double span = 0.0;     // batch means
  double highlight = 0.0;
  double total = 0.0;
  double lr = 0.0;
  std::size_t skipped = 0;  // samples without usable span targets
};

// ---------------------------------------------------------------------------
// One optimizer step over a batch
// ---------------------------------------------------------------------------

namespace detail {

template <class Real>
struct SampleGradients {
  std::unordered_map<std::string, std::vector<Real>> grads;
  double span = 0.0, highlight = 0.0;
  bool skipped = false;
};

// Forward+backward for one sample on its own leaf copies. The dropout stream
// is derived from (seed, step, slot), so results do not depend on which
// worker ran the sample.
template <class Real>
SampleGradients<Real> sample_pass(const Model<Real>& model, const PreparedSample<Real>& ps,
                                  std::size_t step, std::size_t slot) {
  SampleGradients<Real> out;
  const TrainConfig& cfg = model.config();
  RngState rng = RngState::derive(cfg.seed, RngState::combine(0xD0ull + step, slot));
  const Leaves<Real> leaves = Leaves<Real>::from_store(model.params());
  const ForwardResult<Real> fr = model.forward(ps, leaves, /*train=*/true, &rng);
  if (fr.skipped) {
    out.skipped = true;
    return out;
  }
  out.span = static_cast<double>(fr.span.item());
  out.highlight = static_cast<double>(fr.highlight.item());
  fr.total.backward();
  leaves.accumulate_grads(out.grads);
  return out;
}

}  // namespace detail

// Run a batch: per-sample graphs (possibly on several worker threads), then
// a fixed-order gradient reduction and one AdamW update. The reduction order
// is slot order regardless of thread count, so any --threads value yields
// bit-identical training.
template <class Real>
StepStats train_step(Model<Real>& model, const std::vector<const PreparedSample<Real>*>& batch,
                     std::size_t step, std::size_t threads = 1) {
  if (batch.empty()) throw Error("train_step: empty batch");
  const TrainConfig& cfg = model.config();

  std::vector<detail::SampleGradients<Real>> results(batch.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, batch.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      results[i] = detail::sample_pass(model, *batch[i], step, i);
    }
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w]() {
        for (std::size_t i = w; i < batch.size(); i += workers) {
          results[i] = detail::sample_pass(model, *batch[i], step, i);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  StepStats stats;
  stats.step = step;
  stats.lr = lr_at(cfg, step);

  std::unordered_map<std::string, std::vector<Real>> grad_sum;
  std::size_t used = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {  // fixed slot order
    auto& r = results[i];
    if (r.skipped) {
      ++stats.skipped;
      continue;
    }
    ++used;
    stats.span += r.span;
    stats.highlight += r.highlight;
    for (const auto& name : model.params().names()) {
      auto it = r.grads.find(name);
      if (it == r.grads.end()) continue;
      auto& acc = grad_sum[name];
      if (acc.empty()) acc.assign(it->second.size(), Real(0));
      for (std::size_t j = 0; j < it->second.size(); ++j) acc[j] += it->second[j];
    }
  }
  if (used == 0) {
    throw Error("train_step: every sample in the batch lost its span targets to truncation");
  }
  stats.span /= static_cast<double>(used);
  stats.highlight /= static_cast<double>(used);
  stats.total = total_loss(stats.span, stats.highlight, cfg.lambda);
  if (!std::isfinite(stats.span) || !std::isfinite(stats.highlight) || !std::isfinite(stats.total)) {
    throw NonFiniteError("train_step: non-finite loss at step " + std::to_string(step) +
                         " (span " + std::to_string(stats.span) + ", highlight " +
                         std::to_string(stats.highlight) + ")");
  }

  const Real inv = static_cast<Real>(1.0 / static_cast<double>(used));
  for (const auto& name : model.params().names()) {
    auto& e = model.params().at(name);
    auto it = grad_sum.find(name);
    if (it == grad_sum.end()) {
      e.grad.assign(e.value.size(), Real(0));
    } else {
      e.grad = std::move(it->second);
      for (auto& g : e.grad) g *= inv;
    }
  }

  AdamWConfig opt;
  opt.lr = stats.lr;
  opt.clip_norm = cfg.clip_norm;
  adamw_step(model.params(), opt);
  return stats;
}

// ---------------------------------------------------------------------------
// Full training loop
// ---------------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t steps_done = 0;
  double valid_miou = 0.0;
};

template <class Real>
struct TrainOutcome {
  ParamStore<Real> best_params;
  double best_valid_miou = -1.0;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> epochs;
  std::size_t steps = 0;
};

// Epochs over a seeded shuffle of the train split until max_steps updates
// have run. After every epoch the valid split is scored (greedy decode,
// mIoU); the best-scoring parameters are kept and returned. One log line per
// step: step, span loss, highlight loss, total, lr (tab-separated).
template <class Real>
TrainOutcome<Real> train_loop(Model<Real>& model, const std::vector<PreparedSample<Real>>& train,
                              const std::vector<PreparedSample<Real>>& valid,
                              std::size_t threads = 1, std::ostream* log = nullptr) {
  if (train.empty()) throw Error("train_loop: empty train split");
  const TrainConfig& cfg = model.config();

  TrainOutcome<Real> out;
  std::size_t step = 0;
  std::size_t epoch = 0;
  char line[160];
  while (step < cfg.max_steps) {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    RngState shuffle_rng = RngState::derive(cfg.seed, RngState::combine(0x5F0ull, epoch));
    shuffle_rng.shuffle(order);

    for (std::size_t pos = 0; pos < order.size() && step < cfg.max_steps;
         pos += cfg.batch_size) {
      std::vector<const PreparedSample<Real>*> batch;
      for (std::size_t b = pos; b < std::min(pos + cfg.batch_size, order.size()); ++b) {
        batch.push_back(&train[order[b]]);
      }
      const StepStats stats = train_step(model, batch, step, threads);
      if (log) {
        std::snprintf(line, sizeof(line), "%zu\t%.6f\t%.6f\t%.6f\t%.8f\n", stats.step, stats.span,
                      stats.highlight, stats.total, stats.lr);
        (*log) << line;
      }
      ++step;
    }
    ++epoch;

    if (!valid.empty()) {
      const MetricsReport rep = evaluate_prepared(model, valid, cfg.decode_mode);
      out.epochs.push_back({epoch, step, rep.miou});
      if (rep.miou > out.best_valid_miou) {
        out.best_valid_miou = rep.miou;
        out.best_epoch = epoch;
        out.best_params = model.params();
      }
    }
  }
  if (valid.empty() || out.best_valid_miou < 0.0) {
    out.best_params = model.params();
    out.best_epoch = epoch;
  }
  out.steps = step;
  return out;
}

}  // namespace tagv
