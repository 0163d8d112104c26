#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tagv/error.hpp"
#include "tagv/tensor.hpp"

namespace tagv {

// ---------------------------------------------------------------------------
// Parameter store: named dense tensors plus AdamW state, kept outside the
// autodiff graph. Iteration always follows registration order, which pins
// down initialization draws, gradient reduction order, and file layout.
// ---------------------------------------------------------------------------

template <class Real>
struct ParamEntry {
  Shape dims;
  std::vector<Real> value;
  std::vector<Real> grad;  // filled by the trainer before each update
  std::vector<Real> m, v;  // AdamW moments, sized lazily
  std::uint64_t step = 0;  // per-parameter update count for bias correction
};

template <class Real>
class ParamStore {
 public:
  ParamEntry<Real>& add(const std::string& name, Shape dims, std::vector<Real> init) {
    if (entries_.count(name)) throw Error("param store: duplicate parameter '" + name + "'");
    if (shape_size(dims) != init.size()) {
      throw ShapeError("param store: '" + name + "' has " + std::to_string(init.size()) +
                       " values for shape " + shape_str(dims));
    }
    order_.push_back(name);
    ParamEntry<Real>& e = entries_[name];
    e.dims = std::move(dims);
    e.value = std::move(init);
    return e;
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  ParamEntry<Real>& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("param store: unknown parameter '" + name + "'");
    return it->second;
  }
  const ParamEntry<Real>& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("param store: unknown parameter '" + name + "'");
    return it->second;
  }

  const std::vector<std::string>& names() const { return order_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& name : order_) n += entries_.at(name).value.size();
    return n;
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, ParamEntry<Real>> entries_;
};

// Graph leaves materialized from a store. Each forward pass gets its own
// copies, so concurrent per-sample graphs never share gradient buffers and
// the final reduction happens in one fixed order.
template <class Real>
class Leaves {
 public:
  static Leaves from_store(const ParamStore<Real>& store, bool requires_grad = true) {
    Leaves out;
    for (const auto& name : store.names()) {
      const auto& e = store.at(name);
      out.order_.push_back(name);
      out.map_.emplace(name, requires_grad ? Tensor<Real>::leaf(e.dims, e.value)
                                           : Tensor<Real>::constant(e.dims, e.value));
    }
    return out;
  }

  const Tensor<Real>& at(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw Error("leaves: unknown parameter '" + name + "'");
    return it->second;
  }

  const std::vector<std::string>& names() const { return order_; }

  // Add this graph's leaf gradients into `into` (keyed like the store).
  void accumulate_grads(std::unordered_map<std::string, std::vector<Real>>& into) const {
    for (const auto& name : order_) {
      const Tensor<Real>& t = map_.at(name);
      auto g = t.grad();
      auto it = into.find(name);
      if (it == into.end()) {
        into.emplace(name, std::move(g));
      } else {
        auto& acc = it->second;
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
      }
    }
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor<Real>> map_;
};

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 0.0;  // 0 disables clipping
};

// One decoupled-weight-decay Adam update over every parameter. Global-norm
// clipping is applied to the gradients first. Returns the pre-clip norm.
template <class Real>
double adamw_step(ParamStore<Real>& store, const AdamWConfig& cfg) {
  double sq = 0.0;
  for (const auto& name : store.names()) {
    auto& e = store.at(name);
    if (e.grad.size() != e.value.size()) {
      throw Error("adamw_step: missing gradient for parameter '" + name + "'");
    }
    for (Real g : e.grad) {
      const double gd = static_cast<double>(g);
      if (!std::isfinite(gd)) throw NonFiniteError("adamw_step: non-finite gradient in '" + name + "'");
      sq += gd * gd;
    }
  }
  const double norm = std::sqrt(sq);
  double gscale = 1.0;
  if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) gscale = cfg.clip_norm / norm;

  for (const auto& name : store.names()) {
    auto& e = store.at(name);
    if (e.m.size() != e.value.size()) e.m.assign(e.value.size(), Real(0));
    if (e.v.size() != e.value.size()) e.v.assign(e.value.size(), Real(0));
    e.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(e.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(e.step));
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double g = static_cast<double>(e.grad[i]) * gscale;
      const double m = cfg.beta1 * static_cast<double>(e.m[i]) + (1.0 - cfg.beta1) * g;
      const double v = cfg.beta2 * static_cast<double>(e.v[i]) + (1.0 - cfg.beta2) * g * g;
      e.m[i] = static_cast<Real>(m);
      e.v[i] = static_cast<Real>(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      const double w = static_cast<double>(e.value[i]);
      e.value[i] = static_cast<Real>(
          w - cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * w));
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Gradient certification by central differences
// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t probes = 0;
};

// Compare analytic gradients against (f(x+h) - f(x-h)) / 2h for a probe of
// entries in every parameter. `loss_fn` maps fresh Leaves to a scalar loss
// tensor and must be deterministic (no dropout). Relative error uses a unit
// floor: |a - f| / max(1, |a|, |f|), i.e. absolute error for sub-unit
// gradients, relative above.
//
// max_probes_per_param == 0 probes every entry; otherwise entries are taken
// at a fixed stride so coverage stays spread across the tensor.
template <class Real, class LossFn>
GradCheckResult grad_check(ParamStore<Real>& store, LossFn&& loss_fn, double h,
                           std::size_t max_probes_per_param = 0) {
  if (!(h > 0.0)) throw Error("grad_check: step h must be positive");

  Leaves<Real> base = Leaves<Real>::from_store(store);
  Tensor<Real> loss = loss_fn(base);
  if (loss.size() != 1) throw ShapeError("grad_check: loss must be scalar");
  loss.backward();

  std::unordered_map<std::string, std::vector<Real>> analytic;
  base.accumulate_grads(analytic);

  GradCheckResult res;
  for (const auto& name : store.names()) {
    auto& e = store.at(name);
    const std::vector<Real>& a = analytic.at(name);
    const std::size_t count = e.value.size();
    std::size_t stride = 1;
    if (max_probes_per_param > 0 && count > max_probes_per_param) {
      stride = count / max_probes_per_param;
    }
    for (std::size_t i = 0; i < count; i += stride) {
      const Real saved = e.value[i];

      e.value[i] = saved + static_cast<Real>(h);
      const double f_plus =
          static_cast<double>(loss_fn(Leaves<Real>::from_store(store)).item());
      e.value[i] = saved - static_cast<Real>(h);
      const double f_minus =
          static_cast<double>(loss_fn(Leaves<Real>::from_store(store)).item());
      e.value[i] = saved;

      const double fd = (f_plus - f_minus) / (2.0 * h);
      const double an = static_cast<double>(a[i]);
      const double denom = std::max({1.0, std::fabs(an), std::fabs(fd)});
      const double rel = std::fabs(an - fd) / denom;
      ++res.probes;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = name;
        res.worst_index = i;
        res.worst_analytic = an;
        res.worst_numeric = fd;
      }
    }
  }
  return res;
}

}  // namespace tagv
