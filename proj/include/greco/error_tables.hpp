// Copyright 2026 The greco Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

// Per-layer gradient accumulation between replans, and the error/size tables
// that feed the planner.

#pragma once

#include <Eigen/SVD>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "greco/common.hpp"
#include "greco/compressors.hpp"

namespace greco {

// ---------------------------------------------------------------------------
// Gradient accumulation
// ---------------------------------------------------------------------------

// Raw per-layer sums over a planning window. Sums are held in single
// precision so that a window written to a trace replays bit-identically.
class GradientAccumulator {
 public:
  GradientAccumulator() = default;
  explicit GradientAccumulator(std::vector<LayerSpec> layers, std::uint64_t window_id = 0)
      : layers_(std::move(layers)), window_id_(window_id) {
    sums_.reserve(layers_.size());
    for (const auto& l : layers_) sums_.emplace_back(l.element_count, 0.0f);
  }

  template <typename Grads>
  void accumulate(const Grads& step_grads) {
    if (step_grads.size() != layers_.size())
      throw DataError("accumulate: expected " + std::to_string(layers_.size()) +
                      " layers, got " + std::to_string(step_grads.size()));
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& g = step_grads[l];
      if (g.size() != sums_[l].size())
        throw DataError("accumulate: layer '" + layers_[l].name + "' has " +
                        std::to_string(g.size()) + " values, expected " +
                        std::to_string(sums_[l].size()));
    }
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      auto& s = sums_[l];
      const auto& g = step_grads[l];
      for (std::size_t i = 0; i < s.size(); ++i)
        s[i] = static_cast<float>(static_cast<double>(s[i]) + static_cast<double>(g[i]));
    }
    ++step_count_;
  }

  void reset() {
    for (auto& s : sums_) std::fill(s.begin(), s.end(), 0.0f);
    step_count_ = 0;
  }

  void set_window(std::uint64_t id) { window_id_ = id; }
  void set_step_count(std::uint32_t n) { step_count_ = n; }

  const std::vector<LayerSpec>& layers() const { return layers_; }
  const std::vector<std::vector<float>>& sums() const { return sums_; }
  std::vector<std::vector<float>>& mutable_sums() { return sums_; }
  std::uint32_t step_count() const { return step_count_; }
  std::uint64_t window_id() const { return window_id_; }
  bool empty() const { return layers_.empty(); }

  std::vector<double> layer_values(std::size_t l) const {
    return std::vector<double>(sums_[l].begin(), sums_[l].end());
  }

 private:
  std::vector<LayerSpec> layers_;
  std::vector<std::vector<float>> sums_;
  std::uint32_t step_count_ = 0;
  std::uint64_t window_id_ = 0;
};

// ---------------------------------------------------------------------------
// Parameter ranges
// ---------------------------------------------------------------------------

struct MethodRange {
  Method family = Method::kQuantize;
  std::vector<CompressionParam> defaults;    // one per layer
  std::vector<CompressionParam> candidates;  // ascending fidelity
};

namespace detail {

inline void sort_unique(std::vector<CompressionParam>& c) {
  std::sort(c.begin(), c.end(), fidelity_less);
  c.erase(std::unique(c.begin(), c.end()), c.end());
}

}  // namespace detail

// Candidate grid around a default: [d/2, 2d] step 1 for bits and ranks,
// [d/10, 10d] step d/10 for densities (clamped to 1).
inline std::vector<CompressionParam> derive_candidates(const CompressionParam& def) {
  validate(def);
  std::vector<CompressionParam> c;
  if (const auto* q = std::get_if<Quantize>(&def)) {
    const int lo = std::max(1, q->bits / 2);
    const int hi = std::min(16, 2 * q->bits);
    for (int b = lo; b <= hi; ++b) c.push_back(Quantize{b, q->group_size});
  } else if (const auto* r = std::get_if<LowRank>(&def)) {
    const int lo = std::max(1, r->rank / 2);
    for (int k = lo; k <= 2 * r->rank; ++k) c.push_back(LowRank{k});
  } else if (const auto* s = std::get_if<Sparsify>(&def)) {
    for (std::int64_t i = 1; i <= 100; ++i) {
      const auto num = s->num * i;
      const auto den = s->den * 10;
      c.push_back(num >= den ? Sparsify{1, 1} : make_density(num, den));
    }
  } else {
    c.push_back(Lossless{});
  }
  detail::sort_unique(c);
  return c;
}

// Explicit grid lo, lo+step, ..., <= hi.
inline std::vector<CompressionParam> range_candidates(const CompressionParam& lo,
                                                      const CompressionParam& hi,
                                                      const CompressionParam& step) {
  validate(lo);
  validate(hi);
  if (lo.index() != hi.index() || lo.index() != step.index())
    throw UsageError("range bounds must share one method");
  std::vector<CompressionParam> c;
  if (const auto* q = std::get_if<Quantize>(&lo)) {
    const int h = std::get<Quantize>(hi).bits, st = std::get<Quantize>(step).bits;
    if (st < 1) throw UsageError("range step must be positive");
    for (int b = q->bits; b <= h; b += st) c.push_back(Quantize{b, q->group_size});
  } else if (const auto* r = std::get_if<LowRank>(&lo)) {
    const int h = std::get<LowRank>(hi).rank, st = std::get<LowRank>(step).rank;
    if (st < 1) throw UsageError("range step must be positive");
    for (int k = r->rank; k <= h; k += st) c.push_back(LowRank{k});
  } else if (const auto* s = std::get_if<Sparsify>(&lo)) {
    const auto& h = std::get<Sparsify>(hi);
    const auto& st = std::get<Sparsify>(step);
    // Common denominator so the walk stays exact.
    const std::int64_t den = std::lcm(std::lcm(s->den, h.den), st.den);
    const std::int64_t a = s->num * (den / s->den), b = h.num * (den / h.den),
                       d = st.num * (den / st.den);
    for (std::int64_t x = a; x <= b; x += d) c.push_back(make_density(x, den));
  } else {
    c.push_back(Lossless{});
  }
  if (c.empty()) throw UsageError("empty parameter range");
  detail::sort_unique(c);
  return c;
}

inline MethodRange make_range(const CompressionParam& def, std::size_t layer_count,
                              std::vector<CompressionParam> candidates = {}) {
  MethodRange r;
  r.family = method_of(def);
  r.defaults.assign(layer_count, def);
  r.candidates = candidates.empty() ? derive_candidates(def) : std::move(candidates);
  for (const auto& c : r.candidates) {
    validate(c);
    if (c.index() != def.index()) throw UsageError("candidate family differs from default");
  }
  if (std::find(r.candidates.begin(), r.candidates.end(), def) == r.candidates.end())
    throw UsageError("default " + to_string(def) + " is outside the candidate range");
  detail::sort_unique(r.candidates);
  return r;
}

// Heterogeneous per-layer defaults (for example produced by another adaptive
// scheme). Defaults missing from the grid are added to it.
inline MethodRange with_per_layer_defaults(MethodRange r,
                                           std::vector<CompressionParam> defaults) {
  if (defaults.size() != r.defaults.size())
    throw DataError("per-layer defaults: expected " + std::to_string(r.defaults.size()) +
                    " entries, got " + std::to_string(defaults.size()));
  for (const auto& d : defaults) {
    validate(d);
    if (method_of(d) != r.family) throw DataError("per-layer default of a different method");
    r.candidates.push_back(d);
  }
  detail::sort_unique(r.candidates);
  r.defaults = std::move(defaults);
  return r;
}

// ---------------------------------------------------------------------------
// Low-rank error estimation
// ---------------------------------------------------------------------------

enum class LowRankErrorMethod { kSvd, kPower };

inline const char* to_string(LowRankErrorMethod m) {
  return m == LowRankErrorMethod::kSvd ? "svd" : "power";
}

// Power iteration costs O(m k r_max^2) for the whole range, SVD O(m k min(m,k)).
inline LowRankErrorMethod select_lowrank_error_method(std::uint64_t m, std::uint64_t k,
                                                      int r_min, int r_max) {
  (void)r_min;
  if (m == 0 || k == 0 || r_max < 1) throw UsageError("invalid low-rank dimensions");
  const auto r2 = static_cast<std::uint64_t>(r_max) * static_cast<std::uint64_t>(r_max);
  return r2 < std::min(m, k) ? LowRankErrorMethod::kPower : LowRankErrorMethod::kSvd;
}

inline Eigen::VectorXd singular_values(const ConstMatrixMap& m) {
  Eigen::BDCSVD<RowMatrix> svd(m);
  if (svd.info() != Eigen::Success) throw DataError("SVD did not converge");
  Eigen::VectorXd s = svd.singularValues();
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (!std::isfinite(s[i])) throw DataError("SVD produced non-finite singular values");
  return s;
}

// e_r = sqrt(sum_{i>r} sigma_i^2) for every requested rank, from one SVD.
inline std::vector<double> lowrank_error_svd(const ConstMatrixMap& m,
                                             std::span<const int> ranks) {
  const Eigen::VectorXd s = singular_values(m);
  const auto n = static_cast<std::size_t>(s.size());
  // tail[i] = sum_{j >= i} s_j^2, accumulated from the smallest value up.
  std::vector<double> tail(n + 1, 0.0);
  for (std::size_t i = n; i-- > 0;) tail[i] = tail[i + 1] + s[static_cast<Eigen::Index>(i)] *
                                                                 s[static_cast<Eigen::Index>(i)];
  std::vector<double> out;
  out.reserve(ranks.size());
  for (int r : ranks) {
    if (r < 0) throw UsageError("rank must be non-negative");
    out.push_back(std::sqrt(tail[std::min<std::size_t>(static_cast<std::size_t>(r), n)]));
  }
  return out;
}

inline constexpr int kPowerOversample = 4;

inline std::vector<double> lowrank_error_power(const ConstMatrixMap& m,
                                               std::span<const int> ranks, int power_steps,
                                               Rng& rng) {
  const auto full = std::min(m.rows(), m.cols());
  std::vector<double> out;
  out.reserve(ranks.size());
  for (int r : ranks) {
    if (r < 1) throw UsageError("rank must be >= 1");
    if (r >= full) {
      out.push_back(0.0);
      continue;
    }
    // Oversampled subspace: iterate on r + extra columns, then keep the best
    // rank-r approximation inside it. Plain rank-r iteration stalls when
    // sigma_r and sigma_{r+1} are close.
    const auto width = static_cast<int>(std::min<Eigen::Index>(full, r + kPowerOversample));
    const auto pl = power_iteration(m, width, power_steps, rng);
    Eigen::Map<const RowMatrix> p(pl.p.data(), m.rows(), width);
    Eigen::Map<const RowMatrix> q(pl.q.data(), m.cols(), width);
    const Eigen::MatrixXd b = q.transpose();  // P^T M
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::MatrixXd best = svd.matrixU().leftCols(r) *
                                 svd.singularValues().head(r).asDiagonal() *
                                 svd.matrixV().leftCols(r).transpose();
    out.push_back((m - p * best).norm());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Error / size tables
// ---------------------------------------------------------------------------

struct TableOptions {
  std::uint64_t seed = 0;
  int power_steps = kDefaultPowerSteps;
  bool squared = false;  // squared l2 instead of l2 (ablation)
  // Forces one low-rank error method; otherwise chosen per layer by cost.
  std::optional<LowRankErrorMethod> lowrank_method;
  unsigned threads = thread_count();
};

struct ErrorSizeTable {
  std::vector<LayerSpec> layers;
  std::vector<CompressionParam> candidates;
  std::vector<std::size_t> default_index;          // per layer
  std::vector<std::vector<double>> errors_raw;     // L x K
  std::vector<std::vector<std::int64_t>> errors_disc;
  std::vector<std::vector<std::uint64_t>> costs_bits;
  std::vector<std::vector<bool>> feasible;
  std::vector<std::string> lowrank_method;         // per layer, "" if unused
  double emax = 0.0;
  std::int64_t D = 0;
  bool squared = false;
  std::uint64_t window_id = 0;
  double build_seconds = 0.0;

  std::size_t L() const { return layers.size(); }
  std::size_t K() const { return candidates.size(); }
  double step() const { return D > 0 ? emax / static_cast<double>(D) : 0.0; }

  std::uint64_t default_bits() const {
    std::uint64_t s = 0;
    for (std::size_t l = 0; l < L(); ++l) s += costs_bits[l][default_index[l]];
    return s;
  }
};

// Floor discretization onto D steps of emax/D. Entries above D are
// infeasible. With emax == 0 only exact zeros stay feasible.
inline void discretize(ErrorSizeTable& t) {
  if (t.D < 1) throw UsageError("discretization factor D must be >= 1");
  const auto D = static_cast<double>(t.D);
  t.errors_disc.assign(t.L(), std::vector<std::int64_t>(t.K(), 0));
  t.feasible.assign(t.L(), std::vector<bool>(t.K(), true));
  for (std::size_t l = 0; l < t.L(); ++l) {
    for (std::size_t j = 0; j < t.K(); ++j) {
      const double raw = t.errors_raw[l][j];
      if (!std::isfinite(raw) || raw < 0.0)
        throw DataError("non-finite compression error for layer '" + t.layers[l].name + "'");
      std::int64_t disc;
      if (raw == 0.0) {
        disc = 0;
      } else if (t.emax <= 0.0) {
        disc = t.D + 1;
      } else {
        const double v = std::floor(raw * D / t.emax);
        disc = v > D ? t.D + 1 : static_cast<std::int64_t>(v);
      }
      t.errors_disc[l][j] = disc;
      t.feasible[l][j] = disc <= t.D;
    }
  }
  std::int64_t def_sum = 0;
  for (std::size_t l = 0; l < t.L(); ++l) def_sum += t.errors_disc[l][t.default_index[l]];
  if (def_sum > t.D)
    throw DataError("default assignment infeasible after discretization (" +
                    std::to_string(def_sum) + " > " + std::to_string(t.D) + ")");
}

namespace detail {

inline std::vector<std::size_t> default_indices(const MethodRange& range) {
  std::vector<std::size_t> idx;
  for (const auto& d : range.defaults) {
    auto it = std::find(range.candidates.begin(), range.candidates.end(), d);
    if (it == range.candidates.end())
      throw UsageError("default " + to_string(d) + " missing from candidates");
    idx.push_back(static_cast<std::size_t>(it - range.candidates.begin()));
  }
  return idx;
}

inline std::uint64_t cell_seed(const TableOptions& opt, std::uint64_t window,
                               std::size_t layer, const CompressionParam& p) {
  return derive_seed(opt.seed, window, layer, fnv1a64(to_string(p)));
}

}  // namespace detail

// Table built from explicit matrices. emax defaults to the sum of the
// default column.
inline ErrorSizeTable make_table(std::vector<LayerSpec> layers,
                                 std::vector<CompressionParam> candidates,
                                 std::vector<std::vector<double>> errors_raw,
                                 std::vector<std::vector<std::uint64_t>> costs_bits,
                                 std::vector<std::size_t> default_index, std::int64_t D,
                                 std::optional<double> emax = std::nullopt) {
  ErrorSizeTable t;
  t.layers = std::move(layers);
  t.candidates = std::move(candidates);
  t.errors_raw = std::move(errors_raw);
  t.costs_bits = std::move(costs_bits);
  t.default_index = std::move(default_index);
  t.D = D;
  t.lowrank_method.assign(t.layers.size(), "");
  if (t.errors_raw.size() != t.L() || t.costs_bits.size() != t.L() ||
      t.default_index.size() != t.L())
    throw UsageError("table dimensions disagree with layer count");
  for (std::size_t l = 0; l < t.L(); ++l) {
    if (t.errors_raw[l].size() != t.K() || t.costs_bits[l].size() != t.K())
      throw UsageError("table row width disagrees with candidate count");
    if (t.default_index[l] >= t.K()) throw UsageError("default index out of range");
  }
  if (emax) {
    t.emax = *emax;
  } else {
    for (std::size_t l = 0; l < t.L(); ++l) t.emax += t.errors_raw[l][t.default_index[l]];
  }
  discretize(t);
  return t;
}

// Errors for one layer over every candidate, EF-free.
inline std::vector<double> layer_errors(const LayerSpec& layer, std::span<const double> g,
                                        const std::vector<CompressionParam>& candidates,
                                        const TableOptions& opt, std::uint64_t window,
                                        std::string* method_used = nullptr) {
  std::vector<double> errs(candidates.size(), 0.0);
  const bool lowrank = !candidates.empty() && std::holds_alternative<LowRank>(candidates[0]);
  if (lowrank && layer.is_matrix()) {
    std::vector<int> ranks;
    for (const auto& c : candidates) ranks.push_back(std::get<LowRank>(c).rank);
    const int r_min = *std::min_element(ranks.begin(), ranks.end());
    const int r_max = *std::max_element(ranks.begin(), ranks.end());
    const auto method = opt.lowrank_method.value_or(
        select_lowrank_error_method(layer.rows, layer.cols, r_min, r_max));
    if (method_used) *method_used = to_string(method);
    detail::require_finite(g);
    ConstMatrixMap m(g.data(), static_cast<Eigen::Index>(layer.rows),
                     static_cast<Eigen::Index>(layer.cols));
    if (method == LowRankErrorMethod::kSvd) {
      errs = lowrank_error_svd(m, ranks);
    } else {
      for (std::size_t j = 0; j < candidates.size(); ++j) {
        Rng rng(detail::cell_seed(opt, window, layer.index, candidates[j]));
        const int r = ranks[j];
        errs[j] = lowrank_error_power(m, std::span<const int>(&r, 1), opt.power_steps, rng)[0];
      }
    }
    // Ranks at or above full rank are transmitted raw.
    for (std::size_t j = 0; j < candidates.size(); ++j)
      if (detail::lowrank_is_lossless(layer, ranks[j])) errs[j] = 0.0;
  } else if (!candidates.empty() &&
             std::all_of(candidates.begin(), candidates.end(),
                         [](const auto& c) { return std::holds_alternative<Sparsify>(c); })) {
    // One sort serves every density: the top-k error is the norm of the
    // n - k smallest magnitudes.
    detail::require_finite(g);
    std::vector<double> sq(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) sq[i] = g[i] * g[i];
    std::sort(sq.begin(), sq.end(), std::greater<>());
    std::vector<double> tail(sq.size() + 1, 0.0);
    for (std::size_t i = sq.size(); i-- > 0;) tail[i] = tail[i + 1] + sq[i];
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      const auto k = detail::topk_count(g.size(), std::get<Sparsify>(candidates[j]));
      errs[j] = std::sqrt(tail[std::min<std::uint64_t>(k, g.size())]);
    }
  } else {
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      Rng rng(detail::cell_seed(opt, window, layer.index, candidates[j]));
      errs[j] = compression_error(g, layer, candidates[j], rng, opt.power_steps);
    }
  }
  if (opt.squared)
    for (auto& e : errs) e *= e;
  return errs;
}

// Reference budget: sum over layers of the error of that layer's default.
inline double compute_emax(const GradientAccumulator& acc,
                           const std::vector<CompressionParam>& defaults,
                           const TableOptions& opt = {}) {
  if (acc.empty()) throw DataError("compute_emax: empty accumulator");
  if (defaults.size() != acc.layers().size())
    throw DataError("compute_emax: one default per layer required");
  std::vector<double> per_layer(defaults.size(), 0.0);
  parallel_for(
      defaults.size(),
      [&](std::size_t l) {
        const auto g = acc.layer_values(l);
        // A low-rank default alone picks its estimator from its own rank; a
        // table over a wider range may pick the other one.
        std::vector<CompressionParam> one{defaults[l]};
        per_layer[l] = layer_errors(acc.layers()[l], g, one, opt, acc.window_id())[0];
      },
      opt.threads);
  double s = 0.0;
  for (double e : per_layer) s += e;
  return s;
}

inline ErrorSizeTable build_tables(const GradientAccumulator& acc, const MethodRange& range,
                                   std::int64_t D, const TableOptions& opt = {}) {
  if (D < 1) throw UsageError("discretization factor D must be >= 1");
  if (acc.empty()) throw DataError("build_tables: empty accumulator");
  if (range.defaults.size() != acc.layers().size())
    throw DataError("build_tables: one default per layer required");
  const auto t0 = std::chrono::steady_clock::now();
  ErrorSizeTable t;
  t.layers = acc.layers();
  t.candidates = range.candidates;
  t.default_index = detail::default_indices(range);
  t.D = D;
  t.squared = opt.squared;
  t.window_id = acc.window_id();
  const std::size_t L = t.layers.size(), K = t.candidates.size();
  t.errors_raw.assign(L, std::vector<double>(K, 0.0));
  t.costs_bits.assign(L, std::vector<std::uint64_t>(K, 0));
  t.lowrank_method.assign(L, "");
  parallel_for(
      L,
      [&](std::size_t l) {
        const auto g = acc.layer_values(l);
        t.errors_raw[l] = layer_errors(t.layers[l], g, t.candidates, opt, t.window_id,
                                       &t.lowrank_method[l]);
        for (std::size_t j = 0; j < K; ++j)
          t.costs_bits[l][j] = coded_size(t.layers[l], t.candidates[j]);
      },
      opt.threads);
  for (std::size_t l = 0; l < L; ++l) t.emax += t.errors_raw[l][t.default_index[l]];
  discretize(t);
  t.build_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return t;
}

// Fidelity monotonicity violations within each layer: errors must not grow
// and sizes must grow with fidelity. Candidates that collapse to a raw
// transmission are exempt from strictness.
inline std::vector<std::string> monotonicity_violations(const ErrorSizeTable& t,
                                                        double error_slack = 0.0) {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < t.L(); ++l) {
    for (std::size_t j = 1; j < t.K(); ++j) {
      const auto& prev = t.candidates[j - 1];
      const auto& cur = t.candidates[j];
      if (t.errors_raw[l][j] > t.errors_raw[l][j - 1] + error_slack)
        out.push_back("layer " + t.layers[l].name + ": error rises from " + to_string(prev) +
                      " to " + to_string(cur));
      // Equal sizes are fine when both candidates encode identically (top-k
      // rounding to the same k on a tiny layer, low-rank collapsing to raw).
      const bool same_encoding = t.errors_raw[l][j] == t.errors_raw[l][j - 1];
      if (t.costs_bits[l][j] < t.costs_bits[l][j - 1] ||
          (t.costs_bits[l][j] == t.costs_bits[l][j - 1] && !same_encoding))
        out.push_back("layer " + t.layers[l].name + ": size not increasing at " +
                      to_string(cur));
    }
  }
  return out;
}

}  // namespace greco
