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

// Per-layer parameter assignment. The main planner is a knapsack-style
// dynamic program over discretized errors:
//
//   DP[l][e] = min_c DP[l-1][e - Errors[l][c]] + w_l * Costs[l][c]
//
// which minimizes the (weighted) transmitted size subject to the total
// discretized error staying within D.

#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "greco/comm_model.hpp"
#include "greco/common.hpp"
#include "greco/compressors.hpp"
#include "greco/error_tables.hpp"

namespace greco {

enum class ObjectiveKind { kSize, kTimeWeighted, kBucketPriority, kUniform, kKMeans };

inline const char* to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::kSize: return "size";
    case ObjectiveKind::kTimeWeighted: return "time-weighted";
    case ObjectiveKind::kBucketPriority: return "bucket-priority";
    case ObjectiveKind::kUniform: return "uniform";
    case ObjectiveKind::kKMeans: return "kmeans";
  }
  return "?";
}

inline ObjectiveKind parse_objective_kind(std::string_view s) {
  if (s == "size") return ObjectiveKind::kSize;
  if (s == "time-weighted" || s == "time") return ObjectiveKind::kTimeWeighted;
  if (s == "bucket-priority" || s == "bucket") return ObjectiveKind::kBucketPriority;
  if (s == "uniform") return ObjectiveKind::kUniform;
  if (s == "kmeans") return ObjectiveKind::kKMeans;
  throw DataError("unknown objective kind '" + std::string(s) + "'");
}

struct PlanLayer {
  std::string name;
  CompressionParam param;
  std::size_t candidate = 0;
  std::uint64_t bits = 0;
  std::uint64_t uncompressed_bits = 0;
  double raw_error = 0.0;
  std::int64_t disc_error = 0;
};

struct Plan {
  std::string method;
  ObjectiveKind objective_kind = ObjectiveKind::kSize;
  std::vector<PlanLayer> layers;
  double emax = 0.0;
  std::int64_t D = 0;
  std::uint64_t window_id = 0;
  std::int64_t total_disc_error = 0;
  double total_raw_error = 0.0;
  std::uint64_t total_bits = 0;
  std::uint64_t uncompressed_bits = 0;
  double compression_ratio = 1.0;
  double objective_value = 0.0;
  double solve_seconds = 0.0;

  std::vector<CompressionParam> params() const {
    std::vector<CompressionParam> out;
    for (const auto& l : layers) out.push_back(l.param);
    return out;
  }
  std::vector<std::uint64_t> layer_bits() const {
    std::vector<std::uint64_t> out;
    for (const auto& l : layers) out.push_back(l.bits);
    return out;
  }
};

// Assembles a plan from one candidate index per layer.
inline Plan plan_from_choice(const ErrorSizeTable& t, const std::vector<std::size_t>& choice,
                             ObjectiveKind kind, const std::vector<double>& weights = {}) {
  if (choice.size() != t.L()) throw UsageError("one choice per layer required");
  Plan p;
  p.method = t.candidates.empty() ? "" : method_name(method_of(t.candidates.front()));
  p.objective_kind = kind;
  p.emax = t.emax;
  p.D = t.D;
  p.window_id = t.window_id;
  for (std::size_t l = 0; l < t.L(); ++l) {
    const std::size_t c = choice[l];
    PlanLayer pl;
    pl.name = t.layers[l].name;
    pl.param = t.candidates.at(c);
    pl.candidate = c;
    pl.bits = t.costs_bits[l][c];
    pl.uncompressed_bits = t.layers[l].uncompressed_bits();
    pl.raw_error = t.errors_raw[l][c];
    pl.disc_error = t.errors_disc[l][c];
    p.total_bits += pl.bits;
    p.uncompressed_bits += pl.uncompressed_bits;
    p.total_raw_error += pl.raw_error;
    p.total_disc_error += pl.disc_error;
    p.objective_value += (weights.empty() ? 1.0 : weights[l]) * static_cast<double>(pl.bits);
    p.layers.push_back(std::move(pl));
  }
  p.compression_ratio = p.total_bits > 0 ? static_cast<double>(p.uncompressed_bits) /
                                               static_cast<double>(p.total_bits)
                                         : 1.0;
  return p;
}

inline Plan default_plan(const ErrorSizeTable& t) {
  return plan_from_choice(t, t.default_index, ObjectiveKind::kUniform);
}

namespace detail {

inline std::vector<double> unit_weights_if_empty(const ErrorSizeTable& t,
                                                 std::vector<double> w) {
  if (w.empty()) w.assign(t.L(), 1.0);
  if (w.size() != t.L()) throw UsageError("one weight per layer required");
  for (double x : w)
    if (!(x > 0.0) || !std::isfinite(x)) throw UsageError("layer weights must be positive");
  return w;
}

}  // namespace detail

// Minimizes sum_l w_l * Costs[l][c_l] subject to sum_l Errors[l][c_l] <= D.
// Ties keep the earliest candidate; the final level is the smallest error
// level that attains the optimum.
inline Plan dp_plan(const ErrorSizeTable& t, std::vector<double> weights = {},
                    ObjectiveKind kind = ObjectiveKind::kSize) {
  if (t.D <= 0) throw UsageError("discretization factor D must be positive");
  if (t.L() == 0) throw DataError("dp_plan: no layers");
  const auto t0 = std::chrono::steady_clock::now();
  weights = detail::unit_weights_if_empty(t, std::move(weights));
  const auto D = static_cast<std::size_t>(t.D);
  const std::size_t L = t.L(), K = t.K();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  constexpr std::int32_t kNone = -1;

  std::vector<double> prev(D + 1, kInf), cur(D + 1, kInf);
  std::vector<std::int32_t> choice(L * (D + 1), kNone);
  auto pd = [&](std::size_t l, std::size_t e) -> std::int32_t& { return choice[l * (D + 1) + e]; };

  for (std::size_t c = 0; c < K; ++c) {
    if (!t.feasible[0][c]) continue;
    const auto e = static_cast<std::size_t>(t.errors_disc[0][c]);
    const double v = weights[0] * static_cast<double>(t.costs_bits[0][c]);
    if (v < prev[e]) {
      prev[e] = v;
      pd(0, e) = static_cast<std::int32_t>(c);
    }
  }
  // Finite levels of the previous row lie within [lo, hi].
  std::size_t lo = D, hi = 0;
  for (std::size_t e = 0; e <= D; ++e)
    if (prev[e] != kInf) lo = std::min(lo, e), hi = e;
  for (std::size_t l = 1; l < L; ++l) {
    std::fill(cur.begin(), cur.end(), kInf);
    std::size_t next_lo = D, next_hi = 0;
    for (std::size_t c = 0; c < K; ++c) {
      if (!t.feasible[l][c]) continue;
      const auto de = static_cast<std::size_t>(t.errors_disc[l][c]);
      // An earlier candidate with the same error and cost already won every
      // cell this one could reach.
      bool repeat = false;
      for (std::size_t q = 0; q < c && !repeat; ++q)
        repeat = t.feasible[l][q] && t.errors_disc[l][q] == t.errors_disc[l][c] &&
                 t.costs_bits[l][q] == t.costs_bits[l][c];
      if (repeat || de + lo > D) continue;
      const double cost = weights[l] * static_cast<double>(t.costs_bits[l][c]);
      const std::size_t last = std::min(D, de + hi);
      for (std::size_t e = de + lo; e <= last; ++e) {
        const double base = prev[e - de];
        if (base == kInf) continue;
        const double v = base + cost;
        if (v < cur[e]) {
          cur[e] = v;
          pd(l, e) = static_cast<std::int32_t>(c);
        }
      }
      next_lo = std::min(next_lo, de + lo);
      next_hi = std::max(next_hi, last);
    }
    std::swap(prev, cur);
    lo = next_lo;
    hi = next_hi;
  }

  std::size_t best_e = 0;
  double best = kInf;
  for (std::size_t e = 0; e <= D; ++e) {
    if (prev[e] < best) {
      best = prev[e];
      best_e = e;
    }
  }
  if (best == kInf) throw DataError("dp_plan: no assignment satisfies the error budget");

  std::vector<std::size_t> result(L);
  std::size_t e = best_e;
  for (std::size_t l = L; l-- > 0;) {
    const std::int32_t c = pd(l, e);
    if (c == kNone) throw Error("dp_plan: broken back-pointer");
    result[l] = static_cast<std::size_t>(c);
    e -= static_cast<std::size_t>(t.errors_disc[l][result[l]]);
  }
  Plan p = plan_from_choice(t, result, kind, weights);
  p.objective_value = best;
  p.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return p;
}

// Size weighted by the fitted per-bucket seconds-per-bit.
inline Plan time_weighted_plan(const ErrorSizeTable& t, const TimingModel& timing,
                               const BucketLayout& layout) {
  std::vector<double> w(t.L());
  for (std::size_t l = 0; l < t.L(); ++l) {
    const auto b = static_cast<std::size_t>(layout.bucket_of(l));
    if (b >= timing.coefficients.size())
      throw UsageError("timing model has no coefficient for bucket " + std::to_string(b));
    w[l] = timing.coefficients[b];
    if (!(w[l] > 0.0)) throw UsageError("timing coefficients must be positive");
  }
  // Rescale so the smallest weight is exactly 1: same argmin, and equal
  // coefficients reduce to the unweighted problem bit for bit.
  const double lo = *std::min_element(w.begin(), w.end());
  for (auto& x : w) x /= lo;
  return dp_plan(t, std::move(w), ObjectiveKind::kTimeWeighted);
}

// Size weighted by 1 + communication-order bucket index, so later buckets
// are pushed towards stronger compression.
inline Plan bucket_priority_plan(const ErrorSizeTable& t, const BucketLayout& layout) {
  std::vector<double> w(t.L());
  for (std::size_t l = 0; l < t.L(); ++l) w[l] = 1.0 + layout.bucket_of(l);
  return dp_plan(t, std::move(w), ObjectiveKind::kBucketPriority);
}

// Exhaustive search over all K^L assignments. Test oracle.
inline Plan brute_force_plan(const ErrorSizeTable& t, std::vector<double> weights = {}) {
  weights = detail::unit_weights_if_empty(t, std::move(weights));
  const std::size_t L = t.L(), K = t.K();
  double combos = 1.0;
  for (std::size_t l = 0; l < L; ++l) combos *= static_cast<double>(K);
  if (combos > 1e6) throw UsageError("brute_force_plan: more than 1e6 assignments");
  std::vector<std::size_t> idx(L, 0), best;
  double best_v = std::numeric_limits<double>::infinity();
  for (;;) {
    std::int64_t err = 0;
    bool ok = true;
    double v = 0.0;
    for (std::size_t l = 0; l < L && ok; ++l) {
      ok = t.feasible[l][idx[l]];
      err += t.errors_disc[l][idx[l]];
      const double c = weights[l] * static_cast<double>(t.costs_bits[l][idx[l]]);
      v = l == 0 ? c : v + c;
    }
    if (ok && err <= t.D && v < best_v) {
      best_v = v;
      best = idx;
    }
    std::size_t l = 0;
    while (l < L && ++idx[l] == K) idx[l++] = 0;
    if (l == L) break;
  }
  if (best.empty()) throw DataError("brute_force_plan: no feasible assignment");
  Plan p = plan_from_choice(t, best, ObjectiveKind::kSize, weights);
  p.objective_value = best_v;
  return p;
}

// ---------------------------------------------------------------------------
// k-means baseline
// ---------------------------------------------------------------------------

struct KMeansResult {
  std::vector<int> cluster_of;                // per layer, clusters sorted
  std::vector<std::array<double, 2>> centers; // normalized features
};

// Lloyd's iterations with k-means++ seeding on 2-D points. Clusters are
// renumbered by ascending center (first coordinate, then second).
inline KMeansResult kmeans_2d(const std::vector<std::array<double, 2>>& pts, int k,
                              std::uint64_t seed, int max_restarts = 10) {
  const std::size_t n = pts.size();
  if (k < 1 || static_cast<std::size_t>(k) > n)
    throw UsageError("kmeans: cluster count must be in [1, number of layers]");
  auto dist2 = [](const std::array<double, 2>& a, const std::array<double, 2>& b) {
    return (a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]);
  };
  for (int attempt = 0; attempt <= max_restarts; ++attempt) {
    Rng rng(derive_seed(seed, attempt));
    std::vector<std::array<double, 2>> centers;
    centers.push_back(pts[static_cast<std::size_t>(rng.below(n))]);
    while (centers.size() < static_cast<std::size_t>(k)) {
      std::vector<double> d(n);
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        d[i] = std::numeric_limits<double>::infinity();
        for (const auto& c : centers) d[i] = std::min(d[i], dist2(pts[i], c));
        total += d[i];
      }
      std::size_t pick = static_cast<std::size_t>(rng.below(n));
      if (total > 0.0) {
        double u = rng.uniform() * total;
        for (std::size_t i = 0; i < n; ++i) {
          u -= d[i];
          if (u < 0.0 || i + 1 == n) {
            pick = i;
            break;
          }
        }
      }
      centers.push_back(pts[pick]);
    }
    std::vector<int> assign(n, -1);
    bool empty_cluster = false;
    for (int iter = 0; iter < 100; ++iter) {
      bool changed = false;
      for (std::size_t i = 0; i < n; ++i) {
        int best = 0;
        for (int c = 1; c < k; ++c)
          if (dist2(pts[i], centers[static_cast<std::size_t>(c)]) <
              dist2(pts[i], centers[static_cast<std::size_t>(best)]))
            best = c;
        if (assign[i] != best) {
          assign[i] = best;
          changed = true;
        }
      }
      std::vector<std::array<double, 2>> sum(static_cast<std::size_t>(k), {0.0, 0.0});
      std::vector<int> count(static_cast<std::size_t>(k), 0);
      for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<std::size_t>(assign[i]);
        sum[c][0] += pts[i][0];
        sum[c][1] += pts[i][1];
        ++count[c];
      }
      empty_cluster = false;
      for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
        if (count[c] == 0) {
          empty_cluster = true;
          break;
        }
        centers[c] = {sum[c][0] / count[c], sum[c][1] / count[c]};
      }
      if (empty_cluster || !changed) break;
    }
    if (empty_cluster) continue;
    std::vector<int> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return centers[static_cast<std::size_t>(a)] < centers[static_cast<std::size_t>(b)];
    });
    std::vector<int> rank(static_cast<std::size_t>(k));
    for (int r = 0; r < k; ++r) rank[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = r;
    KMeansResult res;
    for (auto a : assign) res.cluster_of.push_back(rank[static_cast<std::size_t>(a)]);
    for (int r = 0; r < k; ++r) res.centers.push_back(centers[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])]);
    return res;
  }
  throw DataError("kmeans: empty cluster after " + std::to_string(max_restarts) + " restarts");
}

// Layer features: log element count and default-parameter error, each
// z-normalized (constant features map to zero).
inline std::vector<std::array<double, 2>> kmeans_features(const ErrorSizeTable& t) {
  std::vector<std::array<double, 2>> pts(t.L());
  for (std::size_t l = 0; l < t.L(); ++l)
    pts[l] = {std::log(static_cast<double>(t.layers[l].element_count)),
              t.errors_raw[l][t.default_index[l]]};
  for (int f = 0; f < 2; ++f) {
    double mean = 0.0, var = 0.0;
    for (const auto& p : pts) mean += p[static_cast<std::size_t>(f)];
    mean /= static_cast<double>(pts.size());
    for (const auto& p : pts) var += (p[static_cast<std::size_t>(f)] - mean) * (p[static_cast<std::size_t>(f)] - mean);
    const double sd = std::sqrt(var / static_cast<double>(pts.size()));
    for (auto& p : pts) p[static_cast<std::size_t>(f)] = sd > 0.0 ? (p[static_cast<std::size_t>(f)] - mean) / sd : 0.0;
  }
  return pts;
}

// Clusters layers and gives every layer its cluster's predefined parameter.
// cluster_params[i] goes to the i-th cluster in ascending center order.
// No error-budget guarantee.
inline Plan kmeans_plan(const ErrorSizeTable& t, int n_clusters,
                        const std::vector<CompressionParam>& cluster_params,
                        std::uint64_t seed = 0) {
  if (cluster_params.size() != static_cast<std::size_t>(n_clusters))
    throw UsageError("kmeans_plan: one parameter per cluster required");
  std::vector<std::size_t> param_index;
  for (const auto& p : cluster_params) {
    auto it = std::find(t.candidates.begin(), t.candidates.end(), p);
    if (it == t.candidates.end())
      throw UsageError("kmeans_plan: " + to_string(p) + " is not a candidate");
    param_index.push_back(static_cast<std::size_t>(it - t.candidates.begin()));
  }
  const auto km = kmeans_2d(kmeans_features(t), n_clusters, seed);
  std::vector<std::size_t> choice(t.L());
  for (std::size_t l = 0; l < t.L(); ++l)
    choice[l] = param_index[static_cast<std::size_t>(km.cluster_of[l])];
  return plan_from_choice(t, choice, ObjectiveKind::kKMeans);
}

inline SyncTimeline simulate_sync_time(const Plan& plan, const BucketLayout& layout,
                                       double bandwidth_bits_per_s,
                                       std::span<const double> backward_s) {
  const auto bits = plan.layer_bits();
  const auto per_bucket = bucket_bits(layout, bits);
  return simulate_sync_time(per_bucket, layout, bandwidth_bits_per_s, backward_s);
}

}  // namespace greco
