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

// End-to-end acceptance checks. Prints one PASS/FAIL line per check and
// exits non-zero if any fails.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "greco/greco.hpp"

using namespace greco;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

ErrorSizeTable random_table(Rng& rng, std::size_t L, std::size_t K, std::int64_t D) {
  std::vector<LayerSpec> layers;
  std::vector<CompressionParam> cands;
  for (std::size_t j = 0; j < K; ++j) cands.push_back(Quantize{static_cast<int>(j + 1)});
  std::vector<std::vector<double>> err(L);
  std::vector<std::vector<std::uint64_t>> cost(L);
  std::vector<std::size_t> def(L);
  for (std::size_t l = 0; l < L; ++l) {
    layers.push_back(make_layer(l, "layer" + std::to_string(l), {16}));
    for (std::size_t j = 0; j < K; ++j) {
      err[l].push_back(rng.uniform() * 4.0);
      cost[l].push_back(1 + rng.below(1000));
    }
    def[l] = static_cast<std::size_t>(rng.below(K));
  }
  return make_table(layers, cands, err, cost, def, D);
}

RowMatrix random_matrix(Rng& rng, Eigen::Index m, Eigen::Index k) {
  RowMatrix a(m, k);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  return a;
}

// 1. DP equals exhaustive search for unit, timing and bucket-priority weights.
Outcome dp_optimality() {
  Rng rng(101);
  int mismatches = 0;
  for (int i = 0; i < 100; ++i) {
    const auto L = static_cast<std::size_t>(1 + rng.below(6));
    const auto K = static_cast<std::size_t>(1 + rng.below(4));
    const auto D = static_cast<std::int64_t>(1 + rng.below(200));
    const auto t = random_table(rng, L, K, D);

    BucketLayout layout;
    const std::size_t B = 1 + rng.below(3);
    layout.buckets.resize(B);
    for (std::size_t l = 0; l < L; ++l) layout.bucket_of_layer.push_back(std::min(B - 1, l * B / L));
    TimingModel tm;
    for (std::size_t b = 0; b < B; ++b) tm.coefficients.push_back((0.5 + rng.uniform()) * 1e-9);
    std::vector<double> time_w(L), bucket_w(L);
    const double cmin = *std::min_element(tm.coefficients.begin(), tm.coefficients.end());
    for (std::size_t l = 0; l < L; ++l) {
      time_w[l] = tm.coefficients[layout.bucket_of(l)] / cmin;
      bucket_w[l] = 1.0 + static_cast<double>(layout.bucket_of(l));
    }

    mismatches += dp_plan(t).objective_value != brute_force_plan(t).objective_value;
    // The solver rescales weights internally; score its assignment under the
    // oracle's weights.
    std::vector<std::size_t> tw_choice;
    for (const auto& pl : time_weighted_plan(t, tm, layout).layers) tw_choice.push_back(pl.candidate);
    mismatches += plan_from_choice(t, tw_choice, ObjectiveKind::kTimeWeighted, time_w).objective_value !=
                  brute_force_plan(t, time_w).objective_value;
    mismatches += bucket_priority_plan(t, layout).objective_value !=
                  brute_force_plan(t, bucket_w).objective_value;
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches over 300 solves"};
}

// 2. Never worse than the default assignment.
Outcome never_worse() {
  Rng rng(202);
  int bad = 0;
  for (int i = 0; i < 50; ++i) {
    const auto t = random_table(rng, 1 + rng.below(8), 1 + rng.below(5), 1 + rng.below(500));
    const auto p = dp_plan(t);
    bad += p.total_bits > t.default_bits() || p.total_disc_error > t.D;
  }
  return {bad == 0, std::to_string(bad) + " violations over 50 tables"};
}

double coded_ratio(const CompressionParam& p) {
  const auto layer = make_layer(0, "x", {1000000});
  return static_cast<double>(layer.uncompressed_bits()) / static_cast<double>(coded_size(layer, p));
}

// 3, 4. Coded ratios on a 10^6-element layer.
Outcome quant_ratio() {
  const double r = coded_ratio(Quantize{4});
  return {r >= 7.5 && r <= 8.0, "ratio " + num(r)};
}

Outcome topk_ratio() {
  const double r = coded_ratio(Sparsify{1, 100});
  return {r >= 45.0 && r <= 50.0, "ratio " + num(r)};
}

// 5. Tail of the singular values equals the truncation error.
Outcome svd_identity() {
  Rng rng(505);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto m = static_cast<Eigen::Index>(2 + rng.below(63));
    const auto k = static_cast<Eigen::Index>(2 + rng.below(47));
    const auto a = random_matrix(rng, m, k);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    std::vector<int> ranks;
    for (int r = 1; r <= std::min(m, k); ++r) ranks.push_back(r);
    const auto tail = lowrank_error_svd(ConstMatrixMap(a.data(), m, k), ranks);
    for (int r : ranks) {
      const Eigen::MatrixXd ar = svd.matrixU().leftCols(r) * svd.singularValues().head(r).asDiagonal() *
                                 svd.matrixV().leftCols(r).transpose();
      worst = std::max(worst, std::abs(tail[static_cast<std::size_t>(r - 1)] - (Eigen::MatrixXd(a) - ar).norm()));
    }
  }
  return {worst <= 1e-6, "max abs deviation " + num(worst)};
}

// 6. Five power steps land within 5% of the optimal truncation error.
Outcome power_vs_svd() {
  Rng rng(606);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto m = static_cast<Eigen::Index>(16 + rng.below(49));
    const auto k = static_cast<Eigen::Index>(16 + rng.below(33));
    const int true_rank = 1 + static_cast<int>(rng.below(6));
    RowMatrix a = random_matrix(rng, m, true_rank) * random_matrix(rng, true_rank, k);
    a += 0.1 * random_matrix(rng, m, k);
    std::vector<int> ranks;
    for (int r = 1; r <= 8; ++r) ranks.push_back(r);
    const ConstMatrixMap view(a.data(), m, k);
    const auto svd = lowrank_error_svd(view, ranks);
    Rng prng(derive_seed(606, i));
    const auto pw = lowrank_error_power(view, ranks, 5, prng);
    for (std::size_t j = 0; j < ranks.size(); ++j) worst = std::max(worst, pw[j] / svd[j] - 1.0);
  }
  return {worst <= 0.05, "max relative excess " + num(worst)};
}

// 7. Top-k matches the best k-sparse approximation found by enumeration.
Outcome topk_exhaustive() {
  Rng rng(707);
  double worst = 0.0;
  for (std::size_t n = 1; n <= 20; ++n) {
    std::vector<double> g(n);
    for (auto& x : g) x = rng.normal();
    std::vector<double> best(n + 1, INFINITY);
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
      double e = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (!(mask >> i & 1u)) e += g[i] * g[i];
      auto& b = best[static_cast<std::size_t>(std::popcount(mask))];
      b = std::min(b, e);
    }
    for (std::size_t k = 1; k <= n; ++k) {
      const auto enc = topk(g, make_density(static_cast<std::int64_t>(k), static_cast<std::int64_t>(n)));
      worst = std::max(worst, std::abs(l2_distance(g, decode(enc)) - std::sqrt(best[k])));
    }
  }
  return {worst <= 1e-12, "max deviation " + num(worst)};
}

// 8. Stochastic rounding is unbiased elementwise.
Outcome quant_unbiased() {
  const std::vector<double> g = {0.31, -0.77, 1.2, 0.05, -0.45, 0.0, 0.9, -1.1};
  const int trials = 100000;
  double worst = 0.0;  // in standard errors
  for (int bits : {1, 2, 4, 8}) {
    std::vector<double> sum(g.size(), 0.0), sq(g.size(), 0.0);
    Rng rng(derive_seed(808, bits));
    for (int t = 0; t < trials; ++t) {
      const auto d = decode(quantize(g, bits, 512, rng));
      for (std::size_t i = 0; i < g.size(); ++i) {
        sum[i] += d[i];
        sq[i] += d[i] * d[i];
      }
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double m = sum[i] / trials;
      const double se = std::sqrt(std::max(sq[i] / trials - m * m, 0.0) / trials);
      const double dev = std::abs(m - g[i]);
      if (se == 0.0) {
        if (dev > 1e-12) worst = INFINITY;
      } else {
        worst = std::max(worst, dev / se);
      }
    }
  }
  return {worst <= 3.0, "max deviation " + num(worst) + " standard errors"};
}

std::vector<TimingSample> synthetic_samples(const std::vector<double>& coef, double intercept,
                                            std::size_t n, double noise, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TimingSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    TimingSample s;
    double t = intercept;
    for (double c : coef) {
      s.bucket_bits.push_back(std::floor(1e5 + rng.uniform() * 1e7));
      t += c * s.bucket_bits.back();
    }
    s.sync_time_s = t * (1.0 + noise * rng.normal());
    out.push_back(std::move(s));
  }
  return out;
}

// 9. Timing regression recovers coefficients and scores well under noise.
Outcome timing_regression() {
  const std::vector<double> coef = {2e-9, 1e-9, 3e-9, 0.5e-9};
  const auto exact = fit_timing(synthetic_samples(coef, 4e-3, 500, 0.0, 909));
  double worst = 0.0;
  for (std::size_t b = 0; b < coef.size(); ++b)
    worst = std::max(worst, std::abs(exact.coefficients[b] - coef[b]) / coef[b]);
  const auto noisy = fit_timing(synthetic_samples(coef, 4e-3, 5000, 0.01, 910));
  return {worst <= 1e-12 && noisy.fit_score > 0.99,
          "noiseless max relative error " + num(worst) + ", noisy R2 " + num(noisy.fit_score)};
}

// 10. Equal timing coefficients reproduce the size plan byte for byte.
Outcome equal_coefficients() {
  Rng rng(1010);
  int differ = 0;
  for (int i = 0; i < 50; ++i) {
    const auto L = static_cast<std::size_t>(2 + rng.below(7));
    const auto t = random_table(rng, L, 2 + rng.below(4), 50 + rng.below(300));
    BucketLayout layout;
    layout.buckets.resize(3);
    for (std::size_t l = 0; l < L; ++l) layout.bucket_of_layer.push_back(l % 3);
    TimingModel tm;
    tm.coefficients.assign(3, 2.9e-9);
    differ += dump_json(assignment_to_json(time_weighted_plan(t, tm, layout))) !=
              dump_json(assignment_to_json(dp_plan(t)));
  }
  return {differ == 0, std::to_string(differ) + " of 50 plans differ"};
}

// 11. Four lossless workers follow single-process SGD.
Outcome data_parallel() {
  SimConfig cfg;
  cfg.steps = 500;
  const auto run = run_training(cfg);
  const auto ref = run_reference_sgd(cfg);
  double worst = 0.0;
  for (std::size_t s = 0; s < ref.size(); ++s)
    worst = std::max(worst, std::abs(run.steps[s].loss - ref[s]) / std::abs(ref[s]));
  return {run.steps.size() == ref.size() && worst <= 1e-5, "max relative deviation " + num(worst)};
}

// 12 and 13 share the same runs.
struct EndToEnd {
  std::vector<MetricsSeries> uniform, lgreco;
};

EndToEnd end_to_end_runs() {
  EndToEnd e;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    SimConfig cfg;
    cfg.seed = seed;
    cfg.default_param = Sparsify{1, 100};
    cfg.replan_period = 200;
    cfg.steps = 2000;
    cfg.scheme = Scheme::kUniform;
    e.uniform.push_back(run_training(cfg));
    cfg.scheme = Scheme::kLGreco;
    e.lgreco.push_back(run_training(cfg));
  }
  return e;
}

Outcome dominance(const EndToEnd& e) {
  bool ok = true;
  std::string detail;
  for (std::size_t i = 0; i < e.uniform.size(); ++i) {
    const auto& u = e.uniform[i];
    const auto& g = e.lgreco[i];
    bool ratios = u.windows.size() == g.windows.size();
    double min_gain = INFINITY;
    for (std::size_t w = 0; ratios && w < u.windows.size(); ++w) {
      ratios = g.windows[w].compression_ratio >= u.windows[w].compression_ratio;
      min_gain = std::min(min_gain, g.windows[w].compression_ratio / u.windows[w].compression_ratio);
    }
    const double rel = std::abs(g.final_loss() - u.final_loss()) / u.final_loss();
    ok = ok && ratios && rel <= 0.05;
    detail += (i ? "; " : "") + std::string("seed ") + std::to_string(i) + ": loss " +
              num(g.final_loss()) + " vs " + num(u.final_loss()) + " (" + num(100 * rel) +
              "%), min ratio gain " + num(min_gain) + (ratios ? "" : " [ratio below uniform]");
  }
  return {ok, detail};
}

Outcome overhead(const EndToEnd& e) {
  bool ok = true;
  std::string detail;
  for (std::size_t i = 0; i < e.lgreco.size(); ++i) {
    const auto& o = e.lgreco[i].overheads;
    const double pct = 100.0 * o.planner_s() / o.total_s;
    ok = ok && pct < 5.0 && o.dp_s < o.error_s;
    detail += (i ? "; " : "") + std::string("seed ") + std::to_string(i) + ": " + num(pct) + "% [" +
              num(100.0 * o.error_s / o.total_s) + "% error, " + num(100.0 * o.dp_s / o.total_s) +
              "% dp]";
  }
  return {ok, detail};
}

// 14. Loss-delta and l2-error metrics agree in sign of correlation.
Outcome correlation() {
  SimConfig cfg;
  const std::int64_t at = 300;
  const int probe_steps = 20;
  const auto ck = train_checkpoint(cfg, at);

  Simulator sim(cfg);
  sim.load(ck);
  const auto& layers = sim.layers();
  const auto grads = sim.model().forward_backward(sim.data(), sim.global_batch(at)).grads;

  const std::vector<CompressionParam> params = {Sparsify{1, 1000}, Sparsify{1, 100}, Sparsify{1, 10}};
  const double base = probe_loss(ck, cfg, std::nullopt, probe_steps);
  std::vector<std::vector<double>> deltas(layers.size()), errors(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l)
    for (std::size_t j = 0; j < params.size(); ++j) {
      deltas[l].push_back(probe_loss(ck, cfg, std::make_pair(l, params[j]), probe_steps) - base);
      Rng rng(derive_seed(1414, l, j));
      errors[l].push_back(compression_error(grads[l], layers[l], params[j], rng));
    }
  const auto c = metric_correlation(deltas, errors);
  return {c.pearson > 0.0 && c.spearman > 0.0,
          "pearson " + num(c.pearson) + ", spearman " + num(c.spearman)};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* name, double limit_s, const std::function<Outcome()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (limit_s > 0 && s > limit_s) {
      o.pass = false;
      o.detail += " [over time budget " + num(limit_s) + " s]";
    }
    failures += !o.pass;
    std::printf("%s %2d %-28s %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), s);
    std::fflush(stdout);
  };

  report(1, "dp-optimality", 10, dp_optimality);
  report(2, "never-worse-than-default", 0, never_worse);
  report(3, "quant4-coded-ratio", 1, quant_ratio);
  report(4, "topk1pct-coded-ratio", 1, topk_ratio);
  report(5, "svd-error-identity", 5, svd_identity);
  report(6, "power-iteration-vs-svd", 10, power_vs_svd);
  report(7, "topk-exhaustive-oracle", 5, topk_exhaustive);
  report(8, "quantization-unbiased", 10, quant_unbiased);
  report(9, "timing-regression", 5, timing_regression);
  report(10, "time-plan-equal-coefficients", 5, equal_coefficients);
  report(11, "data-parallel-exactness", 60, data_parallel);

  // 12 and 13 are judged on the same six runs; the budget covers both.
  const auto t0 = std::chrono::steady_clock::now();
  EndToEnd e;
  std::string run_error;
  try {
    e = end_to_end_runs();
  } catch (const std::exception& ex) {
    run_error = ex.what();
  }
  const double run_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  auto judged = [&](auto fn) {
    return [&, fn]() -> Outcome {
      if (!run_error.empty()) return {false, "exception: " + run_error};
      auto o = fn(e);
      if (run_s > 300) {
        o.pass = false;
        o.detail += " [runs took " + num(run_s) + " s]";
      }
      return o;
    };
  };
  report(12, "end-to-end-dominance", 0, judged(dominance));
  report(13, "planner-overhead", 0, judged(overhead));
  report(14, "metric-correlation", 600, correlation);

  std::printf("%d of 14 acceptance checks failed\n", failures);
  return failures == 0 ? 0 : 1;
}
