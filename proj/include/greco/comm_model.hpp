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

// Bucketed gradient communication overlapped with the backward pass, and the
// per-bucket linear timing model fitted from sync-time samples.

#pragma once

#include <Eigen/QR>

#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "greco/common.hpp"
#include "greco/compressors.hpp"

namespace greco {

inline constexpr std::uint64_t kDefaultBucketCapacityBytes = 25ull << 20;

struct Bucket {
  int id = 0;                       // position in communication order
  std::vector<std::size_t> layers;  // in the order they were produced
  std::uint64_t capacity_bytes = 0;
  std::uint64_t bytes = 0;          // uncompressed fp32 bytes
};

struct BucketLayout {
  std::vector<Bucket> buckets;
  std::vector<int> bucket_of_layer;

  std::size_t size() const { return buckets.size(); }
  int bucket_of(std::size_t layer) const { return bucket_of_layer.at(layer); }
};

// Greedy fill in reverse layer order: gradients of the last layer are ready
// first. A layer larger than the capacity gets a bucket of its own.
inline BucketLayout assign_buckets(const std::vector<LayerSpec>& layers,
                                   std::uint64_t capacity_bytes = kDefaultBucketCapacityBytes) {
  if (capacity_bytes == 0) throw UsageError("bucket capacity must be positive");
  BucketLayout out;
  out.bucket_of_layer.assign(layers.size(), -1);
  Bucket cur;
  cur.capacity_bytes = capacity_bytes;
  auto flush = [&] {
    if (cur.layers.empty()) return;
    cur.id = static_cast<int>(out.buckets.size());
    for (auto l : cur.layers) out.bucket_of_layer[l] = cur.id;
    out.buckets.push_back(cur);
    cur.layers.clear();
    cur.bytes = 0;
  };
  for (std::size_t i = layers.size(); i-- > 0;) {
    const std::uint64_t bytes = 4 * layers[i].element_count;
    if (!cur.layers.empty() && cur.bytes + bytes > capacity_bytes) flush();
    cur.layers.push_back(i);
    cur.bytes += bytes;
  }
  flush();
  return out;
}

inline void apply_layout(std::vector<LayerSpec>& layers, const BucketLayout& layout) {
  for (std::size_t l = 0; l < layers.size(); ++l) layers[l].bucket_id = layout.bucket_of(l);
}

// Per-bucket sum of per-layer bits.
inline std::vector<double> bucket_bits(const BucketLayout& layout,
                                       std::span<const std::uint64_t> layer_bits) {
  std::vector<double> out(layout.size(), 0.0);
  for (const auto& b : layout.buckets)
    for (auto l : b.layers) out[static_cast<std::size_t>(b.id)] += static_cast<double>(layer_bits[l]);
  return out;
}

// ---------------------------------------------------------------------------
// Overlap simulation
// ---------------------------------------------------------------------------

struct BucketEvent {
  double bits = 0.0;
  double ready = 0.0;
  double start = 0.0;
  double end = 0.0;
};

struct SyncTimeline {
  std::vector<BucketEvent> buckets;
  double compute_time = 0.0;  // backward pass alone
  double total_time = 0.0;    // max(compute, last bucket done)
  double exposed_time = 0.0;  // total - compute
  // First bucket ready to last bucket done.
  double sync_time = 0.0;
};

// Single FIFO link. Layer gradients appear in reverse layer order at the
// cumulative backward times; a bucket is ready once all of its members are.
inline SyncTimeline simulate_sync_time(std::span<const double> per_bucket_bits,
                                       const BucketLayout& layout, double bandwidth_bits_per_s,
                                       std::span<const double> backward_s) {
  if (!(bandwidth_bits_per_s > 0.0)) throw UsageError("bandwidth must be positive");
  if (per_bucket_bits.size() != layout.size())
    throw UsageError("one bit count per bucket required");
  if (backward_s.size() != layout.bucket_of_layer.size())
    throw UsageError("one backward time per layer required");
  const std::size_t L = backward_s.size();
  std::vector<double> done(L, 0.0);
  double t = 0.0;
  for (std::size_t i = L; i-- > 0;) {
    t += backward_s[i];
    done[i] = t;
  }
  SyncTimeline tl;
  tl.compute_time = t;
  double link_free = 0.0;
  for (const auto& b : layout.buckets) {
    BucketEvent ev;
    ev.bits = per_bucket_bits[static_cast<std::size_t>(b.id)];
    for (auto l : b.layers) ev.ready = std::max(ev.ready, done[l]);
    ev.start = std::max(ev.ready, link_free);
    ev.end = ev.start + ev.bits / bandwidth_bits_per_s;
    link_free = ev.end;
    tl.buckets.push_back(ev);
  }
  tl.total_time = std::max(tl.compute_time, link_free);
  tl.exposed_time = tl.total_time - tl.compute_time;
  tl.sync_time = tl.buckets.empty() ? 0.0 : link_free - tl.buckets.front().ready;
  return tl;
}

// ---------------------------------------------------------------------------
// Timing regression
// ---------------------------------------------------------------------------

struct TimingSample {
  std::vector<double> bucket_bits;
  double sync_time_s = 0.0;
};

struct TimingModel {
  std::vector<double> coefficients;  // seconds per bit, per bucket
  double intercept = 0.0;            // seconds
  double fit_score = 0.0;            // held-out R^2, clamped to [0,1]
  std::size_t train_samples = 0;
  std::size_t test_samples = 0;
  std::vector<std::string> warnings;

  double coefficient(std::size_t bucket) const { return coefficients.at(bucket); }
};

inline constexpr double kMinTimingCoefficient = 1e-15;

// Ordinary least squares on [bits_0 .. bits_{B-1}, 1] with every fifth sample
// held out for R^2.
inline TimingModel fit_timing(const std::vector<TimingSample>& samples) {
  if (samples.empty()) throw DataError("fit_timing: no samples");
  const std::size_t B = samples.front().bucket_bits.size();
  if (B == 0) throw DataError("fit_timing: samples have no buckets");
  for (const auto& s : samples) {
    if (s.bucket_bits.size() != B) throw DataError("fit_timing: ragged samples");
    if (!std::isfinite(s.sync_time_s)) throw DataError("fit_timing: non-finite time");
  }
  if (samples.size() < 2 * (B + 1))
    throw DataError("fit_timing: need at least " + std::to_string(2 * (B + 1)) +
                    " samples for " + std::to_string(B) + " buckets, got " +
                    std::to_string(samples.size()));
  std::vector<const TimingSample*> train, test;
  for (std::size_t i = 0; i < samples.size(); ++i)
    (i % 5 == 4 ? test : train).push_back(&samples[i]);

  const auto n = static_cast<Eigen::Index>(train.size());
  const auto p = static_cast<Eigen::Index>(B + 1);
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(p);
  for (std::size_t b = 0; b < B; ++b) {
    double m = 0.0;
    for (const auto* s : train) m = std::max(m, std::abs(s->bucket_bits[b]));
    if (m > 0.0) scale[static_cast<Eigen::Index>(b)] = m;
  }
  Eigen::MatrixXd X(n, p);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index b = 0; b < p - 1; ++b)
      X(i, b) = train[static_cast<std::size_t>(i)]->bucket_bits[static_cast<std::size_t>(b)] /
                scale[b];
    X(i, p - 1) = 1.0;
    y[i] = train[static_cast<std::size_t>(i)]->sync_time_s;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) {
    std::string names;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index k = qr.rank(); k < p; ++k) {
      if (!names.empty()) names += ", ";
      names += perm[k] == p - 1 ? std::string("intercept")
                                : "bucket_" + std::to_string(perm[k]);
    }
    throw DataError("fit_timing: design matrix is rank deficient; collinear columns: " + names);
  }
  const Eigen::VectorXd beta = qr.solve(y);

  TimingModel model;
  model.train_samples = train.size();
  model.test_samples = test.size();
  model.intercept = beta[p - 1];
  for (std::size_t b = 0; b < B; ++b) {
    double c = beta[static_cast<Eigen::Index>(b)] / scale[static_cast<Eigen::Index>(b)];
    if (!(c > 0.0)) {
      model.warnings.push_back("bucket_" + std::to_string(b) + " coefficient " +
                               std::to_string(c) + " clamped to " +
                               std::to_string(kMinTimingCoefficient));
      c = kMinTimingCoefficient;
    }
    model.coefficients.push_back(c);
  }
  auto predict = [&](const TimingSample& s) {
    double t = model.intercept;
    for (std::size_t b = 0; b < B; ++b) t += model.coefficients[b] * s.bucket_bits[b];
    return t;
  };
  double mean = 0.0;
  for (const auto* s : test) mean += s->sync_time_s;
  mean /= static_cast<double>(test.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (const auto* s : test) {
    const double r = s->sync_time_s - predict(*s);
    ss_res += r * r;
    ss_tot += (s->sync_time_s - mean) * (s->sync_time_s - mean);
  }
  double r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res <= 1e-30 ? 1.0 : 0.0);
  model.fit_score = std::clamp(r2, 0.0, 1.0);
  return model;
}

// Sample generator around simulate_sync_time: every bucket draws one
// candidate column uniformly, all of its layers use it.
struct TimingSimulator {
  BucketLayout layout;
  double bandwidth_bits_per_s = 10e9;
  std::vector<double> backward_s;
  double noise_rel = 0.0;  // multiplicative Gaussian noise on the sync time
};

inline std::vector<TimingSample> collect_timing_samples(
    const TimingSimulator& sim, const std::vector<std::vector<std::uint64_t>>& costs_bits,
    std::size_t n_samples, std::uint64_t seed) {
  std::vector<TimingSample> out;
  if (n_samples == 0) return out;
  if (costs_bits.size() != sim.layout.bucket_of_layer.size())
    throw UsageError("collect_timing_samples: one cost row per layer required");
  const std::size_t K = costs_bits.empty() ? 0 : costs_bits.front().size();
  if (K == 0) throw UsageError("collect_timing_samples: no candidates");
  Rng rng(seed);
  out.reserve(n_samples);
  std::vector<std::uint64_t> layer_bits(costs_bits.size());
  for (std::size_t s = 0; s < n_samples; ++s) {
    for (const auto& b : sim.layout.buckets) {
      const auto j = static_cast<std::size_t>(rng.below(K));
      for (auto l : b.layers) layer_bits[l] = costs_bits[l][j];
    }
    TimingSample sample;
    sample.bucket_bits = bucket_bits(sim.layout, layer_bits);
    const auto tl = simulate_sync_time(sample.bucket_bits, sim.layout, sim.bandwidth_bits_per_s,
                                       sim.backward_s);
    sample.sync_time_s = tl.sync_time;
    if (sim.noise_rel > 0.0) sample.sync_time_s *= 1.0 + sim.noise_rel * rng.normal();
    out.push_back(std::move(sample));
  }
  return out;
}

// CSV: optional "# ..." comment lines, then
// bucket_0_bits,...,bucket_{B-1}_bits,sync_time_us
inline void write_timing_csv(std::ostream& os, const std::vector<TimingSample>& samples,
                             std::size_t buckets, const std::string& comment = {}) {
  if (!comment.empty()) os << "# " << comment << "\n";
  for (std::size_t b = 0; b < buckets; ++b) os << "bucket_" << b << "_bits,";
  os << "sync_time_us\n";
  os.precision(17);
  for (const auto& s : samples) {
    for (double v : s.bucket_bits) os << v << ",";
    os << s.sync_time_s * 1e6 << "\n";
  }
}

inline std::vector<TimingSample> read_timing_csv(std::istream& is) {
  std::string line;
  std::size_t cols = 0;
  std::size_t lineno = 0;
  std::vector<TimingSample> out;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (cols == 0) {
      if (fields.empty() || fields.back() != "sync_time_us")
        throw DataError("timing CSV: header must end with sync_time_us");
      for (std::size_t b = 0; b + 1 < fields.size(); ++b)
        if (fields[b] != "bucket_" + std::to_string(b) + "_bits")
          throw DataError("timing CSV: unexpected header column '" + fields[b] + "'");
      cols = fields.size();
      continue;
    }
    if (fields.size() != cols)
      throw DataError("timing CSV line " + std::to_string(lineno) + ": expected " +
                      std::to_string(cols) + " fields");
    TimingSample s;
    try {
      for (std::size_t b = 0; b + 1 < cols; ++b) s.bucket_bits.push_back(std::stod(fields[b]));
      s.sync_time_s = std::stod(fields.back()) * 1e-6;
    } catch (const std::exception&) {
      throw DataError("timing CSV line " + std::to_string(lineno) + ": bad number");
    }
    out.push_back(std::move(s));
  }
  if (cols == 0) throw DataError("timing CSV: missing header");
  return out;
}

}  // namespace greco
