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

#include <gtest/gtest.h>

#include "greco/planner.hpp"
#include "greco/serialize.hpp"

namespace greco {
namespace {

const std::vector<CompressionParam> kThree = {Quantize{1}, Quantize{2}, Quantize{3}};

ErrorSizeTable worked_instance() {
  const std::vector<LayerSpec> layers = {make_layer(0, "l1", {10}), make_layer(1, "l2", {10})};
  return make_table(layers, kThree, {{0.0, 1.0, 2.0}, {0.0, 2.0, 5.0}},
                    {{100, 60, 20}, {120, 100, 40}}, {1, 1}, 300);
}

// Random table with a feasible default; costs decrease as errors increase.
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

TEST(DpPlan, WorkedInstance) {
  const auto t = worked_instance();
  const auto p = dp_plan(t);
  EXPECT_EQ(p.layers[0].param, CompressionParam(Quantize{3}));
  EXPECT_EQ(p.layers[1].param, CompressionParam(Quantize{1}));
  EXPECT_EQ(p.total_bits, 140u);
  EXPECT_DOUBLE_EQ(p.total_raw_error, 2.0);
  EXPECT_EQ(p.total_disc_error, 200);
  EXPECT_EQ(default_plan(t).total_bits, 160u);
  EXPECT_DOUBLE_EQ(p.compression_ratio, 640.0 / 140.0);
}

// Exhaustive weighted oracle for T = (10, 1): feasible assignments are
// (c1,c1)=1120, (c1,c2)=1100, (c2,c1)=720, (c2,c2)=700, (c3,c1)=320.
TEST(TimeWeightedPlan, WorkedInstance) {
  const auto t = worked_instance();
  TimingModel tm;
  tm.coefficients = {10.0, 1.0};
  BucketLayout layout;
  layout.bucket_of_layer = {0, 1};
  layout.buckets.resize(2);
  const auto p = time_weighted_plan(t, tm, layout);
  EXPECT_EQ(p.layers[0].candidate, 2u);
  EXPECT_EQ(p.layers[1].candidate, 0u);
  EXPECT_DOUBLE_EQ(p.objective_value, 320.0 / 1.0);
  EXPECT_EQ(p.objective_kind, ObjectiveKind::kTimeWeighted);
}

TEST(TimeWeightedPlan, EqualCoefficientsMatchSizePlan) {
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto t = random_table(rng, 5, 4, 150);
    TimingModel tm;
    tm.coefficients = {3.7e-9, 3.7e-9};
    BucketLayout layout;
    layout.bucket_of_layer = {0, 0, 1, 1, 1};
    layout.buckets.resize(2);
    EXPECT_EQ(dump_json(assignment_to_json(time_weighted_plan(t, tm, layout))),
              dump_json(assignment_to_json(dp_plan(t))));
  }
}

TEST(TimeWeightedPlan, RejectsBadCoefficients) {
  const auto t = worked_instance();
  TimingModel tm;
  tm.coefficients = {1.0, 0.0};
  BucketLayout layout;
  layout.bucket_of_layer = {0, 1};
  EXPECT_THROW(time_weighted_plan(t, tm, layout), UsageError);
  tm.coefficients = {1.0};
  EXPECT_THROW(time_weighted_plan(t, tm, layout), UsageError);
}

TEST(BucketPriorityPlan, SingleBucketIsSizePlan) {
  Rng rng(4);
  const auto t = random_table(rng, 4, 3, 100);
  BucketLayout layout;
  layout.bucket_of_layer.assign(4, 0);
  layout.buckets.resize(1);
  EXPECT_EQ(bucket_priority_plan(t, layout).params(), dp_plan(t).params());
}

TEST(BucketPriorityPlan, TwoBucketsMatchOracle) {
  Rng rng(5);
  BucketLayout layout;
  layout.bucket_of_layer = {1, 1, 0, 0};
  layout.buckets.resize(2);
  for (int i = 0; i < 20; ++i) {
    const auto t = random_table(rng, 4, 3, 120);
    const auto p = bucket_priority_plan(t, layout);
    EXPECT_EQ(p.objective_value, brute_force_plan(t, {2, 2, 1, 1}).objective_value);
  }
}

TEST(DpPlan, TrivialCases) {
  const std::vector<LayerSpec> layers = {make_layer(0, "a", {4}), make_layer(1, "b", {4})};
  const auto one = make_table(layers, {Quantize{2}}, {{0.3}, {0.4}}, {{8}, {9}}, {0, 0}, 10);
  EXPECT_EQ(dp_plan(one).total_bits, 17u);
  const auto ll = make_table(layers, {Lossless{}}, {{0.0}, {0.0}}, {{128}, {128}}, {0, 0}, 10);
  const auto p = dp_plan(ll);
  EXPECT_EQ(p.params(), (std::vector<CompressionParam>{Lossless{}, Lossless{}}));
  EXPECT_DOUBLE_EQ(p.compression_ratio, 1.0);
}

TEST(DpPlan, RejectsNonPositiveD) {
  auto t = worked_instance();
  t.D = 0;
  EXPECT_THROW(dp_plan(t), UsageError);
}

TEST(DpPlan, TiesKeepLowestFidelityAndSmallestError) {
  const std::vector<LayerSpec> layers = {make_layer(0, "a", {4})};
  // Same cost, the first candidate wins; equal objectives at two error
  // levels resolve to the smaller level.
  const auto t = make_table(layers, kThree, {{0.5, 0.2, 0.2}}, {{10, 10, 10}}, {0}, 10, 1.0);
  EXPECT_EQ(dp_plan(t).layers[0].candidate, 1u);
}

TEST(DpPlan, RepeatedCandidatesResolveToTheFirst) {
  // Top-k densities that round to the same k on a tiny layer.
  const std::vector<LayerSpec> layers = {make_layer(0, "a", {4}), make_layer(1, "b", {4})};
  const auto t = make_table(layers, kThree, {{0.5, 0.5, 0.1}, {0.4, 0.4, 0.0}},
                            {{10, 10, 30}, {10, 10, 40}}, {1, 1}, 100);
  const auto p = dp_plan(t);
  EXPECT_EQ(p.layers[0].candidate, 0u);
  EXPECT_EQ(p.layers[1].candidate, 0u);
  EXPECT_EQ(p.objective_value, brute_force_plan(t).objective_value);
}

TEST(DpPlan, MatchesBruteForceOnRandomInstances) {
  Rng rng(6);
  for (int i = 0; i < 100; ++i) {
    const auto L = static_cast<std::size_t>(1 + rng.below(6));
    const auto K = static_cast<std::size_t>(1 + rng.below(4));
    const auto D = static_cast<std::int64_t>(1 + rng.below(200));
    const auto t = random_table(rng, L, K, D);
    std::vector<double> w(L);
    for (auto& x : w) x = 0.5 + rng.uniform();
    EXPECT_EQ(dp_plan(t).objective_value, brute_force_plan(t).objective_value);
    EXPECT_EQ(dp_plan(t, w).objective_value, brute_force_plan(t, w).objective_value);
    EXPECT_LE(dp_plan(t).total_disc_error, t.D);
  }
}

TEST(DpPlan, NeverWorseThanDefault) {
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    const auto t = random_table(rng, 6, 4, 100);
    EXPECT_LE(dp_plan(t).total_bits, t.default_bits());
  }
}

TEST(DpPlan, BudgetMonotone) {
  Rng rng(8);
  for (int i = 0; i < 20; ++i) {
    const auto base = random_table(rng, 5, 4, 100);
    std::uint64_t prev = UINT64_MAX;
    for (std::int64_t D = 100; D <= 400; D += 50) {
      // Fixed step: the budget grows with D.
      auto t = make_table(base.layers, base.candidates, base.errors_raw, base.costs_bits,
                          base.default_index, D, base.emax * static_cast<double>(D) / 100.0);
      const auto bits = dp_plan(t).total_bits;
      EXPECT_LE(bits, prev);
      prev = bits;
    }
  }
}

TEST(DpPlan, ScaleInvariant) {
  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    const auto t = random_table(rng, 5, 4, 120);
    auto scaled_err = t.errors_raw;
    for (auto& row : scaled_err)
      for (auto& e : row) e *= 4.0;
    const auto s = make_table(t.layers, t.candidates, scaled_err, t.costs_bits, t.default_index,
                              t.D, t.emax * 4.0);
    EXPECT_EQ(dp_plan(s).objective_value, dp_plan(t).objective_value);
  }
}

TEST(BruteForce, RefusesHugeInstances) {
  Rng rng(1);
  const auto t = random_table(rng, 11, 4, 50);
  EXPECT_THROW(brute_force_plan(t), UsageError);
}

TEST(KMeans, SingleClusterIsUniform) {
  Rng rng(2);
  const auto t = random_table(rng, 5, 3, 100);
  const auto p = kmeans_plan(t, 1, {Quantize{2}}, 1);
  for (const auto& l : p.layers) EXPECT_EQ(l.param, CompressionParam(Quantize{2}));
}

TEST(KMeans, IdenticalLayersShareACluster) {
  std::vector<LayerSpec> layers = {make_layer(0, "a", {100}), make_layer(1, "b", {100}),
                                   make_layer(2, "c", {5000})};
  const auto t = make_table(layers, kThree, {{1, 0.5, 0.1}, {1, 0.5, 0.1}, {9, 4, 2}},
                            {{1, 2, 3}, {1, 2, 3}, {1, 2, 3}}, {1, 1, 1}, 100);
  const auto p = kmeans_plan(t, 2, {Quantize{1}, Quantize{3}}, 3);
  EXPECT_EQ(p.layers[0].param, p.layers[1].param);
  EXPECT_NE(p.layers[0].param, p.layers[2].param);
}

// Exhaustive 2-partition oracle minimizing within-cluster squared distance.
TEST(KMeans, MatchesBestTwoPartition) {
  const std::vector<std::array<double, 2>> pts = {{0.0, 0.1}, {0.2, -0.1}, {-0.1, 0.0},
                                                  {5.0, 5.2}, {5.1, 4.9}, {4.8, 5.0}};
  double best = INFINITY;
  std::uint32_t best_mask = 0;
  for (std::uint32_t mask = 1; mask < (1u << pts.size()) - 1; ++mask) {
    double cost = 0.0;
    for (int side = 0; side < 2; ++side) {
      std::array<double, 2> c{0, 0};
      int n = 0;
      for (std::size_t i = 0; i < pts.size(); ++i)
        if (static_cast<int>(mask >> i & 1u) == side) {
          c[0] += pts[i][0];
          c[1] += pts[i][1];
          ++n;
        }
      c[0] /= n;
      c[1] /= n;
      for (std::size_t i = 0; i < pts.size(); ++i)
        if (static_cast<int>(mask >> i & 1u) == side)
          cost += (pts[i][0] - c[0]) * (pts[i][0] - c[0]) + (pts[i][1] - c[1]) * (pts[i][1] - c[1]);
    }
    if (cost < best) {
      best = cost;
      best_mask = mask;
    }
  }
  const auto km = kmeans_2d(pts, 2, 11);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = 0; j < pts.size(); ++j)
      EXPECT_EQ(km.cluster_of[i] == km.cluster_of[j], (best_mask >> i & 1u) == (best_mask >> j & 1u));
  EXPECT_EQ(km.cluster_of[0], 0);  // ascending center order
}

TEST(KMeans, Rejects) {
  Rng rng(2);
  const auto t = random_table(rng, 3, 3, 100);
  EXPECT_THROW(kmeans_plan(t, 4, {Quantize{1}, Quantize{1}, Quantize{1}, Quantize{1}}), UsageError);
  EXPECT_THROW(kmeans_plan(t, 2, {Quantize{1}}), UsageError);
  EXPECT_THROW(kmeans_plan(t, 1, {Quantize{9}}), UsageError);
}

TEST(PlanJson, RoundTripIsByteIdentical) {
  const auto p = dp_plan(worked_instance());
  const auto text = dump_json(plan_to_json(p, "abc"));
  std::string manifest;
  const auto back = plan_from_json(Json::parse(text), &manifest);
  EXPECT_EQ(manifest, "abc");
  EXPECT_EQ(dump_json(plan_to_json(back, manifest)), text);
  EXPECT_THROW(plan_from_json(Json::parse(R"({"format":"other"})")), DataError);
  EXPECT_THROW(plan_from_json(Json::parse(R"({"format":"greco-plan"})")), DataError);
}

}  // namespace
}  // namespace greco
