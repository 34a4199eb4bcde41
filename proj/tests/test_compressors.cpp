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

#include <bit>
#include <cmath>

#include "greco/compressors.hpp"
#include "greco/error_tables.hpp"

namespace greco {
namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

TEST(ParamText, RoundTrips) {
  for (const char* s : {"quant:4", "quant:2@512", "topk:1/100", "topk:3/40", "lowrank:8", "lossless"})
    EXPECT_EQ(to_string(parse_param(s)), s);
}

TEST(ParamText, DensityForms) {
  EXPECT_EQ(parse_param("1%", Method::kSparsify), CompressionParam(Sparsify{1, 100}));
  EXPECT_EQ(parse_param("0.01", Method::kSparsify), CompressionParam(Sparsify{1, 100}));
  EXPECT_EQ(parse_param("2/200", Method::kSparsify), CompressionParam(Sparsify{1, 100}));
  EXPECT_EQ(parse_param("0.125", Method::kSparsify), CompressionParam(Sparsify{1, 8}));
}

TEST(ParamText, Rejects) {
  EXPECT_THROW(parse_param("quant:0"), UsageError);
  EXPECT_THROW(parse_param("quant:17"), UsageError);
  EXPECT_THROW(parse_param("topk:0"), UsageError);
  EXPECT_THROW(parse_param("topk:3/2"), UsageError);
  EXPECT_THROW(parse_param("lowrank:0"), UsageError);
  EXPECT_THROW(parse_param("zip:3"), UsageError);
  EXPECT_THROW(parse_param("4"), UsageError);
  EXPECT_THROW(parse_param("quant:x"), UsageError);
}

TEST(ParamOrder, FidelityWithinFamily) {
  EXPECT_TRUE(fidelity_less(Quantize{2}, Quantize{3}));
  EXPECT_TRUE(fidelity_less(Sparsify{1, 1000}, Sparsify{1, 100}));
  EXPECT_TRUE(fidelity_less(LowRank{1}, LowRank{2}));
  EXPECT_FALSE(fidelity_less(Sparsify{1, 100}, Sparsify{2, 200}));
}

TEST(Layer, MatrixView) {
  const auto w = make_layer(0, "w", {8, 3, 2});
  EXPECT_EQ(w.element_count, 48u);
  EXPECT_EQ(w.rows, 8u);
  EXPECT_EQ(w.cols, 6u);
  const auto b = make_layer(1, "b", {5});
  EXPECT_FALSE(b.is_matrix());
  EXPECT_THROW(make_layer(2, "z", {3, 0}), DataError);
  EXPECT_THROW(make_layer(2, "e", {}), DataError);
}

TEST(CodedSize, ClosedForms) {
  const auto big = make_layer(0, "big", {1000000});
  EXPECT_EQ(coded_size(big, Quantize{4}), 4000000u + 977u * 32u);
  EXPECT_EQ(coded_size(big, Sparsify{1, 100}), 10000u * 64u);
  EXPECT_EQ(coded_size(big, Lossless{}), 32000000u);
  EXPECT_EQ(coded_size(big, LowRank{4}), 32000000u);  // vectors go raw

  const auto m = make_layer(0, "m", {64, 48});
  EXPECT_EQ(coded_size(m, LowRank{4}), 32u * 4u * (64u + 48u));
  EXPECT_EQ(coded_size(m, LowRank{48}), 32u * 64u * 48u);
  // k rounds up and never drops to zero.
  const auto tiny = make_layer(0, "t", {10});
  EXPECT_EQ(coded_size(tiny, Sparsify{1, 1000}), 64u);
  EXPECT_EQ(coded_size(tiny, Sparsify{11, 100}), 2u * 64u);
}

TEST(CodedSize, MatchesEncoder) {
  const auto layer = make_layer(0, "w", {40, 25});
  const auto g = random_vector(layer.element_count, 3);
  for (CompressionParam p : {CompressionParam{Quantize{3, 64}}, CompressionParam{Sparsify{3, 100}},
                             CompressionParam{LowRank{5}}, CompressionParam{Lossless{}}}) {
    Rng rng(1);
    EXPECT_EQ(compress(g, layer, p, rng).coded_bits, coded_size(layer, p)) << to_string(p);
  }
}

// Exhaustive k-sparse oracle: the best k-subset minimizes the dropped energy.
TEST(TopK, OptimalAgainstExhaustiveSubsets) {
  for (std::size_t n = 1; n <= 12; ++n) {
    const auto g = random_vector(n, 100 + n);
    for (std::size_t k = 1; k <= n; ++k) {
      double best = INFINITY;
      for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        if (static_cast<std::size_t>(std::popcount(mask)) != k) continue;
        double e = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          if (!(mask >> i & 1u)) e += g[i] * g[i];
        best = std::min(best, std::sqrt(e));
      }
      const auto enc = topk(g, make_density(static_cast<std::int64_t>(k), static_cast<std::int64_t>(n)));
      EXPECT_NEAR(l2_distance(g, decode(enc)), best, 1e-12) << "n=" << n << " k=" << k;
    }
  }
}

TEST(TopK, TiesGoToLowerIndex) {
  const std::vector<double> g = {1.0, -2.0, 2.0, 0.5, -2.0};
  const auto enc = topk(g, Sparsify{2, 5});
  const auto& sp = std::get<SparsePayload>(enc.payload);
  EXPECT_EQ(sp.indices, (std::vector<std::uint32_t>{1, 2}));
  EXPECT_EQ(sp.values, (std::vector<double>{-2.0, 2.0}));
}

TEST(TopK, FullDensityIsExact) {
  const auto g = random_vector(37, 9);
  EXPECT_EQ(decode(topk(g, Sparsify{1, 1})), g);
}

TEST(TopK, RejectsBadInput) {
  EXPECT_THROW(topk(std::vector<double>{}, Sparsify{1, 2}), DataError);
  EXPECT_THROW(topk(std::vector<double>{1.0, NAN}, Sparsify{1, 2}), DataError);
}

TEST(GlobalTopK, SelectsAcrossLayers) {
  const std::vector<double> a = {0.1, 5.0, -0.2};
  const std::vector<double> b = {-4.0, 0.3};
  const auto r = global_topk({a, b}, Sparsify{2, 5});
  EXPECT_EQ(r.kept, 2u);
  EXPECT_EQ(r.coded_bits, 128u);
  EXPECT_EQ(decode(r.layers[0]), (std::vector<double>{0, 5.0, 0}));
  EXPECT_EQ(decode(r.layers[1]), (std::vector<double>{-4.0, 0}));
}

TEST(Quantize, CodesStayOnGrid) {
  const auto g = random_vector(3000, 4);
  for (int bits : {1, 2, 4, 8}) {
    Rng rng(7);
    const auto enc = quantize(g, bits, 512, rng);
    const auto& q = std::get<QuantPayload>(enc.payload);
    const int lim = bits == 1 ? 1 : (1 << (bits - 1)) - 1;
    for (auto c : q.codes) {
      EXPECT_LE(c, lim);
      EXPECT_GE(c, bits == 1 ? 0 : -lim);
    }
    EXPECT_EQ(q.scales.size(), 6u);
    // Every decoded value lies within one grid step of the input.
    const auto d = decode(enc);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double step = q.scales[i / 512] * (bits == 1 ? 2.0 : 1.0);
      EXPECT_LE(std::abs(d[i] - g[i]), step + 1e-12);
    }
  }
}

TEST(Quantize, ZeroGroupDecodesToZero) {
  std::vector<double> g(10, 0.0);
  Rng rng(1);
  EXPECT_EQ(decode(quantize(g, 4, 4, rng)), g);
}

TEST(Quantize, MaxMagnitudeIsExact) {
  const std::vector<double> g = {-3.0, 1.5, 0.0, 3.0};
  for (int bits : {1, 2, 3, 4}) {
    Rng rng(11);
    const auto d = decode(quantize(g, bits, 4, rng));
    EXPECT_DOUBLE_EQ(d[0], -3.0);
    EXPECT_DOUBLE_EQ(d[3], 3.0);
  }
}

TEST(Quantize, UnbiasedSmallMonteCarlo) {
  const std::vector<double> g = {0.3, -0.7, 1.0, 0.05, -0.45};
  const int trials = 20000;
  for (int bits : {1, 2, 4}) {
    std::vector<double> mean(g.size(), 0.0), sq(g.size(), 0.0);
    Rng rng(derive_seed(5, bits));
    for (int t = 0; t < trials; ++t) {
      const auto d = decode(quantize(g, bits, 8, rng));
      for (std::size_t i = 0; i < g.size(); ++i) {
        mean[i] += d[i];
        sq[i] += d[i] * d[i];
      }
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double m = mean[i] / trials;
      const double var = sq[i] / trials - m * m;
      const double se = std::sqrt(std::max(var, 0.0) / trials);
      EXPECT_LE(std::abs(m - g[i]), 4.0 * se + 1e-12) << "bits=" << bits << " i=" << i;
    }
  }
}

TEST(Quantize, SameSeedSameCodes) {
  const auto g = random_vector(500, 2);
  Rng a(42), b(42), c(43);
  const auto ea = quantize(g, 3, 128, a);
  EXPECT_EQ(ea, quantize(g, 3, 128, b));
  EXPECT_NE(ea, quantize(g, 3, 128, c));
}

TEST(LowRank, ExactOnLowRankInput) {
  // Rank-3 matrix: P0 Q0^T.
  const std::size_t m = 30, k = 20;
  const auto a = random_vector(m * 3, 1), b = random_vector(k * 3, 2);
  std::vector<double> g(m * k, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t r = 0; r < 3; ++r) g[i * k + j] += a[i * 3 + r] * b[j * 3 + r];
  const auto layer = make_layer(0, "w", {m, k});
  Rng rng(3);
  const auto d = decode(lowrank_compress(g, layer, 3, 2, rng));
  EXPECT_LT(l2_distance(g, d), 1e-9 * l2_norm(g));
}

TEST(LowRank, FullRankOrVectorGoesRaw) {
  const auto g = random_vector(12, 5);
  Rng rng(1);
  const auto enc = lowrank_compress(g, make_layer(0, "w", {4, 3}), 3, 2, rng);
  EXPECT_TRUE(std::holds_alternative<RawPayload>(enc.payload));
  EXPECT_EQ(decode(enc), g);
  const auto v = lowrank_compress(g, make_layer(0, "b", {12}), 1, 2, rng);
  EXPECT_EQ(decode(v), g);
  EXPECT_EQ(compression_error(g, make_layer(0, "b", {12}), LowRank{1}, rng), 0.0);
}

TEST(LowRank, NeverBeatsTruncatedSvd) {
  const auto layer = make_layer(0, "w", {24, 16});
  const auto g = random_vector(layer.element_count, 8);
  ConstMatrixMap m(g.data(), 24, 16);
  const std::vector<int> ranks = {1, 2, 4, 8};
  const auto svd = lowrank_error_svd(m, ranks);
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    Rng rng(derive_seed(1, i));
    const double e = compression_error(g, layer, LowRank{ranks[i]}, rng, 5);
    EXPECT_GE(e, svd[i] * (1 - 1e-12));
  }
}

TEST(Compress, LosslessAndErrors) {
  const auto layer = make_layer(0, "w", {3, 2});
  const auto g = random_vector(6, 1);
  Rng rng(1);
  EXPECT_EQ(decode(compress(g, layer, Lossless{}, rng)), g);
  EXPECT_EQ(compression_error(g, layer, Lossless{}, rng), 0.0);
  EXPECT_THROW(compress(random_vector(5, 1), layer, Lossless{}, rng), DataError);
  auto bad = g;
  bad[2] = INFINITY;
  EXPECT_THROW(compress(bad, layer, Quantize{4}, rng), DataError);
}

}  // namespace
}  // namespace greco
