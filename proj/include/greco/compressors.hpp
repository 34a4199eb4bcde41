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

// Gradient compressors: stochastic max-norm quantization, top-k
// sparsification and power-iteration low-rank factorization, together with
// the closed-form coded-size accounting the planner optimizes over.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "greco/common.hpp"

namespace greco {

// ---------------------------------------------------------------------------
// Compression parameters
// ---------------------------------------------------------------------------

inline constexpr int kDefaultQuantGroup = 1024;
inline constexpr int kDefaultPowerSteps = 5;

struct Quantize {
  int bits = 4;
  int group_size = kDefaultQuantGroup;
  friend bool operator==(const Quantize&, const Quantize&) = default;
};

// Density kept as an exact rational so that candidate grids such as
// {p/10, 2p/10, ..., 10p} contain the default exactly.
struct Sparsify {
  std::int64_t num = 1;
  std::int64_t den = 100;
  double density() const noexcept {
    return static_cast<double>(num) / static_cast<double>(den);
  }
  friend bool operator==(const Sparsify&, const Sparsify&) = default;
};

struct LowRank {
  int rank = 4;
  friend bool operator==(const LowRank&, const LowRank&) = default;
};

struct Lossless {
  friend bool operator==(const Lossless&, const Lossless&) = default;
};

using CompressionParam = std::variant<Quantize, Sparsify, LowRank, Lossless>;

enum class Method { kQuantize, kSparsify, kLowRank, kLossless };

inline Method method_of(const CompressionParam& p) {
  return static_cast<Method>(p.index());
}

inline Sparsify make_density(std::int64_t num, std::int64_t den) {
  if (den <= 0 || num <= 0) throw UsageError("density must be positive");
  const std::int64_t g = std::gcd(num, den);
  return Sparsify{num / g, den / g};
}

inline void validate(const CompressionParam& p) {
  if (const auto* q = std::get_if<Quantize>(&p)) {
    if (q->bits < 1 || q->bits > 16)
      throw UsageError("quantization bits must be in [1,16], got " +
                       std::to_string(q->bits));
    if (q->group_size < 1) throw UsageError("quantization group size must be >= 1");
  } else if (const auto* s = std::get_if<Sparsify>(&p)) {
    if (s->num <= 0 || s->den <= 0 || s->num > s->den)
      throw UsageError("density must be in (0,1]");
  } else if (const auto* r = std::get_if<LowRank>(&p)) {
    if (r->rank < 1) throw UsageError("rank must be >= 1");
  }
}

// Fidelity key within one family: larger means more faithful.
inline double fidelity(const CompressionParam& p) {
  return std::visit(
      [](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Quantize>) return v.bits;
        if constexpr (std::is_same_v<T, Sparsify>) return v.density();
        if constexpr (std::is_same_v<T, LowRank>) return v.rank;
        return 1e300;
      },
      p);
}

inline bool fidelity_less(const CompressionParam& a, const CompressionParam& b) {
  if (a.index() != b.index()) return a.index() < b.index();
  if (const auto* sa = std::get_if<Sparsify>(&a)) {
    const auto& sb = std::get<Sparsify>(b);
    return static_cast<__int128>(sa->num) * sb.den <
           static_cast<__int128>(sb.num) * sa->den;
  }
  if (const auto* qa = std::get_if<Quantize>(&a)) {
    const auto& qb = std::get<Quantize>(b);
    if (qa->bits != qb.bits) return qa->bits < qb.bits;
    return qa->group_size > qb.group_size;
  }
  return fidelity(a) < fidelity(b);
}

// Text form: "quant:4", "quant:4@512", "topk:1/100", "lowrank:4", "lossless".
inline std::string to_string(const CompressionParam& p) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Quantize>) {
          std::string s = "quant:" + std::to_string(v.bits);
          if (v.group_size != kDefaultQuantGroup) s += "@" + std::to_string(v.group_size);
          return s;
        } else if constexpr (std::is_same_v<T, Sparsify>) {
          return "topk:" + std::to_string(v.num) + "/" + std::to_string(v.den);
        } else if constexpr (std::is_same_v<T, LowRank>) {
          return "lowrank:" + std::to_string(v.rank);
        } else {
          return "lossless";
        }
      },
      p);
}

inline const char* method_name(Method m) {
  switch (m) {
    case Method::kQuantize: return "quant";
    case Method::kSparsify: return "topk";
    case Method::kLowRank: return "lowrank";
    case Method::kLossless: return "lossless";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "quant" || s == "qsgd" || s == "quantize") return Method::kQuantize;
  if (s == "topk" || s == "sparsify") return Method::kSparsify;
  if (s == "lowrank" || s == "powersgd") return Method::kLowRank;
  if (s == "lossless" || s == "none") return Method::kLossless;
  throw UsageError("unknown method '" + std::string(s) + "'");
}

namespace detail {

inline std::int64_t parse_int(std::string_view s, const char* what) {
  std::int64_t v = 0;
  if (s.empty()) throw UsageError(std::string("missing ") + what);
  for (char c : s) {
    if (c < '0' || c > '9')
      throw UsageError(std::string("bad ") + what + " '" + std::string(s) + "'");
    v = v * 10 + (c - '0');
    if (v > (std::int64_t{1} << 50)) throw UsageError(std::string(what) + " too large");
  }
  return v;
}

// "1/100", "0.01", "1%", "2.5%".
inline Sparsify parse_density(std::string_view s) {
  std::int64_t scale = 1;
  if (!s.empty() && s.back() == '%') {
    scale = 100;
    s.remove_suffix(1);
  }
  if (auto slash = s.find('/'); slash != std::string_view::npos) {
    return make_density(parse_int(s.substr(0, slash), "density"),
                        parse_int(s.substr(slash + 1), "density") * scale);
  }
  std::int64_t num = 0, den = 1;
  bool frac = false;
  if (s.empty()) throw UsageError("missing density");
  for (char c : s) {
    if (c == '.') {
      if (frac) throw UsageError("bad density '" + std::string(s) + "'");
      frac = true;
      continue;
    }
    if (c < '0' || c > '9') throw UsageError("bad density '" + std::string(s) + "'");
    num = num * 10 + (c - '0');
    if (frac) den *= 10;
    if (den > (std::int64_t{1} << 40)) throw UsageError("density has too many digits");
  }
  return make_density(num, den * scale);
}

}  // namespace detail

// Parses a parameter value. A bare value ("4", "0.01") is read in the given
// family; a prefixed value ("quant:4") carries its own family.
inline CompressionParam parse_param(std::string_view text,
                                    std::optional<Method> family = std::nullopt) {
  std::string_view value = text;
  if (text == "lossless") return Lossless{};
  if (auto colon = text.find(':'); colon != std::string_view::npos) {
    family = parse_method(text.substr(0, colon));
    value = text.substr(colon + 1);
  }
  if (!family) throw UsageError("parameter '" + std::string(text) + "' has no method");
  CompressionParam p;
  switch (*family) {
    case Method::kQuantize: {
      Quantize q;
      auto at = value.find('@');
      q.bits = static_cast<int>(detail::parse_int(value.substr(0, at), "bits"));
      if (at != std::string_view::npos)
        q.group_size = static_cast<int>(detail::parse_int(value.substr(at + 1), "group"));
      p = q;
      break;
    }
    case Method::kSparsify: p = detail::parse_density(value); break;
    case Method::kLowRank:
      p = LowRank{static_cast<int>(detail::parse_int(value, "rank"))};
      break;
    case Method::kLossless: p = Lossless{}; break;
  }
  validate(p);
  return p;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

struct LayerSpec {
  std::size_t index = 0;
  std::string name;
  std::vector<std::uint64_t> shape;
  std::uint64_t element_count = 0;
  // Matrix view for low-rank; rows == 0 means a vector layer.
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
  int bucket_id = 0;

  bool is_matrix() const noexcept { return rows != 0; }
  std::uint64_t uncompressed_bits() const noexcept { return 32 * element_count; }
};

inline LayerSpec make_layer(std::size_t index, std::string name,
                            std::vector<std::uint64_t> shape) {
  if (shape.empty()) throw DataError("layer '" + name + "' has no dimensions");
  LayerSpec l;
  l.index = index;
  l.name = std::move(name);
  l.element_count = 1;
  for (auto d : shape) {
    if (d == 0) throw DataError("layer '" + l.name + "' has a zero dimension");
    l.element_count *= d;
  }
  if (shape.size() >= 2) {
    l.rows = shape[0];
    l.cols = l.element_count / shape[0];
  }
  l.shape = std::move(shape);
  return l;
}

// ---------------------------------------------------------------------------
// Encoded gradients
// ---------------------------------------------------------------------------

struct QuantPayload {
  int bits = 0;
  int group_size = 0;
  std::vector<std::int32_t> codes;
  std::vector<double> scales;
  friend bool operator==(const QuantPayload&, const QuantPayload&) = default;
};

struct SparsePayload {
  std::uint64_t length = 0;
  std::vector<std::uint32_t> indices;  // ascending
  std::vector<double> values;
  friend bool operator==(const SparsePayload&, const SparsePayload&) = default;
};

struct LowRankPayload {
  std::uint64_t rows = 0, cols = 0;
  int rank = 0;
  std::vector<double> p;  // rows x rank, row-major
  std::vector<double> q;  // cols x rank, row-major
  friend bool operator==(const LowRankPayload&, const LowRankPayload&) = default;
};

struct RawPayload {
  std::vector<double> values;
  friend bool operator==(const RawPayload&, const RawPayload&) = default;
};

using Payload = std::variant<QuantPayload, SparsePayload, LowRankPayload, RawPayload>;

struct EncodedGradient {
  CompressionParam param;
  std::uint64_t coded_bits = 0;
  Payload payload;
  friend bool operator==(const EncodedGradient&, const EncodedGradient&) = default;
};

namespace detail {

inline void require_finite(std::span<const double> g) {
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!std::isfinite(g[i]))
      throw DataError("non-finite gradient value at element " + std::to_string(i));
}

inline std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

inline std::uint64_t topk_count(std::uint64_t n, const Sparsify& s) {
  const auto num = static_cast<unsigned __int128>(s.num) * n;
  const auto den = static_cast<unsigned __int128>(s.den);
  const auto k = static_cast<std::uint64_t>((num + den - 1) / den);
  return std::clamp<std::uint64_t>(k, 1, n);
}

inline bool lowrank_is_lossless(const LayerSpec& layer, int rank) {
  return !layer.is_matrix() ||
         static_cast<std::uint64_t>(rank) >= std::min(layer.rows, layer.cols);
}

}  // namespace detail

// Closed-form transmitted size in bits.
inline std::uint64_t coded_size(const LayerSpec& layer, const CompressionParam& param) {
  validate(param);
  const std::uint64_t n = layer.element_count;
  return std::visit(
      [&](const auto& v) -> std::uint64_t {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Quantize>) {
          return n * static_cast<std::uint64_t>(v.bits) +
                 detail::ceil_div(n, static_cast<std::uint64_t>(v.group_size)) * 32;
        } else if constexpr (std::is_same_v<T, Sparsify>) {
          return detail::topk_count(n, v) * (32 + 32);
        } else if constexpr (std::is_same_v<T, LowRank>) {
          if (detail::lowrank_is_lossless(layer, v.rank)) return 32 * n;
          return 32 * static_cast<std::uint64_t>(v.rank) * (layer.rows + layer.cols);
        } else {
          return 32 * n;
        }
      },
      param);
}

// ---------------------------------------------------------------------------
// Quantization
// ---------------------------------------------------------------------------

// Stochastic rounding onto a symmetric uniform grid scaled per group by the
// group's max magnitude. Unbiased: E[decode] == g. For one bit the grid is
// {-scale, +scale}.
inline EncodedGradient quantize(std::span<const double> g, int bits, int group_size,
                                Rng& rng) {
  validate(Quantize{bits, group_size});
  detail::require_finite(g);
  const std::size_t n = g.size();
  const auto group = static_cast<std::size_t>(group_size);
  QuantPayload out;
  out.bits = bits;
  out.group_size = group_size;
  out.codes.resize(n);
  out.scales.resize(detail::ceil_div(n, group));
  const double levels = bits == 1 ? 1.0 : static_cast<double>((1 << (bits - 1)) - 1);
  for (std::size_t begin = 0, gi = 0; begin < n; begin += group, ++gi) {
    const std::size_t end = std::min(n, begin + group);
    double max_abs = 0.0;
    for (std::size_t i = begin; i < end; ++i) max_abs = std::max(max_abs, std::abs(g[i]));
    const double scale = max_abs / levels;
    out.scales[gi] = scale;
    for (std::size_t i = begin; i < end; ++i) {
      if (scale == 0.0) {
        out.codes[i] = 0;
        continue;
      }
      if (bits == 1) {
        const double up = 0.5 * (g[i] / scale + 1.0);
        out.codes[i] = rng.uniform() < up ? 1 : 0;
      } else {
        const double x = std::clamp(g[i] / scale, -levels, levels);
        const double lo = std::floor(x);
        const double frac = x - lo;
        const double level = lo + (rng.uniform() < frac ? 1.0 : 0.0);
        out.codes[i] = static_cast<std::int32_t>(level);
      }
    }
  }
  EncodedGradient enc;
  enc.param = Quantize{bits, group_size};
  enc.coded_bits = static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(bits) +
                   out.scales.size() * 32;
  enc.payload = std::move(out);
  return enc;
}

// ---------------------------------------------------------------------------
// Top-k sparsification
// ---------------------------------------------------------------------------

namespace detail {

// Indices of the k largest magnitudes, ties broken towards the lower index,
// returned in ascending index order.
inline std::vector<std::uint32_t> select_topk(std::span<const double> g, std::uint64_t k) {
  std::vector<std::uint32_t> idx(g.size());
  std::iota(idx.begin(), idx.end(), 0u);
  auto before = [&](std::uint32_t a, std::uint32_t b) {
    const double ma = std::abs(g[a]), mb = std::abs(g[b]);
    return ma > mb || (ma == mb && a < b);
  };
  if (k < g.size()) {
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                     before);
    idx.resize(k);
  }
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

inline EncodedGradient topk(std::span<const double> g, const Sparsify& density) {
  validate(density);
  if (g.empty()) throw DataError("top-k on an empty vector");
  detail::require_finite(g);
  if (g.size() > std::numeric_limits<std::uint32_t>::max())
    throw DataError("layer too large for 32-bit indices");
  const std::uint64_t k = detail::topk_count(g.size(), density);
  SparsePayload out;
  out.length = g.size();
  out.indices = detail::select_topk(g, k);
  out.values.reserve(k);
  for (auto i : out.indices) out.values.push_back(g[i]);
  EncodedGradient enc;
  enc.param = density;
  enc.coded_bits = k * (32 + 32);
  enc.payload = std::move(out);
  return enc;
}

// ---------------------------------------------------------------------------
// Low-rank (power iteration)
// ---------------------------------------------------------------------------

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

namespace detail {

// Modified Gram-Schmidt over the columns of p. Columns that vanish after
// projection are zeroed; they contribute nothing to p * p^T.
inline void orthonormalize_columns(RowMatrix& p) {
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    const double before = p.col(j).norm();
    for (Eigen::Index i = 0; i < j; ++i) p.col(j) -= p.col(i).dot(p.col(j)) * p.col(i);
    const double norm = p.col(j).norm();
    if (norm <= 1e-12 * before || norm == 0.0) {
      p.col(j).setZero();
    } else {
      p.col(j) /= norm;
    }
  }
}

}  // namespace detail

// Subspace iteration: Q ~ N(0,1); repeat { P = M Q; orthonormalize P; Q = M^T P }.
// Decodes to P Q^T, the projection of M onto span(P).
inline LowRankPayload power_iteration(const ConstMatrixMap& m, int rank, int power_steps,
                                      Rng& rng) {
  if (rank < 1) throw UsageError("rank must be >= 1");
  if (power_steps < 1) throw UsageError("power steps must be >= 1");
  RowMatrix q(m.cols(), rank);
  for (Eigen::Index i = 0; i < q.rows(); ++i)
    for (Eigen::Index j = 0; j < q.cols(); ++j) q(i, j) = rng.normal();
  RowMatrix p;
  for (int step = 0; step < power_steps; ++step) {
    p.noalias() = m * q;
    detail::orthonormalize_columns(p);
    q.noalias() = m.transpose() * p;
  }
  LowRankPayload out;
  out.rows = static_cast<std::uint64_t>(m.rows());
  out.cols = static_cast<std::uint64_t>(m.cols());
  out.rank = rank;
  out.p.assign(p.data(), p.data() + p.size());
  out.q.assign(q.data(), q.data() + q.size());
  return out;
}

inline EncodedGradient lowrank_compress(std::span<const double> g, const LayerSpec& layer,
                                        int rank, int power_steps, Rng& rng) {
  validate(LowRank{rank});
  detail::require_finite(g);
  if (g.size() != layer.element_count) throw DataError("gradient/layer size mismatch");
  EncodedGradient enc;
  enc.param = LowRank{rank};
  enc.coded_bits = coded_size(layer, enc.param);
  if (detail::lowrank_is_lossless(layer, rank)) {
    enc.payload = RawPayload{std::vector<double>(g.begin(), g.end())};
    return enc;
  }
  ConstMatrixMap m(g.data(), static_cast<Eigen::Index>(layer.rows),
                   static_cast<Eigen::Index>(layer.cols));
  enc.payload = power_iteration(m, rank, power_steps, rng);
  return enc;
}

// ---------------------------------------------------------------------------
// Dispatch, decode, error
// ---------------------------------------------------------------------------

inline std::vector<double> decode(const EncodedGradient& enc) {
  return std::visit(
      [](const auto& pl) -> std::vector<double> {
        using T = std::decay_t<decltype(pl)>;
        if constexpr (std::is_same_v<T, QuantPayload>) {
          std::vector<double> out(pl.codes.size());
          const auto group = static_cast<std::size_t>(pl.group_size);
          for (std::size_t i = 0; i < out.size(); ++i) {
            const double scale = pl.scales[i / group];
            if (scale == 0.0) {
              out[i] = 0.0;
            } else if (pl.bits == 1) {
              out[i] = pl.codes[i] ? scale : -scale;
            } else {
              out[i] = pl.codes[i] * scale;
            }
          }
          return out;
        } else if constexpr (std::is_same_v<T, SparsePayload>) {
          std::vector<double> out(pl.length, 0.0);
          for (std::size_t j = 0; j < pl.indices.size(); ++j) out[pl.indices[j]] = pl.values[j];
          return out;
        } else if constexpr (std::is_same_v<T, LowRankPayload>) {
          const auto r = static_cast<Eigen::Index>(pl.rank);
          Eigen::Map<const RowMatrix> p(pl.p.data(), static_cast<Eigen::Index>(pl.rows), r);
          Eigen::Map<const RowMatrix> q(pl.q.data(), static_cast<Eigen::Index>(pl.cols), r);
          RowMatrix m = p * q.transpose();
          return std::vector<double>(m.data(), m.data() + m.size());
        } else {
          return pl.values;
        }
      },
      enc.payload);
}

inline EncodedGradient compress(std::span<const double> g, const LayerSpec& layer,
                                const CompressionParam& param, Rng& rng,
                                int power_steps = kDefaultPowerSteps) {
  validate(param);
  if (g.size() != layer.element_count)
    throw DataError("gradient length " + std::to_string(g.size()) + " does not match layer '" +
                    layer.name + "' (" + std::to_string(layer.element_count) + ")");
  return std::visit(
      [&](const auto& v) -> EncodedGradient {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Quantize>) {
          return quantize(g, v.bits, v.group_size, rng);
        } else if constexpr (std::is_same_v<T, Sparsify>) {
          return topk(g, v);
        } else if constexpr (std::is_same_v<T, LowRank>) {
          return lowrank_compress(g, layer, v.rank, power_steps, rng);
        } else {
          detail::require_finite(g);
          return EncodedGradient{Lossless{}, 32 * layer.element_count,
                                 RawPayload{std::vector<double>(g.begin(), g.end())}};
        }
      },
      param);
}

inline double l2_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// ||g - decode(compress(g))||_2 on a fresh compression (no residual state).
inline double compression_error(std::span<const double> g, const LayerSpec& layer,
                                const CompressionParam& param, Rng& rng,
                                int power_steps = kDefaultPowerSteps) {
  if (std::holds_alternative<Lossless>(param)) {
    detail::require_finite(g);
    return 0.0;
  }
  const auto enc = compress(g, layer, param, rng, power_steps);
  if (std::holds_alternative<RawPayload>(enc.payload)) return 0.0;
  return l2_distance(g, decode(enc));
}

// Selects the largest-magnitude entries over the concatenation of all layers
// and splits them back per layer. Layers may keep zero entries.
struct GlobalTopkResult {
  std::vector<SparsePayload> layers;
  std::uint64_t kept = 0;
  std::uint64_t coded_bits = 0;
};

inline GlobalTopkResult global_topk(const std::vector<std::span<const double>>& grads,
                                    const Sparsify& density) {
  validate(density);
  std::vector<double> all;
  for (const auto& g : grads) {
    detail::require_finite(g);
    all.insert(all.end(), g.begin(), g.end());
  }
  GlobalTopkResult res;
  res.layers.resize(grads.size());
  for (std::size_t l = 0; l < grads.size(); ++l) res.layers[l].length = grads[l].size();
  if (all.empty()) return res;
  const std::uint64_t k = detail::topk_count(all.size(), density);
  const auto kept = detail::select_topk(all, k);
  std::size_t layer = 0;
  std::uint64_t offset = 0;
  for (auto gi : kept) {
    while (gi >= offset + grads[layer].size()) offset += grads[layer++].size();
    res.layers[layer].indices.push_back(static_cast<std::uint32_t>(gi - offset));
    res.layers[layer].values.push_back(all[gi]);
  }
  res.kept = k;
  res.coded_bits = k * 64;
  return res;
}

inline std::vector<double> decode(const SparsePayload& p) {
  return decode(EncodedGradient{Lossless{}, 0, p});
}

}  // namespace greco
