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

// Deterministic single-process simulation of data-parallel SGD on a small
// MLP with per-layer gradient compression, error feedback and periodic
// replanning.

#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "greco/comm_model.hpp"
#include "greco/common.hpp"
#include "greco/compressors.hpp"
#include "greco/error_tables.hpp"
#include "greco/planner.hpp"
#include "greco/trace.hpp"

namespace greco {

enum class Scheme {
  kNone,
  kUniform,
  kLGreco,
  kLGrecoTime,
  kLGrecoBucket,
  kKMeans,
  kGlobalTopk,
  kFixedPlan,
};

inline const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::kNone: return "none";
    case Scheme::kUniform: return "uniform";
    case Scheme::kLGreco: return "lgreco";
    case Scheme::kLGrecoTime: return "lgreco_time";
    case Scheme::kLGrecoBucket: return "lgreco_bucket";
    case Scheme::kKMeans: return "kmeans";
    case Scheme::kGlobalTopk: return "global_topk";
    case Scheme::kFixedPlan: return "fixed_plan";
  }
  return "?";
}

inline Scheme parse_scheme(std::string_view s) {
  for (auto k : {Scheme::kNone, Scheme::kUniform, Scheme::kLGreco, Scheme::kLGrecoTime,
                 Scheme::kLGrecoBucket, Scheme::kKMeans, Scheme::kGlobalTopk,
                 Scheme::kFixedPlan})
    if (s == to_string(k)) return k;
  throw UsageError("unknown scheme '" + std::string(s) + "'");
}

inline bool is_adaptive(Scheme s) {
  return s == Scheme::kLGreco || s == Scheme::kLGrecoTime || s == Scheme::kLGrecoBucket ||
         s == Scheme::kKMeans;
}

struct DatasetSpec {
  std::size_t n_samples = 4096;
  std::size_t n_features = 64;
  std::size_t n_classes = 10;
  std::uint64_t seed = 1;
  double separation = 0.5;  // class-center scale relative to unit noise
};

struct SimConfig {
  int workers = 4;
  std::vector<int> widths = {64, 512, 32, 512, 32, 256, 16, 10};
  DatasetSpec data;
  int batch_per_worker = 32;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.02;  // L2, applied at the optimizer, never communicated
  bool cosine_lr = true;       // anneal the rate to zero over the run
  std::int64_t steps = 2000;
  std::int64_t warmup_steps = 200;
  std::int64_t replan_period = 200;
  Scheme scheme = Scheme::kNone;
  CompressionParam default_param = Sparsify{1, 100};
  std::vector<CompressionParam> per_layer_defaults;  // empty: uniform default
  std::vector<CompressionParam> candidates;          // empty: derived from default
  std::int64_t D = 10000;
  std::uint64_t seed = 0;
  bool squared_error = false;
  int power_steps = 2;  // low-rank compression during training
  std::uint64_t bucket_capacity_bytes = 64 * 1024;
  double bandwidth_bits_per_s = 1e9;
  double backward_s_per_param = 2e-9;
  int timing_samples = 500;
  int kmeans_clusters = 3;
  std::vector<CompressionParam> kmeans_params;  // empty: spread over candidates
  std::vector<CompressionParam> fixed_plan;
  std::int64_t eval_period = 100;
  std::string trace_path;  // capture accumulated gradients per window

  void validate() const {
    if (workers < 1) throw UsageError("workers must be >= 1");
    if (widths.size() < 2) throw UsageError("model needs at least two widths");
    for (int w : widths)
      if (w < 1) throw UsageError("layer widths must be positive");
    if (static_cast<std::size_t>(widths.front()) != data.n_features)
      throw UsageError("first width must equal the feature count");
    if (static_cast<std::size_t>(widths.back()) != data.n_classes)
      throw UsageError("last width must equal the class count");
    if (batch_per_worker < 1) throw UsageError("batch size must be >= 1");
    if (!(learning_rate > 0.0) || momentum < 0.0 || momentum >= 1.0 || weight_decay < 0.0)
      throw UsageError("bad optimizer settings");
    if (static_cast<std::size_t>(workers * batch_per_worker) > data.n_samples)
      throw UsageError("global batch larger than the dataset");
    if (steps < 0) throw UsageError("steps must be >= 0");
    if (warmup_steps < 0 || (steps > 0 && warmup_steps >= steps && scheme != Scheme::kNone))
      throw UsageError("warmup must be shorter than the run");
    if (replan_period < 1) throw UsageError("replan period must be >= 1");
    if (D < 1) throw UsageError("D must be >= 1");
    greco::validate(default_param);
  }
};

// Shared seed derivations, so that live planning and trace replay agree.
inline std::uint64_t model_seed(const SimConfig& c) { return derive_seed(c.seed, 0x6d6f64656cULL); }
inline std::uint64_t order_seed(const SimConfig& c) { return derive_seed(c.seed, 0x6f72646572ULL); }
inline TableOptions table_options(std::uint64_t seed, bool squared = false) {
  TableOptions o;
  o.seed = derive_seed(seed, 0x7461626c65ULL);
  o.squared = squared;
  return o;
}

// ---------------------------------------------------------------------------
// Data and model
// ---------------------------------------------------------------------------

struct Dataset {
  RowMatrix x;
  std::vector<int> y;
};

// Gaussian mixture: one N(0, separation^2) center per class plus unit noise.
inline Dataset make_dataset(const DatasetSpec& s) {
  Rng rng(derive_seed(s.seed, 0x64617461ULL));
  RowMatrix centers(static_cast<Eigen::Index>(s.n_classes), static_cast<Eigen::Index>(s.n_features));
  for (Eigen::Index i = 0; i < centers.size(); ++i) centers.data()[i] = s.separation * rng.normal();
  Dataset d;
  d.x.resize(static_cast<Eigen::Index>(s.n_samples), static_cast<Eigen::Index>(s.n_features));
  d.y.resize(s.n_samples);
  for (std::size_t i = 0; i < s.n_samples; ++i) {
    const auto c = static_cast<int>(rng.below(s.n_classes));
    d.y[i] = c;
    for (Eigen::Index f = 0; f < d.x.cols(); ++f)
      d.x(static_cast<Eigen::Index>(i), f) = centers(c, f) + rng.normal();
  }
  return d;
}

inline std::vector<LayerSpec> mlp_layers(const std::vector<int>& widths) {
  std::vector<LayerSpec> out;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const auto in = static_cast<std::uint64_t>(widths[i]);
    const auto o = static_cast<std::uint64_t>(widths[i + 1]);
    out.push_back(make_layer(out.size(), "fc" + std::to_string(i) + ".weight", {o, in}));
    out.push_back(make_layer(out.size(), "fc" + std::to_string(i) + ".bias", {o}));
  }
  return out;
}

using Grads = std::vector<std::vector<double>>;

struct BatchResult {
  double loss = 0.0;  // mean over the batch
  std::size_t correct = 0;
  Grads grads;        // mean over the batch
};

// ReLU MLP with softmax cross-entropy. Parameters are stored per tensor,
// weights row-major [out, in].
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<int> widths, std::uint64_t seed) : widths_(std::move(widths)) {
    layers_ = mlp_layers(widths_);
    Rng rng(seed);
    for (const auto& l : layers_) {
      std::vector<double> p(l.element_count, 0.0);
      if (l.is_matrix()) {
        const double sd = std::sqrt(2.0 / static_cast<double>(l.cols));
        for (auto& v : p) v = sd * rng.normal();
      }
      params_.push_back(std::move(p));
    }
  }

  const std::vector<LayerSpec>& layers() const { return layers_; }
  Grads& params() { return params_; }
  const Grads& params() const { return params_; }
  std::size_t depth() const { return widths_.size() - 1; }

  BatchResult forward_backward(const Dataset& d, std::span<const std::size_t> rows,
                               bool want_grads = true) const {
    const auto B = static_cast<Eigen::Index>(rows.size());
    std::vector<RowMatrix> acts;  // post-activation inputs per linear layer
    acts.reserve(depth() + 1);
    RowMatrix a(B, d.x.cols());
    for (Eigen::Index i = 0; i < B; ++i) a.row(i) = d.x.row(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]));
    acts.push_back(std::move(a));
    for (std::size_t k = 0; k < depth(); ++k) {
      RowMatrix z = acts.back() * weight(k).transpose();
      z.rowwise() += bias(k).transpose();
      if (k + 1 < depth()) z = z.cwiseMax(0.0);
      acts.push_back(std::move(z));
    }
    // Softmax cross-entropy on the logits in acts.back().
    RowMatrix& logits = acts.back();
    BatchResult res;
    RowMatrix dz(B, logits.cols());
    for (Eigen::Index i = 0; i < B; ++i) {
      const double m = logits.row(i).maxCoeff();
      Eigen::RowVectorXd e = (logits.row(i).array() - m).exp();
      const double s = e.sum();
      const int y = d.y[rows[static_cast<std::size_t>(i)]];
      res.loss += -(logits(i, y) - m - std::log(s));
      Eigen::Index arg;
      logits.row(i).maxCoeff(&arg);
      if (arg == y) ++res.correct;
      dz.row(i) = e / s;
      dz(i, y) -= 1.0;
    }
    res.loss /= static_cast<double>(B);
    if (!want_grads) return res;
    dz /= static_cast<double>(B);
    res.grads.resize(params_.size());
    for (std::size_t k = depth(); k-- > 0;) {
      const RowMatrix& in = acts[k];
      RowMatrix gw = dz.transpose() * in;
      Eigen::VectorXd gb = dz.colwise().sum().transpose();
      res.grads[2 * k].assign(gw.data(), gw.data() + gw.size());
      res.grads[2 * k + 1].assign(gb.data(), gb.data() + gb.size());
      if (k > 0) {
        RowMatrix da = dz * weight(k);
        dz = (in.array() > 0.0).select(da, 0.0);
      }
    }
    return res;
  }

 private:
  Eigen::Map<const RowMatrix> weight(std::size_t k) const {
    const auto& l = layers_[2 * k];
    return {params_[2 * k].data(), static_cast<Eigen::Index>(l.rows),
            static_cast<Eigen::Index>(l.cols)};
  }
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t k) const {
    return {params_[2 * k + 1].data(), static_cast<Eigen::Index>(params_[2 * k + 1].size())};
  }

  std::vector<int> widths_;
  std::vector<LayerSpec> layers_;
  Grads params_;
};

// ---------------------------------------------------------------------------
// Simulated workers
// ---------------------------------------------------------------------------

// What gets compressed at one step.
struct StepCompression {
  enum class Mode { kNone, kPerLayer, kGlobalTopk };
  Mode mode = Mode::kNone;
  std::vector<std::optional<CompressionParam>> per_layer;  // nullopt: raw
  Sparsify global_density{1, 100};
};

struct StepResult {
  double loss = 0.0;
  std::vector<std::uint64_t> layer_bits;  // per worker (identical across workers)
  bool compressed = false;
  Grads worker0_raw;                      // designated worker's local gradient
};

inline bool uses_error_feedback(const CompressionParam& p) {
  return std::holds_alternative<Sparsify>(p) || std::holds_alternative<LowRank>(p);
}

class Simulator {
 public:
  explicit Simulator(SimConfig cfg)
      : cfg_(std::move(cfg)),
        data_(std::make_shared<Dataset>(make_dataset(cfg_.data))),
        model_(cfg_.widths, model_seed(cfg_)) {
    reset_state();
  }

  const SimConfig& config() const { return cfg_; }
  const std::vector<LayerSpec>& layers() const { return model_.layers(); }
  const Dataset& data() const { return *data_; }
  Mlp& model() { return model_; }
  const Grads& residual(int worker) const { return residuals_[static_cast<std::size_t>(worker)]; }

  void reset_state() {
    momentum_.clear();
    for (const auto& p : model_.params()) momentum_.emplace_back(p.size(), 0.0);
    residuals_.assign(static_cast<std::size_t>(cfg_.workers), Grads{});
    for (auto& r : residuals_)
      for (const auto& p : model_.params()) r.emplace_back(p.size(), 0.0);
  }

  // Global batch rows for a step: an epoch-seeded permutation cut into
  // consecutive global batches; worker w takes the w-th slice.
  std::vector<std::size_t> global_batch(std::int64_t step) const {
    const std::size_t G = static_cast<std::size_t>(cfg_.workers * cfg_.batch_per_worker);
    const std::size_t per_epoch = cfg_.data.n_samples / G;
    const auto epoch = static_cast<std::uint64_t>(step) / per_epoch;
    const auto slot = static_cast<std::size_t>(static_cast<std::uint64_t>(step) % per_epoch);
    std::vector<std::size_t> perm(cfg_.data.n_samples);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(derive_seed(order_seed(cfg_), epoch));
    rng.shuffle(perm);
    return std::vector<std::size_t>(perm.begin() + static_cast<std::ptrdiff_t>(slot * G),
                                    perm.begin() + static_cast<std::ptrdiff_t>((slot + 1) * G));
  }

  StepResult train_step(std::int64_t step, const StepCompression& comp) {
    const auto rows = global_batch(step);
    const auto W = static_cast<std::size_t>(cfg_.workers);
    const auto b = static_cast<std::size_t>(cfg_.batch_per_worker);
    std::vector<BatchResult> local(W);
    parallel_for(W, [&](std::size_t w) {
      local[w] = model_.forward_backward(*data_, std::span(rows).subspan(w * b, b));
    });

    StepResult res;
    const auto& layers = model_.layers();
    res.layer_bits.assign(layers.size(), 0);
    res.worker0_raw = local[0].grads;
    std::vector<Grads> decoded(W);
    parallel_for(W, [&](std::size_t w) {
      decoded[w] = transmit(step, static_cast<int>(w), std::move(local[w].grads), comp,
                            w == 0 ? &res.layer_bits : nullptr);
    });
    res.compressed = comp.mode != StepCompression::Mode::kNone;

    for (std::size_t w = 0; w < W; ++w) res.loss += local[w].loss;
    res.loss /= static_cast<double>(W);
    if (!std::isfinite(res.loss))
      throw DivergenceError("loss became non-finite at step " + std::to_string(step), step);

    auto& params = model_.params();
    const double lr = learning_rate(step);
    for (std::size_t l = 0; l < params.size(); ++l) {
      auto& p = params[l];
      auto& v = momentum_[l];
      for (std::size_t i = 0; i < p.size(); ++i) {
        double g = 0.0;
        for (std::size_t w = 0; w < W; ++w) g += decoded[w][l][i];
        g /= static_cast<double>(W);
        v[i] = cfg_.momentum * v[i] + g + cfg_.weight_decay * p[i];
        p[i] -= lr * v[i];
      }
    }
    return res;
  }

  // Plain SGD on the whole global batch in one process.
  double reference_step(std::int64_t step) {
    const auto rows = global_batch(step);
    auto r = model_.forward_backward(*data_, rows);
    auto& params = model_.params();
    const double lr = learning_rate(step);
    for (std::size_t l = 0; l < params.size(); ++l)
      for (std::size_t i = 0; i < params[l].size(); ++i) {
        momentum_[l][i] =
            cfg_.momentum * momentum_[l][i] + r.grads[l][i] + cfg_.weight_decay * params[l][i];
        params[l][i] -= lr * momentum_[l][i];
      }
    return r.loss;
  }

  double learning_rate(std::int64_t step) const {
    if (!cfg_.cosine_lr || cfg_.steps <= 0) return cfg_.learning_rate;
    const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg_.steps));
    return 0.5 * cfg_.learning_rate * (1.0 + std::cos(std::numbers::pi * t));
  }

  std::pair<double, double> evaluate() const {
    std::vector<std::size_t> all(cfg_.data.n_samples);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto r = model_.forward_backward(*data_, all, false);
    return {r.loss, static_cast<double>(r.correct) / static_cast<double>(all.size())};
  }

  Checkpoint checkpoint(std::uint64_t step) const {
    Checkpoint ck;
    ck.model_seed = model_seed(cfg_);
    ck.data_seed = cfg_.data.seed;
    ck.step = step;
    ck.tensors = model_.layers();
    for (const auto& p : model_.params()) ck.values.emplace_back(p.begin(), p.end());
    return ck;
  }

  // Loads parameters; optimizer and error-feedback state restart at zero.
  void load(const Checkpoint& ck) {
    const auto& layers = model_.layers();
    if (ck.tensors.size() != layers.size()) throw DataError("checkpoint tensor count mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (ck.tensors[l].shape != layers[l].shape)
        throw DataError("checkpoint tensor '" + ck.tensors[l].name + "' has the wrong shape");
      model_.params()[l].assign(ck.values[l].begin(), ck.values[l].end());
    }
    reset_state();
  }

 private:
  Grads transmit(std::int64_t step, int worker, Grads grads, const StepCompression& comp,
                 std::vector<std::uint64_t>* bits_out) {
    const auto& layers = model_.layers();
    auto& resid = residuals_[static_cast<std::size_t>(worker)];
    if (comp.mode == StepCompression::Mode::kNone) {
      if (bits_out)
        for (std::size_t l = 0; l < layers.size(); ++l) (*bits_out)[l] = layers[l].uncompressed_bits();
      return grads;
    }
    if (comp.mode == StepCompression::Mode::kGlobalTopk) {
      for (std::size_t l = 0; l < layers.size(); ++l)
        for (std::size_t i = 0; i < grads[l].size(); ++i) grads[l][i] += resid[l][i];
      std::vector<std::span<const double>> views(grads.begin(), grads.end());
      const auto sel = global_topk(views, comp.global_density);
      Grads out(layers.size());
      for (std::size_t l = 0; l < layers.size(); ++l) {
        out[l] = decode(sel.layers[l]);
        for (std::size_t i = 0; i < out[l].size(); ++i) resid[l][i] = grads[l][i] - out[l][i];
        if (bits_out) (*bits_out)[l] = 64 * sel.layers[l].indices.size();
      }
      return out;
    }
    Grads out(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& param = comp.per_layer.at(l);
      if (!param) {
        if (bits_out) (*bits_out)[l] = layers[l].uncompressed_bits();
        out[l] = std::move(grads[l]);
        continue;
      }
      const bool ef = uses_error_feedback(*param);
      if (ef)
        for (std::size_t i = 0; i < grads[l].size(); ++i) grads[l][i] += resid[l][i];
      Rng rng(derive_seed(cfg_.seed, 0x737465ULL, static_cast<std::uint64_t>(step),
                          static_cast<std::uint64_t>(worker), l));
      const auto enc = compress(grads[l], layers[l], *param, rng, cfg_.power_steps);
      out[l] = decode(enc);
      if (ef)
        for (std::size_t i = 0; i < out[l].size(); ++i) resid[l][i] = grads[l][i] - out[l][i];
      if (bits_out) (*bits_out)[l] = enc.coded_bits;
    }
    return out;
  }

  SimConfig cfg_;
  std::shared_ptr<const Dataset> data_;
  Mlp model_;
  Grads momentum_;
  std::vector<Grads> residuals_;
};

// ---------------------------------------------------------------------------
// Training runs
// ---------------------------------------------------------------------------

struct StepRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  std::uint64_t transmitted_bits = 0;
  std::uint64_t uncompressed_bits = 0;
  bool compressed = false;
};

struct EvalRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct WindowRecord {
  std::int64_t id = 0;
  std::int64_t start_step = 0;
  std::int64_t end_step = 0;  // exclusive
  std::uint64_t transmitted_bits = 0;
  std::uint64_t uncompressed_bits = 0;
  double compression_ratio = 1.0;
  int plan_index = -1;                   // into MetricsSeries::plans
  std::vector<double> bucket_elements;   // mean transmitted elements per step
  std::vector<double> layer_bits;        // mean transmitted bits per step
};

struct Overheads {
  double total_s = 0.0;
  double error_s = 0.0;  // error tables
  double dp_s = 0.0;     // planner solves
  double timing_fit_s = 0.0;
  double planner_s() const { return error_s + dp_s + timing_fit_s; }
};

struct MetricsSeries {
  std::string scheme;
  std::vector<LayerSpec> layers;
  BucketLayout layout;
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  std::vector<WindowRecord> windows;
  std::vector<Plan> plans;
  Plan reference_plan;  // the uniform default, for comparison
  bool has_reference_plan = false;
  Overheads overheads;

  double final_loss() const { return evals.empty() ? 0.0 : evals.back().loss; }
};

inline MethodRange sim_range(const SimConfig& cfg, const std::vector<LayerSpec>& layers) {
  auto range = make_range(cfg.default_param, layers.size(), cfg.candidates);
  if (!cfg.per_layer_defaults.empty()) range = with_per_layer_defaults(range, cfg.per_layer_defaults);
  return range;
}

inline std::vector<double> backward_times(const SimConfig& cfg, const std::vector<LayerSpec>& layers) {
  std::vector<double> out;
  for (const auto& l : layers) out.push_back(cfg.backward_s_per_param * static_cast<double>(l.element_count));
  return out;
}

// One planning decision from an accumulated window. Live training and trace
// replay both go through here.
struct PlanRequest {
  Scheme scheme = Scheme::kLGreco;
  MethodRange range;
  std::int64_t D = 10000;
  TableOptions table;
  const BucketLayout* layout = nullptr;
  const TimingModel* timing = nullptr;
  int kmeans_clusters = 3;
  std::vector<CompressionParam> kmeans_params;
  std::uint64_t kmeans_seed = 0;
};

inline std::vector<CompressionParam> spread_candidates(const std::vector<CompressionParam>& c, int k) {
  std::vector<CompressionParam> out;
  for (int i = 0; i < k; ++i) {
    const std::size_t j = k == 1 ? c.size() / 2
                                 : static_cast<std::size_t>(i) * (c.size() - 1) / static_cast<std::size_t>(k - 1);
    out.push_back(c[j]);
  }
  return out;
}

inline Plan plan_window(const GradientAccumulator& acc, const PlanRequest& req,
                        ErrorSizeTable* table_out = nullptr) {
  auto table = build_tables(acc, req.range, req.D, req.table);
  Plan plan;
  switch (req.scheme) {
    case Scheme::kLGrecoTime:
      if (!req.timing || !req.layout) throw UsageError("time objective needs a timing model");
      plan = time_weighted_plan(table, *req.timing, *req.layout);
      break;
    case Scheme::kLGrecoBucket:
      if (!req.layout) throw UsageError("bucket objective needs a layout");
      plan = bucket_priority_plan(table, *req.layout);
      break;
    case Scheme::kKMeans: {
      const auto t0 = std::chrono::steady_clock::now();
      auto params = req.kmeans_params.empty()
                        ? spread_candidates(table.candidates, req.kmeans_clusters)
                        : req.kmeans_params;
      plan = kmeans_plan(table, req.kmeans_clusters, params, req.kmeans_seed);
      plan.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      break;
    }
    default: plan = dp_plan(table); break;
  }
  if (table_out) *table_out = std::move(table);
  return plan;
}

inline MetricsSeries run_training(const SimConfig& cfg) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  Simulator sim(cfg);
  auto layers = sim.layers();
  MetricsSeries m;
  m.scheme = to_string(cfg.scheme);
  m.layout = assign_buckets(layers, cfg.bucket_capacity_bytes);
  apply_layout(layers, m.layout);
  m.layers = layers;

  const bool compressing = cfg.scheme != Scheme::kNone;
  const bool adaptive = is_adaptive(cfg.scheme);
  const bool capture = !cfg.trace_path.empty();
  std::optional<MethodRange> range;
  if (compressing && cfg.scheme != Scheme::kGlobalTopk && cfg.scheme != Scheme::kFixedPlan)
    range = sim_range(cfg, layers);
  if (cfg.scheme == Scheme::kGlobalTopk && !std::holds_alternative<Sparsify>(cfg.default_param))
    throw UsageError("global_topk needs a top-k default");
  if (cfg.scheme == Scheme::kFixedPlan) {
    if (cfg.fixed_plan.size() != layers.size())
      throw UsageError("fixed plan must list one parameter per layer");
    for (const auto& p : cfg.fixed_plan) greco::validate(p);
  }

  GradientAccumulator acc(layers);
  std::optional<TraceWriter> trace;
  if (capture) trace.emplace(cfg.trace_path, layers);

  PlanRequest req;
  req.scheme = cfg.scheme;
  if (range) req.range = *range;
  req.D = cfg.D;
  req.table = table_options(cfg.seed, cfg.squared_error);
  req.layout = &m.layout;
  req.kmeans_clusters = cfg.kmeans_clusters;
  req.kmeans_params = cfg.kmeans_params;
  req.kmeans_seed = derive_seed(cfg.seed, 0x6b6dULL);
  std::optional<TimingModel> timing;

  StepCompression active;
  auto set_params = [&](const std::vector<CompressionParam>& ps) {
    active.mode = StepCompression::Mode::kPerLayer;
    active.per_layer.assign(ps.begin(), ps.end());
  };

  std::uint64_t next_window = 0;
  WindowRecord window;
  window.bucket_elements.assign(m.layout.size(), 0.0);
  window.layer_bits.assign(layers.size(), 0.0);
  auto close_window = [&](std::int64_t end) {
    window.end_step = end;
    const auto n = static_cast<double>(end - window.start_step);
    if (n > 0) {
      for (auto& v : window.bucket_elements) v /= n;
      for (auto& v : window.layer_bits) v /= n;
      window.compression_ratio = window.transmitted_bits > 0
                                     ? static_cast<double>(window.uncompressed_bits) /
                                           static_cast<double>(window.transmitted_bits)
                                     : 1.0;
      m.windows.push_back(window);
    }
    window = WindowRecord{};
    window.id = static_cast<std::int64_t>(m.windows.size());
    window.start_step = end;
    window.bucket_elements.assign(m.layout.size(), 0.0);
    window.layer_bits.assign(layers.size(), 0.0);
  };

  if (range) {
    // The uniform default, as the comparison point for every window.
    std::vector<std::vector<std::uint64_t>> costs(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l)
      for (const auto& c : range->candidates) costs[l].push_back(coded_size(layers[l], c));
    const auto t = make_table(layers, range->candidates,
                              std::vector<std::vector<double>>(layers.size(),
                                                               std::vector<double>(range->candidates.size(), 0.0)),
                              std::move(costs), detail::default_indices(*range), cfg.D, 1.0);
    m.reference_plan = default_plan(t);
    m.has_reference_plan = true;
  }

  for (std::int64_t s = 0; s < cfg.steps; ++s) {
    const bool boundary = s >= cfg.warmup_steps && (s - cfg.warmup_steps) % cfg.replan_period == 0;
    if (boundary) {
      if (s > 0) close_window(s);
      if (capture && acc.step_count() > 0) trace->append(acc);
      if (compressing) {
        switch (cfg.scheme) {
          case Scheme::kUniform: set_params(range->defaults); break;
          case Scheme::kFixedPlan: set_params(cfg.fixed_plan); break;
          case Scheme::kGlobalTopk:
            active.mode = StepCompression::Mode::kGlobalTopk;
            active.global_density = std::get<Sparsify>(cfg.default_param);
            break;
          default:
            if (acc.step_count() == 0) {
              set_params(range->defaults);
              break;
            }
            if (cfg.scheme == Scheme::kLGrecoTime && !timing) {
              const auto t0 = std::chrono::steady_clock::now();
              TimingSimulator ts{m.layout, cfg.bandwidth_bits_per_s, backward_times(cfg, layers), 0.0};
              std::vector<std::vector<std::uint64_t>> costs(layers.size());
              for (std::size_t l = 0; l < layers.size(); ++l)
                for (const auto& c : range->candidates) costs[l].push_back(coded_size(layers[l], c));
              timing = fit_timing(collect_timing_samples(
                  ts, costs, static_cast<std::size_t>(cfg.timing_samples), derive_seed(cfg.seed, 0x74ULL)));
              req.timing = &*timing;
              m.overheads.timing_fit_s +=
                  std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            }
            ErrorSizeTable table;
            Plan plan = plan_window(acc, req, &table);
            m.overheads.error_s += table.build_seconds;
            m.overheads.dp_s += plan.solve_seconds;
            m.plans.push_back(plan);
            window.plan_index = static_cast<int>(m.plans.size()) - 1;
            set_params(plan.params());
            break;
        }
      }
      acc.reset();
      acc.set_window(++next_window);
    }

    const StepResult r = sim.train_step(s, compressing && s >= cfg.warmup_steps ? active : StepCompression{});
    if (adaptive || capture) acc.accumulate(r.worker0_raw);

    StepRecord rec;
    rec.step = s;
    rec.loss = r.loss;
    rec.compressed = r.compressed;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      rec.transmitted_bits += r.layer_bits[l];
      rec.uncompressed_bits += layers[l].uncompressed_bits();
      window.layer_bits[l] += static_cast<double>(r.layer_bits[l]);
      window.bucket_elements[static_cast<std::size_t>(m.layout.bucket_of(l))] +=
          static_cast<double>(r.layer_bits[l]) / 32.0;
    }
    window.transmitted_bits += rec.transmitted_bits;
    window.uncompressed_bits += rec.uncompressed_bits;
    m.steps.push_back(rec);

    if (cfg.eval_period > 0 && (s + 1) % cfg.eval_period == 0 && s + 1 < cfg.steps) {
      auto [loss, acc_v] = sim.evaluate();
      m.evals.push_back({s + 1, loss, acc_v});
    }
  }
  if (cfg.steps > 0) {
    close_window(cfg.steps);
    if (capture && acc.step_count() > 0) trace->append(acc);
    auto [loss, acc_v] = sim.evaluate();
    m.evals.push_back({cfg.steps, loss, acc_v});
  }
  m.overheads.total_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return m;
}

// Single-process large-batch SGD on the same global batches.
inline std::vector<double> run_reference_sgd(const SimConfig& cfg) {
  cfg.validate();
  Simulator sim(cfg);
  std::vector<double> losses;
  for (std::int64_t s = 0; s < cfg.steps; ++s) losses.push_back(sim.reference_step(s));
  return losses;
}

// ---------------------------------------------------------------------------
// Loss-based sensitivity
// ---------------------------------------------------------------------------

inline Checkpoint train_checkpoint(SimConfig cfg, std::int64_t steps) {
  cfg.scheme = Scheme::kNone;
  Simulator sim(cfg);
  for (std::int64_t s = 0; s < steps; ++s) sim.train_step(s, {});
  return sim.checkpoint(static_cast<std::uint64_t>(steps));
}

// Full-dataset loss after probe_steps from the checkpoint, compressing at most
// one layer.
inline double probe_loss(const Checkpoint& ck, const SimConfig& cfg,
                         std::optional<std::pair<std::size_t, CompressionParam>> target,
                         int probe_steps) {
  if (probe_steps < 1 || probe_steps > 50) throw UsageError("probe steps must be in [1,50]");
  Simulator sim(cfg);
  sim.load(ck);
  StepCompression comp;
  if (target) {
    if (target->first >= sim.layers().size()) throw UsageError("probe layer out of range");
    comp.mode = StepCompression::Mode::kPerLayer;
    comp.per_layer.assign(sim.layers().size(), std::nullopt);
    comp.per_layer[target->first] = target->second;
  }
  const auto start = static_cast<std::int64_t>(ck.step);
  for (std::int64_t s = start; s < start + probe_steps; ++s) sim.train_step(s, comp);
  return sim.evaluate().first;
}

// Loss with layer compressed minus loss without, after the same probe steps.
inline double measure_loss_sensitivity(const Checkpoint& ck, const SimConfig& cfg,
                                       std::size_t layer, const CompressionParam& param,
                                       int probe_steps = 50) {
  const double base = probe_loss(ck, cfg, std::nullopt, probe_steps);
  return probe_loss(ck, cfg, std::make_pair(layer, param), probe_steps) - base;
}

inline std::optional<Checkpoint> load_checkpoint_file(const std::string& path) {
  return decode_checkpoint(read_file(path));
}

// ---------------------------------------------------------------------------
// Metric correlation
// ---------------------------------------------------------------------------

struct Correlation {
  double pearson = 0.0;
  double spearman = 0.0;
};

namespace detail {

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw DataError("metric_correlation: zero variance");
  return sab / std::sqrt(saa * sbb);
}

// Average ranks for ties.
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace detail

inline Correlation metric_correlation(const std::vector<std::vector<double>>& loss_deltas,
                                      const std::vector<std::vector<double>>& error_norms) {
  if (loss_deltas.size() != error_norms.size())
    throw DataError("metric_correlation: shape mismatch");
  std::vector<double> a, b;
  for (std::size_t i = 0; i < loss_deltas.size(); ++i) {
    if (loss_deltas[i].size() != error_norms[i].size())
      throw DataError("metric_correlation: shape mismatch");
    a.insert(a.end(), loss_deltas[i].begin(), loss_deltas[i].end());
    b.insert(b.end(), error_norms[i].begin(), error_norms[i].end());
  }
  if (a.size() < 3) throw DataError("metric_correlation: need at least 3 entries");
  return {detail::pearson(a, b), detail::pearson(detail::ranks(a), detail::ranks(b))};
}

// ---------------------------------------------------------------------------
// Trace capture / replay
// ---------------------------------------------------------------------------

inline MetricsSeries capture_trace(SimConfig cfg, const std::string& out_path) {
  cfg.trace_path = out_path;
  return run_training(cfg);
}

inline Plan replay_plan_from_trace(const Trace& trace, std::uint64_t window_id,
                                   const PlanRequest& req) {
  if (trace.windows.empty()) throw DataError("trace has no windows");
  return plan_window(accumulator_from_window(trace, trace.window(window_id)), req);
}

inline Plan replay_plan_from_trace(const std::string& path, std::uint64_t window_id,
                                   const MethodRange& range, std::int64_t D, std::uint64_t seed) {
  PlanRequest req;
  req.range = range;
  req.D = D;
  req.table = table_options(seed);
  return replay_plan_from_trace(read_trace(path), window_id, req);
}

}  // namespace greco
