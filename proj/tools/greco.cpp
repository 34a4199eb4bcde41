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

// greco: plan, simulate, fit timing models and report.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"

#include "greco/greco.hpp"

namespace fs = std::filesystem;
using namespace greco;

namespace {

constexpr const char* kToolVersion = "0.3.0";

// Inputs and configuration of one invocation. The digest covers everything
// except the outputs, and every output file carries it.
class Manifest {
 public:
  explicit Manifest(std::string command) { doc_["command"] = std::move(command); }

  Json& config() { return doc_["config"]; }
  void set_seed(std::uint64_t seed) { doc_["seed"] = seed; }
  void add_input(const std::string& path, std::string_view bytes) {
    doc_["inputs"][path] = hex64(fnv1a64(bytes));
  }

  std::string digest() const {
    Json d = doc_;
    d["tool_version"] = kToolVersion;
    return hex64(fnv1a64(d.dump()));
  }

  void add_output(const std::string& name, std::string_view bytes) {
    outputs_[name] = hex64(fnv1a64(bytes));
  }

  std::string render() const {
    Json d;
    d["digest"] = digest();
    d["tool_version"] = kToolVersion;
    for (auto it = doc_.begin(); it != doc_.end(); ++it) d[it.key()] = it.value();
    d["outputs"] = outputs_;
    return dump_json(d);
  }

 private:
  Json doc_;
  Json outputs_ = Json::object();
};

std::string csv_prologue(const Manifest& m) { return "# manifest " + m.digest() + "\n"; }

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

void emit(Manifest& m, const fs::path& path, const std::string& bytes, bool record = true) {
  write_file(path.string(), bytes);
  if (record) m.add_output(path.filename().string(), bytes);
}

// A parameter list: either a plan document or one parameter per line.
std::vector<CompressionParam> read_param_list(const std::string& path, Method method,
                                              Manifest& m) {
  const auto text = read_file(path);
  m.add_input(path, text);
  std::vector<CompressionParam> out;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    for (const auto& l : plan_from_json(parse_json_text(text, path)).layers) out.push_back(l.param);
  } else {
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      try {
        out.push_back(parse_param(line, method));
      } catch (const UsageError& e) {
        throw DataError(path + ": " + e.what());
      }
    }
  }
  for (const auto& p : out)
    if (method_of(p) != method) throw DataError(path + ": parameter " + to_string(p) + " has another method");
  return out;
}

std::vector<CompressionParam> parse_range(const std::string& spec, Method method) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  std::string p;
  while (std::getline(ss, p, ':')) parts.push_back(p);
  if (parts.size() != 3) throw UsageError("--range expects LO:HI:STEP");
  auto step = [&] {
    if (method == Method::kSparsify) return CompressionParam{detail::parse_density(parts[2])};
    const auto v = static_cast<int>(detail::parse_int(parts[2], "range step"));
    if (v < 1) throw UsageError("range step must be positive");
    return method == Method::kQuantize ? CompressionParam{Quantize{v}} : CompressionParam{LowRank{v}};
  }();
  return range_candidates(parse_param(parts[0], method), parse_param(parts[1], method), step);
}

MethodRange resolve_range(Method method, const std::string& def_text, const std::string& range_spec,
                          const std::string& per_layer_path, std::size_t layers, Manifest& m) {
  const auto def = parse_param(def_text, method);
  std::vector<CompressionParam> cands;
  if (!range_spec.empty()) cands = parse_range(range_spec, method);
  auto range = make_range(def, layers, cands);
  if (!per_layer_path.empty())
    range = with_per_layer_defaults(range, read_param_list(per_layer_path, method, m));
  return range;
}

// Bucket capacity shared by every subcommand, so timing models collected with
// defaults fit plans made with defaults. Sized for the toy model.
constexpr std::uint64_t kToolBucketCap = 64 * 1024;

std::string pad(std::string s, std::size_t w) {
  s.append(s.size() < w ? w - s.size() : 1, ' ');
  return s;
}

void print_plan_summary(std::ostream& os, const Plan& p, const std::vector<LayerSpec>& layers,
                        const BucketLayout& layout) {
  os << pad("layer", 24) << pad("elements", 10) << pad("bucket", 8) << pad("param", 16)
     << pad("bits", 12) << pad("ratio", 10) << "l2_error\n";
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& pl = p.layers[l];
    os << pad(pl.name, 24) << pad(std::to_string(layers[l].element_count), 10)
       << pad(std::to_string(layout.bucket_of(l)), 8) << pad(to_string(pl.param), 16)
       << pad(std::to_string(pl.bits), 12)
       << pad(fmt(static_cast<double>(pl.uncompressed_bits) / static_cast<double>(pl.bits)), 10)
       << fmt(pl.raw_error) << "\n";
  }
  os << "total bits " << p.total_bits << " (ratio " << fmt(p.compression_ratio) << "), error "
     << fmt(p.total_raw_error) << " of budget " << fmt(p.emax) << " [" << p.total_disc_error
     << "/" << p.D << "]\n";
}

// ---------------------------------------------------------------------------
// plan
// ---------------------------------------------------------------------------

struct PlanArgs {
  std::string trace, method, def, per_layer, range, objective = "size", timing, out;
  std::int64_t d_factor = 10000;
  std::optional<std::uint64_t> window;
  std::uint64_t bucket_cap = kToolBucketCap;
  std::uint64_t seed = 0;
};

int cmd_plan(const PlanArgs& a) {
  Manifest m("plan");
  const auto method = parse_method(a.method);
  const auto bytes = read_file(a.trace);
  m.add_input(a.trace, bytes);
  const auto trace = decode_trace(bytes);
  if (trace.windows.empty()) throw DataError(a.trace + ": trace has no windows");
  const auto& win = a.window ? trace.window(*a.window) : trace.windows.back();

  auto layers = trace.layers;
  const auto layout = assign_buckets(layers, a.bucket_cap);
  apply_layout(layers, layout);

  PlanRequest req;
  req.range = resolve_range(method, a.def, a.range, a.per_layer, layers.size(), m);
  req.D = a.d_factor;
  req.table = table_options(a.seed);
  req.layout = &layout;
  std::optional<TimingModel> timing;
  if (a.objective == "size") {
    req.scheme = Scheme::kLGreco;
  } else if (a.objective == "bucket") {
    req.scheme = Scheme::kLGrecoBucket;
  } else if (a.objective == "time") {
    if (a.timing.empty()) throw UsageError("--objective time needs --timing-model");
    const auto text = read_file(a.timing);
    m.add_input(a.timing, text);
    timing = timing_from_json(parse_json_text(text, a.timing));
    if (timing->coefficients.size() != layout.size())
      throw DataError("timing model has " + std::to_string(timing->coefficients.size()) +
                      " coefficients for " + std::to_string(layout.size()) +
                      " buckets; use the --bucket-cap it was collected with");
    req.scheme = Scheme::kLGrecoTime;
    req.timing = &*timing;
  } else {
    throw UsageError("unknown objective '" + a.objective + "'");
  }

  auto& c = m.config();
  c["method"] = method_name(method);
  c["default"] = to_string(req.range.defaults.front());
  c["candidates"] = req.range.candidates.size();
  c["d_factor"] = a.d_factor;
  c["objective"] = a.objective;
  c["window"] = win.window_id;
  c["bucket_cap_bytes"] = a.bucket_cap;
  m.set_seed(a.seed);

  auto acc = accumulator_from_window(trace, win);
  acc.set_window(win.window_id);
  const Plan plan = plan_window(acc, req);
  const auto doc = dump_json(plan_to_json(plan, m.digest()));
  emit(m, a.out, doc);
  write_file(a.out + ".manifest.json", m.render());
  print_plan_summary(std::cout, plan, layers, layout);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimArgs {
  SimConfig cfg;
  std::string scheme = "none", method = "topk", def = "1%", range, per_layer, fixed_plan,
              kmeans_params, trace_out, out_dir;
};

int cmd_simulate(SimArgs a) {
  Manifest m("simulate");
  auto& cfg = a.cfg;
  cfg.scheme = parse_scheme(a.scheme);
  const auto method = parse_method(a.method);
  cfg.default_param = parse_param(a.def, method);
  if (!a.range.empty()) cfg.candidates = parse_range(a.range, method);
  if (!a.per_layer.empty()) cfg.per_layer_defaults = read_param_list(a.per_layer, method, m);
  if (!a.fixed_plan.empty()) cfg.fixed_plan = read_param_list(a.fixed_plan, method, m);
  if (!a.kmeans_params.empty()) {
    std::stringstream ss(a.kmeans_params);
    std::string p;
    while (std::getline(ss, p, ',')) cfg.kmeans_params.push_back(parse_param(p, method));
  }
  cfg.trace_path = a.trace_out;
  cfg.data.n_features = static_cast<std::size_t>(cfg.widths.front());
  cfg.data.n_classes = static_cast<std::size_t>(cfg.widths.back());

  auto& c = m.config();
  c["scheme"] = a.scheme;
  c["method"] = method_name(method);
  c["default"] = to_string(cfg.default_param);
  c["range"] = a.range;
  c["workers"] = cfg.workers;
  c["widths"] = cfg.widths;
  c["batch_per_worker"] = cfg.batch_per_worker;
  c["learning_rate"] = cfg.learning_rate;
  c["momentum"] = cfg.momentum;
  c["weight_decay"] = cfg.weight_decay;
  c["cosine_lr"] = cfg.cosine_lr;
  c["steps"] = cfg.steps;
  c["warmup"] = cfg.warmup_steps;
  c["replan_every"] = cfg.replan_period;
  c["d_factor"] = cfg.D;
  c["bucket_cap_bytes"] = cfg.bucket_capacity_bytes;
  c["bandwidth_bits_per_s"] = cfg.bandwidth_bits_per_s;
  c["kmeans_clusters"] = cfg.kmeans_clusters;
  c["kmeans_params"] = a.kmeans_params;
  c["data"] = {{"samples", cfg.data.n_samples}, {"seed", cfg.data.seed}, {"separation", cfg.data.separation}};
  m.set_seed(cfg.seed);

  fs::create_directories(a.out_dir);
  const fs::path dir(a.out_dir);
  const auto run = run_training(cfg);
  const auto pro = csv_prologue(m);

  std::ostringstream metrics;
  metrics << pro << "step,loss,transmitted_bits,uncompressed_bits,compressed\n";
  metrics << std::setprecision(17);
  for (const auto& s : run.steps)
    metrics << s.step << "," << s.loss << "," << s.transmitted_bits << "," << s.uncompressed_bits
            << "," << (s.compressed ? 1 : 0) << "\n";
  emit(m, dir / "metrics.csv", metrics.str());

  std::ostringstream evals;
  evals << pro << "step,loss,accuracy\n" << std::setprecision(17);
  for (const auto& e : run.evals) evals << e.step << "," << e.loss << "," << e.accuracy << "\n";
  emit(m, dir / "evals.csv", evals.str());

  std::ostringstream windows;
  windows << pro << "window,start_step,end_step,transmitted_bits,uncompressed_bits,compression_ratio,plan\n"
          << std::setprecision(17);
  for (const auto& w : run.windows)
    windows << w.id << "," << w.start_step << "," << w.end_step << "," << w.transmitted_bits << ","
            << w.uncompressed_bits << "," << w.compression_ratio << "," << w.plan_index << "\n";
  emit(m, dir / "windows.csv", windows.str());

  std::ostringstream buckets;
  buckets << pro << "window,bucket,layers,capacity_elements,transmitted_elements_per_step\n"
          << std::setprecision(17);
  for (const auto& w : run.windows)
    for (std::size_t b = 0; b < run.layout.size(); ++b)
      buckets << w.id << "," << b << "," << run.layout.buckets[b].layers.size() << ","
              << run.layout.buckets[b].bytes / 4 << "," << w.bucket_elements[b] << "\n";
  emit(m, dir / "buckets.csv", buckets.str());

  std::ostringstream layers;
  layers << pro << "window,layer,name,elements,bucket,bits_per_step,ratio\n" << std::setprecision(17);
  for (const auto& w : run.windows)
    for (std::size_t l = 0; l < run.layers.size(); ++l) {
      const auto& L = run.layers[l];
      layers << w.id << "," << l << "," << L.name << "," << L.element_count << "," << L.bucket_id
             << "," << w.layer_bits[l] << ","
             << (w.layer_bits[l] > 0 ? static_cast<double>(L.uncompressed_bits()) / w.layer_bits[l] : 1.0)
             << "\n";
    }
  emit(m, dir / "layers.csv", layers.str());

  Json plans = Json::array();
  for (const auto& p : run.plans) plans.push_back(plan_to_json(p, m.digest()));
  emit(m, dir / "plans.json", dump_json(plans));

  // Wall-clock figures vary between runs; kept out of the output digests.
  std::ostringstream over;
  over << pro << "total_s,error_s,dp_s,timing_fit_s,replans\n" << std::setprecision(10)
       << run.overheads.total_s << "," << run.overheads.error_s << "," << run.overheads.dp_s << ","
       << run.overheads.timing_fit_s << "," << run.plans.size() << "\n";
  emit(m, dir / "overhead.csv", over.str(), false);

  write_file((dir / "manifest.json").string(), m.render());

  std::cout << "scheme " << a.scheme << ": " << run.steps.size() << " steps";
  if (!run.evals.empty())
    std::cout << ", final loss " << fmt(run.final_loss()) << ", accuracy "
              << fmt(run.evals.back().accuracy);
  std::cout << "\n";
  for (const auto& w : run.windows)
    std::cout << "  window " << w.id << " steps [" << w.start_step << "," << w.end_step
              << ") ratio " << fmt(w.compression_ratio) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// timing-collect / timing-fit
// ---------------------------------------------------------------------------

struct CollectArgs {
  std::string trace, method = "topk", def = "1%", range, out;
  std::vector<int> widths = SimConfig{}.widths;
  std::uint64_t bucket_cap = kToolBucketCap;
  double bandwidth = 1e9;
  double backward_per_param = 2e-9;
  double noise = 0.0;
  std::size_t n = 5000;
  std::uint64_t seed = 0;
};

int cmd_timing_collect(const CollectArgs& a) {
  Manifest m("timing-collect");
  std::vector<LayerSpec> layers;
  if (!a.trace.empty()) {
    const auto bytes = read_file(a.trace);
    m.add_input(a.trace, bytes);
    layers = decode_trace(bytes).layers;
  } else {
    layers = mlp_layers(a.widths);
  }
  const auto method = parse_method(a.method);
  const auto range = resolve_range(method, a.def, a.range, "", layers.size(), m);
  TimingSimulator sim;
  sim.layout = assign_buckets(layers, a.bucket_cap);
  sim.bandwidth_bits_per_s = a.bandwidth;
  sim.noise_rel = a.noise;
  for (const auto& l : layers) sim.backward_s.push_back(a.backward_per_param * static_cast<double>(l.element_count));
  std::vector<std::vector<std::uint64_t>> costs(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l)
    for (const auto& cand : range.candidates) costs[l].push_back(coded_size(layers[l], cand));

  auto& c = m.config();
  c["layers"] = layers.size();
  c["method"] = method_name(method);
  c["default"] = a.def;
  c["range"] = a.range;
  c["bucket_cap_bytes"] = a.bucket_cap;
  c["bandwidth_bits_per_s"] = a.bandwidth;
  c["backward_s_per_param"] = a.backward_per_param;
  c["noise"] = a.noise;
  c["n"] = a.n;
  m.set_seed(a.seed);

  const auto samples = collect_timing_samples(sim, costs, a.n, a.seed);
  std::ostringstream os;
  write_timing_csv(os, samples, sim.layout.size(), "manifest " + m.digest());
  emit(m, a.out, os.str());
  write_file(a.out + ".manifest.json", m.render());
  std::cout << samples.size() << " samples over " << sim.layout.size() << " buckets\n";
  return kExitOk;
}

int cmd_timing_fit(const std::string& samples_path, const std::string& out) {
  Manifest m("timing-fit");
  const auto text = read_file(samples_path);
  m.add_input(samples_path, text);
  std::istringstream is(text);
  const auto samples = read_timing_csv(is);
  if (samples.empty()) throw DataError(samples_path + ": no timing samples");
  const auto model = fit_timing(samples);
  auto j = timing_to_json(model);
  j["manifest"] = m.digest();
  emit(m, out, dump_json(j));
  write_file(out + ".manifest.json", m.render());
  for (const auto& w : model.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "R2 " << fmt(model.fit_score) << " (train " << model.train_samples << ", test "
            << model.test_samples << ")\nintercept_s " << fmt(model.intercept) << "\n";
  for (std::size_t b = 0; b < model.coefficients.size(); ++b)
    std::cout << "bucket " << b << " s_per_bit " << fmt(model.coefficients[b]) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct CsvTable {
  std::string manifest;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw DataError("CSV has no column '" + name + "'");
  }
};

CsvTable read_csv(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("missing run artifact " + path.string());
  std::istringstream is(read_file(path.string()));
  CsvTable t;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# manifest ", 0) == 0) t.manifest = line.substr(11);
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string x;
    while (std::getline(ss, x, ',')) f.push_back(x);
    if (t.header.empty()) {
      t.header = std::move(f);
    } else {
      if (f.size() != t.header.size()) throw DataError(path.string() + ": ragged row");
      t.rows.push_back(std::move(f));
    }
  }
  if (t.header.empty()) throw DataError(path.string() + ": no header");
  return t;
}

double to_double(const std::string& s) {
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw DataError("bad number '" + s + "'");
  }
}

int cmd_report(const std::string& run_dir, const std::string& kind, const std::string& out) {
  const fs::path dir(run_dir);
  std::ostringstream os;
  os << std::setprecision(10);
  auto select = [&](const char* file, std::vector<std::string> cols) {
    const auto t = read_csv(dir / file);
    os << "# manifest " << t.manifest << "\n";
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << "\n";
    std::vector<std::size_t> idx;
    for (const auto& c : cols) idx.push_back(t.col(c));
    for (const auto& r : t.rows) {
      for (std::size_t i = 0; i < idx.size(); ++i) os << (i ? "," : "") << r[idx[i]];
      os << "\n";
    }
  };
  if (kind == "ratio-over-time") {
    select("windows.csv", {"window", "start_step", "end_step", "compression_ratio"});
  } else if (kind == "bucket-profile") {
    select("buckets.csv", {"window", "bucket", "transmitted_elements_per_step"});
  } else if (kind == "layer-profile") {
    // Last window only: the profile the run finished with.
    const auto t = read_csv(dir / "layers.csv");
    os << "# manifest " << t.manifest << "\nlayer,name,elements,bucket,bits_per_step,ratio\n";
    const auto w = t.col("window");
    const std::string last = t.rows.empty() ? "" : t.rows.back()[w];
    for (const auto& r : t.rows)
      if (r[w] == last) {
        for (const char* c : {"layer", "name", "elements", "bucket", "bits_per_step"})
          os << r[t.col(c)] << ",";
        os << r[t.col("ratio")] << "\n";
      }
  } else if (kind == "overhead") {
    const auto t = read_csv(dir / "overhead.csv");
    if (t.rows.size() != 1) throw DataError("overhead.csv must have one row");
    const auto& r = t.rows[0];
    const double total = to_double(r[t.col("total_s")]);
    const double err = to_double(r[t.col("error_s")]);
    const double dp = to_double(r[t.col("dp_s")]);
    const double fit = to_double(r[t.col("timing_fit_s")]);
    const double pct = total > 0 ? 100.0 / total : 0.0;
    os << "# manifest " << t.manifest << "\n"
       << "total_s,planner_s,planner_pct,error_pct,dp_pct,timing_fit_pct\n"
       << total << "," << err + dp + fit << "," << (err + dp + fit) * pct << "," << err * pct << ","
       << dp * pct << "," << fit * pct << "\n";
  } else {
    throw UsageError("unknown report kind '" + kind + "'");
  }
  if (out.empty()) {
    std::cout << os.str();
  } else {
    write_file(out, os.str());
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"greco: layer-wise adaptive gradient compression planner"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  PlanArgs pa;
  auto* plan = app.add_subcommand("plan", "plan compression parameters from a gradient trace");
  plan->add_option("--trace", pa.trace, "GRT1 trace")->required();
  plan->add_option("--method", pa.method, "quant | topk | lowrank")->required();
  plan->add_option("--default", pa.def, "default parameter, e.g. 4, 1%, 1/100, lowrank:8")->required();
  plan->add_option("--per-layer-defaults", pa.per_layer, "plan document or one parameter per line");
  plan->add_option("--range", pa.range, "explicit candidate grid LO:HI:STEP");
  plan->add_option("--d-factor", pa.d_factor, "error discretization steps")->capture_default_str();
  plan->add_option("--objective", pa.objective, "size | time | bucket")->capture_default_str();
  plan->add_option("--timing-model", pa.timing, "timing model document (time objective)");
  plan->add_option("--window", pa.window, "trace window id (default: last)");
  plan->add_option("--bucket-cap", pa.bucket_cap, "bucket capacity in bytes")->capture_default_str();
  plan->add_option("--seed", pa.seed)->capture_default_str();
  plan->add_option("--out", pa.out, "plan document path")->required();

  SimArgs sa;
  auto* sim = app.add_subcommand("simulate", "run simulated data-parallel training");
  sim->add_option("--scheme", sa.scheme,
                  "none | uniform | lgreco | lgreco_time | lgreco_bucket | kmeans | global_topk | fixed_plan")
      ->capture_default_str();
  sim->add_option("--method", sa.method)->capture_default_str();
  sim->add_option("--default", sa.def)->capture_default_str();
  sim->add_option("--range", sa.range, "explicit candidate grid LO:HI:STEP");
  sim->add_option("--per-layer-defaults", sa.per_layer);
  sim->add_option("--fixed-plan", sa.fixed_plan, "plan document or parameter list");
  sim->add_option("--workers", sa.cfg.workers)->capture_default_str();
  sim->add_option("--steps", sa.cfg.steps)->capture_default_str();
  sim->add_option("--warmup", sa.cfg.warmup_steps)->capture_default_str();
  sim->add_option("--replan-every", sa.cfg.replan_period)->capture_default_str();
  sim->add_option("--seed", sa.cfg.seed)->capture_default_str();
  sim->add_option("--d-factor", sa.cfg.D)->capture_default_str();
  sim->add_option("--widths", sa.cfg.widths, "MLP layer widths")->delimiter(',');
  sim->add_option("--batch", sa.cfg.batch_per_worker, "batch per worker")->capture_default_str();
  sim->add_option("--lr", sa.cfg.learning_rate)->capture_default_str();
  sim->add_option("--momentum", sa.cfg.momentum)->capture_default_str();
  sim->add_option("--weight-decay", sa.cfg.weight_decay)->capture_default_str();
  sim->add_option("--cosine-lr", sa.cfg.cosine_lr, "anneal the learning rate to zero")->capture_default_str();
  sim->add_option("--samples", sa.cfg.data.n_samples, "dataset size")->capture_default_str();
  sim->add_option("--data-seed", sa.cfg.data.seed)->capture_default_str();
  sim->add_option("--separation", sa.cfg.data.separation, "class-center scale")->capture_default_str();
  sim->add_option("--bucket-cap", sa.cfg.bucket_capacity_bytes)->capture_default_str();
  sim->add_option("--bandwidth", sa.cfg.bandwidth_bits_per_s, "bits per second")->capture_default_str();
  sim->add_option("--kmeans-clusters", sa.cfg.kmeans_clusters)->capture_default_str();
  sim->add_option("--kmeans-params", sa.kmeans_params, "comma-separated, one per cluster");
  sim->add_option("--eval-every", sa.cfg.eval_period)->capture_default_str();
  sim->add_option("--trace-out", sa.trace_out, "write accumulated gradients as GRT1");
  sim->add_option("--out-dir", sa.out_dir)->required();

  CollectArgs ca;
  auto* collect = app.add_subcommand("timing-collect", "sample bucket sync times from the link model");
  collect->add_option("--trace", ca.trace, "take layer shapes from a trace");
  collect->add_option("--widths", ca.widths, "MLP widths when no trace is given")->delimiter(',');
  collect->add_option("--method", ca.method)->capture_default_str();
  collect->add_option("--default", ca.def)->capture_default_str();
  collect->add_option("--range", ca.range);
  collect->add_option("--bucket-cap", ca.bucket_cap)->capture_default_str();
  collect->add_option("--bandwidth", ca.bandwidth)->capture_default_str();
  collect->add_option("--backward-per-param", ca.backward_per_param, "seconds")->capture_default_str();
  collect->add_option("--noise", ca.noise, "relative Gaussian noise")->capture_default_str();
  collect->add_option("--n", ca.n)->capture_default_str();
  collect->add_option("--seed", ca.seed)->capture_default_str();
  collect->add_option("--out", ca.out)->required();

  std::string fit_samples, fit_out;
  auto* fit = app.add_subcommand("timing-fit", "fit per-bucket timing coefficients");
  fit->add_option("--samples", fit_samples)->required();
  fit->add_option("--out", fit_out)->required();

  std::string rep_dir, rep_kind, rep_out;
  auto* report = app.add_subcommand("report", "derive plot-ready CSV from a run directory");
  report->add_option("--run-dir", rep_dir)->required();
  report->add_option("--kind", rep_kind, "ratio-over-time | bucket-profile | layer-profile | overhead")
      ->required();
  report->add_option("--out", rep_out, "output path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*plan) return cmd_plan(pa);
    if (*sim) return cmd_simulate(sa);
    if (*collect) return cmd_timing_collect(ca);
    if (*fit) return cmd_timing_fit(fit_samples, fit_out);
    if (*report) return cmd_report(rep_dir, rep_kind, rep_out);
  } catch (const DivergenceError& e) {
    std::cerr << "greco: diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const UsageError& e) {
    std::cerr << "greco: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "greco: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "greco: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
