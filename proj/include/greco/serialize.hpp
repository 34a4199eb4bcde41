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

// JSON documents for plans and timing models.

#pragma once

#include <string>

#include "json.hpp"

#include "greco/comm_model.hpp"
#include "greco/planner.hpp"

namespace greco {

using Json = nlohmann::ordered_json;

inline constexpr const char* kPlanFormat = "greco-plan";
inline constexpr const char* kTimingFormat = "greco-timing-model";

// The per-layer assignment alone; identical for any two plans that choose
// the same parameters.
inline Json assignment_to_json(const Plan& p) {
  Json layers = Json::array();
  for (const auto& l : p.layers) {
    Json j;
    j["name"] = l.name;
    j["param"] = to_string(l.param);
    layers.push_back(std::move(j));
  }
  return layers;
}

inline Json plan_to_json(const Plan& p, const std::string& manifest = {}) {
  Json j;
  j["format"] = kPlanFormat;
  j["version"] = 1;
  j["method"] = p.method;
  j["objective_kind"] = to_string(p.objective_kind);
  j["emax"] = p.emax;
  j["D"] = p.D;
  j["window_id"] = p.window_id;
  j["total_raw_error"] = p.total_raw_error;
  j["total_disc_error"] = p.total_disc_error;
  j["total_bits"] = p.total_bits;
  j["uncompressed_bits"] = p.uncompressed_bits;
  j["compression_ratio"] = p.compression_ratio;
  j["objective_value"] = p.objective_value;
  Json layers = Json::array();
  for (const auto& l : p.layers) {
    Json lj;
    lj["name"] = l.name;
    lj["param"] = to_string(l.param);
    lj["candidate"] = l.candidate;
    lj["bits"] = l.bits;
    lj["uncompressed_bits"] = l.uncompressed_bits;
    lj["raw_error"] = l.raw_error;
    lj["disc_error"] = l.disc_error;
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  if (!manifest.empty()) j["manifest"] = manifest;
  return j;
}

inline std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

inline Plan plan_from_json(const Json& j, std::string* manifest = nullptr) {
  try {
    if (j.at("format").get<std::string>() != kPlanFormat) throw DataError("not a plan document");
    Plan p;
    p.method = j.at("method").get<std::string>();
    p.objective_kind = parse_objective_kind(j.at("objective_kind").get<std::string>());
    p.emax = j.at("emax").get<double>();
    p.D = j.at("D").get<std::int64_t>();
    p.window_id = j.at("window_id").get<std::uint64_t>();
    p.total_raw_error = j.at("total_raw_error").get<double>();
    p.total_disc_error = j.at("total_disc_error").get<std::int64_t>();
    p.total_bits = j.at("total_bits").get<std::uint64_t>();
    p.uncompressed_bits = j.at("uncompressed_bits").get<std::uint64_t>();
    p.compression_ratio = j.at("compression_ratio").get<double>();
    p.objective_value = j.at("objective_value").get<double>();
    for (const auto& lj : j.at("layers")) {
      PlanLayer l;
      l.name = lj.at("name").get<std::string>();
      l.param = parse_param(lj.at("param").get<std::string>());
      l.candidate = lj.at("candidate").get<std::size_t>();
      l.bits = lj.at("bits").get<std::uint64_t>();
      l.uncompressed_bits = lj.at("uncompressed_bits").get<std::uint64_t>();
      l.raw_error = lj.at("raw_error").get<double>();
      l.disc_error = lj.at("disc_error").get<std::int64_t>();
      p.layers.push_back(std::move(l));
    }
    if (manifest) *manifest = j.value("manifest", std::string{});
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed plan document: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("malformed plan document: ") + e.what());
  }
}

inline Json timing_to_json(const TimingModel& m) {
  Json j;
  j["format"] = kTimingFormat;
  j["version"] = 1;
  j["coefficients_s_per_bit"] = m.coefficients;
  j["intercept_s"] = m.intercept;
  j["fit_score_r2"] = m.fit_score;
  j["train_samples"] = m.train_samples;
  j["test_samples"] = m.test_samples;
  j["warnings"] = m.warnings;
  return j;
}

inline TimingModel timing_from_json(const Json& j) {
  try {
    if (j.at("format").get<std::string>() != kTimingFormat)
      throw DataError("not a timing model document");
    TimingModel m;
    m.coefficients = j.at("coefficients_s_per_bit").get<std::vector<double>>();
    m.intercept = j.at("intercept_s").get<double>();
    m.fit_score = j.at("fit_score_r2").get<double>();
    m.train_samples = j.value("train_samples", std::size_t{0});
    m.test_samples = j.value("test_samples", std::size_t{0});
    m.warnings = j.value("warnings", std::vector<std::string>{});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed timing model: ") + e.what());
  }
}

inline Json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(what + ": " + e.what());
  }
}

}  // namespace greco
