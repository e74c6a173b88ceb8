// Copyright 2026 The Prefrac Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prefrac/common.hpp"
#include "prefrac/tensor.hpp"

namespace prefrac::infer {

// Unordered per-piece group ids plus the group count they were decoded for.
struct GroupLabeling {
  std::vector<int> labels;
  int num_groups = 0;
};

struct DecodeConfig {
  enum class Mode { kSample, kArgmax };

  Mode mode = Mode::kArgmax;
  std::uint64_t seed = 0;  // consumed only in sample mode, one draw per row
  int num_groups_requested = 1;

  void validate(std::size_t logit_cols) const {
    if (num_groups_requested < 1 ||
        static_cast<std::size_t>(num_groups_requested) > logit_cols)
      throw ContractError("decode: num_groups_requested must lie in [1, K]");
  }
};

// Decode N x K logits into per-row labels < num_groups_requested. The
// distribution (or argmax) is the row softmax restricted to the first
// num_groups_requested columns and renormalized; sampling consumes one
// uniform draw per row, in row order, from a generator seeded by cfg.seed.
inline GroupLabeling decode(const ad::Tensor& logits, const DecodeConfig& cfg) {
  if (!logits.is_matrix() || logits.rows() == 0 || logits.cols() == 0)
    throw ContractError("decode: logits must be a non-empty 2-D tensor");
  cfg.validate(logits.cols());
  for (double v : logits.data())
    if (!std::isfinite(v)) throw ContractError("decode: logits must be finite");

  const std::size_t n = logits.rows();
  const std::size_t g = static_cast<std::size_t>(cfg.num_groups_requested);
  GroupLabeling out;
  out.labels.resize(n);
  out.num_groups = cfg.num_groups_requested;
  Rng rng(cfg.seed);
  std::vector<double> p(g);
  for (std::size_t i = 0; i < n; ++i) {
    if (cfg.mode == DecodeConfig::Mode::kArgmax) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < g; ++c)
        if (logits.at(i, c) > logits.at(i, best)) best = c;
      out.labels[i] = static_cast<int>(best);
      continue;
    }
    double mx = logits.at(i, 0);
    for (std::size_t c = 1; c < g; ++c) mx = std::max(mx, logits.at(i, c));
    double norm = 0.0;
    for (std::size_t c = 0; c < g; ++c) {
      p[c] = std::exp(logits.at(i, c) - mx);
      norm += p[c];
    }
    const double u = rng.uniform01() * norm;
    double cum = 0.0;
    std::size_t pick = g - 1;  // guard against accumulated rounding
    for (std::size_t c = 0; c < g; ++c) {
      cum += p[c];
      if (u < cum) {
        pick = c;
        break;
      }
    }
    out.labels[i] = static_cast<int>(pick);
  }
  return out;
}

// ---- labels file ----

struct LabelsFile {
  GroupLabeling labeling;
  std::string mode;  // "sample" or "argmax"
  std::uint64_t seed = 0;
};

inline void write_labels(const std::string& path, const GroupLabeling& labeling,
                         const DecodeConfig& cfg) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["labels"] = labeling.labels;
  j["num_groups"] = labeling.num_groups;
  j["mode"] = cfg.mode == DecodeConfig::Mode::kSample ? "sample" : "argmax";
  j["seed"] = cfg.seed;
  std::ofstream out(path);
  if (!out) throw DataError("write_labels: cannot open " + path);
  out << j.dump(2) << "\n";
}

inline LabelsFile read_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("read_labels: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("read_labels: malformed JSON in " + path + ": " + e.what());
  }
  try {
    if (!j.contains("format_version") || !j["format_version"].is_number_integer() ||
        j["format_version"].get<int>() != 1)
      throw DataError("read_labels: unsupported format_version in " + path);
    LabelsFile f;
    f.labeling.labels = j.at("labels").get<std::vector<int>>();
    f.labeling.num_groups = j.at("num_groups").get<int>();
    f.mode = j.at("mode").get<std::string>();
    f.seed = j.value("seed", std::uint64_t{0});
    if (f.labeling.num_groups < 1)
      throw DataError("read_labels: num_groups must be positive in " + path);
    if (f.mode != "sample" && f.mode != "argmax")
      throw DataError("read_labels: unknown mode \"" + f.mode + "\" in " + path);
    for (int l : f.labeling.labels)
      if (l < 0 || l >= f.labeling.num_groups)
        throw DataError("read_labels: label out of range in " + path);
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("read_labels: invalid labels file " + path + ": " + e.what());
  }
}

}  // namespace prefrac::infer
