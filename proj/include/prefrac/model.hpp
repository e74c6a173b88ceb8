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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prefrac/common.hpp"
#include "prefrac/tensor.hpp"

namespace prefrac::model {

// Permutation-equivariant point network: N normalized points plus one scalar
// conditioning feature in, N x K group logits out. U-shaped: each encoder
// stage runs local scalar attention over a k-NN graph, stages are linked by
// farthest-point downsampling, and the decoder interpolates coarse features
// back up with inverse-distance weights and a skip connection per level.
struct ModelConfig {
  int k_groups = 16;                 // output width: maximum group count
  int neighbors = 8;                 // attention neighborhood size
  std::vector<int> channels = {32, 64};  // per-stage feature widths
  int stages = 2;                    // encoder depth; equals channels.size()
  std::uint64_t seed = 0;            // parameter-init seed

  void validate() const {
    if (k_groups < 2) throw ContractError("ModelConfig: k_groups must be >= 2");
    if (neighbors < 1) throw ContractError("ModelConfig: neighbors must be >= 1");
    if (channels.empty()) throw ContractError("ModelConfig: channels must be non-empty");
    for (int c : channels)
      if (c < 1) throw ContractError("ModelConfig: channel widths must be >= 1");
    if (stages != static_cast<int>(channels.size()))
      throw ContractError("ModelConfig: stages must equal channels.size()");
  }
};

struct Parameters {
  std::map<std::string, ad::Tensor> tensors;
};

// ---- geometric primitives ----

// Index of the point nearest the centroid; ties -> lowest index.
inline std::size_t nearest_centroid(const std::vector<Vec3>& points) {
  if (points.empty()) throw ContractError("nearest_centroid: empty point set");
  Vec3 c{0.0, 0.0, 0.0};
  for (const Vec3& p : points) c += p;
  c = c / static_cast<double>(points.size());
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 d = points[i] - c;
    const double d2 = dot(d, d);
    if (d2 < best_d) {
      best_d = d2;
      best = i;
    }
  }
  return best;
}

// Greedy farthest-point sampling from a given start index. Each round picks
// the point maximizing the distance to the already-selected set; ties ->
// lowest index. Deterministic.
inline std::vector<int> fps(const std::vector<Vec3>& points, std::size_t m, std::size_t start) {
  const std::size_t n = points.size();
  if (m < 1 || m > n) throw ContractError("fps: sample count out of range");
  if (start >= n) throw ContractError("fps: start index out of range");
  std::vector<int> picked;
  picked.reserve(m);
  picked.push_back(static_cast<int>(start));
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 d = points[i] - points[start];
    dist[i] = dot(d, d);
  }
  while (picked.size() < m) {
    std::size_t far = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (dist[i] > dist[far]) far = i;
    picked.push_back(static_cast<int>(far));
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3 d = points[i] - points[far];
      dist[i] = std::min(dist[i], dot(d, d));
    }
  }
  return picked;
}

// Euclidean k-nearest neighbors including self, ties -> lowest index.
// Returns a flat row-major N x k index table ordered by ascending distance.
inline std::vector<int> knn(const std::vector<Vec3>& points, std::size_t k) {
  const std::size_t n = points.size();
  if (k < 1 || k > n) throw ContractError("knn: neighbor count out of range");
  std::vector<int> out(n * k);
  std::vector<std::pair<double, int>> cand(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const Vec3 d = points[j] - points[i];
      cand[j] = {dot(d, d), static_cast<int>(j)};
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = cand[j].second;
  }
  return out;
}

// Nearest neighbors of each query point within a separate reference set;
// same ordering and tie rules as knn.
inline std::vector<int> knn_from(const std::vector<Vec3>& queries, const std::vector<Vec3>& refs,
                                 std::size_t k) {
  if (k < 1 || k > refs.size()) throw ContractError("knn_from: neighbor count out of range");
  std::vector<int> out(queries.size() * k);
  std::vector<std::pair<double, int>> cand(refs.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    for (std::size_t j = 0; j < refs.size(); ++j) {
      const Vec3 d = refs[j] - queries[i];
      cand[j] = {dot(d, d), static_cast<int>(j)};
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = cand[j].second;
  }
  return out;
}

// ---- parameters ----

// Canonical construction-order list of (name, shape). Initialization draws
// from one stream in exactly this order, so the layout is part of the format.
inline std::vector<std::pair<std::string, std::vector<std::size_t>>> param_manifest(
    const ModelConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::string, std::vector<std::size_t>>> m;
  const auto c = [&](int s) { return static_cast<std::size_t>(cfg.channels[s]); };
  const std::size_t kk = static_cast<std::size_t>(cfg.k_groups);
  m.push_back({"embed.weight", {4, c(0)}});
  m.push_back({"embed.bias", {1, c(0)}});
  for (int s = 0; s < cfg.stages; ++s) {
    const std::string p = "stage" + std::to_string(s) + ".";
    m.push_back({p + "diff.weight", {c(s), c(s)}});
    m.push_back({p + "pos.weight", {3, c(s)}});
    m.push_back({p + "score.bias", {1, c(s)}});
    m.push_back({p + "score.weight", {c(s), 1}});
    m.push_back({p + "value.weight", {c(s), c(s)}});
    m.push_back({p + "valuepos.weight", {3, c(s)}});
    m.push_back({p + "value.bias", {1, c(s)}});
    if (s + 1 < cfg.stages) {
      const std::string d = "down" + std::to_string(s + 1) + ".";
      m.push_back({d + "weight", {c(s), c(s + 1)}});
      m.push_back({d + "bias", {1, c(s + 1)}});
    }
  }
  for (int s = cfg.stages - 2; s >= 0; --s) {
    const std::string u = "up" + std::to_string(s) + ".";
    m.push_back({u + "weight", {c(s + 1), c(s)}});
    m.push_back({"skip" + std::to_string(s) + ".weight", {c(s), c(s)}});
    m.push_back({u + "bias", {1, c(s)}});
  }
  m.push_back({"head.weight", {c(0), kk}});
  m.push_back({"head.bias", {1, kk}});
  return m;
}

inline std::size_t param_count(const ModelConfig& cfg) {
  std::size_t total = 0;
  for (const auto& [name, shape] : param_manifest(cfg)) total += shape[0] * shape[1];
  return total;
}

// Weights are uniform on [-sqrt(6/(fan_in+fan_out)), +...] (variance-scaled);
// biases start at zero. One splitmix64 stream seeded from config.seed, drawn
// in manifest order, so init is a pure function of the config.
inline Parameters init(const ModelConfig& cfg) {
  Parameters params;
  Rng rng(cfg.seed);
  for (const auto& [name, shape] : param_manifest(cfg)) {
    ad::Tensor t = ad::Tensor::zeros(shape);
    const bool is_bias = name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
    if (!is_bias) {
      const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
      for (double& v : t.data()) v = rng.uniform(-limit, limit);
    }
    params.tensors.emplace(name, std::move(t));
  }
  return params;
}

inline void check_parameters(const ModelConfig& cfg, const Parameters& params) {
  const auto manifest = param_manifest(cfg);
  if (params.tensors.size() != manifest.size())
    throw ShapeError("parameters: expected " + std::to_string(manifest.size()) +
                     " tensors, got " + std::to_string(params.tensors.size()));
  for (const auto& [name, shape] : manifest) {
    const auto it = params.tensors.find(name);
    if (it == params.tensors.end())
      throw ShapeError("parameters: missing tensor \"" + name + "\"");
    if (it->second.shape() != shape)
      throw ShapeError("parameters: tensor \"" + name + "\" has the wrong shape");
  }
}

// ---- forward ----

namespace detail {

// Tape handles for every parameter: leaves when gradients are wanted,
// constants for pure inference.
inline std::map<std::string, ad::Var> stage_parameters(ad::Tape& tape, const Parameters& params,
                                                       bool requires_grad) {
  std::map<std::string, ad::Var> vars;
  for (const auto& [name, tensor] : params.tensors) {
    ad::Tensor t = tensor;
    if (requires_grad) {
      t.set_requires_grad(true);
      vars.emplace(name, tape.leaf(std::move(t)));
    } else {
      vars.emplace(name, tape.constant(std::move(t)));
    }
  }
  return vars;
}

// Local scalar attention over a k-NN graph. Per neighbor pair (i, j): a
// hidden feature from the feature difference plus a learned encoding of the
// relative position, squeezed to one score, softmax-normalized over the
// neighborhood, then used to mix value projections of the neighbors.
// Residual connection and tanh keep per-point identity available.
inline ad::Var attention_block(ad::Tape& tape, const std::map<std::string, ad::Var>& pv,
                               int stage, const std::vector<Vec3>& points, ad::Var feats,
                               int neighbors) {
  const std::size_t n = points.size();
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(neighbors), n);
  const std::string p = "stage" + std::to_string(stage) + ".";
  const std::vector<int> idx = knn(points, k);

  std::vector<int> center(n * k);
  ad::Tensor relpos = ad::Tensor::zeros({n * k, 3});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t r = i * k + j;
      center[r] = static_cast<int>(i);
      const Vec3 d = points[static_cast<std::size_t>(idx[r])] - points[i];
      relpos.at(r, 0) = d.x;
      relpos.at(r, 1) = d.y;
      relpos.at(r, 2) = d.z;
    }
  const ad::Var rel = tape.constant(std::move(relpos));

  const ad::Var gathered = ad::gather_rows(feats, idx);
  const ad::Var diff = ad::sub(gathered, ad::gather_rows(feats, center));
  const ad::Var hidden = ad::tanh(ad::add_rowvec(
      ad::add(ad::matmul(diff, pv.at(p + "diff.weight")), ad::matmul(rel, pv.at(p + "pos.weight"))),
      pv.at(p + "score.bias")));
  const ad::Var scores = ad::matmul(hidden, pv.at(p + "score.weight"));
  const ad::Var attn =
      ad::reshape(ad::softmax_rows(ad::reshape(scores, {n, k})), {n * k, 1});
  const ad::Var values = ad::add_rowvec(ad::add(ad::matmul(gathered, pv.at(p + "value.weight")),
                                                ad::matmul(rel, pv.at(p + "valuepos.weight"))),
                                        pv.at(p + "value.bias"));
  const ad::Var mixed = ad::sum_row_blocks(ad::mul_colvec(values, attn), k);
  return ad::tanh(ad::add(feats, mixed));
}

// Inverse-distance interpolation matrix from coarse points to fine points
// (over up to 3 nearest coarse points). Constant w.r.t. parameters.
inline ad::Tensor interp_matrix(const std::vector<Vec3>& fine, const std::vector<Vec3>& coarse) {
  const std::size_t q = std::min<std::size_t>(3, coarse.size());
  const std::vector<int> nbr = knn_from(fine, coarse, q);
  ad::Tensor w = ad::Tensor::zeros({fine.size(), coarse.size()});
  for (std::size_t i = 0; i < fine.size(); ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < q; ++j) {
      const std::size_t cj = static_cast<std::size_t>(nbr[i * q + j]);
      const Vec3 d = fine[i] - coarse[cj];
      norm += 1.0 / (std::sqrt(dot(d, d)) + 1e-9);
    }
    for (std::size_t j = 0; j < q; ++j) {
      const std::size_t cj = static_cast<std::size_t>(nbr[i * q + j]);
      const Vec3 d = fine[i] - coarse[cj];
      w.at(i, cj) = 1.0 / (std::sqrt(dot(d, d)) + 1e-9) / norm;
    }
  }
  return w;
}

}  // namespace detail

// Forward pass on a caller-owned tape. Parameter handles may be leaves (for
// training and gradcheck) or constants (inference).
inline ad::Var forward_on_tape(ad::Tape& tape, const ModelConfig& cfg,
                               const std::map<std::string, ad::Var>& pv,
                               const std::vector<Vec3>& points, double group_count_feature) {
  cfg.validate();
  if (points.empty()) throw ContractError("forward: empty point set");
  if (!std::isfinite(group_count_feature))
    throw ContractError("forward: group count feature is not finite");
  for (const Vec3& p : points)
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      throw ContractError("forward: point coordinates must be finite");

  const std::size_t n = points.size();
  ad::Tensor input = ad::Tensor::zeros({n, 4});
  for (std::size_t i = 0; i < n; ++i) {
    input.at(i, 0) = points[i].x;
    input.at(i, 1) = points[i].y;
    input.at(i, 2) = points[i].z;
    input.at(i, 3) = group_count_feature;
  }
  ad::Var feats = ad::tanh(ad::add_rowvec(
      ad::matmul(tape.constant(std::move(input)), pv.at("embed.weight")), pv.at("embed.bias")));

  std::vector<std::vector<Vec3>> level_points{points};
  std::vector<ad::Var> skips;
  for (int s = 0; s < cfg.stages; ++s) {
    feats = detail::attention_block(tape, pv, s, level_points.back(), feats, cfg.neighbors);
    skips.push_back(feats);
    if (s + 1 < cfg.stages) {
      const std::vector<Vec3>& cur = level_points.back();
      const std::size_t m = (cur.size() + 3) / 4;  // keep a quarter per level
      const std::vector<int> ds = fps(cur, m, nearest_centroid(cur));
      std::vector<Vec3> coarse(m);
      for (std::size_t i = 0; i < m; ++i) coarse[i] = cur[static_cast<std::size_t>(ds[i])];
      const std::string d = "down" + std::to_string(s + 1) + ".";
      feats = ad::tanh(ad::add_rowvec(
          ad::matmul(ad::gather_rows(feats, ds), pv.at(d + "weight")), pv.at(d + "bias")));
      level_points.push_back(std::move(coarse));
    }
  }
  for (int s = cfg.stages - 2; s >= 0; --s) {
    const ad::Var up = ad::matmul(
        tape.constant(detail::interp_matrix(level_points[static_cast<std::size_t>(s)],
                                            level_points[static_cast<std::size_t>(s) + 1])),
        feats);
    const std::string u = "up" + std::to_string(s) + ".";
    feats = ad::tanh(ad::add_rowvec(
        ad::add(ad::matmul(up, pv.at(u + "weight")),
                ad::matmul(skips[static_cast<std::size_t>(s)],
                           pv.at("skip" + std::to_string(s) + ".weight"))),
        pv.at(u + "bias")));
  }
  return ad::add_rowvec(ad::matmul(feats, pv.at("head.weight")), pv.at("head.bias"));
}

// Inference wrapper: fresh tape, parameters as constants.
inline ad::Tensor forward(const ModelConfig& cfg, const Parameters& params,
                          const std::vector<Vec3>& points, double group_count_feature) {
  check_parameters(cfg, params);
  ad::Tape tape;
  const auto pv = detail::stage_parameters(tape, params, false);
  const ad::Var out = forward_on_tape(tape, cfg, pv, points, group_count_feature);
  return tape.value(out);
}

// ---- checkpoints ----

inline void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                            const Parameters& params) {
  check_parameters(cfg, params);
  nlohmann::json j;
  j["format_version"] = 1;
  j["config"] = {{"K", cfg.k_groups},
                 {"neighbors", cfg.neighbors},
                 {"channels", cfg.channels},
                 {"stages", cfg.stages},
                 {"seed", cfg.seed}};
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& [name, t] : params.tensors) {
    tensors[name] = {{"shape", t.shape()}, {"data", t.data()}};
  }
  j["tensors"] = std::move(tensors);
  std::ofstream out(path);
  if (!out) throw DataError("save_checkpoint: cannot open " + path);
  out << j.dump(2) << "\n";
}

inline std::pair<ModelConfig, Parameters> load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("load_checkpoint: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("load_checkpoint: malformed JSON in " + path + ": " + e.what());
  }
  try {
    if (!j.contains("format_version") || !j["format_version"].is_number_integer() ||
        j["format_version"].get<int>() != 1)
      throw DataError("load_checkpoint: unsupported format_version in " + path);
    ModelConfig cfg;
    const auto& jc = j.at("config");
    cfg.k_groups = jc.at("K").get<int>();
    cfg.neighbors = jc.at("neighbors").get<int>();
    cfg.channels = jc.at("channels").get<std::vector<int>>();
    cfg.stages = jc.at("stages").get<int>();
    cfg.seed = jc.at("seed").get<std::uint64_t>();
    cfg.validate();

    Parameters params;
    const auto& jt = j.at("tensors");
    const auto manifest = param_manifest(cfg);
    for (const auto& [name, shape] : manifest) {
      if (!jt.contains(name))
        throw ShapeError("load_checkpoint: missing tensor \"" + name + "\"");
      const auto& entry = jt.at(name);
      const auto got = entry.at("shape").get<std::vector<std::size_t>>();
      if (got != shape) {
        const auto fmt = [](const std::vector<std::size_t>& v) {
          std::string s = "[";
          for (std::size_t i = 0; i < v.size(); ++i)
            s += (i ? ", " : "") + std::to_string(v[i]);
          return s + "]";
        };
        throw ShapeError("load_checkpoint: tensor \"" + name + "\" has shape " + fmt(got) +
                         ", config implies " + fmt(shape));
      }
      auto data = entry.at("data").get<std::vector<double>>();
      if (data.size() != shape[0] * shape[1])
        throw ShapeError("load_checkpoint: tensor \"" + name + "\" data length mismatch");
      params.tensors.emplace(name, ad::Tensor(shape, std::move(data)));
    }
    if (jt.size() != manifest.size())
      throw ShapeError("load_checkpoint: checkpoint contains tensors not implied by config");
    return {cfg, params};
  } catch (const nlohmann::json::exception& e) {
    throw DataError("load_checkpoint: invalid checkpoint " + path + ": " + e.what());
  }
}

}  // namespace prefrac::model
