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
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prefrac/common.hpp"
#include "prefrac/dataset.hpp"
#include "prefrac/decode.hpp"
#include "prefrac/fracture.hpp"
#include "prefrac/loss.hpp"
#include "prefrac/model.hpp"
#include "prefrac/postprocess.hpp"
#include "prefrac/tensor.hpp"

namespace prefrac::train {

struct TrainConfig {
  enum class Optimizer { kSgd, kAdaptiveMoment };

  double learning_rate = 1e-3;
  int epochs = 1;
  std::uint64_t seed = 0;
  loss::LossConfig loss;  // mean_pairs by default: keeps step size N-independent
  model::ModelConfig model;
  Optimizer optimizer = Optimizer::kAdaptiveMoment;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  TrainConfig() { loss.reduction = loss::LossConfig::Reduction::kMeanPairs; }

  void validate() const {
    if (!(learning_rate > 0.0)) throw ContractError("TrainConfig: learning_rate must be > 0");
    if (epochs < 1) throw ContractError("TrainConfig: epochs must be >= 1");
    loss.validate();
    model.validate();
  }
};

struct TrainResult {
  model::Parameters params;
  std::vector<double> history;  // per-epoch mean loss
};

// One example per optimization step (clouds have variable N, so there is no
// batching); epoch order reshuffled by a generator seeded from cfg.seed.
// Logits are restricted to the example's first num_groups columns before the
// loss, mirroring decode-time group-count control. A non-finite loss aborts
// with the offending global step index.
inline TrainResult train(const std::vector<data::TrainingExample>& examples,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (examples.empty()) throw ContractError("train: no training examples");
  for (const data::TrainingExample& ex : examples) {
    if (ex.points.empty()) throw ContractError("train: example with no points: " + ex.source);
    if (ex.num_groups < 1 || ex.num_groups > cfg.model.k_groups)
      throw ContractError("train: num_groups outside [1, K] in example: " + ex.source);
    for (int l : ex.labels)
      if (l < 0 || l >= ex.num_groups)
        throw ContractError("train: label outside [0, num_groups) in example: " + ex.source);
  }

  TrainResult result;
  result.params = model::init(cfg.model);
  std::map<std::string, std::vector<double>> m1, m2;
  for (const auto& [name, t] : result.params.tensors) {
    m1[name].assign(t.numel(), 0.0);
    m2[name].assign(t.numel(), 0.0);
  }

  Rng order_rng(cfg.seed);
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  long long global_step = 0;
  long long adam_t = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_sum = 0.0;
    for (std::size_t pick : order) {
      const data::TrainingExample& ex = examples[pick];
      double value = 0.0;
      ad::Tape tape;
      std::map<std::string, ad::Var> pv;
      try {
        pv = model::detail::stage_parameters(tape, result.params, true);
        const double gc = static_cast<double>(ex.num_groups) /
                          static_cast<double>(cfg.model.k_groups);
        ad::Var logits = model::forward_on_tape(tape, cfg.model, pv, ex.points, gc);
        if (ex.num_groups < cfg.model.k_groups)
          logits = ad::slice_cols(logits, 0, static_cast<std::size_t>(ex.num_groups));
        const ad::Var lv = loss::pairwise_identity_loss(tape, logits, ex.labels, cfg.loss);
        value = tape.value(lv).item();
        if (!std::isfinite(value)) throw OverflowError("loss is not finite");
        tape.backward(lv);
      } catch (const OverflowError& e) {
        throw OverflowError("train: diverged at step " + std::to_string(global_step) + " (" +
                            ex.source + "): " + e.what());
      }
      ++adam_t;
      for (auto& [name, tensor] : result.params.tensors) {
        const ad::Tensor grad = tape.grad(pv.at(name));
        double* w = tensor.data().data();
        const double* g = grad.data().data();
        if (cfg.optimizer == TrainConfig::Optimizer::kSgd) {
          for (std::size_t i = 0; i < tensor.numel(); ++i) w[i] -= cfg.learning_rate * g[i];
          continue;
        }
        std::vector<double>& m = m1[name];
        std::vector<double>& v = m2[name];
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam_t));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam_t));
        for (std::size_t i = 0; i < tensor.numel(); ++i) {
          m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
          v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
          w[i] -= cfg.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam_eps);
        }
      }
      epoch_sum += value;
      ++global_step;
    }
    result.history.push_back(epoch_sum / static_cast<double>(examples.size()));
  }
  return result;
}

inline void write_history_csv(const std::string& path, const std::vector<double>& history) {
  std::ofstream out(path);
  if (!out) throw DataError("write_history_csv: cannot open " + path);
  out << "epoch,mean_loss\n";
  char buf[64];
  for (std::size_t e = 0; e < history.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", e, history[e]);
    out << buf;
  }
}

// ---- metrics ----

namespace detail {

inline void check_metric_inputs(const std::vector<int>& pred, const std::vector<int>& gt,
                                const char* who) {
  if (pred.size() != gt.size())
    throw ContractError(std::string(who) + ": labelings differ in length");
  if (pred.size() < 2) throw ContractError(std::string(who) + ": need at least 2 points");
}

inline std::int64_t choose2(std::int64_t n) { return n * (n - 1) / 2; }

}  // namespace detail

// Fraction of unordered distinct pairs on which pred and gt agree about
// same-group vs different-group. Invariant under relabeling either side.
inline double pairwise_accuracy(const std::vector<int>& pred, const std::vector<int>& gt) {
  detail::check_metric_inputs(pred, gt, "pairwise_accuracy");
  const std::size_t n = pred.size();
  std::int64_t agree = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if ((pred[i] == pred[j]) == (gt[i] == gt[j])) ++agree;
  return static_cast<double>(agree) /
         static_cast<double>(detail::choose2(static_cast<std::int64_t>(n)));
}

// Standard adjusted Rand index from the pair-counting contingency table.
// The chance-corrected denominator vanishes only when both labelings are the
// same extreme partition (all singletons or all one group), where agreement
// is perfect by definition: returns 1.0.
inline double adjusted_rand_index(const std::vector<int>& pred, const std::vector<int>& gt) {
  detail::check_metric_inputs(pred, gt, "adjusted_rand_index");
  const std::size_t n = pred.size();
  std::map<std::pair<int, int>, std::int64_t> cell;
  std::map<int, std::int64_t> row, col;
  for (std::size_t i = 0; i < n; ++i) {
    ++cell[{pred[i], gt[i]}];
    ++row[pred[i]];
    ++col[gt[i]];
  }
  std::int64_t sum_cells = 0, sum_rows = 0, sum_cols = 0;
  for (const auto& [key, c] : cell) sum_cells += detail::choose2(c);
  for (const auto& [key, c] : row) sum_rows += detail::choose2(c);
  for (const auto& [key, c] : col) sum_cols += detail::choose2(c);
  const double pairs = static_cast<double>(detail::choose2(static_cast<std::int64_t>(n)));
  const double expected = static_cast<double>(sum_rows) * static_cast<double>(sum_cols) / pairs;
  const double max_index = 0.5 * static_cast<double>(sum_rows + sum_cols);
  if (max_index == expected) return 1.0;
  return (static_cast<double>(sum_cells) - expected) / (max_index - expected);
}

// ---- baselines ----

// Lloyd's k-means over piece centers of mass: seeded farthest-point start,
// nearest-centroid assignment (ties -> lowest cluster), at most 100 rounds or
// until every centroid moves less than 1e-9.
inline infer::GroupLabeling baseline_kmeans(const geom::PieceSet& ps, int k, std::uint64_t seed) {
  const std::vector<Vec3> coms = geom::centers_point_cloud(ps);
  const std::size_t n = coms.size();
  if (k < 1 || static_cast<std::size_t>(k) > n)
    throw ContractError("baseline_kmeans: k out of range");
  Rng rng(seed);
  const std::size_t start = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(n) - 1));
  const std::vector<int> init = model::fps(coms, static_cast<std::size_t>(k), start);
  std::vector<Vec3> centroids;
  centroids.reserve(static_cast<std::size_t>(k));
  for (int idx : init) centroids.push_back(coms[static_cast<std::size_t>(idx)]);

  infer::GroupLabeling out;
  out.labels.assign(n, 0);
  out.num_groups = k;
  for (int round = 0; round < 100; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < centroids.size(); ++c) {
        const Vec3 d = coms[i] - centroids[c];
        const double d2 = dot(d, d);
        if (d2 < best_d) {
          best_d = d2;
          best = c;
        }
      }
      out.labels[i] = static_cast<int>(best);
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      Vec3 acc{0, 0, 0};
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (out.labels[i] == static_cast<int>(c)) {
          acc += coms[i];
          ++count;
        }
      if (count == 0) continue;  // empty cluster keeps its centroid
      const Vec3 next = acc / static_cast<double>(count);
      const Vec3 d = next - centroids[c];
      shift = std::max(shift, std::sqrt(dot(d, d)));
      centroids[c] = next;
    }
    if (shift < 1e-9) break;
  }
  return out;
}

// Nearest-site labels for explicit sites; ties -> lowest site index.
inline std::vector<int> nearest_site_assign(const std::vector<Vec3>& points,
                                            const std::vector<Vec3>& sites) {
  if (sites.empty()) throw ContractError("nearest_site_assign: no sites");
  std::vector<int> labels(points.size(), 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < sites.size(); ++s) {
      const Vec3 d = points[i] - sites[s];
      const double d2 = dot(d, d);
      if (d2 < best_d) {
        best_d = d2;
        best = s;
      }
    }
    labels[i] = static_cast<int>(best);
  }
  return labels;
}

// Voronoi-of-Voronoi baseline: k super-sites drawn uniformly without
// replacement from the piece coms; each piece joins its nearest super-site
// (ties -> lowest site index in draw order).
inline infer::GroupLabeling baseline_supersites(const geom::PieceSet& ps, int k,
                                                std::uint64_t seed) {
  const std::vector<Vec3> coms = geom::centers_point_cloud(ps);
  const std::size_t n = coms.size();
  if (k < 1 || static_cast<std::size_t>(k) > n)
    throw ContractError("baseline_supersites: k out of range");
  Rng rng(seed);
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < static_cast<std::size_t>(k); ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(
                                  0, static_cast<int>(n - i) - 1));
    std::swap(pool[i], pool[j]);
  }
  std::vector<Vec3> sites(static_cast<std::size_t>(k));
  for (std::size_t s = 0; s < sites.size(); ++s) sites[s] = coms[pool[s]];
  infer::GroupLabeling out;
  out.labels = nearest_site_assign(coms, sites);
  out.num_groups = k;
  return out;
}

// ---- evaluation ----

struct EvalReport {
  struct Row {
    std::string source;
    double pairwise_accuracy = 0.0;
    double adjusted_rand_index = 0.0;
  };
  double pairwise_accuracy = 0.0;      // mean over examples
  double adjusted_rand_index = 0.0;    // mean over examples
  std::vector<Row> per_example;
};

// Argmax-decodes each example, optionally splits disconnected groups using
// that example's piece graph (graphs[i] may be null), and scores against the
// ground-truth labels with both unordered metrics.
inline EvalReport evaluate(const model::ModelConfig& cfg, const model::Parameters& params,
                           const std::vector<data::TrainingExample>& examples,
                           const std::vector<const geom::PieceSet*>& graphs = {}) {
  if (examples.empty()) throw ContractError("evaluate: no examples");
  if (!graphs.empty() && graphs.size() != examples.size())
    throw ContractError("evaluate: graphs must be empty or match examples");
  EvalReport report;
  for (std::size_t e = 0; e < examples.size(); ++e) {
    const data::TrainingExample& ex = examples[e];
    const double gc =
        static_cast<double>(ex.num_groups) / static_cast<double>(cfg.k_groups);
    const ad::Tensor logits = model::forward(cfg, params, ex.points, gc);
    infer::DecodeConfig dec;
    dec.mode = infer::DecodeConfig::Mode::kArgmax;
    dec.num_groups_requested = std::min(ex.num_groups, cfg.k_groups);
    infer::GroupLabeling labeling = infer::decode(logits, dec);
    std::vector<int> pred = labeling.labels;
    if (!graphs.empty() && graphs[e] != nullptr) {
      const post::GroupSet gs = post::split_disconnected(labeling, graphs[e]->adjacency);
      for (std::size_t gi = 0; gi < gs.groups.size(); ++gi)
        for (int id : gs.groups[gi]) pred[static_cast<std::size_t>(id)] = static_cast<int>(gi);
    }
    EvalReport::Row row;
    row.source = ex.source;
    row.pairwise_accuracy = pairwise_accuracy(pred, ex.labels);
    row.adjusted_rand_index = adjusted_rand_index(pred, ex.labels);
    report.pairwise_accuracy += row.pairwise_accuracy;
    report.adjusted_rand_index += row.adjusted_rand_index;
    report.per_example.push_back(std::move(row));
  }
  report.pairwise_accuracy /= static_cast<double>(examples.size());
  report.adjusted_rand_index /= static_cast<double>(examples.size());
  return report;
}

inline nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["pairwise_accuracy"] = report.pairwise_accuracy;
  j["adjusted_rand_index"] = report.adjusted_rand_index;
  j["per_example"] = nlohmann::json::array();
  for (const auto& row : report.per_example) {
    j["per_example"].push_back({{"source", row.source},
                                {"pairwise_accuracy", row.pairwise_accuracy},
                                {"adjusted_rand_index", row.adjusted_rand_index}});
  }
  return j;
}

}  // namespace prefrac::train
