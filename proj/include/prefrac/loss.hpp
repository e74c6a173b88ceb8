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
#include <numeric>
#include <string>
#include <vector>

#include "prefrac/common.hpp"
#include "prefrac/tensor.hpp"

namespace prefrac::loss {

// Pairwise-identity grouping loss over soft assignments. Two evaluation paths
// share one definition: loss_value() reduces every sum in a canonical order so
// the result depends only on the multiset of addends (bitwise invariant under
// relabeling groups, permuting assignment columns, or jointly permuting
// points), while pairwise_identity_loss() records the same computation on a
// tape for gradients and matches loss_value to rounding.
struct LossConfig {
  enum class Reduction { kSum, kMeanPairs };

  double alpha = 0.1;       // weight of the compactness term on unclamped S
  double clamp_eps = 1e-7;  // log arguments clamped to [eps, 1 - eps]
  Reduction reduction = Reduction::kSum;
  // The i == j pairs carry no labeling information but penalize diffuse
  // assignments; excluding them is exposed for experimentation.
  bool include_diagonal = true;

  void validate() const {
    if (!(alpha >= 0.0)) throw ContractError("LossConfig: alpha must be >= 0");
    if (!(clamp_eps > 0.0) || !(clamp_eps < 0.5))
      throw ContractError("LossConfig: clamp_eps must lie in (0, 0.5)");
  }
};

namespace detail {

// Sums addends as a function of their multiset only: sort, then accumulate.
// This is what makes the canonical evaluator exactly permutation invariant.
inline double sorted_sum(std::vector<double>& addends) {
  std::sort(addends.begin(), addends.end());
  return std::accumulate(addends.begin(), addends.end(), 0.0);
}

inline void check_labels(std::size_t n, const std::vector<int>& labels, const char* who) {
  if (labels.size() != n)
    throw ContractError(std::string(who) + ": got " + std::to_string(labels.size()) +
                        " labels for " + std::to_string(n) + " points");
  for (int l : labels)
    if (l < 0) throw ContractError(std::string(who) + ": labels must be non-negative");
}

}  // namespace detail

// A_ij = 1 when points i and j carry the same label, else 0. The diagonal is
// all ones. Label values are opaque ids; only equality matters.
inline ad::Tensor adjacency_from_labels(const std::vector<int>& labels) {
  if (labels.empty()) throw ContractError("adjacency_from_labels: empty label vector");
  detail::check_labels(labels.size(), labels, "adjacency_from_labels");
  const std::size_t n = labels.size();
  ad::Tensor a = ad::Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (labels[i] == labels[j]) a.at(i, j) = 1.0;
  return a;
}

// S = P P^T: S_ij is the probability that points i and j land in the same
// group when each is assigned independently from its row of P. Rows of P must
// already be distributions (sum to 1 within 1e-6).
inline ad::Var same_group_matrix(ad::Tape& tape, ad::Var probs) {
  const ad::Tensor& p = tape.value(probs);
  if (!p.is_matrix()) throw ContractError("same_group_matrix: probabilities must be 2-D");
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double row = 0.0;
    for (std::size_t k = 0; k < p.cols(); ++k) row += p.at(i, k);
    if (std::abs(row - 1.0) > 1e-6)
      throw ContractError("same_group_matrix: row " + std::to_string(i) +
                          " sums to " + std::to_string(row) + ", not 1");
  }
  return ad::matmul(probs, ad::transpose(probs));
}

// Canonical evaluator: the reference value of the loss, with every reduction
// performed in sorted order. Use this when exact invariance matters (scoring,
// comparisons); use pairwise_identity_loss for gradients.
inline double loss_value(const ad::Tensor& logits, const std::vector<int>& labels,
                         const LossConfig& cfg) {
  cfg.validate();
  if (!logits.is_matrix()) throw ContractError("loss_value: logits must be 2-D");
  const std::size_t n = logits.rows(), k = logits.cols();
  if (n == 0 || k == 0) throw ContractError("loss_value: logits must be non-empty");
  detail::check_labels(n, labels, "loss_value");

  // Row softmax with an order-canonical normalizer.
  std::vector<double> probs(n * k);
  std::vector<double> row(k);
  for (std::size_t i = 0; i < n; ++i) {
    double m = logits.at(i, 0);
    for (std::size_t c = 1; c < k; ++c) m = std::max(m, logits.at(i, c));
    for (std::size_t c = 0; c < k; ++c) row[c] = std::exp(logits.at(i, c) - m);
    std::vector<double> addends = row;
    const double norm = detail::sorted_sum(addends);
    for (std::size_t c = 0; c < k; ++c) probs[i * k + c] = row[c] / norm;
  }

  const double lo = cfg.clamp_eps, hi = 1.0 - cfg.clamp_eps;
  std::vector<double> terms;
  terms.reserve(n * n);
  std::vector<double> prods(k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!cfg.include_diagonal && i == j) continue;
      for (std::size_t c = 0; c < k; ++c) prods[c] = probs[i * k + c] * probs[j * k + c];
      std::vector<double> addends = prods;
      const double s = detail::sorted_sum(addends);
      const double sc = std::min(std::max(s, lo), hi);
      const bool same = labels[i] == labels[j];
      terms.push_back((same ? -std::log(sc) : -std::log(1.0 - sc)) + cfg.alpha * s);
    }
  }
  double total = detail::sorted_sum(terms);
  if (cfg.reduction == LossConfig::Reduction::kMeanPairs)
    total /= static_cast<double>(terms.size());
  if (!std::isfinite(total)) throw OverflowError("loss_value: result is not finite");
  return total;
}

// Tape evaluation of the same loss for gradient computation. Agrees with
// loss_value to rounding (its reductions run in index order, not sorted).
inline ad::Var pairwise_identity_loss(ad::Tape& tape, ad::Var logits,
                                      const std::vector<int>& labels, const LossConfig& cfg) {
  cfg.validate();
  const ad::Tensor& lv = tape.value(logits);
  if (!lv.is_matrix()) throw ContractError("pairwise_identity_loss: logits must be 2-D");
  const std::size_t n = lv.rows();
  if (n == 0 || lv.cols() == 0)
    throw ContractError("pairwise_identity_loss: logits must be non-empty");
  detail::check_labels(n, labels, "pairwise_identity_loss");

  const ad::Var probs = ad::softmax_rows(logits);
  const ad::Var s = same_group_matrix(tape, probs);
  const ad::Var sc = ad::clamp(s, cfg.clamp_eps, 1.0 - cfg.clamp_eps);

  ad::Tensor adj = adjacency_from_labels(labels);
  ad::Tensor not_adj = ad::Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n * n; ++i) not_adj.data()[i] = 1.0 - adj.data()[i];
  const ad::Var a = tape.constant(std::move(adj));
  const ad::Var na = tape.constant(std::move(not_adj));

  const ad::Var same_term = ad::scalar_mul(ad::mul(a, ad::log(sc)), -1.0);
  const ad::Var one_minus_sc = ad::add_scalar(ad::scalar_mul(sc, -1.0), 1.0);
  const ad::Var diff_term = ad::scalar_mul(ad::mul(na, ad::log(one_minus_sc)), -1.0);
  ad::Var term = ad::add(ad::add(same_term, diff_term), ad::scalar_mul(s, cfg.alpha));

  std::size_t pairs = n * n;
  if (!cfg.include_diagonal) {
    ad::Tensor mask = ad::Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n * n; ++i) mask.data()[i] = 1.0;
    for (std::size_t i = 0; i < n; ++i) mask.at(i, i) = 0.0;
    term = ad::mul(term, tape.constant(std::move(mask)));
    pairs -= n;
  }
  ad::Var out = ad::sum(term);
  if (cfg.reduction == LossConfig::Reduction::kMeanPairs)
    out = ad::scalar_mul(out, 1.0 / static_cast<double>(pairs));
  return out;
}

// d(loss)/d(logits) on a fresh tape.
inline ad::Tensor loss_gradient(const ad::Tensor& logits, const std::vector<int>& labels,
                                const LossConfig& cfg) {
  ad::Tape tape;
  ad::Tensor leaf_in = logits;
  leaf_in.set_requires_grad(true);
  const ad::Var x = tape.leaf(std::move(leaf_in));
  const ad::Var l = pairwise_identity_loss(tape, x, labels, cfg);
  tape.backward(l);
  return tape.grad(x);
}

}  // namespace prefrac::loss
