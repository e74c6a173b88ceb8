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

#include "prefrac/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "prefrac/loss.hpp"

namespace ad = prefrac::ad;
namespace model = prefrac::model;
using prefrac::ContractError;
using prefrac::DataError;
using prefrac::Rng;
using prefrac::ShapeError;
using prefrac::Vec3;

namespace {

std::vector<Vec3> random_cloud(std::size_t n, Rng& rng) {
  std::vector<Vec3> pts(n);
  for (Vec3& p : pts) p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  return pts;
}

std::string temp_path(const char* name) {
  return std::string(::testing::TempDir()) + "/" + name;
}

}  // namespace

TEST(Fps, CollinearEndpointAndFullSample) {
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
  EXPECT_EQ(model::fps(pts, 2, 0), (std::vector<int>{0, 3}));
  std::vector<int> all = model::fps(pts, 4, 0);
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, (std::vector<int>{0, 1, 2, 3}));
}

TEST(Fps, MatchesBruteForceGreedyOracle) {
  Rng rng(7);
  const std::vector<Vec3> pts = random_cloud(10, rng);
  const std::size_t start = model::nearest_centroid(pts);
  const std::vector<int> got = model::fps(pts, 3, start);

  // Oracle: recompute min-distance-to-selected from scratch every round.
  std::vector<int> sel{static_cast<int>(start)};
  while (sel.size() < 3) {
    int far = -1;
    double far_d = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (int s : sel) {
        const Vec3 v = pts[i] - pts[static_cast<std::size_t>(s)];
        d = std::min(d, dot(v, v));
      }
      if (d > far_d) {
        far_d = d;
        far = static_cast<int>(i);
      }
    }
    sel.push_back(far);
  }
  EXPECT_EQ(got, sel);
}

TEST(Fps, RangeChecks) {
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}};
  EXPECT_THROW(model::fps(pts, 0, 0), ContractError);
  EXPECT_THROW(model::fps(pts, 3, 0), ContractError);
  EXPECT_THROW(model::fps(pts, 1, 5), ContractError);
}

TEST(Knn, SelfIsNearestAndClustersStayLocal) {
  Rng rng(8);
  std::vector<Vec3> pts;
  for (int i = 0; i < 6; ++i) pts.push_back(random_cloud(1, rng)[0]);
  for (int i = 0; i < 6; ++i) {
    Vec3 p = random_cloud(1, rng)[0];
    p.x += 100.0;
    pts.push_back(p);
  }
  const std::vector<int> self_only = model::knn(pts, 1);
  for (std::size_t i = 0; i < pts.size(); ++i)
    EXPECT_EQ(self_only[i], static_cast<int>(i));
  const std::size_t k = 3;
  const std::vector<int> idx = model::knn(pts, k);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = 0; j < k; ++j)
      EXPECT_EQ(idx[i * k + j] < 6, static_cast<int>(i) < 6)
          << "neighbor left its cluster at row " << i;
}

TEST(Knn, MatchesExhaustiveSortOracle) {
  Rng rng(9);
  const std::vector<Vec3> pts = random_cloud(20, rng);
  const std::size_t k = 5;
  const std::vector<int> got = model::knn(pts, k);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<std::pair<double, int>> order;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      const Vec3 d = pts[j] - pts[i];
      order.push_back({dot(d, d), static_cast<int>(j)});
    }
    std::sort(order.begin(), order.end());
    for (std::size_t j = 0; j < k; ++j) EXPECT_EQ(got[i * k + j], order[j].second);
  }
}

TEST(Init, DeterministicPerSeedAndSeedSensitive) {
  model::ModelConfig cfg;
  const model::Parameters a = model::init(cfg);
  const model::Parameters b = model::init(cfg);
  ASSERT_EQ(a.tensors.size(), b.tensors.size());
  for (const auto& [name, t] : a.tensors) EXPECT_EQ(t.data(), b.tensors.at(name).data());

  model::ModelConfig other = cfg;
  other.seed = 1;
  const model::Parameters c = model::init(other);
  bool any_differs = false;
  for (const auto& [name, t] : a.tensors)
    if (t.data() != c.tensors.at(name).data()) any_differs = true;
  EXPECT_TRUE(any_differs);
}

TEST(Init, ParameterCountMatchesHandDerivedFormula) {
  model::ModelConfig cfg;  // channels (32, 64), K 16
  const std::size_t c0 = 32, c1 = 64, k = 16;
  const std::size_t embed = 4 * c0 + c0;
  const std::size_t attn0 = 2 * c0 * c0 + 9 * c0;
  const std::size_t down = c0 * c1 + c1;
  const std::size_t attn1 = 2 * c1 * c1 + 9 * c1;
  const std::size_t up = c1 * c0 + c0 * c0 + c0;
  const std::size_t head = c0 * k + k;
  const std::size_t expected = embed + attn0 + down + attn1 + up + head;
  EXPECT_EQ(expected, 17008u);
  EXPECT_EQ(model::param_count(cfg), expected);
  std::size_t actual = 0;
  for (const auto& [name, t] : model::init(cfg).tensors) actual += t.numel();
  EXPECT_EQ(actual, expected);
}

TEST(Forward, SinglePointGivesFiniteRow) {
  model::ModelConfig cfg;
  const model::Parameters params = model::init(cfg);
  const ad::Tensor out = model::forward(cfg, params, {{0.1, -0.2, 0.3}}, 0.5);
  ASSERT_EQ(out.rows(), 1u);
  ASSERT_EQ(out.cols(), 16u);
  for (double v : out.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Forward, PermutationEquivariance) {
  model::ModelConfig cfg;
  cfg.seed = 3;
  const model::Parameters params = model::init(cfg);
  Rng rng(40);
  const std::vector<Vec3> pts = random_cloud(40, rng);
  const ad::Tensor base = model::forward(cfg, params, pts, 0.25);

  std::vector<std::size_t> perm(pts.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm);
  std::vector<Vec3> shuffled(pts.size());
  for (std::size_t i = 0; i < perm.size(); ++i) shuffled[i] = pts[perm[i]];
  const ad::Tensor permuted = model::forward(cfg, params, shuffled, 0.25);

  double worst = 0.0;
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t c = 0; c < base.cols(); ++c)
      worst = std::max(worst, std::abs(permuted.at(i, c) - base.at(perm[i], c)));
  EXPECT_LT(worst, 1e-9);
}

TEST(Forward, DeterministicAndConditionedOnGroupCount) {
  model::ModelConfig cfg;
  cfg.seed = 11;
  const model::Parameters params = model::init(cfg);
  Rng rng(41);
  const std::vector<Vec3> pts = random_cloud(12, rng);
  const ad::Tensor a = model::forward(cfg, params, pts, 0.25);
  const ad::Tensor b = model::forward(cfg, params, pts, 0.25);
  EXPECT_EQ(a.data(), b.data());
  const ad::Tensor c = model::forward(cfg, params, pts, 0.75);
  double max_delta = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    max_delta = std::max(max_delta, std::abs(a.data()[i] - c.data()[i]));
  EXPECT_GT(max_delta, 0.0) << "group-count conditioning is not wired into the input";
}

TEST(Forward, NonFiniteInputsRejected) {
  model::ModelConfig cfg;
  const model::Parameters params = model::init(cfg);
  EXPECT_THROW(model::forward(cfg, params, {{0, 0, std::nan("")}}, 0.5), ContractError);
  EXPECT_THROW(
      model::forward(cfg, params, {{0, 0, 0}}, std::numeric_limits<double>::infinity()),
      ContractError);
  EXPECT_THROW(model::forward(cfg, params, {}, 0.5), ContractError);
}

TEST(Checkpoint, RoundTripPreservesForwardBitExactly) {
  model::ModelConfig cfg;
  cfg.seed = 5;
  const model::Parameters params = model::init(cfg);
  const std::string path = temp_path("ckpt_roundtrip.json");
  model::save_checkpoint(path, cfg, params);
  const auto [cfg2, params2] = model::load_checkpoint(path);
  Rng rng(42);
  const std::vector<Vec3> pts = random_cloud(15, rng);
  const ad::Tensor a = model::forward(cfg, params, pts, 0.5);
  const ad::Tensor b = model::forward(cfg2, params2, pts, 0.5);
  EXPECT_EQ(a.data(), b.data());
  std::remove(path.c_str());
}

TEST(Checkpoint, TruncatedFileIsAParseError) {
  model::ModelConfig cfg;
  const std::string path = temp_path("ckpt_trunc.json");
  model::save_checkpoint(path, cfg, model::init(cfg));
  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  std::ofstream out(path);
  out << text.substr(0, text.size() / 2);
  out.close();
  EXPECT_THROW(model::load_checkpoint(path), DataError);
  std::remove(path.c_str());
}

TEST(Checkpoint, WrongTensorShapeNamesTheTensor) {
  model::ModelConfig cfg;
  const std::string path = temp_path("ckpt_shape.json");
  model::save_checkpoint(path, cfg, model::init(cfg));
  std::ifstream in(path);
  nlohmann::json j;
  in >> j;
  in.close();
  j["tensors"]["embed.weight"]["shape"] = {3, 32};
  j["tensors"]["embed.weight"]["data"] = std::vector<double>(96, 0.0);
  std::ofstream out(path);
  out << j.dump();
  out.close();
  try {
    model::load_checkpoint(path);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("embed.weight"), std::string::npos);
  }
  std::remove(path.c_str());
}

TEST(Gradcheck, AllParametersOnSmallConfig) {
  // Differentiates the full pipeline (forward + pairwise loss) w.r.t. every
  // parameter tensor of a reduced model on an 8-point cloud.
  model::ModelConfig cfg;
  cfg.k_groups = 4;
  cfg.neighbors = 3;
  cfg.channels = {6, 7};
  cfg.seed = 13;
  const model::Parameters params = model::init(cfg);
  Rng rng(43);
  const std::vector<Vec3> pts = random_cloud(8, rng);
  const std::vector<int> labels{0, 1, 0, 2, 1, 0, 2, 1};
  prefrac::loss::LossConfig lcfg;

  for (const auto& [target, tensor] : params.tensors) {
    const double err = ad::gradcheck(
        [&, target = target](ad::Tape& tape, ad::Var x) {
          std::map<std::string, ad::Var> pv;
          for (const auto& [name, t] : params.tensors) {
            if (name == target)
              pv.emplace(name, x);
            else
              pv.emplace(name, tape.constant(t));
          }
          const ad::Var logits = model::forward_on_tape(tape, cfg, pv, pts, 0.5);
          return prefrac::loss::pairwise_identity_loss(tape, logits, labels, lcfg);
        },
        tensor, 1e-5);
    EXPECT_LT(err, 1e-3) << "gradcheck failed for parameter " << target;
  }
}

TEST(Gradcheck, SpotChecksOnDefaultConfig) {
  model::ModelConfig cfg;
  cfg.seed = 17;
  const model::Parameters params = model::init(cfg);
  Rng rng(44);
  const std::vector<Vec3> pts = random_cloud(8, rng);
  const std::vector<int> labels{0, 0, 1, 1, 2, 2, 3, 3};
  prefrac::loss::LossConfig lcfg;
  for (const std::string target : {"head.weight", "embed.bias", "stage1.score.weight"}) {
    const double err = ad::gradcheck(
        [&](ad::Tape& tape, ad::Var x) {
          std::map<std::string, ad::Var> pv;
          for (const auto& [name, t] : params.tensors) {
            if (name == target)
              pv.emplace(name, x);
            else
              pv.emplace(name, tape.constant(t));
          }
          const ad::Var logits = model::forward_on_tape(tape, cfg, pv, pts, 0.5);
          return prefrac::loss::pairwise_identity_loss(tape, logits, labels, lcfg);
        },
        params.tensors.at(target), 1e-5);
    EXPECT_LT(err, 1e-3) << "gradcheck failed for parameter " << target;
  }
}
