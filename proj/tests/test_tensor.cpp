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

#include "prefrac/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

namespace ad = prefrac::ad;
using ad::Tensor;
using ad::Var;
using prefrac::Rng;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -5.0,
                     double hi = 5.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST(Tensor, ShapeDataMismatchThrows) {
  EXPECT_THROW(Tensor({2, 3}, {1.0, 2.0}), prefrac::ShapeError);
}

TEST(Matmul, IdentityCase) {
  ad::Tape t;
  Var a = t.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  Var b = t.constant(Tensor({2, 2}, {2, 3, 4, 5}));
  Var c = ad::matmul(a, b);
  EXPECT_EQ(t.value(c).data(), (std::vector<double>{2, 3, 4, 5}));
}

TEST(Matmul, UniformRowCase) {
  ad::Tape t;
  Var a = t.constant(Tensor({1, 2}, {0.5, 0.5}));
  Var b = t.constant(Tensor({2, 1}, {0.5, 0.5}));
  Var c = ad::matmul(a, b);
  EXPECT_DOUBLE_EQ(t.value(c).item(), 0.5);
}

TEST(Matmul, MatchesTripleLoopOracle) {
  Rng rng(11);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  ad::Tape t;
  Var c = ad::matmul(t.constant(a), t.constant(b));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
      EXPECT_NEAR(t.value(c).at(i, j), s, 1e-12);
    }
}

TEST(Matmul, DimensionMismatchThrows) {
  ad::Tape t;
  Var a = t.constant(Tensor::zeros({2, 3}));
  Var b = t.constant(Tensor::zeros({2, 3}));
  EXPECT_THROW(ad::matmul(a, b), prefrac::ShapeError);
}

TEST(Matmul, GradientRules) {
  // dL/dA = G * B^T and dL/dB = A^T * G with G all-ones from sum().
  Rng rng(12);
  Tensor at = random_tensor({2, 3}, rng);
  Tensor bt = random_tensor({3, 2}, rng);
  at.set_requires_grad(true);
  bt.set_requires_grad(true);
  ad::Tape t;
  Var a = t.leaf(at), b = t.leaf(bt);
  t.backward(ad::sum(ad::matmul(a, b)));
  Tensor ga = t.grad(a), gb = t.grad(b);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 3; ++k) {
      double expect = 0.0;
      for (std::size_t j = 0; j < 2; ++j) expect += bt.at(k, j);  // G == 1
      EXPECT_NEAR(ga.at(i, k), expect, 1e-12);
    }
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t j = 0; j < 2; ++j) {
      double expect = 0.0;
      for (std::size_t i = 0; i < 2; ++i) expect += at.at(i, k);
      EXPECT_NEAR(gb.at(k, j), expect, 1e-12);
    }
}

TEST(SoftmaxRows, SymmetryCase) {
  ad::Tape t;
  Var y = ad::softmax_rows(t.constant(Tensor({1, 2}, {0, 0})));
  EXPECT_DOUBLE_EQ(t.value(y).at(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(t.value(y).at(0, 1), 0.5);
}

TEST(SoftmaxRows, MaxSubtractionStability) {
  ad::Tape t;
  Var y = ad::softmax_rows(t.constant(Tensor({1, 2}, {1000, 0})));
  EXPECT_NEAR(t.value(y).at(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(t.value(y).at(0, 1), 0.0, 1e-12);
  EXPECT_TRUE(t.value(y).all_finite());
}

TEST(SoftmaxRows, MatchesDirectFormula) {
  ad::Tape t;
  Var y = ad::softmax_rows(t.constant(Tensor({1, 3}, {1, 2, 3})));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(t.value(y).at(0, 0), std::exp(1.0) / z, 1e-12);
  EXPECT_NEAR(t.value(y).at(0, 1), std::exp(2.0) / z, 1e-12);
  EXPECT_NEAR(t.value(y).at(0, 2), std::exp(3.0) / z, 1e-12);
}

TEST(SoftmaxRows, RowsSumToOneAndPositive) {
  Rng rng(13);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor x = random_tensor({6, 5}, rng);
    ad::Tape t;
    Var y = ad::softmax_rows(t.constant(x));
    for (std::size_t i = 0; i < 6; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        EXPECT_GT(t.value(y).at(i, j), 0.0);
        s += t.value(y).at(i, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Backward, SumGivesOnes) {
  ad::Tape t;
  Tensor x = Tensor::full({2, 3}, 0.25, true);
  Var xv = t.leaf(x);
  t.backward(ad::sum(xv));
  EXPECT_EQ(t.grad(xv).data(), std::vector<double>(6, 1.0));
}

TEST(Backward, SumOfSquares) {
  ad::Tape t;
  Var x = t.leaf(Tensor({3}, {1, 2, 3}, true));
  t.backward(ad::sum(ad::mul(x, x)));
  EXPECT_EQ(t.grad(x).data(), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, NonScalarLossThrows) {
  ad::Tape t;
  Var x = t.leaf(Tensor({2}, {1, 2}, true));
  EXPECT_THROW(t.backward(x), prefrac::ContractError);
}

TEST(Backward, RepeatedCallThrows) {
  ad::Tape t;
  Var x = t.leaf(Tensor({2}, {1, 2}, true));
  Var s = ad::sum(x);
  t.backward(s);
  EXPECT_THROW(t.backward(s), prefrac::ContractError);
}

TEST(Backward, ComposedSoftmaxLogSumMatchesFiniteDifferences) {
  Rng rng(14);
  Tensor x = random_tensor({4, 3}, rng);
  auto f = [](ad::Tape&, Var v) { return ad::sum(ad::log(ad::softmax_rows(v))); };
  EXPECT_LT(ad::gradcheck(f, x, 1e-5), 1e-6);
}

TEST(Backward, DeterministicGradients) {
  Rng rng(15);
  Tensor x = random_tensor({5, 4}, rng);
  x.set_requires_grad(true);
  auto run = [&]() {
    ad::Tape t;
    Var xv = t.leaf(x);
    Var y = ad::sum(ad::mul(ad::tanh(xv), ad::softmax_rows(xv)));
    t.backward(y);
    return t.grad(xv).data();
  };
  EXPECT_EQ(run(), run());
}

TEST(Overflow, NonFiniteResultThrows) {
  ad::Tape t;
  Var x = t.constant(Tensor({1}, {0.0}));
  EXPECT_THROW(ad::log(x), prefrac::OverflowError);
}

TEST(Gradcheck, SumIsExact) {
  Rng rng(16);
  Tensor x = random_tensor({3, 3}, rng);
  auto f = [](ad::Tape&, Var v) { return ad::sum(v); };
  EXPECT_LT(ad::gradcheck(f, x, 1e-5), 1e-10);
}

// Every differentiable primitive gradchecks below 1e-6 on inputs in [-5, 5]
// (log restricted to positive inputs; clamp inputs kept clear of the interval
// boundary so the finite difference itself is valid).
TEST(Gradcheck, AllPrimitives) {
  Rng rng(17);
  const double h = 1e-5;
  const Tensor m = random_tensor({3, 4}, rng);
  const Tensor m2 = random_tensor({3, 4}, rng);
  const Tensor sq = random_tensor({4, 4}, rng);
  const Tensor pos = random_tensor({3, 4}, rng, 0.5, 5.0);

  auto with_const = [&](const Tensor& c, auto op, bool arg_first = true) {
    return [c, op, arg_first](ad::Tape& t, Var v) {
      Var cv = t.constant(c);
      return ad::sum(arg_first ? op(v, cv) : op(cv, v));
    };
  };
  auto vadd = [](Var a, Var b) { return ad::add(a, b); };
  auto vsub = [](Var a, Var b) { return ad::sub(a, b); };
  auto vmul = [](Var a, Var b) { return ad::mul(a, b); };
  auto vmm = [](Var a, Var b) { return ad::matmul(a, b); };
  auto vcat = [](Var a, Var b) { return ad::concat_cols(a, b); };
  auto vrow = [](Var a, Var b) { return ad::add_rowvec(a, b); };
  auto vcol = [](Var a, Var b) { return ad::mul_colvec(a, b); };

  EXPECT_LT(ad::gradcheck(with_const(m2, vadd), m, h), 1e-6);
  EXPECT_LT(ad::gradcheck(with_const(m2, vsub), m, h), 1e-6);
  EXPECT_LT(ad::gradcheck(with_const(m2, vsub, false), m, h), 1e-6);
  EXPECT_LT(ad::gradcheck(with_const(m2, vmul), m, h), 1e-6);
  EXPECT_LT(ad::gradcheck(with_const(m2, vmul, false), m, h), 1e-6);
  EXPECT_LT(ad::gradcheck(
                [](ad::Tape&, Var v) { return ad::sum(ad::scalar_mul(v, -1.75)); }, m, h),
            1e-6);
  EXPECT_LT(ad::gradcheck(
                [](ad::Tape&, Var v) { return ad::sum(ad::add_scalar(v, 2.5)); }, m, h),
            1e-6);
  EXPECT_LT(ad::gradcheck([](ad::Tape&, Var v) { return ad::sum(ad::log(v)); }, pos, h), 1e-6);
  EXPECT_LT(ad::gradcheck([](ad::Tape&, Var v) { return ad::sum(ad::tanh(v)); }, m, h), 1e-6);
  {
    Tensor clear = m;  // keep samples > 10h away from the clamp boundary
    for (double& v : clear.data())
      if (std::abs(std::abs(v) - 3.0) < 1e-3) v += 0.01;
    EXPECT_LT(ad::gradcheck(
                  [](ad::Tape&, Var v) { return ad::sum(ad::clamp(v, -3.0, 3.0)); }, clear, h),
              1e-6);
  }
  EXPECT_LT(ad::gradcheck([](ad::Tape&, Var v) { return ad::sum(ad::transpose(v)); }, m, h),
            1e-6);
  EXPECT_LT(ad::gradcheck([](ad::Tape&, Var v) { return ad::mean(v); }, m, h), 1e-6);
  EXPECT_LT(ad::gradcheck(
                [](ad::Tape&, Var v) { return ad::sum(ad::softmax_rows(v)); }, m, h),
            1e-6);
  EXPECT_LT(ad::gradcheck(
                [](ad::Tape&, Var v) {
                  return ad::sum(ad::mul(ad::softmax_rows(v), v));
                },
                m, h),
            1e-6);
  EXPECT_LT(ad::gradcheck(with_const(random_tensor({4, 3}, rng), vmm), m, h), 1e-6);
  EXPECT_LT(ad::gradcheck(with_const(random_tensor({4, 3}, rng), vmm, false), m, h), 1e-6);
  EXPECT_LT(ad::gradcheck(with_const(m2, vcat), m, h), 1e-6);
  EXPECT_LT(ad::gradcheck(with_const(random_tensor({1, 4}, rng), vrow), m, h), 1e-6);
  EXPECT_LT(ad::gradcheck(with_const(random_tensor({3, 1}, rng), vcol), m, h), 1e-6);
  EXPECT_LT(ad::gradcheck(
                [](ad::Tape&, Var v) {
                  return ad::sum(ad::mul(ad::gather_rows(v, {2, 0, 0, 1}),
                                         ad::gather_rows(v, {1, 1, 2, 0})));
                },
                m, h),
            1e-6);
  EXPECT_LT(ad::gradcheck(
                [](ad::Tape&, Var v) {
                  Var s = ad::slice_cols(v, 1, 3);
                  return ad::sum(ad::mul(s, s));
                },
                m, h),
            1e-6);
  EXPECT_LT(ad::gradcheck(
                [](ad::Tape&, Var v) {
                  Var r = ad::reshape(v, {2, 8});
                  return ad::sum(ad::mul(r, r));
                },
                sq, h),
            1e-6);
  EXPECT_LT(ad::gradcheck(
                [](ad::Tape&, Var v) {
                  Var b = ad::sum_row_blocks(v, 2);
                  return ad::sum(ad::mul(b, b));
                },
                sq, h),
            1e-6);
}

TEST(Clamp, BoundaryGradientIsIdentity) {
  ad::Tape t;
  Var x = t.leaf(Tensor({3}, {-3.0, 0.0, 3.0}, true));
  t.backward(ad::sum(ad::clamp(x, -3.0, 3.0)));
  EXPECT_EQ(t.grad(x).data(), (std::vector<double>{1, 1, 1}));
}

TEST(Clamp, OutsideGradientIsZero) {
  ad::Tape t;
  Var x = t.leaf(Tensor({2}, {-4.0, 5.0}, true));
  t.backward(ad::sum(ad::clamp(x, -3.0, 3.0)));
  EXPECT_EQ(t.grad(x).data(), (std::vector<double>{0, 0}));
}
