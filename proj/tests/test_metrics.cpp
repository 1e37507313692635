// Copyright 2026 The dicesm Authors.
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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dicesm/metrics.hpp"
#include "oracles.hpp"

namespace dicesm {
namespace {

TEST(HardDice, HandValues) {
  const auto a = binary_label({1, 1, 0, 0});
  EXPECT_EQ(hard_dice(a, a, 0), 1.0);
  EXPECT_EQ(hard_dice(a, binary_label({0, 0, 1, 1}), 0), 0.0);
  // |x| = 4, |y| = 6, |v| = 3.
  const auto x = binary_label({1, 1, 1, 1, 0, 0, 0, 0, 0, 0});
  const auto y = binary_label({1, 1, 1, 0, 1, 1, 1, 0, 0, 0});
  EXPECT_DOUBLE_EQ(hard_dice(x, y, 0), 0.6);
  EXPECT_EQ(hard_dice(binary_label({0, 0}), binary_label({0, 0}), 0), 1.0);
  EXPECT_EQ(hard_dice(binary_label({0, 0}), binary_label({0, 0}), 0, 0.0), 0.0);
}

TEST(HardDice, Errors) {
  try {
    hard_dice(binary_label({1, 0}), binary_label({0.5, 0}), 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SoftInput);
  }
  try {
    hard_dice(binary_label({1, 0}), binary_label({1, 0, 1}), 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(HardDice, EqualsOneMinusSdlAndDml) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 10000; ++t) {
    const std::size_t p = 1 + rng() % 64;
    auto a = oracle::random_hard(rng, p), b = oracle::random_hard(rng, p);
    if (oracle::l1(a) + oracle::l1(b) == 0.0) a[0] = 1.0;
    const double set = oracle::set_dice(a, b);
    const auto x = binary_prob(a);
    const auto y = binary_label(b);
    EXPECT_NEAR(hard_dice(binary_label(a), y, 0), set, 1e-12);
    EXPECT_NEAR(1.0 - sdl(x, y).value, set, 1e-12);
    EXPECT_NEAR(1.0 - dml1(x, y).value, set, 1e-12);
  }
}

TEST(IouBridge, Values) {
  EXPECT_EQ(dice_from_iou(0.0), 0.0);
  EXPECT_EQ(dice_from_iou(1.0), 1.0);
  EXPECT_NEAR(dice_from_iou(0.5), 2.0 / 3.0, 1e-15);
  double prev = -1.0;
  for (int i = 0; i <= 1000; ++i) {
    const double iou = i / 1000.0;
    const double d = dice_from_iou(iou);
    EXPECT_NEAR(iou_from_dice(d), iou, 1e-15);
    EXPECT_GT(d, prev);
    prev = d;
  }
  EXPECT_THROW(dice_from_iou(1.1), Error);
  EXPECT_THROW(iou_from_dice(-0.1), Error);
}

TEST(BDice, HandCases) {
  const auto x = binary_prob({0.3, 0.7, 0.5});
  EXPECT_EQ(bdice(x, binary_label({0.3, 0.7, 0.5})), 1.0);
  EXPECT_EQ(bdice(binary_prob({0.55}), binary_label({0.55})), 1.0);
  EXPECT_NEAR(bdice(binary_prob({0.45}), binary_label({0.55})), 8.0 / 9.0, 1e-15);
}

TEST(BDice, SingleThresholdMatchesHardDice) {
  std::mt19937_64 rng(4);
  BDiceSpec half;
  half.thresholds = {0.5};
  for (int t = 0; t < 200; ++t) {
    const std::size_t p = 1 + rng() % 32;
    const auto x = binary_prob(oracle::random_soft(rng, p));
    const auto y = binary_label(oracle::random_hard(rng, p));
    EXPECT_EQ(bdice(x, y, half), hard_dice(binarize(x), y, 0));
  }
}

TEST(BDice, ExactThresholdIsBackground) {
  // K = 5 averages land exactly on grid values; strict > keeps them out.
  BDiceSpec spec;
  spec.thresholds = {0.4};
  EXPECT_EQ(bdice(binary_prob({0.4}), binary_label({0.6}), spec), 0.0);
}

TEST(BDice, RejectsBadThresholds) {
  BDiceSpec spec;
  spec.thresholds = {0.5, 0.3};
  EXPECT_THROW(bdice(binary_prob({0.4}), binary_label({1}), spec), Error);
  spec.thresholds = {0.0};
  EXPECT_THROW(bdice(binary_prob({0.4}), binary_label({1}), spec), Error);
}

TEST(SoftDiceScore, Values) {
  EXPECT_NEAR(soft_dice_score(binary_prob({1, 0}), binary_label({1, 0})), 1.0, 1e-15);
  EXPECT_NEAR(soft_dice_score(binary_prob({0.8, 0.2}), binary_label({1, 0})), 0.8, 1e-15);
  EXPECT_THROW(soft_dice_score(binary_prob({0.8}), binary_label({0.5})), Error);
}

TEST(Ece, HandCases) {
  std::vector<CalibRecord> r(10, {1.0, 1.0});
  EXPECT_EQ(ece(r), 0.0);
  r.assign(10, {0.5, 0.0});
  for (int i = 0; i < 5; ++i) r[i].label = 1.0;
  EXPECT_EQ(ece(r), 0.0);
  r.clear();
  for (int i = 0; i < 100; ++i) r.push_back({0.9, i < 70 ? 1.0 : 0.0});
  for (int i = 0; i < 100; ++i) r.push_back({0.2, i < 20 ? 1.0 : 0.0});
  EXPECT_NEAR(ece(r), 0.10, 1e-12);
}

TEST(Ece, PermutationInvariantAndBounded) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<CalibRecord> r;
  for (int i = 0; i < 1000; ++i) r.push_back({u(rng), static_cast<double>(rng() & 1)});
  const double e = ece(r);
  EXPECT_GE(e, 0.0);
  EXPECT_LE(e, 1.0);
  std::shuffle(r.begin(), r.end(), rng);
  EXPECT_NEAR(ece(r), e, 1e-12);
}

TEST(Ece, MergeEqualsPooled) {
  EceAccumulator a, b, all;
  for (int i = 0; i < 50; ++i) {
    const double c = (i % 17) / 16.0, l = i % 3 == 0;
    (i % 2 ? a : b).add(c, l);
    all.add(c, l);
  }
  a.merge(b);
  EXPECT_EQ(a.total(), all.total());
  EXPECT_NEAR(a.value(), all.value(), 1e-15);
}

TEST(Ece, BinEdges) {
  // 1.0 lands in the last bin; exact multiples of 1/15 open a new bin.
  EceAccumulator acc(15);
  acc.add(1.0, 1.0);
  acc.add(1.0 / 15.0 * 14.0, 1.0);
  EXPECT_NEAR(acc.value(), 0.5 * (1.0 - 14.0 / 15.0), 1e-15);
}

TEST(Ece, Errors) {
  try {
    ece(std::vector<CalibRecord>{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyRecords);
  }
  EXPECT_THROW(ece(std::vector<CalibRecord>{{1.2, 1.0}}), Error);
  EXPECT_THROW(ece(std::vector<CalibRecord>{{0.5, 0.5}}), Error);
}

TEST(Ece, FieldRecordsUseForegroundClasses) {
  const ProbField x(Tensor({2, 1, 2}, {0.2, 0.6, 0.8, 0.4}));
  const LabelField y(Tensor({2, 1, 2}, {0, 1, 1, 0}), Hardness::hard);
  EceAccumulator acc(10);
  acc.add(x, y);
  EXPECT_EQ(acc.total(), 2u);
  EXPECT_NEAR(acc.value(), 0.5 * 0.2 + 0.5 * 0.4, 1e-15);
}

}  // namespace
}  // namespace dicesm
