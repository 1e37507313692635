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
#include <set>

#include "dicesm/training.hpp"

namespace dicesm {
namespace {

Dataset small_dataset(std::size_t n = 10, std::size_t side = 16, std::uint64_t seed = 42) {
  SynthSpec ss;
  ss.n_images = n;
  ss.height = ss.width = side;
  ss.seed = seed;
  return generate_synthetic(ss);
}

std::vector<std::size_t> iota(std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> v;
  for (std::size_t i = lo; i < hi; ++i) v.push_back(i);
  return v;
}

TEST(PolyLr, HalfwayAndMonotone) {
  EXPECT_NEAR(poly_lr(0.1, 50, 100, 0.9), 0.1 * std::pow(0.5, 0.9), 1e-15);
  EXPECT_EQ(poly_lr(0.1, 0, 100, 0.9), 0.1);
  EXPECT_EQ(poly_lr(0.1, 100, 100, 0.9), 0.0);
  for (std::size_t t = 1; t < 100; ++t)
    EXPECT_LT(poly_lr(0.1, t, 100, 0.9), poly_lr(0.1, t - 1, 100, 0.9));
}

TEST(Folds, PartitionAndDeterminism) {
  const auto folds = make_folds(10, 5, 42);
  std::set<std::size_t> seen;
  for (const auto& f : folds) {
    EXPECT_EQ(f.size(), 2u);
    for (auto i : f) EXPECT_TRUE(seen.insert(i).second);
  }
  EXPECT_EQ(seen.size(), 10u);
  EXPECT_EQ(make_folds(10, 5, 42), folds);
  EXPECT_NE(make_folds(10, 5, 43), folds);
  const auto uneven = make_folds(11, 5, 1);
  std::size_t total = 0;
  for (const auto& f : uneven) total += f.size();
  EXPECT_EQ(total, 11u);
  try {
    make_folds(3, 5, 42);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewImages);
  }
}

TEST(Model, ZeroLogisticGivesHalf) {
  ModelSpec spec;
  spec.init_scale = 0.0;
  const Model m(spec, 1);
  const Dataset ds = small_dataset(1);
  const ProbField out = forward(m, compute_features(ds.samples[0].image, spec));
  for (double v : out.tensor().data()) EXPECT_EQ(v, 0.5);
}

TEST(Model, CheckpointSizeMismatch) {
  ModelSpec spec;
  try {
    Model(spec, 1, std::vector<double>(3, 0.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CheckpointMismatch);
  }
}

// dL/dtheta by central differences for L = <g, forward(theta)>.
void probe_gradients(ModelKind kind, std::size_t n_classes) {
  ModelSpec spec;
  spec.kind = kind;
  spec.init_scale = 1.0;
  Model m(spec, n_classes);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  // Nonzero biases so every parameter matters.
  for (auto& p : m.params_mut()) p += 0.2 * u(rng);
  std::vector<double> img(64);
  for (auto& v : img) v = 0.5 + 0.3 * u(rng);
  const Tensor feats = compute_features(Tensor({1, 8, 8}, img), spec);
  ForwardCache cache;
  const ProbField out = forward(m, feats, &cache);
  std::vector<double> gv(out.tensor().size());
  for (auto& v : gv) v = u(rng);
  const Tensor g(out.dims(), gv);
  std::vector<double> grad(m.param_count(), 0.0);
  backward(m, feats, out, cache, g, grad);
  auto loss = [&](const Model& mm) {
    const ProbField o = forward(mm, feats);
    double s = 0.0;
    for (std::size_t i = 0; i < gv.size(); ++i) s += gv[i] * o.tensor()[i];
    return s;
  };
  // Five probe parameters spread over the layout.
  for (int k = 0; k < 5; ++k) {
    const std::size_t idx = (k * (m.param_count() - 1)) / 4;
    Model plus = m, minus = m;
    plus.params_mut()[idx] += 1e-6;
    minus.params_mut()[idx] -= 1e-6;
    const double fd = (loss(plus) - loss(minus)) / 2e-6;
    EXPECT_LE(std::abs(fd - grad[idx]), 1e-4 * std::max(1.0, std::abs(fd)))
        << "param " << idx << " fd " << fd << " analytic " << grad[idx];
  }
}

TEST(Model, Conv2GradientProbe) { probe_gradients(ModelKind::conv2, 1); }
TEST(Model, Conv2GradientProbeMulticlass) { probe_gradients(ModelKind::conv2, 3); }
TEST(Model, LogisticGradientProbe) { probe_gradients(ModelKind::per_pixel_logistic, 1); }
TEST(Model, LogisticGradientProbeMulticlass) { probe_gradients(ModelKind::per_pixel_logistic, 2); }

TEST(Model, ForwardDeterministic) {
  ModelSpec spec;
  spec.kind = ModelKind::conv2;
  const Model m(spec, 1);
  const Dataset ds = small_dataset(1);
  const Tensor f = compute_features(ds.samples[0].image, spec);
  EXPECT_EQ(forward(m, f).tensor(), forward(m, f).tensor());
}

TEST(Train, ZeroEpochsReturnsInitialModel) {
  const Dataset ds = small_dataset();
  ModelSpec ms;
  const PreparedData data(ds, ms);
  TrainSpec ts;
  ts.epochs = 0;
  const auto r = train(data, iota(0, 8), iota(8, 10), ms, ts);
  const Model init(ms, 1);
  EXPECT_TRUE(std::equal(r.model.params().begin(), r.model.params().end(), init.params().begin()));
  EXPECT_TRUE(r.trace.empty());
}

TEST(Train, BitIdenticalAcrossRuns) {
  const Dataset ds = small_dataset();
  ModelSpec ms;
  ms.kind = ModelKind::conv2;
  const PreparedData data(ds, ms);
  TrainSpec ts;
  ts.epochs = 3;
  ts.batch_size = 3;
  ts.lr0 = 0.3;
  const auto a = train(data, iota(0, 8), iota(8, 10), ms, ts);
  const auto b = train(data, iota(0, 8), iota(8, 10), ms, ts);
  EXPECT_TRUE(std::equal(a.model.params().begin(), a.model.params().end(), b.model.params().begin()));
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].split, b.trace[i].split);
    if (a.trace[i].split == "val") EXPECT_EQ(a.trace[i].dice, b.trace[i].dice);
    else EXPECT_EQ(a.trace[i].loss, b.trace[i].loss);
  }
  // One train row per epoch, one val row per epoch with eval_every = 1.
  EXPECT_EQ(a.trace.size(), 6u);
}

TEST(Train, SeedChangesTrajectory) {
  const Dataset ds = small_dataset();
  ModelSpec ms;
  const PreparedData data(ds, ms);
  TrainSpec ts;
  ts.epochs = 2;
  ts.batch_size = 3;
  const auto a = train(data, iota(0, 8), {}, ms, ts);
  ts.seed = 7;
  const auto b = train(data, iota(0, 8), {}, ms, ts);
  EXPECT_FALSE(std::equal(a.model.params().begin(), a.model.params().end(), b.model.params().begin()));
}

TEST(Train, EmptyTrainSetRejected) {
  const Dataset ds = small_dataset(2);
  ModelSpec ms;
  const PreparedData data(ds, ms);
  try {
    train(data, {}, {}, ms, TrainSpec{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyDataset);
  }
}

TEST(Train, DivergenceReported) {
  const Dataset ds = small_dataset(4);
  ModelSpec ms;
  const PreparedData data(ds, ms);
  TrainSpec ts;
  ts.lr0 = 1e300;
  ts.epochs = 5;
  try {
    train(data, iota(0, 4), {}, ms, ts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DivergedLoss);
  }
}

TEST(Train, SdlAndDmlGiveSameFirstStepOnHardLabels) {
  const Dataset ds = small_dataset(4);
  ModelSpec ms;
  ms.kind = ModelKind::conv2;
  const PreparedData data(ds, ms);
  const Model m(ms, 1);
  std::vector<ProbField> outs;
  std::vector<ForwardCache> caches(4);
  std::vector<LabelField> ys;
  for (std::size_t i = 0; i < 4; ++i) {
    outs.push_back(forward(m, data.features(i), &caches[i]));
    ys.push_back(data.majority(i));
  }
  auto param_grad = [&](LossId overlap) {
    LossParams lp;
    lp.compound_overlap = overlap;
    BatchGrad g = evaluate_batch(LossId::compound, outs, ys, lp, {});
    std::vector<double> grad(m.param_count(), 0.0);
    for (std::size_t b = 0; b < 4; ++b) backward(m, data.features(b), outs[b], caches[b], g.grads[b], grad);
    return grad;
  };
  const auto a = param_grad(LossId::dml1), b = param_grad(LossId::sdl);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-10);
}

// Free single-pixel model: gradient descent directly on x in [0, 1].
double descend(LossId id, double y, double x0) {
  double x = x0;
  // Decaying steps settle on the kink at x = y.
  for (int it = 0; it < 20000; ++it) {
    const GradPair g = evaluate(id, binary_prob({x}), binary_label({y}), LossParams{});
    x = std::clamp(x - 0.05 / (1.0 + it / 50.0) * g.grad[0], 0.0, 1.0);
  }
  return x;
}

TEST(Train, DmlPullsTowardSoftTargetSdlTowardVertex) {
  for (double x0 : {0.1, 0.5, 0.9}) {
    EXPECT_NEAR(descend(LossId::dml1, 0.3, x0), 0.3, 1e-3);
    EXPECT_EQ(descend(LossId::sdl, 0.3, x0), 1.0);
  }
}

TEST(Distill, ZeroWeightMatchesPlainTraining) {
  const Dataset ds = small_dataset();
  ModelSpec ms;
  const PreparedData data(ds, ms);
  TrainSpec ts;
  ts.epochs = 2;
  ts.batch_size = 4;
  const Model teacher(ms, 1);
  KdSpec kd;
  kd.kd_weight = 0.0;
  const auto a = distill(data, iota(0, 8), iota(8, 10), teacher, ms, ts, kd);
  const auto b = train(data, iota(0, 8), iota(8, 10), ms, ts);
  EXPECT_TRUE(std::equal(a.model.params().begin(), a.model.params().end(), b.model.params().begin()));
}

TEST(Distill, RejectsMismatchedTeacher) {
  const Dataset ds = small_dataset(4);
  ModelSpec ms;
  const PreparedData data(ds, ms);
  const Model teacher(ms, 2);
  try {
    distill(data, iota(0, 4), {}, teacher, ms, TrainSpec{}, KdSpec{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CheckpointMismatch);
  }
}

TEST(Distill, KdeCountsKernelEvaluations) {
  const Dataset ds = small_dataset(8);
  ModelSpec ms;
  const PreparedData data(ds, ms);
  TrainSpec ts;
  ts.epochs = 1;
  ts.batch_size = 4;
  KdSpec kd;
  kd.use_kde = true;
  kd.kde.pixel_scope = PixelScope::all;
  kd.kde.n_key = 32;
  std::uint64_t evals = 0;
  distill(data, iota(0, 8), {}, Model(ms, 1), ms, ts, kd, &evals);
  EXPECT_EQ(evals, 8u * 16u * 16u * 32u);
}

TEST(CrossVal, DiceIsMeanOfPerImage) {
  const Dataset ds = small_dataset(10);
  ModelSpec ms;
  const PreparedData data(ds, ms);
  TrainSpec ts;
  ts.epochs = 2;
  ts.lr0 = 0.5;
  const auto cv = crossval(data, 5, 42, [&](auto tr, auto va) { return train(data, tr, va, ms, ts).model; });
  double mean = 0.0;
  for (double d : cv.per_image_dice) mean += d / 10.0;
  EXPECT_NEAR(cv.dice, mean, 1e-15);
  const auto folds = make_folds(10, 5, 42);
  for (std::size_t f = 0; f < 5; ++f)
    for (auto i : folds[f]) EXPECT_EQ(cv.fold_of[i], f);
}

TEST(Train, CleanLabelSmokeBenchmark) {
  SynthSpec ss;
  ss.n_images = 50;
  ss.rater_noise = {0, 0, 0.0};
  const Dataset ds = generate_synthetic(ss);
  ModelSpec ms;
  const PreparedData data(ds, ms);
  TrainSpec ts;
  ts.lr0 = 1.0;
  ts.eval_every = 0;
  const auto r = train(data, iota(0, 40), iota(40, 50), ms, ts);
  EXPECT_GT(r.trace.back().dice, 0.85);
}

}  // namespace
}  // namespace dicesm
