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

#ifndef DICESM_TRAINING_HPP
#define DICESM_TRAINING_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dicesm/calibration.hpp"
#include "dicesm/core.hpp"
#include "dicesm/losses.hpp"
#include "dicesm/metrics.hpp"
#include "dicesm/model.hpp"
#include "dicesm/softlabels.hpp"
#include "dicesm/synth.hpp"

namespace dicesm {

struct TrainSpec {
  double lr0 = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  double poly_power = 0.9;
  LossId loss = LossId::compound;
  LossParams loss_params{};
  ReductionSpec reduction{};
  SoftLabelSpec label_source{SoftLabelStrategy::majority};
  std::uint64_t seed = 42;
  /// Validation metrics every `eval_every` epochs; 0 records only the last.
  std::size_t eval_every = 1;

  void check() const {
    if (!(lr0 >= 0.0) || !(momentum >= 0.0 && momentum < 1.0) || !(weight_decay >= 0.0) ||
        !(poly_power >= 0.0) || batch_size == 0)
      throw Error(ErrorCode::BadSpec, "invalid optimiser settings");
  }
};

enum class KdTerms { ce, dml, both };

struct KdSpec {
  std::string teacher_checkpoint;
  bool use_kde = false;
  KdeSpec kde{};
  double kd_weight = 1.0;
  KdTerms kd_terms = KdTerms::both;
};

/// lr0 (1 - t/T)^power: nonincreasing in the iteration t, zero at t = T.
inline double poly_lr(double lr0, std::size_t t, std::size_t total, double power) {
  if (total == 0 || t >= total) return 0.0;
  return lr0 * std::pow(1.0 - static_cast<double>(t) / static_cast<double>(total), power);
}

struct TraceRow {
  std::size_t epoch = 0;
  std::string split;
  double dice = std::numeric_limits<double>::quiet_NaN();
  double bdice = std::numeric_limits<double>::quiet_NaN();
  double ece = std::numeric_limits<double>::quiet_NaN();
  double loss = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  Model model;
  std::vector<TraceRow> trace;
};

/// Validation summary: Dice and ECE against the majority vote, BDice against
/// the uniform rater average.
struct EvalSummary {
  double dice = 0.0;
  double bdice = 0.0;
  double ece = 0.0;
  std::vector<double> per_image_dice;
  std::vector<double> per_image_bdice;
};

/// Inputs and references that stay fixed during training.
class PreparedData {
 public:
  PreparedData(const Dataset& ds, const ModelSpec& model_spec) : dataset_(&ds) {
    if (ds.empty()) throw Error(ErrorCode::EmptyDataset, "dataset is empty");
    features_.reserve(ds.size());
    majority_.reserve(ds.size());
    average_.reserve(ds.size());
    for (const auto& s : ds.samples) {
      features_.push_back(compute_features(s.image, model_spec));
      majority_.push_back(majority_vote(s.raters));
      average_.push_back(uniform_average(s.raters));
    }
  }

  const Dataset& dataset() const { return *dataset_; }
  std::size_t size() const { return features_.size(); }
  const Tensor& features(std::size_t i) const { return features_[i]; }
  const LabelField& majority(std::size_t i) const { return majority_[i]; }
  const LabelField& average(std::size_t i) const { return average_[i]; }

 private:
  const Dataset* dataset_;
  std::vector<Tensor> features_;
  std::vector<LabelField> majority_;
  std::vector<LabelField> average_;
};

inline EvalSummary evaluate_model(const Model& model, const PreparedData& data,
                                  std::span<const std::size_t> indices,
                                  std::vector<ProbField>* predictions = nullptr) {
  EvalSummary out;
  EceAccumulator acc;
  for (std::size_t i : indices) {
    const ProbField pred = forward(model, data.features(i));
    const double d = mean_hard_dice(binarize(pred), data.majority(i));
    const double bd = bdice(pred, data.average(i));
    out.per_image_dice.push_back(d);
    out.per_image_bdice.push_back(bd);
    acc.add(pred, data.majority(i));
    if (predictions) predictions->push_back(pred);
  }
  const double n = static_cast<double>(indices.size());
  for (double d : out.per_image_dice) out.dice += d / n;
  for (double d : out.per_image_bdice) out.bdice += d / n;
  out.ece = acc.value();
  return out;
}

/// Extra target of the distillation objective: the student is additionally
/// pulled toward `signal[i]` with weight `weight` under the selected terms.
struct AuxTargets {
  std::vector<LabelField> signal;  // indexed like the dataset; unused slots empty
  double weight = 0.0;
  KdTerms terms = KdTerms::both;
};

namespace detail {

inline void add_scaled(std::vector<std::vector<double>>& acc, const BatchGrad& g, double w) {
  for (std::size_t b = 0; b < acc.size(); ++b) {
    const auto src = g.grads[b].data();
    for (std::size_t i = 0; i < src.size(); ++i) acc[b][i] += w * src[i];
  }
}

}  // namespace detail

/// Mini-batch SGD with momentum, weight decay and a per-iteration poly
/// schedule. Deterministic given the seeds; the gradient of a batch is
/// reduced in ascending position order.
inline TrainResult train_model(const PreparedData& data, std::span<const std::size_t> train_idx,
                               std::span<const std::size_t> val_idx,
                               std::span<const LabelField> targets, Model model,
                               const TrainSpec& spec, const AuxTargets* aux = nullptr) {
  spec.check();
  if (train_idx.empty()) throw Error(ErrorCode::EmptyDataset, "no training images");
  TrainResult result;
  const std::size_t n = train_idx.size();
  const std::size_t per_epoch = (n + spec.batch_size - 1) / spec.batch_size;
  const std::size_t total_iters = per_epoch * spec.epochs;
  const bool use_aux = aux && aux->weight > 0.0;

  std::vector<double> velocity(model.param_count(), 0.0);
  std::vector<double> grad(model.param_count());
  std::vector<std::size_t> order(train_idx.begin(), train_idx.end());
  std::mt19937_64 rng(spec.seed);
  std::size_t iter = 0;

  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    // Fisher-Yates with the portable uniform.
    for (std::size_t i = n; i > 1; --i) {
      const auto j = std::min(i - 1, static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(i)));
      std::swap(order[i - 1], order[j]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += spec.batch_size) {
      const std::size_t stop = std::min(n, start + spec.batch_size);
      std::vector<ProbField> outs;
      std::vector<ForwardCache> caches(stop - start);
      std::vector<LabelField> ys;
      for (std::size_t b = start; b < stop; ++b) {
        outs.push_back(forward(model, data.features(order[b]), &caches[b - start]));
        ys.push_back(targets[order[b]]);
      }
      BatchGrad lg = evaluate_batch(spec.loss, outs, ys, spec.loss_params, spec.reduction);
      double batch_loss = lg.value;
      std::vector<std::vector<double>> gout(outs.size());
      for (std::size_t b = 0; b < outs.size(); ++b) gout[b] = std::move(lg.grads[b]).release();

      if (use_aux) {
        std::vector<LabelField> ts;
        for (std::size_t b = start; b < stop; ++b) ts.push_back(aux->signal[order[b]]);
        if (aux->terms != KdTerms::dml) {
          const BatchGrad g = evaluate_batch(LossId::ce, outs, ts, {}, spec.reduction);
          batch_loss += aux->weight * g.value;
          detail::add_scaled(gout, g, aux->weight);
        }
        if (aux->terms != KdTerms::ce) {
          const BatchGrad g = evaluate_batch(LossId::dml1, outs, ts, {}, spec.reduction);
          batch_loss += aux->weight * g.value;
          detail::add_scaled(gout, g, aux->weight);
        }
      }
      if (!std::isfinite(batch_loss))
        throw Error(ErrorCode::DivergedLoss, "loss became non-finite at epoch " + std::to_string(epoch));
      epoch_loss += batch_loss * static_cast<double>(stop - start) / static_cast<double>(n);

      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = 0; b < outs.size(); ++b) {
        const Tensor g(outs[b].dims(), std::move(gout[b]));
        backward(model, data.features(order[start + b]), outs[b], caches[b], g, grad);
      }
      const double lr = poly_lr(spec.lr0, iter++, total_iters, spec.poly_power);
      auto params = model.params_mut();
      for (std::size_t k = 0; k < params.size(); ++k) {
        velocity[k] = spec.momentum * velocity[k] + grad[k] + spec.weight_decay * params[k];
        params[k] -= lr * velocity[k];
      }
      for (double v : params)
        if (!std::isfinite(v))
          throw Error(ErrorCode::DivergedLoss, "parameters became non-finite at epoch " + std::to_string(epoch));
    }

    TraceRow row;
    row.epoch = epoch + 1;
    row.split = "train";
    row.loss = epoch_loss;
    result.trace.push_back(row);
    const bool last = epoch + 1 == spec.epochs;
    const bool due = spec.eval_every > 0 ? (epoch + 1) % spec.eval_every == 0 : last;
    if (!val_idx.empty() && (due || last)) {
      const EvalSummary s = evaluate_model(model, data, val_idx);
      TraceRow v;
      v.epoch = epoch + 1;
      v.split = "val";
      v.dice = s.dice;
      v.bdice = s.bdice;
      v.ece = s.ece;
      result.trace.push_back(v);
    }
  }
  result.model = std::move(model);
  return result;
}

/// Trains a fresh model on `train_idx` with targets from `spec.label_source`.
inline TrainResult train(const PreparedData& data, std::span<const std::size_t> train_idx,
                         std::span<const std::size_t> val_idx, const ModelSpec& model_spec,
                         const TrainSpec& spec) {
  const auto stacks = data.dataset().stacks();
  const std::vector<LabelField> targets = make_targets(stacks, spec.label_source);
  return train_model(data, train_idx, val_idx, targets, Model(model_spec, data.dataset().n_classes),
                     spec);
}

/// Teacher signal for distillation: raw teacher probabilities, or their KDE
/// recalibration. Key points are drawn per batch of `batch_size` consecutive
/// training images, from teacher predictions paired with the hard targets.
inline std::vector<LabelField> teacher_signal(const Model& teacher, const PreparedData& data,
                                              std::span<const std::size_t> train_idx,
                                              std::span<const LabelField> hard_targets,
                                              const KdSpec& kd, std::size_t batch_size,
                                              std::uint64_t* kernel_evals = nullptr) {
  std::vector<LabelField> signal(data.size());
  for (std::size_t start = 0; start < train_idx.size(); start += batch_size) {
    const std::size_t stop = std::min(train_idx.size(), start + batch_size);
    std::vector<ProbField> preds;
    std::vector<LabelField> labels;
    for (std::size_t b = start; b < stop; ++b) {
      preds.push_back(forward(teacher, data.features(train_idx[b])));
      labels.push_back(hard_targets[train_idx[b]]);
    }
    if (kd.use_kde) {
      KdeSpec kde = kd.kde;
      kde.seed = derive_seed(kd.kde.seed, start / batch_size);
      preds = calibrate_batch(preds, labels, kde, kernel_evals);
    }
    for (std::size_t b = start; b < stop; ++b) {
      Tensor t = preds[b - start].tensor();
      signal[train_idx[b]] = LabelField(std::move(t), Hardness::soft);
    }
  }
  return signal;
}

/// Student trained on compound(student, targets) + weight * KD terms against
/// the (optionally recalibrated) teacher. Targets must be hard when KDE is on.
inline TrainResult distill(const PreparedData& data, std::span<const std::size_t> train_idx,
                           std::span<const std::size_t> val_idx, const Model& teacher,
                           const ModelSpec& student_spec, const TrainSpec& spec, const KdSpec& kd,
                           std::uint64_t* kernel_evals = nullptr) {
  if (teacher.n_classes() != data.dataset().n_classes)
    throw Error(ErrorCode::CheckpointMismatch, "teacher was trained for a different class count");
  if (teacher.n_features() != data.features(0).dims()[0])
    throw Error(ErrorCode::CheckpointMismatch, "teacher expects a different feature set");
  if (!(kd.kd_weight >= 0.0)) throw Error(ErrorCode::BadSpec, "kd_weight must be >= 0");
  const auto stacks = data.dataset().stacks();
  const std::vector<LabelField> targets = make_targets(stacks, spec.label_source);
  Model student(student_spec, data.dataset().n_classes);
  if (kd.kd_weight == 0.0) return train_model(data, train_idx, val_idx, targets, std::move(student), spec);
  if (kd.use_kde)
    for (std::size_t i : train_idx)
      if (!targets[i].is_hard())
        throw Error(ErrorCode::SoftInput, "KDE key points need hard supervised labels");
  AuxTargets aux;
  aux.signal = teacher_signal(teacher, data, train_idx, targets, kd, spec.batch_size, kernel_evals);
  aux.weight = kd.kd_weight;
  aux.terms = kd.kd_terms;
  return train_model(data, train_idx, val_idx, targets, std::move(student), spec, &aux);
}

// ---------------------------------------------------------------------------
// k-fold cross-validation.

/// Seeded shuffle split into k contiguous folds whose sizes differ by at
/// most one.
inline std::vector<std::vector<std::size_t>> make_folds(std::size_t n, std::size_t k,
                                                        std::uint64_t seed) {
  if (k == 0 || n < k) throw Error(ErrorCode::TooFewImages, "need at least as many images as folds");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = std::min(i - 1, static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(i)));
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    folds[f].assign(order.begin() + static_cast<long>(pos), order.begin() + static_cast<long>(pos + size));
    std::sort(folds[f].begin(), folds[f].end());
    pos += size;
  }
  return folds;
}

struct CrossValResult {
  double dice = 0.0;
  double bdice = 0.0;
  double ece = 0.0;
  std::vector<double> per_image_dice;   // indexed by image
  std::vector<double> per_image_bdice;  // indexed by image
  std::vector<std::size_t> fold_of;     // indexed by image
};

/// Runs `fit(train_idx, val_idx)` per fold and pools the validation
/// predictions: Dice/BDice are means over images, ECE is pooled over pixels.
inline CrossValResult crossval(
    const PreparedData& data, std::size_t k_folds, std::uint64_t seed,
    const std::function<Model(std::span<const std::size_t>, std::span<const std::size_t>)>& fit) {
  const auto folds = make_folds(data.size(), k_folds, seed);
  CrossValResult out;
  out.per_image_dice.assign(data.size(), 0.0);
  out.per_image_bdice.assign(data.size(), 0.0);
  out.fold_of.assign(data.size(), 0);
  EceAccumulator acc;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<std::size_t> train_idx;
    for (std::size_t g = 0; g < folds.size(); ++g)
      if (g != f) train_idx.insert(train_idx.end(), folds[g].begin(), folds[g].end());
    std::sort(train_idx.begin(), train_idx.end());
    const Model model = fit(train_idx, folds[f]);
    std::vector<ProbField> preds;
    const EvalSummary s = evaluate_model(model, data, folds[f], &preds);
    for (std::size_t j = 0; j < folds[f].size(); ++j) {
      const std::size_t i = folds[f][j];
      out.per_image_dice[i] = s.per_image_dice[j];
      out.per_image_bdice[i] = s.per_image_bdice[j];
      out.fold_of[i] = f;
      acc.add(preds[j], data.majority(i));
    }
  }
  const double n = static_cast<double>(data.size());
  for (double d : out.per_image_dice) out.dice += d / n;
  for (double d : out.per_image_bdice) out.bdice += d / n;
  out.ece = acc.value();
  return out;
}

}  // namespace dicesm

#endif  // DICESM_TRAINING_HPP
