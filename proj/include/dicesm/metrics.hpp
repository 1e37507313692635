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

#ifndef DICESM_METRICS_HPP
#define DICESM_METRICS_HPP

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "dicesm/core.hpp"
#include "dicesm/losses.hpp"

namespace dicesm {

struct BDiceSpec {
  std::vector<double> thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  /// Dice assigned when neither map has foreground at a level.
  double empty_both_dice = 1.0;

  void check() const {
    if (thresholds.empty()) throw Error(ErrorCode::BadParams, "no BDice thresholds");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
      if (!(thresholds[i] > 0.0 && thresholds[i] < 1.0))
        throw Error(ErrorCode::BadParams, "BDice thresholds must lie in (0,1)");
      if (i && !(thresholds[i] > thresholds[i - 1]))
        throw Error(ErrorCode::BadParams, "BDice thresholds must be strictly increasing");
    }
  }
};

struct EceSpec {
  std::size_t n_bins = 15;
};

/// Set-based Dice from integer counts.
inline double dice_from_counts(std::uint64_t inter, std::uint64_t size_a, std::uint64_t size_b,
                               double empty_both = 1.0) {
  if (size_a + size_b == 0) return empty_both;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(size_a + size_b);
}

inline double hard_dice(const LabelField& a, const LabelField& b, std::size_t c,
                        double empty_both = 1.0) {
  require_same_dims(a, b);
  if (!a.is_hard() || !b.is_hard()) throw Error(ErrorCode::SoftInput, "hard_dice needs hard masks");
  if (c >= a.channels()) throw Error(ErrorCode::BadParams, "class index out of range");
  const auto av = a.channel(c);
  const auto bv = b.channel(c);
  std::uint64_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const bool in_a = av[i] == 1.0;
    const bool in_b = bv[i] == 1.0;
    na += in_a;
    nb += in_b;
    inter += in_a && in_b;
  }
  return dice_from_counts(inter, na, nb, empty_both);
}

/// Classes scored by image-level metrics: the single channel of a binary map,
/// otherwise every non-background class.
inline std::vector<std::size_t> foreground_classes(std::size_t channels) {
  if (channels == 1) return {0};
  std::vector<std::size_t> out;
  for (std::size_t c = 1; c < channels; ++c) out.push_back(c);
  return out;
}

/// Mean hard Dice over the foreground classes.
inline double mean_hard_dice(const LabelField& a, const LabelField& b, double empty_both = 1.0) {
  const auto classes = foreground_classes(a.channels());
  double sum = 0.0;
  for (std::size_t c : classes) sum += hard_dice(a, b, c, empty_both);
  return sum / static_cast<double>(classes.size());
}

inline double dice_from_iou(double iou) {
  if (!(iou >= 0.0 && iou <= 1.0)) throw Error(ErrorCode::OutOfRange, "IoU outside [0,1]");
  return 2.0 * iou / (1.0 + iou);
}

inline double iou_from_dice(double dice) {
  if (!(dice >= 0.0 && dice <= 1.0)) throw Error(ErrorCode::OutOfRange, "Dice outside [0,1]");
  return dice / (2.0 - dice);
}

/// Hard mask of a map: C = 1 thresholds at `> t`, C >= 2 takes the argmax.
inline LabelField binarize(const FieldBase& f, double t = 0.5) {
  std::vector<double> out(f.tensor().size(), 0.0);
  const std::size_t P = f.pixels();
  if (f.channels() == 1) {
    for (std::size_t i = 0; i < P; ++i) out[i] = f.at(0, i) > t ? 1.0 : 0.0;
  } else {
    for (std::size_t i = 0; i < P; ++i) out[f.argmax(i) * P + i] = 1.0;
  }
  return LabelField(Tensor(f.dims(), std::move(out)), Hardness::hard);
}

/// Binarised Dice: threshold prediction and (soft) label jointly at each
/// level with `> t`, average the set Dice over levels. Multi-class maps are
/// scored per foreground class and averaged.
inline double bdice(const ProbField& x, const LabelField& y, const BDiceSpec& spec = {}) {
  require_same_dims(x, y);
  spec.check();
  const auto classes = foreground_classes(x.channels());
  double total = 0.0;
  for (std::size_t c : classes) {
    const auto xc = x.channel(c);
    const auto yc = y.channel(c);
    double level_sum = 0.0;
    for (double t : spec.thresholds) {
      std::uint64_t inter = 0, na = 0, nb = 0;
      for (std::size_t i = 0; i < xc.size(); ++i) {
        const bool a = xc[i] > t;
        const bool b = yc[i] > t;
        na += a;
        nb += b;
        inter += a && b;
      }
      level_sum += dice_from_counts(inter, na, nb, spec.empty_both_dice);
    }
    total += level_sum / static_cast<double>(spec.thresholds.size());
  }
  return total / static_cast<double>(classes.size());
}

/// 1 - SDL against a hard target: the soft Dice score.
inline double soft_dice_score(const ProbField& x, const LabelField& y,
                              const ReductionSpec& red = {}) {
  if (!y.is_hard()) throw Error(ErrorCode::SoftInput, "soft Dice score expects a hard target");
  return 1.0 - evaluate(LossId::sdl, x, y, {}, red).value;
}

// ---------------------------------------------------------------------------
// Expected calibration error over equal-width bins of foreground confidence.

struct CalibRecord {
  double confidence = 0.0;
  double label = 0.0;
};

/// Bin accumulator; shards can be merged exactly.
class EceAccumulator {
 public:
  explicit EceAccumulator(std::size_t n_bins = 15)
      : count_(n_bins, 0), conf_sum_(n_bins, 0.0), label_sum_(n_bins, 0.0) {
    if (n_bins == 0) throw Error(ErrorCode::BadParams, "ECE needs at least one bin");
  }

  void add(double confidence, double label) {
    if (!(confidence >= 0.0 && confidence <= 1.0))
      throw Error(ErrorCode::OutOfRange, "confidence outside [0,1]");
    const std::size_t n = count_.size();
    const std::size_t bin =
        std::min(n - 1, static_cast<std::size_t>(confidence * static_cast<double>(n)));
    ++count_[bin];
    conf_sum_[bin] += confidence;
    label_sum_[bin] += label;
  }

  /// Adds the foreground records of a prediction against a hard target.
  void add(const ProbField& x, const LabelField& y) {
    require_same_dims(x, y);
    for (std::size_t c : foreground_classes(x.channels())) {
      const auto xc = x.channel(c);
      const auto yc = y.channel(c);
      for (std::size_t i = 0; i < xc.size(); ++i) add(xc[i], yc[i]);
    }
  }

  void merge(const EceAccumulator& other) {
    if (other.count_.size() != count_.size())
      throw Error(ErrorCode::BadParams, "cannot merge ECE shards with different bin counts");
    for (std::size_t b = 0; b < count_.size(); ++b) {
      count_[b] += other.count_[b];
      conf_sum_[b] += other.conf_sum_[b];
      label_sum_[b] += other.label_sum_[b];
    }
  }

  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (auto c : count_) n += c;
    return n;
  }

  double value() const {
    const std::uint64_t n = total();
    if (n == 0) throw Error(ErrorCode::EmptyRecords, "no calibration records");
    double ece = 0.0;
    for (std::size_t b = 0; b < count_.size(); ++b) {
      if (count_[b] == 0) continue;
      const double nb = static_cast<double>(count_[b]);
      ece += (nb / static_cast<double>(n)) * std::abs(label_sum_[b] / nb - conf_sum_[b] / nb);
    }
    return ece;
  }

 private:
  std::vector<std::uint64_t> count_;
  std::vector<double> conf_sum_;
  std::vector<double> label_sum_;
};

inline double ece(std::span<const CalibRecord> records, const EceSpec& spec = {}) {
  if (records.empty()) throw Error(ErrorCode::EmptyRecords, "no calibration records");
  EceAccumulator acc(spec.n_bins);
  for (const auto& r : records) {
    if (r.label != 0.0 && r.label != 1.0)
      throw Error(ErrorCode::OutOfRange, "ECE labels must be 0 or 1");
    acc.add(r.confidence, r.label);
  }
  return acc.value();
}

}  // namespace dicesm

#endif  // DICESM_METRICS_HPP
