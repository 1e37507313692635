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

#ifndef DICESM_SOFTLABELS_HPP
#define DICESM_SOFTLABELS_HPP

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dicesm/core.hpp"
#include "dicesm/metrics.hpp"

namespace dicesm {

enum class SoftLabelStrategy { majority, random_rater, uniform_avg, weighted_avg, label_smoothing };
enum class TieBreak { lowest_class, background };
enum class WeightScope { per_image, per_dataset };

struct SoftLabelSpec {
  SoftLabelStrategy strategy = SoftLabelStrategy::uniform_avg;
  double epsilon = 0.1;
  std::uint64_t seed = 42;
  TieBreak tie_break = TieBreak::background;
  WeightScope weights = WeightScope::per_image;
};

inline std::string_view to_string(SoftLabelStrategy s) {
  switch (s) {
    case SoftLabelStrategy::majority: return "majority";
    case SoftLabelStrategy::random_rater: return "random_rater";
    case SoftLabelStrategy::uniform_avg: return "uniform_avg";
    case SoftLabelStrategy::weighted_avg: return "weighted_avg";
    case SoftLabelStrategy::label_smoothing: return "label_smoothing";
  }
  return "?";
}

inline std::optional<SoftLabelStrategy> strategy_from_string(std::string_view s) {
  for (auto v : {SoftLabelStrategy::majority, SoftLabelStrategy::random_rater,
                 SoftLabelStrategy::uniform_avg, SoftLabelStrategy::weighted_avg,
                 SoftLabelStrategy::label_smoothing})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

/// Uniform double in [0,1) from the top 53 bits of one engine draw; stable
/// across standard libraries, unlike generate_canonical.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

namespace detail {

inline void require_raters(const RaterStack& stack) {
  if (stack.empty()) throw Error(ErrorCode::EmptyStack, "rater stack is empty");
}

inline LabelField soft_or_hard(const Dims& dims, std::vector<double> values) {
  Tensor t(dims, std::move(values));
  const Hardness h = is_hard_valued(t) ? Hardness::hard : Hardness::soft;
  return LabelField(std::move(t), h);
}

}  // namespace detail

/// Per-pixel plurality vote. Binary maps (C = 1) vote foreground against
/// background; both tie rules then resolve a tie to background.
inline LabelField majority_vote(const RaterStack& stack, TieBreak tie = TieBreak::background) {
  detail::require_raters(stack);
  const Dims& dims = stack.dims();
  const std::size_t C = dims[0];
  const std::size_t P = dims[1] * dims[2];
  const std::size_t K = stack.size();
  std::vector<double> out(C * P, 0.0);
  if (C == 1) {
    for (std::size_t i = 0; i < P; ++i) {
      std::size_t votes = 0;
      for (std::size_t k = 0; k < K; ++k) votes += stack[k].at(0, i) == 1.0;
      out[i] = 2 * votes > K ? 1.0 : 0.0;
    }
  } else {
    std::vector<std::size_t> votes(C);
    for (std::size_t i = 0; i < P; ++i) {
      std::fill(votes.begin(), votes.end(), 0);
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t c = 0; c < C; ++c) votes[c] += stack[k].at(c, i) == 1.0;
      std::size_t best = 0;
      for (std::size_t c = 1; c < C; ++c)
        if (votes[c] > votes[best]) best = c;
      // lowest_class already holds; background wins any tie it is part of.
      if (tie == TieBreak::background && votes[0] == votes[best]) best = 0;
      out[best * P + i] = 1.0;
    }
  }
  return LabelField(Tensor(dims, std::move(out)), Hardness::hard);
}

/// Index of the rater chosen for one image: floor(U(seed) * K).
inline std::size_t random_rater_index(std::size_t K, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return std::min(K - 1, static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(K)));
}

/// One whole annotation drawn per image.
inline LabelField random_rater(const RaterStack& stack, std::uint64_t seed) {
  detail::require_raters(stack);
  return stack[random_rater_index(stack.size(), seed)];
}

inline LabelField weighted_combination(const RaterStack& stack, std::span<const double> weights) {
  const Dims& dims = stack.dims();
  std::vector<double> out(stack[0].tensor().size(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double first = stack[0].tensor()[i];
    bool agree = true;
    double acc = 0.0;
    for (std::size_t k = 0; k < stack.size(); ++k) {
      const double r = stack[k].tensor()[i];
      agree = agree && r == first;
      acc += weights[k] * r;
    }
    // Unanimous elements stay exactly 0 or 1 regardless of weight rounding.
    out[i] = agree ? first : std::clamp(acc, 0.0, 1.0);
  }
  return detail::soft_or_hard(dims, std::move(out));
}

inline LabelField uniform_average(const RaterStack& stack) {
  detail::require_raters(stack);
  const std::size_t K = stack.size();
  std::vector<double> out(stack[0].tensor().size(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t votes = 0;
    for (std::size_t k = 0; k < K; ++k) votes += stack[k].tensor()[i] == 1.0;
    out[i] = static_cast<double>(votes) / static_cast<double>(K);
  }
  return detail::soft_or_hard(stack.dims(), std::move(out));
}

/// Dice of each rater against the majority vote, averaged over foreground
/// classes.
inline std::vector<double> rater_agreement(const RaterStack& stack,
                                           TieBreak tie = TieBreak::background) {
  detail::require_raters(stack);
  const LabelField mv = majority_vote(stack, tie);
  std::vector<double> dice(stack.size());
  for (std::size_t k = 0; k < stack.size(); ++k) dice[k] = mean_hard_dice(stack[k], mv);
  return dice;
}

/// Normalises raw weights; all-zero weights fall back to uniform with a
/// warning on stderr.
inline std::vector<double> normalize_weights(std::vector<double> w) {
  double sum = 0.0;
  for (double v : w) sum += v;
  if (!(sum > 0.0)) {
    std::cerr << "warning: AllZeroWeights: every rater has Dice 0 against the majority vote; "
                 "falling back to uniform weights\n";
    for (auto& v : w) v = 1.0 / static_cast<double>(w.size());
    return w;
  }
  for (auto& v : w) v /= sum;
  return w;
}

/// Raters weighted by their Dice against the per-image majority vote.
inline LabelField weighted_average(const RaterStack& stack, TieBreak tie = TieBreak::background) {
  detail::require_raters(stack);
  const std::vector<double> w = normalize_weights(rater_agreement(stack, tie));
  return weighted_combination(stack, w);
}

/// Dataset-level rater weights: mean per-image agreement of rater k across
/// all stacks (raters are matched by position).
inline std::vector<double> dataset_rater_weights(std::span<const RaterStack> stacks,
                                                 TieBreak tie = TieBreak::background) {
  if (stacks.empty()) throw Error(ErrorCode::EmptyStack, "no rater stacks");
  const std::size_t K = stacks[0].size();
  std::vector<double> acc(K, 0.0);
  for (const auto& s : stacks) {
    if (s.size() != K) throw Error(ErrorCode::ShapeMismatch, "rater count differs across images");
    const auto d = rater_agreement(s, tie);
    for (std::size_t k = 0; k < K; ++k) acc[k] += d[k];
  }
  return normalize_weights(std::move(acc));
}

/// (1 - eps) y + eps / C, with C = 2 for binary maps.
inline LabelField label_smoothing(const LabelField& y, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon < 1.0))
    throw Error(ErrorCode::BadEpsilon, "epsilon must lie in [0,1)");
  const std::size_t C = y.channels();
  const double floor = epsilon / static_cast<double>(C == 1 ? 2 : C);
  std::vector<double> out(y.tensor().size());
  const auto v = y.tensor().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - epsilon) * v[i] + floor;
  if (epsilon == 0.0) return y;
  return LabelField(Tensor(y.dims(), std::move(out)), Hardness::soft);
}

/// Applies `spec` to one image. `image_seed` feeds random_rater; callers
/// derive it from the spec seed and the image index.
inline LabelField make_target(const RaterStack& stack, const SoftLabelSpec& spec,
                              std::uint64_t image_seed) {
  switch (spec.strategy) {
    case SoftLabelStrategy::majority: return majority_vote(stack, spec.tie_break);
    case SoftLabelStrategy::random_rater: return random_rater(stack, image_seed);
    case SoftLabelStrategy::uniform_avg: return uniform_average(stack);
    case SoftLabelStrategy::weighted_avg: return weighted_average(stack, spec.tie_break);
    case SoftLabelStrategy::label_smoothing:
      return label_smoothing(majority_vote(stack, spec.tie_break), spec.epsilon);
  }
  throw Error(ErrorCode::BadParams, "unknown soft-label strategy");
}

/// Per-image seed for random_rater: one SplitMix64 step over (seed, index).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Targets for a whole dataset; honours per_dataset weighting.
inline std::vector<LabelField> make_targets(std::span<const RaterStack> stacks,
                                            const SoftLabelSpec& spec) {
  std::vector<LabelField> out;
  out.reserve(stacks.size());
  if (spec.strategy == SoftLabelStrategy::weighted_avg && spec.weights == WeightScope::per_dataset) {
    const auto w = dataset_rater_weights(stacks, spec.tie_break);
    for (const auto& s : stacks) out.push_back(weighted_combination(s, w));
    return out;
  }
  for (std::size_t i = 0; i < stacks.size(); ++i)
    out.push_back(make_target(stacks[i], spec, derive_seed(spec.seed, i)));
  return out;
}

}  // namespace dicesm

#endif  // DICESM_SOFTLABELS_HPP
