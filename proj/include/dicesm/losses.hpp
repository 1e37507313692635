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

#ifndef DICESM_LOSSES_HPP
#define DICESM_LOSSES_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dicesm/core.hpp"

namespace dicesm {

// Overlap losses on [0,1]^p. Every one of them is a function of four sums
// over the flattened class map:
//
//   sx = |x|_1,  sy = |y|_1,  d = |x - y|_1,  p = <x, y>
//
// so a loss is described by its value and the four partials with respect to
// these sums. The gradient with respect to x_i then follows from
//
//   dL/dx_i = L_sx + L_d * sign(x_i - y_i) + L_p * y_i.

enum class LossId { sdl, sjl, jml1, jml2, dml1, dml2, stl, ctl, cftl, ce, compound };

inline constexpr std::array<LossId, 11> kAllLosses{
    LossId::sdl, LossId::sjl, LossId::jml1, LossId::jml2, LossId::dml1, LossId::dml2,
    LossId::stl, LossId::ctl, LossId::cftl, LossId::ce,   LossId::compound};

inline std::string_view to_string(LossId id) {
  switch (id) {
    case LossId::sdl: return "sdl";
    case LossId::sjl: return "sjl";
    case LossId::jml1: return "jml1";
    case LossId::jml2: return "jml2";
    case LossId::dml1: return "dml1";
    case LossId::dml2: return "dml2";
    case LossId::stl: return "stl";
    case LossId::ctl: return "ctl";
    case LossId::cftl: return "cftl";
    case LossId::ce: return "ce";
    case LossId::compound: return "compound";
  }
  return "?";
}

inline std::optional<LossId> loss_from_string(std::string_view name) {
  for (LossId id : kAllLosses)
    if (to_string(id) == name) return id;
  return std::nullopt;
}

inline bool is_overlap_loss(LossId id) { return id != LossId::ce && id != LossId::compound; }

enum class ClassMode { mean_present, mean_all };
enum class BatchMode { per_image_then_mean, pooled };

struct ReductionSpec {
  ClassMode class_mode = ClassMode::mean_present;
  BatchMode batch_mode = BatchMode::per_image_then_mean;
  /// Loss assigned to a class with |x|_1 = |y|_1 = 0.
  double empty_both_value = 0.0;
};

struct TverskyParams {
  double alpha = 0.5;  // false-positive weight
  double beta = 0.5;   // false-negative weight
  double gamma = 1.0;  // focal exponent

  void check() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0) || !(alpha + beta > 0.0))
      throw Error(ErrorCode::BadParams, "Tversky weights need alpha, beta >= 0 and alpha + beta > 0");
    if (!(gamma > 0.0)) throw Error(ErrorCode::BadParams, "focal exponent gamma must be > 0");
  }
};

inline constexpr double kCeClamp = 1e-7;

struct LossParams {
  TverskyParams tversky{};
  /// Lets STL run on soft targets (it is not minimised at x = y there).
  bool allow_soft_stl = false;
  double w_ce = 0.25;
  double w_dml = 0.75;
  /// Overlap term of the compound loss.
  LossId compound_overlap = LossId::dml1;
  /// Sub-derivative of |t| at t = 0. Only mutation tests change it.
  double sign_at_zero = 0.0;
};

struct GradPair {
  double value = 0.0;
  Tensor grad;
};

struct OverlapSums {
  double sx = 0.0;
  double sy = 0.0;
  double d = 0.0;
  double p = 0.0;
};

/// Value of an overlap loss and its partials with respect to the sums.
struct SumsGrad {
  double value = 0.0;
  double dsx = 0.0;
  double dsy = 0.0;
  double dd = 0.0;
  double dp = 0.0;
};

inline OverlapSums overlap_sums(std::span<const double> x, std::span<const double> y) {
  OverlapSums s;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s.sx += x[i];
    s.sy += y[i];
    s.d += std::abs(x[i] - y[i]);
    s.p += x[i] * y[i];
  }
  return s;
}

namespace detail {

// A zero denominator only arises when both maps are empty (or, for STL/CTL
// with a zero weight, when the index is 0/0); the caller decides the value.
inline std::optional<SumsGrad> overlap_from_sums(LossId id, const OverlapSums& s,
                                                 const TverskyParams& tp) {
  const double S = s.sx + s.sy;
  const double D = s.d;
  const double P = s.p;
  SumsGrad g;
  switch (id) {
    case LossId::sdl: {
      if (!(S > 0.0)) return std::nullopt;
      g.value = (S - 2.0 * P) / S;
      g.dsx = g.dsy = 2.0 * P / (S * S);
      g.dp = -2.0 / S;
      return g;
    }
    case LossId::sjl: {
      const double U = S - P;
      if (!(U > 0.0)) return std::nullopt;
      g.value = (S - 2.0 * P) / U;
      g.dsx = g.dsy = P / (U * U);
      g.dp = -S / (U * U);
      return g;
    }
    case LossId::jml1: {
      const double den = S + D;
      if (!(den > 0.0)) return std::nullopt;
      g.value = 2.0 * D / den;
      g.dsx = g.dsy = -2.0 * D / (den * den);
      g.dd = 2.0 * S / (den * den);
      return g;
    }
    case LossId::jml2: {
      const double den = P + D;
      if (!(den > 0.0)) return std::nullopt;
      g.value = D / den;
      g.dd = P / (den * den);
      g.dp = -D / (den * den);
      return g;
    }
    case LossId::dml1: {
      if (!(S > 0.0)) return std::nullopt;
      g.value = D / S;
      g.dsx = g.dsy = -D / (S * S);
      g.dd = 1.0 / S;
      return g;
    }
    case LossId::dml2: {
      const double den = 2.0 * P + D;
      if (!(den > 0.0)) return std::nullopt;
      g.value = D / den;
      g.dd = 2.0 * P / (den * den);
      g.dp = -2.0 * D / (den * den);
      return g;
    }
    case LossId::stl: {
      const double k = 1.0 - tp.alpha - tp.beta;
      const double den = tp.alpha * s.sx + tp.beta * s.sy + k * P;
      if (!(den > 0.0)) return std::nullopt;
      g.value = (den - P) / den;
      const double den2 = den * den;
      g.dsx = tp.alpha * P / den2;
      g.dsy = tp.beta * P / den2;
      g.dp = -(den - k * P) / den2;
      return g;
    }
    case LossId::ctl:
    case LossId::cftl: {
      const double k = 1.0 - tp.alpha - tp.beta;
      const double N = S - D;
      const double den = 2.0 * tp.alpha * s.sx + 2.0 * tp.beta * s.sy + k * N;
      if (!(den > 0.0)) return std::nullopt;
      const double den2 = den * den;
      // r = N / den is the compatible Tversky index; loss = 1 - r, with the
      // numerator den - N expanded so that x = y gives exactly 0.
      g.value = ((tp.alpha - tp.beta) * (s.sx - s.sy) + (tp.alpha + tp.beta) * D) / den;
      g.dsx = -(den - N * (2.0 * tp.alpha + k)) / den2;
      g.dsy = -(den - N * (2.0 * tp.beta + k)) / den2;
      g.dd = -(-den + N * k) / den2;
      if (id == LossId::cftl && tp.gamma != 1.0) {
        const double c = std::max(g.value, 0.0);
        const double scale = c > 0.0 ? tp.gamma * std::pow(c, tp.gamma - 1.0) : 0.0;
        g.value = std::pow(c, tp.gamma);
        g.dsx *= scale;
        g.dsy *= scale;
        g.dd *= scale;
      }
      return g;
    }
    case LossId::ce:
    case LossId::compound:
      break;
  }
  throw Error(ErrorCode::BadParams, "not an overlap loss: " + std::string(to_string(id)));
}

inline double sign_of(double t, double at_zero) {
  if (t > 0.0) return 1.0;
  if (t < 0.0) return -1.0;
  return at_zero;
}

}  // namespace detail

/// Value and partials of overlap loss `id` at the given sums. Degenerate
/// (0/0) cases return `empty_value` when both maps are empty and 1 otherwise,
/// with zero partials.
inline SumsGrad overlap_from_sums(LossId id, const OverlapSums& s, const TverskyParams& tp,
                                  double empty_value) {
  if (auto g = detail::overlap_from_sums(id, s, tp)) return *g;
  SumsGrad g;
  g.value = (s.sx + s.sy > 0.0) ? 1.0 : empty_value;
  return g;
}

/// Single-class overlap loss on flat vectors; writes dL/dx into `grad` when
/// it is non-empty (scaled by `scale`, accumulated).
inline double overlap_flat(LossId id, std::span<const double> x, std::span<const double> y,
                           const LossParams& params, double empty_value,
                           std::span<double> grad = {}, double scale = 1.0) {
  const OverlapSums s = overlap_sums(x, y);
  const SumsGrad g = overlap_from_sums(id, s, params.tversky, empty_value);
  if (!grad.empty()) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      grad[i] += scale * (g.dsx + g.dd * detail::sign_of(x[i] - y[i], params.sign_at_zero) +
                          g.dp * y[i]);
    }
  }
  return g.value;
}

struct BatchGrad {
  double value = 0.0;
  std::vector<Tensor> grads;
};

namespace detail {

inline void check_pair(const ProbField& x, const LabelField& y) { require_same_dims(x, y); }

inline void check_stl(LossId id, const LabelField& y, const LossParams& params) {
  if ((id == LossId::stl) && !y.is_hard() && !params.allow_soft_stl)
    throw Error(ErrorCode::SoftLabelIncompatible,
                "the soft Tversky loss is not minimised at x = y for soft targets; use ctl "
                "or pass the soft-STL override");
}

// Per-class overlap loss over a set of images, reduced over classes.
// `pooled` images share one sum per class; otherwise each image is reduced
// on its own and the per-image values are averaged.
inline BatchGrad overlap_batch(LossId id, std::span<const ProbField> xs,
                               std::span<const LabelField> ys, const LossParams& params,
                               const ReductionSpec& red) {
  const std::size_t n = xs.size();
  std::vector<std::vector<double>> grads(n);
  for (std::size_t b = 0; b < n; ++b) grads[b].assign(xs[b].tensor().size(), 0.0);
  const std::size_t C = xs[0].channels();

  auto reduce_classes = [&](std::span<const std::size_t> images, double image_weight) {
    // Sums per class over the selected images, ascending flat order.
    std::vector<OverlapSums> sums(C);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t b : images) {
        const OverlapSums s = overlap_sums(xs[b].channel(c), ys[b].channel(c));
        sums[c].sx += s.sx;
        sums[c].sy += s.sy;
        sums[c].d += s.d;
        sums[c].p += s.p;
      }
    }
    std::size_t counted = 0;
    for (std::size_t c = 0; c < C; ++c)
      if (red.class_mode == ClassMode::mean_all || sums[c].sx + sums[c].sy > 0.0) ++counted;
    if (counted == 0) return red.empty_both_value * image_weight;
    double total = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const bool empty = !(sums[c].sx + sums[c].sy > 0.0);
      if (empty && red.class_mode == ClassMode::mean_present) continue;
      const SumsGrad g = overlap_from_sums(id, sums[c], params.tversky, red.empty_both_value);
      total += g.value;
      const double scale = image_weight / static_cast<double>(counted);
      for (std::size_t b : images) {
        const auto xc = xs[b].channel(c);
        const auto yc = ys[b].channel(c);
        double* gc = grads[b].data() + c * xs[b].pixels();
        for (std::size_t i = 0; i < xc.size(); ++i)
          gc[i] += scale * (g.dsx + g.dd * sign_of(xc[i] - yc[i], params.sign_at_zero) +
                            g.dp * yc[i]);
      }
    }
    return image_weight * total / static_cast<double>(counted);
  };

  double value = 0.0;
  if (red.batch_mode == BatchMode::pooled) {
    std::vector<std::size_t> all(n);
    for (std::size_t b = 0; b < n; ++b) all[b] = b;
    value = reduce_classes(all, 1.0);
  } else {
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t one[1] = {b};
      value += reduce_classes(one, 1.0 / static_cast<double>(n));
    }
  }
  BatchGrad out;
  out.value = value;
  out.grads.reserve(n);
  for (std::size_t b = 0; b < n; ++b) out.grads.emplace_back(xs[b].dims(), std::move(grads[b]));
  return out;
}

// Pixel-mean cross-entropy. Binary maps (C = 1) use the two-class form.
inline BatchGrad ce_batch(std::span<const ProbField> xs, std::span<const LabelField> ys,
                          const ReductionSpec& red) {
  const std::size_t n = xs.size();
  std::size_t total_pixels = 0;
  for (const auto& x : xs) total_pixels += x.pixels();
  BatchGrad out;
  out.grads.reserve(n);
  double value = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const ProbField& x = xs[b];
    const LabelField& y = ys[b];
    const std::size_t C = x.channels();
    const std::size_t P = x.pixels();
    const double norm = red.batch_mode == BatchMode::pooled
                            ? 1.0 / static_cast<double>(total_pixels)
                            : 1.0 / (static_cast<double>(n) * static_cast<double>(P));
    std::vector<double> grad(x.tensor().size(), 0.0);
    double acc = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const auto xc = x.channel(c);
      const auto yc = y.channel(c);
      for (std::size_t i = 0; i < P; ++i) {
        const double q = std::clamp(xc[i], kCeClamp, 1.0 - kCeClamp);
        const double t = yc[i];
        if (C == 1) {
          acc -= t * std::log(q) + (1.0 - t) * std::log(1.0 - q);
          grad[c * P + i] = norm * (-t / q + (1.0 - t) / (1.0 - q));
        } else {
          acc -= t * std::log(q);
          grad[c * P + i] = norm * (-t / q);
        }
      }
    }
    value += norm * acc;
    out.grads.emplace_back(x.dims(), std::move(grad));
  }
  out.value = value;
  return out;
}

inline void check_batch(std::span<const ProbField> xs, std::span<const LabelField> ys) {
  if (xs.empty()) throw Error(ErrorCode::EmptyBatch, "no images in batch");
  if (xs.size() != ys.size())
    throw Error(ErrorCode::ShapeMismatch, "prediction and label batch sizes differ");
  for (std::size_t b = 0; b < xs.size(); ++b) {
    check_pair(xs[b], ys[b]);
    if (xs[b].channels() != xs[0].channels())
      throw Error(ErrorCode::ShapeMismatch, "images disagree on class count");
  }
}

}  // namespace detail

/// Evaluates loss `id` over a batch of (prediction, target) pairs.
inline BatchGrad evaluate_batch(LossId id, std::span<const ProbField> xs,
                                std::span<const LabelField> ys, const LossParams& params = {},
                                const ReductionSpec& red = {}) {
  detail::check_batch(xs, ys);
  if (id == LossId::stl || id == LossId::ctl || id == LossId::cftl) params.tversky.check();
  for (const auto& y : ys) detail::check_stl(id, y, params);
  if (id == LossId::ce) return detail::ce_batch(xs, ys, red);
  if (id == LossId::compound) {
    if (!(params.w_ce >= 0.0) || !(params.w_dml >= 0.0))
      throw Error(ErrorCode::BadParams, "compound weights must be >= 0");
    if (!is_overlap_loss(params.compound_overlap))
      throw Error(ErrorCode::BadParams, "compound overlap term must be an overlap loss");
    for (const auto& y : ys) detail::check_stl(params.compound_overlap, y, params);
    BatchGrad ce = detail::ce_batch(xs, ys, red);
    BatchGrad ov = detail::overlap_batch(params.compound_overlap, xs, ys, params, red);
    BatchGrad out;
    out.value = params.w_ce * ce.value + params.w_dml * ov.value;
    for (std::size_t b = 0; b < xs.size(); ++b) {
      std::vector<double> g = std::move(ce.grads[b]).release();
      const auto o = ov.grads[b].data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = params.w_ce * g[i] + params.w_dml * o[i];
      out.grads.emplace_back(xs[b].dims(), std::move(g));
    }
    return out;
  }
  return detail::overlap_batch(id, xs, ys, params, red);
}

inline GradPair evaluate(LossId id, const ProbField& x, const LabelField& y,
                         const LossParams& params = {}, const ReductionSpec& red = {}) {
  BatchGrad b = evaluate_batch(id, std::span<const ProbField>(&x, 1),
                               std::span<const LabelField>(&y, 1), params, red);
  return GradPair{b.value, std::move(b.grads.front())};
}

inline GradPair sdl(const ProbField& x, const LabelField& y, const ReductionSpec& red = {}) {
  return evaluate(LossId::sdl, x, y, {}, red);
}
inline GradPair sjl(const ProbField& x, const LabelField& y, const ReductionSpec& red = {}) {
  return evaluate(LossId::sjl, x, y, {}, red);
}
inline GradPair jml1(const ProbField& x, const LabelField& y, const ReductionSpec& red = {}) {
  return evaluate(LossId::jml1, x, y, {}, red);
}
inline GradPair jml2(const ProbField& x, const LabelField& y, const ReductionSpec& red = {}) {
  return evaluate(LossId::jml2, x, y, {}, red);
}
inline GradPair dml1(const ProbField& x, const LabelField& y, const ReductionSpec& red = {}) {
  return evaluate(LossId::dml1, x, y, {}, red);
}
inline GradPair dml2(const ProbField& x, const LabelField& y, const ReductionSpec& red = {}) {
  return evaluate(LossId::dml2, x, y, {}, red);
}
inline GradPair ce(const ProbField& x, const LabelField& y, const ReductionSpec& red = {}) {
  return evaluate(LossId::ce, x, y, {}, red);
}

inline GradPair stl(const ProbField& x, const LabelField& y, const TverskyParams& tp,
                    const ReductionSpec& red = {}, bool allow_soft = false) {
  LossParams params;
  params.tversky = tp;
  params.allow_soft_stl = allow_soft;
  return evaluate(LossId::stl, x, y, params, red);
}
inline GradPair ctl(const ProbField& x, const LabelField& y, const TverskyParams& tp,
                    const ReductionSpec& red = {}) {
  LossParams params;
  params.tversky = tp;
  return evaluate(LossId::ctl, x, y, params, red);
}
inline GradPair cftl(const ProbField& x, const LabelField& y, const TverskyParams& tp,
                     const ReductionSpec& red = {}) {
  LossParams params;
  params.tversky = tp;
  return evaluate(LossId::cftl, x, y, params, red);
}

inline GradPair compound(const ProbField& x, const LabelField& y, const ReductionSpec& red = {},
                         double w_ce = 0.25, double w_dml = 0.75) {
  LossParams params;
  params.w_ce = w_ce;
  params.w_dml = w_dml;
  return evaluate(LossId::compound, x, y, params, red);
}

// Scalar conveniences on flat binary vectors; used heavily by the property
// suites where labels are generated in bulk.
inline double overlap_value(LossId id, std::span<const double> x, std::span<const double> y,
                            const TverskyParams& tp = {}, double empty_value = 0.0) {
  return overlap_from_sums(id, overlap_sums(x, y), tp, empty_value).value;
}

}  // namespace dicesm

#endif  // DICESM_LOSSES_HPP
