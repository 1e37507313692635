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

#ifndef DICESM_CALIBRATION_HPP
#define DICESM_CALIBRATION_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <vector>

#include "dicesm/core.hpp"
#include "dicesm/softlabels.hpp"

namespace dicesm {

// Kernel-density recalibration. A key point i with confidence row f_i
// defines a Beta (binary) or Dirichlet (multi-class) density with
// concentration alpha_ik = f_ik / h + 1; the calibrated prediction of a
// pixel is the kernel-weighted mean of the key labels. All densities are
// handled as logs: at h = 1e-3 the concentrations reach ~1000 and the raw
// densities overflow.

enum class PixelScope { all, misclassified_and_boundary };

struct KdeSpec {
  double bandwidth = 1e-3;
  std::size_t n_key = 256;
  PixelScope pixel_scope = PixelScope::misclassified_and_boundary;
  std::size_t boundary_radius = 1;
  std::uint64_t seed = 42;
  /// Weight each stratified key by its class's inverse sampling rate, so the
  /// estimate targets E[y|f] under the batch's own class mix.
  bool reweight_strata = false;

  void check(std::size_t label_classes) const {
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth))
      throw Error(ErrorCode::BadParams, "bandwidth must be > 0");
    if (n_key < label_classes)
      throw Error(ErrorCode::BadParams, "n_key must cover every class");
    if (boundary_radius == 0) throw Error(ErrorCode::BadParams, "boundary radius must be >= 1");
  }
};

namespace detail {

// (a - 1) log f with the 0 * log 0 = 0 convention.
inline double weighted_log(double a_minus_1, double f) {
  if (a_minus_1 == 0.0) return 0.0;
  if (f <= 0.0) return -std::numeric_limits<double>::infinity();
  return a_minus_1 * std::log(f);
}

inline void check_unit(double v) {
  if (!(v >= 0.0 && v <= 1.0))
    throw Error(ErrorCode::NonFinite, "kernel arguments must lie in [0,1]");
}

}  // namespace detail

/// log of the Beta(fi/h + 1, (1 - fi)/h + 1) density at fj.
inline double log_beta_kernel(double fj, double fi, double h) {
  detail::check_unit(fj);
  detail::check_unit(fi);
  if (!(h > 0.0)) throw Error(ErrorCode::NonFinite, "bandwidth must be > 0");
  const double a = fi / h + 1.0;
  const double b = (1.0 - fi) / h + 1.0;
  return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
         detail::weighted_log(a - 1.0, fj) + detail::weighted_log(b - 1.0, 1.0 - fj);
}

inline double beta_kernel(double fj, double fi, double h) {
  return std::exp(log_beta_kernel(fj, fi, h));
}

inline void check_simplex_row(std::span<const double> f) {
  double sum = 0.0;
  for (double v : f) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::SimplexViolation, "row leaves [0,1]");
    sum += v;
  }
  if (std::abs(sum - 1.0) > kSimplexTolerance)
    throw Error(ErrorCode::SimplexViolation, "row does not sum to 1");
}

/// log of the Dirichlet(fi/h + 1) density at fj.
inline double log_dirichlet_kernel(std::span<const double> fj, std::span<const double> fi,
                                   double h) {
  if (fj.size() != fi.size() || fj.size() < 2)
    throw Error(ErrorCode::ShapeMismatch, "Dirichlet kernel needs two rows of C >= 2 entries");
  check_simplex_row(fj);
  check_simplex_row(fi);
  if (!(h > 0.0)) throw Error(ErrorCode::BadParams, "bandwidth must be > 0");
  double alpha_sum = 0.0;
  double out = 0.0;
  for (std::size_t k = 0; k < fi.size(); ++k) {
    const double a = fi[k] / h + 1.0;
    alpha_sum += a;
    out += detail::weighted_log(a - 1.0, fj[k]) - std::lgamma(a);
  }
  return out + std::lgamma(alpha_sum);
}

inline double dirichlet_kernel(std::span<const double> fj, std::span<const double> fi, double h) {
  return std::exp(log_dirichlet_kernel(fj, fi, h));
}

/// Sampled key points: confidence rows (C entries; binary maps use the single
/// foreground entry), target rows of the same width, and the flat index of
/// each point in the batch (image * H * W + pixel).
struct KeyPointSet {
  std::size_t width = 1;
  std::vector<double> confidences;
  std::vector<double> labels;
  std::vector<std::size_t> provenance;
  /// Optional per-key weights; empty means all ones.
  std::vector<double> weights;

  std::size_t size() const { return provenance.size(); }
  std::span<const double> confidence(std::size_t i) const {
    return std::span<const double>(confidences).subspan(i * width, width);
  }
  std::span<const double> label(std::size_t i) const {
    return std::span<const double>(labels).subspan(i * width, width);
  }
};

/// Class-stratified key-point sample from a batch. With n_unique classes
/// present in the labels, each class contributes min(ceil(n_key/n_unique),
/// available) points drawn without replacement; n_key >= batch size keeps
/// every pixel.
inline KeyPointSet sample_key_points(std::span<const ProbField> preds,
                                     std::span<const LabelField> labels, const KdeSpec& spec) {
  if (preds.empty()) throw Error(ErrorCode::EmptyBatch, "no images to sample key points from");
  if (preds.size() != labels.size())
    throw Error(ErrorCode::ShapeMismatch, "prediction and label batch sizes differ");
  const std::size_t C = preds[0].channels();
  spec.check(C == 1 ? 1 : C);
  const std::size_t P = preds[0].pixels();
  for (std::size_t b = 0; b < preds.size(); ++b) {
    require_same_dims(preds[b], labels[b]);
    require_same_dims(preds[b], preds[0]);
  }
  const std::size_t n = preds.size() * P;

  std::vector<std::size_t> chosen;
  std::map<std::size_t, double> weight_of;  // flat index -> stratum weight
  if (spec.n_key >= n) {
    chosen.resize(n);
    for (std::size_t i = 0; i < n; ++i) chosen[i] = i;
  } else {
    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (std::size_t b = 0; b < preds.size(); ++b)
      for (std::size_t i = 0; i < P; ++i) by_class[labels[b].argmax(i)].push_back(b * P + i);
    const std::size_t quota = (spec.n_key + by_class.size() - 1) / by_class.size();
    std::mt19937_64 rng(spec.seed);
    for (auto& [cls, pool] : by_class) {
      const std::size_t take = std::min(quota, pool.size());
      // Partial Fisher-Yates.
      for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j =
            i + static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(pool.size() - i));
        std::swap(pool[i], pool[std::min(j, pool.size() - 1)]);
        chosen.push_back(pool[i]);
        weight_of[pool[i]] = static_cast<double>(pool.size()) / static_cast<double>(take);
      }
    }
    std::sort(chosen.begin(), chosen.end());
  }

  KeyPointSet keys;
  keys.width = C;
  keys.provenance = chosen;
  keys.confidences.reserve(chosen.size() * C);
  keys.labels.reserve(chosen.size() * C);
  if (spec.reweight_strata && !weight_of.empty())
    for (std::size_t flat : chosen) keys.weights.push_back(weight_of[flat]);
  for (std::size_t flat : chosen) {
    const std::size_t b = flat / P;
    const std::size_t i = flat % P;
    for (std::size_t c = 0; c < C; ++c) {
      keys.confidences.push_back(preds[b].at(c, i));
      keys.labels.push_back(labels[b].at(c, i));
    }
  }
  return keys;
}

/// Key points with their kernel constants precomputed, so that evaluating a
/// pixel against a key costs one dot product of logs.
class KernelBank {
 public:
  KernelBank(const KeyPointSet& keys, double h) : keys_(keys), h_(h) {
    if (keys.size() == 0) throw Error(ErrorCode::EmptyBatch, "no key points");
    if (!keys.weights.empty() && keys.weights.size() != keys.size())
      throw Error(ErrorCode::ShapeMismatch, "one weight per key point expected");
    if (!(h > 0.0)) throw Error(ErrorCode::BadParams, "bandwidth must be > 0");
    const std::size_t w = keys.width;
    const std::size_t dims = w == 1 ? 2 : w;
    exponents_.resize(keys.size() * dims);
    log_norm_.resize(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) {
      const auto f = keys.confidence(i);
      double alpha_sum = 0.0, norm = 0.0;
      for (std::size_t k = 0; k < dims; ++k) {
        const double fk = w == 1 ? (k == 0 ? f[0] : 1.0 - f[0]) : f[k];
        const double a = fk / h + 1.0;
        exponents_[i * dims + k] = a - 1.0;
        alpha_sum += a;
        norm -= std::lgamma(a);
      }
      log_norm_[i] = norm + std::lgamma(alpha_sum);
      if (!keys.weights.empty()) log_norm_[i] += std::log(keys.weights[i]);
    }
  }

  const KeyPointSet& keys() const { return keys_; }
  double bandwidth() const { return h_; }
  std::uint64_t kernel_evaluations() const { return evals_; }

  /// log kernel weight of key i at a pixel with confidence row `f`.
  double log_weight(std::size_t i, std::span<const double> log_f) const {
    ++evals_;
    const std::size_t dims = log_f.size();
    double out = log_norm_[i];
    for (std::size_t k = 0; k < dims; ++k) {
      const double e = exponents_[i * dims + k];
      if (e != 0.0) out += e * log_f[k];
    }
    return out;
  }

 private:
  const KeyPointSet& keys_;
  double h_;
  std::vector<double> exponents_;
  std::vector<double> log_norm_;
  mutable std::uint64_t evals_ = 0;
};

/// Kernel-weighted mean of the key labels at confidence row `f`. Returns
/// `f` unchanged (with a warning) when every weight underflows.
inline std::vector<double> kde_calibrate(std::span<const double> f, const KernelBank& bank) {
  const KeyPointSet& keys = bank.keys();
  const std::size_t w = keys.width;
  if (f.size() != w) throw Error(ErrorCode::ShapeMismatch, "row width differs from key width");
  if (w == 1)
    detail::check_unit(f[0]);
  else
    check_simplex_row(f);
  std::vector<double> log_f(w == 1 ? 2 : w);
  for (std::size_t k = 0; k < log_f.size(); ++k) {
    const double v = w == 1 ? (k == 0 ? f[0] : 1.0 - f[0]) : f[k];
    log_f[k] = v > 0.0 ? std::log(v) : -std::numeric_limits<double>::infinity();
  }
  // A zero coordinate times a zero exponent contributes nothing; keep the
  // -inf only where the exponent is positive (handled in log_weight).
  std::vector<double> lw(keys.size());
  double max_lw = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < keys.size(); ++i) {
    lw[i] = bank.log_weight(i, log_f);
    if (std::isnan(lw[i])) lw[i] = -std::numeric_limits<double>::infinity();
    max_lw = std::max(max_lw, lw[i]);
  }
  if (!std::isfinite(max_lw)) {
    std::cerr << "warning: DegenerateWeights: all kernel weights underflow; keeping the "
                 "uncalibrated prediction\n";
    return {f.begin(), f.end()};
  }
  std::vector<double> out(w, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const double wi = std::exp(lw[i] - max_lw);
    if (wi == 0.0) continue;
    total += wi;
    const auto y = keys.label(i);
    for (std::size_t k = 0; k < w; ++k) out[k] += wi * y[k];
  }
  for (auto& v : out) v = std::clamp(v / total, 0.0, 1.0);
  return out;
}

inline std::vector<double> kde_calibrate(std::span<const double> f, const KeyPointSet& keys,
                                         double h) {
  KernelBank bank(keys, h);
  return kde_calibrate(f, bank);
}

/// Pixels worth recalibrating: misclassified ones (argmax of prediction and
/// label differ) plus those within Chebyshev distance `boundary_radius` of a
/// pixel with a different label class.
inline std::vector<std::size_t> select_scope_pixels(const ProbField& pred, const LabelField& label,
                                                    const KdeSpec& spec) {
  require_same_dims(pred, label);
  if (!label.is_hard()) throw Error(ErrorCode::SoftInput, "scope selection needs a hard label");
  const std::size_t H = label.height();
  const std::size_t W = label.width();
  const long r = static_cast<long>(spec.boundary_radius);
  std::vector<std::size_t> cls(H * W);
  for (std::size_t i = 0; i < H * W; ++i) cls[i] = label.argmax(i);
  std::vector<std::size_t> out;
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t i = y * W + x;
      bool keep = pred.argmax(i) != cls[i];
      for (long dy = -r; dy <= r && !keep; ++dy) {
        const long yy = static_cast<long>(y) + dy;
        if (yy < 0 || yy >= static_cast<long>(H)) continue;
        for (long dx = -r; dx <= r; ++dx) {
          const long xx = static_cast<long>(x) + dx;
          if (xx < 0 || xx >= static_cast<long>(W)) continue;
          if (cls[static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)] != cls[i]) {
            keep = true;
            break;
          }
        }
      }
      if (keep) out.push_back(i);
    }
  }
  return out;
}

/// Recalibrates the listed pixels of `pred` against `bank`.
inline ProbField calibrate_pixels(const ProbField& pred, std::span<const std::size_t> pixels,
                                  const KernelBank& bank) {
  const std::size_t C = pred.channels();
  const std::size_t P = pred.pixels();
  std::vector<double> out(pred.tensor().data().begin(), pred.tensor().data().end());
  std::vector<double> row(C);
  for (std::size_t i : pixels) {
    for (std::size_t c = 0; c < C; ++c) row[c] = pred.at(c, i);
    const auto cal = kde_calibrate(row, bank);
    for (std::size_t c = 0; c < C; ++c) out[c * P + i] = cal[c];
  }
  return ProbField(Tensor(pred.dims(), std::move(out)));
}

/// Recalibrates a batch using key points drawn from the same batch.
inline std::vector<ProbField> calibrate_batch(std::span<const ProbField> preds,
                                              std::span<const LabelField> labels,
                                              const KdeSpec& spec,
                                              std::uint64_t* kernel_evals = nullptr) {
  const KeyPointSet keys = sample_key_points(preds, labels, spec);
  KernelBank bank(keys, spec.bandwidth);
  std::vector<ProbField> out;
  out.reserve(preds.size());
  for (std::size_t b = 0; b < preds.size(); ++b) {
    std::vector<std::size_t> pixels;
    if (spec.pixel_scope == PixelScope::all) {
      pixels.resize(preds[b].pixels());
      for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = i;
    } else {
      pixels = select_scope_pixels(preds[b], labels[b], spec);
    }
    out.push_back(calibrate_pixels(preds[b], pixels, bank));
  }
  if (kernel_evals) *kernel_evals += bank.kernel_evaluations();
  return out;
}

// ---------------------------------------------------------------------------
// Exact check of |E[p*(y|x) - f(x)]| <= E[|E[y|f(x)] - f(x)|] on a finite
// distribution over inputs x.

struct DistAtom {
  double prob = 0.0;    // P(x)
  double f = 0.0;       // model confidence f(x)
  double p_star = 0.0;  // P(y = 1 | x)
};

struct BiasBound {
  double bias = 0.0;
  double calib_error = 0.0;
  bool holds = false;
};

inline BiasBound verify_bias_bound(std::span<const DistAtom> atoms) {
  if (atoms.empty()) throw Error(ErrorCode::InvalidDistribution, "empty distribution");
  double mass = 0.0;
  for (const auto& a : atoms) {
    if (!(a.prob >= 0.0) || !(a.f >= 0.0 && a.f <= 1.0) || !(a.p_star >= 0.0 && a.p_star <= 1.0))
      throw Error(ErrorCode::InvalidDistribution, "atom outside its domain");
    mass += a.prob;
  }
  if (std::abs(mass - 1.0) > 1e-9)
    throw Error(ErrorCode::InvalidDistribution, "probabilities sum to " + std::to_string(mass));

  // E[y | f] groups atoms sharing a confidence value.
  std::map<double, std::pair<double, double>> level;  // f -> (P(f), P(f, y = 1))
  double bias = 0.0;
  for (const auto& a : atoms) {
    bias += a.prob * (a.p_star - a.f);
    auto& [pf, pfy] = level[a.f];
    pf += a.prob;
    pfy += a.prob * a.p_star;
  }
  double calib = 0.0;
  for (const auto& [f, acc] : level) {
    if (acc.first > 0.0) calib += acc.first * std::abs(acc.second / acc.first - f);
  }
  BiasBound out;
  out.bias = std::abs(bias);
  out.calib_error = calib;
  out.holds = out.bias <= out.calib_error + 1e-12;
  return out;
}

}  // namespace dicesm

#endif  // DICESM_CALIBRATION_HPP
