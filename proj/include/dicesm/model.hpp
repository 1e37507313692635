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

#ifndef DICESM_MODEL_HPP
#define DICESM_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "dicesm/core.hpp"
#include "dicesm/synth.hpp"

namespace dicesm {

// Reference segmentation models with hand-written backward passes. Both map
// a per-pixel feature stack [F, H, W] to class logits and then to
// probabilities (sigmoid for a single foreground channel, softmax
// otherwise).
//
//   per_pixel_logistic: logits = W f + b
//   conv2:              h = tanh(conv3x3(f) + b1), logits = V h + b2

enum class ModelKind { per_pixel_logistic, conv2 };
enum class FeatureSet { intensity, box_means };

struct ModelSpec {
  ModelKind kind = ModelKind::per_pixel_logistic;
  FeatureSet feature_set = FeatureSet::box_means;
  std::vector<std::size_t> radii{1, 2, 4};
  std::size_t channels = 4;
  double init_scale = 0.1;
  std::uint64_t seed = 42;
};

inline std::string_view to_string(ModelKind k) {
  return k == ModelKind::conv2 ? "conv2" : "per_pixel_logistic";
}
inline std::string_view to_string(FeatureSet f) {
  return f == FeatureSet::box_means ? "box_means" : "intensity";
}

/// Feature stack of an image: the intensity, then one box mean per radius.
/// Box windows are clipped at the border and averaged over valid pixels.
inline Tensor compute_features(const Tensor& image, const ModelSpec& spec) {
  const std::size_t H = image.dims()[1], W = image.dims()[2];
  const auto img = image.data();
  std::vector<double> out(img.begin(), img.end());
  if (spec.feature_set == FeatureSet::intensity) return Tensor({1, H, W}, std::move(out));
  std::vector<double> integral((H + 1) * (W + 1), 0.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      integral[(y + 1) * (W + 1) + x + 1] = img[y * W + x] + integral[y * (W + 1) + x + 1] +
                                            integral[(y + 1) * (W + 1) + x] -
                                            integral[y * (W + 1) + x];
  for (std::size_t r : spec.radii) {
    for (std::size_t y = 0; y < H; ++y) {
      const std::size_t y0 = y >= r ? y - r : 0, y1 = std::min(H, y + r + 1);
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t x0 = x >= r ? x - r : 0, x1 = std::min(W, x + r + 1);
        const double sum = integral[y1 * (W + 1) + x1] - integral[y0 * (W + 1) + x1] -
                           integral[y1 * (W + 1) + x0] + integral[y0 * (W + 1) + x0];
        out.push_back(sum / static_cast<double>((y1 - y0) * (x1 - x0)));
      }
    }
  }
  return Tensor({1 + spec.radii.size(), H, W}, std::move(out));
}

inline std::size_t feature_count(const ModelSpec& spec) {
  return spec.feature_set == FeatureSet::intensity ? 1 : 1 + spec.radii.size();
}

class Model {
 public:
  Model() = default;

  /// Weights ~ N(0, init_scale^2 / fan_in) from `spec.seed`; biases zero.
  Model(ModelSpec spec, std::size_t n_classes)
      : spec_(std::move(spec)), n_classes_(n_classes), n_features_(feature_count(spec_)) {
    if (n_classes_ == 0) throw Error(ErrorCode::BadSpec, "model needs at least one class");
    if (spec_.kind == ModelKind::conv2 && spec_.channels == 0)
      throw Error(ErrorCode::BadSpec, "conv2 needs at least one hidden channel");
    params_.assign(param_count(), 0.0);
    std::mt19937_64 rng(spec_.seed);
    auto fill = [&](std::size_t offset, std::size_t count, std::size_t fan_in) {
      const double sd = spec_.init_scale / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t i = 0; i < count; ++i) params_[offset + i] = sd * detail::gaussian(rng);
    };
    const std::size_t F = n_features_, O = outputs();
    if (spec_.kind == ModelKind::per_pixel_logistic) {
      fill(0, O * F, F);
    } else {
      const std::size_t M = spec_.channels;
      fill(0, M * F * 9, F * 9);
      fill(M * F * 9 + M, O * M, M);
    }
  }

  Model(ModelSpec spec, std::size_t n_classes, std::vector<double> params)
      : spec_(std::move(spec)), n_classes_(n_classes), n_features_(feature_count(spec_)) {
    if (params.size() != param_count())
      throw Error(ErrorCode::CheckpointMismatch,
                  "checkpoint holds " + std::to_string(params.size()) + " parameters, model needs " +
                      std::to_string(param_count()));
    params_ = std::move(params);
  }

  const ModelSpec& spec() const { return spec_; }
  std::size_t n_classes() const { return n_classes_; }
  std::size_t n_features() const { return n_features_; }
  std::size_t outputs() const { return n_classes_ == 1 ? 1 : n_classes_; }

  std::size_t param_count() const {
    const std::size_t F = n_features_, O = outputs();
    if (spec_.kind == ModelKind::per_pixel_logistic) return O * F + O;
    const std::size_t M = spec_.channels;
    return M * F * 9 + M + O * M + O;
  }

  std::span<const double> params() const { return params_; }
  std::span<double> params_mut() { return params_; }

 private:
  ModelSpec spec_;
  std::size_t n_classes_ = 1;
  std::size_t n_features_ = 1;
  std::vector<double> params_;
};

/// Activations kept for the backward pass.
struct ForwardCache {
  std::vector<double> hidden;  // conv2 tanh outputs [M, H, W]
};

namespace detail {

inline void to_probabilities(std::vector<double>& logits, std::size_t O, std::size_t P) {
  if (O == 1) {
    for (auto& z : logits) z = 1.0 / (1.0 + std::exp(-z));
    return;
  }
  for (std::size_t i = 0; i < P; ++i) {
    double mx = logits[i];
    for (std::size_t c = 1; c < O; ++c) mx = std::max(mx, logits[c * P + i]);
    double sum = 0.0;
    for (std::size_t c = 0; c < O; ++c) {
      logits[c * P + i] = std::exp(logits[c * P + i] - mx);
      sum += logits[c * P + i];
    }
    for (std::size_t c = 0; c < O; ++c) logits[c * P + i] /= sum;
  }
}

}  // namespace detail

inline ProbField forward(const Model& model, const Tensor& features, ForwardCache* cache = nullptr) {
  if (features.rank() != 3 || features.dims()[0] != model.n_features())
    throw Error(ErrorCode::ShapeMismatch, "feature stack does not match the model");
  const std::size_t H = features.dims()[1], W = features.dims()[2], P = H * W;
  const std::size_t F = model.n_features(), O = model.outputs();
  const auto f = features.data();
  const auto w = model.params();
  std::vector<double> logits(O * P);

  if (model.spec().kind == ModelKind::per_pixel_logistic) {
    for (std::size_t o = 0; o < O; ++o) {
      double* out = logits.data() + o * P;
      std::fill(out, out + P, w[O * F + o]);
      for (std::size_t k = 0; k < F; ++k) {
        const double wk = w[o * F + k];
        const double* fk = f.data() + k * P;
        for (std::size_t i = 0; i < P; ++i) out[i] += wk * fk[i];
      }
    }
  } else {
    const std::size_t M = model.spec().channels;
    const double* kernel = w.data();
    const double* b1 = kernel + M * F * 9;
    const double* v = b1 + M;
    const double* b2 = v + O * M;
    std::vector<double> hidden(M * P);
    for (std::size_t m = 0; m < M; ++m) {
      double* hm = hidden.data() + m * P;
      std::fill(hm, hm + P, b1[m]);
      for (std::size_t k = 0; k < F; ++k) {
        const double* fk = f.data() + k * P;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const double wt = kernel[((m * F + k) * 3 + (dy + 1)) * 3 + (dx + 1)];
            const std::size_t y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? H - 1 : H;
            const std::size_t x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? W - 1 : W;
            for (std::size_t y = y0; y < y1; ++y) {
              const double* src = fk + (y + dy) * W + dx;
              double* dst = hm + y * W;
              for (std::size_t x = x0; x < x1; ++x) dst[x] += wt * src[x];
            }
          }
        }
      }
      for (std::size_t i = 0; i < P; ++i) hm[i] = std::tanh(hm[i]);
    }
    for (std::size_t o = 0; o < O; ++o) {
      double* out = logits.data() + o * P;
      std::fill(out, out + P, b2[o]);
      for (std::size_t m = 0; m < M; ++m) {
        const double vm = v[o * M + m];
        const double* hm = hidden.data() + m * P;
        for (std::size_t i = 0; i < P; ++i) out[i] += vm * hm[i];
      }
    }
    if (cache) cache->hidden = std::move(hidden);
  }
  detail::to_probabilities(logits, O, P);
  return ProbField(Tensor({O, H, W}, std::move(logits)));
}

/// Accumulates dL/dparams into `grad` given dL/d(probabilities).
inline void backward(const Model& model, const Tensor& features, const ProbField& output,
                     const ForwardCache& cache, const Tensor& grad_output,
                     std::span<double> grad) {
  if (grad_output.dims() != output.dims())
    throw Error(ErrorCode::ShapeMismatch, "output gradient does not match the model output");
  if (grad.size() != model.param_count())
    throw Error(ErrorCode::ShapeMismatch, "parameter gradient buffer has the wrong size");
  const std::size_t H = features.dims()[1], W = features.dims()[2], P = H * W;
  const std::size_t F = model.n_features(), O = model.outputs();
  const auto f = features.data();
  const auto g = grad_output.data();

  // dL/dlogits.
  std::vector<double> dz(O * P);
  if (O == 1) {
    for (std::size_t i = 0; i < P; ++i) {
      const double x = output.at(0, i);
      dz[i] = g[i] * x * (1.0 - x);
    }
  } else {
    for (std::size_t i = 0; i < P; ++i) {
      double dot = 0.0;
      for (std::size_t c = 0; c < O; ++c) dot += g[c * P + i] * output.at(c, i);
      for (std::size_t c = 0; c < O; ++c) dz[c * P + i] = output.at(c, i) * (g[c * P + i] - dot);
    }
  }

  if (model.spec().kind == ModelKind::per_pixel_logistic) {
    for (std::size_t o = 0; o < O; ++o) {
      const double* d = dz.data() + o * P;
      double bias = 0.0;
      for (std::size_t i = 0; i < P; ++i) bias += d[i];
      grad[O * F + o] += bias;
      for (std::size_t k = 0; k < F; ++k) {
        const double* fk = f.data() + k * P;
        double acc = 0.0;
        for (std::size_t i = 0; i < P; ++i) acc += d[i] * fk[i];
        grad[o * F + k] += acc;
      }
    }
    return;
  }

  const std::size_t M = model.spec().channels;
  const auto w = model.params();
  const double* v = w.data() + M * F * 9 + M;
  double* g_kernel = grad.data();
  double* g_b1 = g_kernel + M * F * 9;
  double* g_v = g_b1 + M;
  double* g_b2 = g_v + O * M;
  const std::vector<double>& hidden = cache.hidden;

  for (std::size_t o = 0; o < O; ++o) {
    const double* d = dz.data() + o * P;
    double bias = 0.0;
    for (std::size_t i = 0; i < P; ++i) bias += d[i];
    g_b2[o] += bias;
    for (std::size_t m = 0; m < M; ++m) {
      const double* hm = hidden.data() + m * P;
      double acc = 0.0;
      for (std::size_t i = 0; i < P; ++i) acc += d[i] * hm[i];
      g_v[o * M + m] += acc;
    }
  }
  std::vector<double> dpre(P);
  for (std::size_t m = 0; m < M; ++m) {
    const double* hm = hidden.data() + m * P;
    for (std::size_t i = 0; i < P; ++i) {
      double acc = 0.0;
      for (std::size_t o = 0; o < O; ++o) acc += v[o * M + m] * dz[o * P + i];
      dpre[i] = acc * (1.0 - hm[i] * hm[i]);
    }
    double bias = 0.0;
    for (std::size_t i = 0; i < P; ++i) bias += dpre[i];
    g_b1[m] += bias;
    for (std::size_t k = 0; k < F; ++k) {
      const double* fk = f.data() + k * P;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const std::size_t y0 = dy < 0 ? 1 : 0, y1 = dy > 0 ? H - 1 : H;
          const std::size_t x0 = dx < 0 ? 1 : 0, x1 = dx > 0 ? W - 1 : W;
          double acc = 0.0;
          for (std::size_t y = y0; y < y1; ++y) {
            const double* src = fk + (y + dy) * W + dx;
            const double* dp = dpre.data() + y * W;
            for (std::size_t x = x0; x < x1; ++x) acc += dp[x] * src[x];
          }
          g_kernel[((m * F + k) * 3 + (dy + 1)) * 3 + (dx + 1)] += acc;
        }
      }
    }
  }
}

}  // namespace dicesm

#endif  // DICESM_MODEL_HPP
