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

#ifndef DICESM_SYNTH_HPP
#define DICESM_SYNTH_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "dicesm/core.hpp"
#include "dicesm/softlabels.hpp"

namespace dicesm {

// Synthetic multi-rater segmentation data. Each image holds 1-3 elliptical
// blobs whose intensity falls off smoothly across the border; the clean mask
// is the union of the ellipses. Each rater dilates or erodes the clean mask
// by a random integer radius and then flips border pixels independently.

struct RaterNoise {
  int min_radius = -1;  // negative radii erode
  int max_radius = 1;
  double boundary_flip_prob = 0.1;
};

struct SynthSpec {
  std::size_t n_images = 200;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t n_classes = 1;
  std::size_t k_raters = 5;
  RaterNoise rater_noise{};
  /// Std. dev. of additive Gaussian image noise.
  double image_noise = 0.1;
  /// Width (pixels) of the intensity ramp across a blob border.
  double edge_softness = 2.0;
  std::uint64_t seed = 42;

  void check() const {
    if (n_images == 0 || height < 8 || width < 8)
      throw Error(ErrorCode::BadSpec, "need n_images >= 1 and images of at least 8x8");
    if (n_classes != 1 && n_classes != 2) throw Error(ErrorCode::BadSpec, "n_classes must be 1 or 2");
    if (k_raters == 0) throw Error(ErrorCode::BadSpec, "need at least one rater");
    if (rater_noise.min_radius > rater_noise.max_radius)
      throw Error(ErrorCode::BadSpec, "min_radius exceeds max_radius");
    if (!(rater_noise.boundary_flip_prob >= 0.0 && rater_noise.boundary_flip_prob <= 1.0))
      throw Error(ErrorCode::BadSpec, "boundary_flip_prob must lie in [0,1]");
    if (!(image_noise >= 0.0) || !(edge_softness > 0.0))
      throw Error(ErrorCode::BadSpec, "image_noise must be >= 0 and edge_softness > 0");
  }
};

struct Sample {
  Tensor image;  // [1, H, W]
  LabelField clean;
  RaterStack raters;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t n_classes = 1;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::vector<RaterStack> stacks() const {
    std::vector<RaterStack> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.raters);
    return out;
  }
};

namespace detail {

using Mask = std::vector<std::uint8_t>;

// Square (Chebyshev) structuring element; radius > 0 dilates, < 0 erodes.
inline Mask morph(const Mask& in, std::size_t H, std::size_t W, int radius) {
  if (radius == 0) return in;
  const bool dilate = radius > 0;
  const int r = std::abs(radius);
  Mask out(in.size());
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      bool hit = !dilate;
      for (int dy = -r; dy <= r && hit != dilate; ++dy) {
        const long yy = static_cast<long>(y) + dy;
        for (int dx = -r; dx <= r; ++dx) {
          const long xx = static_cast<long>(x) + dx;
          // Outside the image counts as background.
          const bool v = yy >= 0 && yy < static_cast<long>(H) && xx >= 0 &&
                         xx < static_cast<long>(W) &&
                         in[static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)];
          if (dilate && v) { hit = true; break; }
          if (!dilate && !v) { hit = false; break; }
        }
      }
      out[y * W + x] = hit;
    }
  }
  return out;
}

// Pixels with a 4-neighbour of the other value.
inline std::vector<std::size_t> border_pixels(const Mask& m, std::size_t H, std::size_t W) {
  std::vector<std::size_t> out;
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t i = y * W + x;
      const bool differs = (y > 0 && m[i - W] != m[i]) || (y + 1 < H && m[i + W] != m[i]) ||
                           (x > 0 && m[i - 1] != m[i]) || (x + 1 < W && m[i + 1] != m[i]);
      if (differs) out.push_back(i);
    }
  }
  return out;
}

inline LabelField mask_to_label(const Mask& m, std::size_t H, std::size_t W, std::size_t C) {
  std::vector<double> v(C * H * W, 0.0);
  for (std::size_t i = 0; i < H * W; ++i) {
    if (C == 1)
      v[i] = m[i];
    else
      v[(m[i] ? 1 : 0) * H * W + i] = 1.0;
  }
  return LabelField(Tensor({C, H, W}, std::move(v)), Hardness::hard);
}

inline double gaussian(std::mt19937_64& rng) {
  // Box-Muller on the portable uniform.
  const double u1 = 1.0 - unit_uniform(rng);
  const double u2 = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * unit_uniform(rng);
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  const auto span = static_cast<double>(hi - lo + 1);
  return lo + std::min(hi - lo, static_cast<int>(unit_uniform(rng) * span));
}

}  // namespace detail

inline Sample generate_sample(const SynthSpec& spec, std::mt19937_64& rng) {
  const std::size_t H = spec.height, W = spec.width;
  const double scale = static_cast<double>(std::min(H, W));
  struct Blob {
    double cx, cy, rx, ry, cos_t, sin_t, contrast;
  };
  const int n_blobs = detail::uniform_int(rng, 1, 3);
  std::vector<Blob> blobs;
  for (int b = 0; b < n_blobs; ++b) {
    Blob blob;
    blob.cx = detail::uniform(rng, 0.2, 0.8) * static_cast<double>(W);
    blob.cy = detail::uniform(rng, 0.2, 0.8) * static_cast<double>(H);
    blob.rx = detail::uniform(rng, 0.08, 0.2) * scale;
    blob.ry = detail::uniform(rng, 0.08, 0.2) * scale;
    const double theta = detail::uniform(rng, 0.0, std::numbers::pi);
    blob.cos_t = std::cos(theta);
    blob.sin_t = std::sin(theta);
    blob.contrast = detail::uniform(rng, 0.45, 0.75);
    blobs.push_back(blob);
  }

  detail::Mask clean(H * W, 0);
  std::vector<double> image(H * W);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      double level = 0.0;
      bool inside = false;
      for (const auto& b : blobs) {
        const double dx = static_cast<double>(x) + 0.5 - b.cx;
        const double dy = static_cast<double>(y) + 0.5 - b.cy;
        const double u = (b.cos_t * dx + b.sin_t * dy) / b.rx;
        const double v = (-b.sin_t * dx + b.cos_t * dy) / b.ry;
        const double rho = std::sqrt(u * u + v * v);
        // Signed distance to the border in pixels, approximated radially.
        const double dist = (1.0 - rho) * std::min(b.rx, b.ry);
        inside = inside || rho <= 1.0;
        level = std::max(level, b.contrast / (1.0 + std::exp(-dist / spec.edge_softness * 2.0)));
      }
      clean[y * W + x] = inside;
      image[y * W + x] = 0.2 + level;
    }
  }
  for (auto& v : image) v += spec.image_noise * detail::gaussian(rng);

  std::vector<LabelField> raters;
  raters.reserve(spec.k_raters);
  for (std::size_t k = 0; k < spec.k_raters; ++k) {
    const int radius =
        detail::uniform_int(rng, spec.rater_noise.min_radius, spec.rater_noise.max_radius);
    detail::Mask m = detail::morph(clean, H, W, radius);
    if (spec.rater_noise.boundary_flip_prob > 0.0) {
      const auto border = detail::border_pixels(m, H, W);
      for (std::size_t i : border)
        if (unit_uniform(rng) < spec.rater_noise.boundary_flip_prob) m[i] = !m[i];
    }
    raters.push_back(detail::mask_to_label(m, H, W, spec.n_classes));
  }

  Sample s;
  s.image = Tensor({1, H, W}, std::move(image));
  s.clean = detail::mask_to_label(clean, H, W, spec.n_classes);
  s.raters = RaterStack(std::move(raters));
  return s;
}

/// Deterministic in `spec.seed`; each image draws from its own derived stream
/// so that datasets of different sizes share their prefix.
inline Dataset generate_synthetic(const SynthSpec& spec) {
  spec.check();
  Dataset ds;
  ds.n_classes = spec.n_classes;
  ds.samples.reserve(spec.n_images);
  for (std::size_t i = 0; i < spec.n_images; ++i) {
    std::mt19937_64 rng(derive_seed(spec.seed, i));
    ds.samples.push_back(generate_sample(spec, rng));
  }
  return ds;
}

}  // namespace dicesm

#endif  // DICESM_SYNTH_HPP
