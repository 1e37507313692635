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

#ifndef DICESM_PROPERTIES_HPP
#define DICESM_PROPERTIES_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "dicesm/calibration.hpp"
#include "dicesm/losses.hpp"
#include "dicesm/softlabels.hpp"

namespace dicesm {

// Randomised invariant suite over the loss family and the calibration
// module. Every property draws its own stream from (seed, property index),
// so adding a property leaves the others' samples unchanged.

enum class Mutation { none, sign };

struct PropertyResult {
  std::string name;
  std::uint64_t checked = 0;
  std::uint64_t passed = 0;
  /// Largest observed value of the checked statistic (an error, or a slack
  /// that must stay <= tolerance).
  double max_violation = 0.0;
  double tolerance = 0.0;

  bool ok() const { return checked > 0 && passed == checked; }
  void record(double stat) {
    ++checked;
    if (stat <= tolerance) ++passed;
    if (checked == 1 || stat > max_violation || std::isnan(stat)) max_violation = stat;
  }
};

struct PropertyReport {
  std::uint64_t trials = 0;
  std::uint64_t seed = 0;
  Mutation mutation = Mutation::none;
  std::deque<PropertyResult> properties;  // stable references while the suite appends
  double witness_ratio_dml1 = 0.0;
  double witness_ratio_dml2 = 0.0;

  bool all_passed() const {
    for (const auto& p : properties)
      if (!p.ok()) return false;
    return std::abs(witness_ratio_dml1 - 1.5) <= 1e-12 && std::abs(witness_ratio_dml2 - 1.5) <= 1e-12;
  }
};

inline constexpr double kGoldenRatio = std::numbers::phi;

namespace detail {

using Vec = std::vector<double>;

inline Vec random_unit(std::mt19937_64& rng, std::size_t p) {
  Vec v(p);
  for (auto& x : v) x = unit_uniform(rng);
  return v;
}

inline Vec random_binary(std::mt19937_64& rng, std::size_t p) {
  Vec v(p);
  for (auto& x : v) x = static_cast<double>(rng() & 1u);
  return v;
}

inline std::size_t random_length(std::mt19937_64& rng, std::size_t max_len) {
  return 1 + static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(max_len));
}

inline double loss_of(LossId id, const Vec& x, const Vec& y, const TverskyParams& tp = {}) {
  return overlap_value(id, x, y, tp, 0.0);
}

}  // namespace detail

/// Loss value and gradient on a binary map built from `x`, `y`.
inline GradPair flat_loss(LossId id, const std::vector<double>& x, const std::vector<double>& y,
                          const LossParams& params) {
  return evaluate(id, binary_prob(x), binary_label(y), params);
}

inline PropertyReport check_properties(std::uint64_t trials, std::uint64_t seed,
                                       Mutation mutation = Mutation::none) {
  if (trials == 0) throw Error(ErrorCode::BadParams, "trials must be >= 1");
  using detail::Vec;
  using detail::loss_of;
  PropertyReport report;
  report.trials = trials;
  report.seed = seed;
  report.mutation = mutation;
  std::uint64_t stream = 0;
  auto next_rng = [&] { return std::mt19937_64(derive_seed(seed, stream++)); };
  auto add = [&](std::string name, double tol) -> PropertyResult& {
    report.properties.push_back({std::move(name), 0, 0, 0.0, tol});
    return report.properties.back();
  };

  const LossId metrics[] = {LossId::dml1, LossId::dml2, LossId::jml1, LossId::jml2};

  // SDL agrees with both DMLs whenever one side is hard.
  {
    auto rng = next_rng();
    auto& p1 = add("hard_label_identity_dml1", 1e-12);
    auto& p2 = add("hard_label_identity_dml2", 1e-12);
    for (std::uint64_t t = 0; t < trials; ++t) {
      const std::size_t p = detail::random_length(rng, 64);
      Vec x = (rng() & 1u) ? detail::random_unit(rng, p) : detail::random_binary(rng, p);
      Vec y = detail::random_binary(rng, p);
      if (t % 2) std::swap(x, y);
      if (std::all_of(x.begin(), x.end(), [](double v) { return v == 0.0; }) &&
          std::all_of(y.begin(), y.end(), [](double v) { return v == 0.0; }))
        y[0] = 1.0;
      const double s = loss_of(LossId::sdl, x, y);
      p1.record(std::abs(s - loss_of(LossId::dml1, x, y)));
      p2.record(std::abs(s - loss_of(LossId::dml2, x, y)));
    }
  }

  // Semimetric axioms on soft triples.
  {
    auto rng = next_rng();
    std::vector<PropertyResult*> refl, sym, pos, tri;
    for (LossId id : metrics) {
      const std::string n(to_string(id));
      refl.push_back(&add("reflexivity_" + n, 1e-12));
      sym.push_back(&add("symmetry_" + n, 1e-12));
      pos.push_back(&add("positivity_" + n, 0.0));
      tri.push_back(&add("relaxed_triangle_" + n, 1e-12));
    }
    for (std::uint64_t t = 0; t < trials; ++t) {
      const std::size_t p = detail::random_length(rng, 64);
      const Vec a = detail::random_unit(rng, p), b = detail::random_unit(rng, p),
                c = detail::random_unit(rng, p);
      double linf = 0.0;
      for (std::size_t i = 0; i < p; ++i) linf = std::max(linf, std::abs(a[i] - b[i]));
      for (std::size_t k = 0; k < 4; ++k) {
        const LossId id = metrics[k];
        const double rho = (id == LossId::dml1 || id == LossId::dml2) ? kGoldenRatio : 1.0;
        const double ab = loss_of(id, a, b), ba = loss_of(id, b, a);
        refl[k]->record(std::abs(loss_of(id, a, a)));
        sym[k]->record(std::abs(ab - ba));
        // Recorded as -f(a,b): passes iff f(a,b) > 0.
        if (linf > 1e-6) pos[k]->record(ab > 0.0 ? -ab : 1.0);
        tri[k]->record(loss_of(id, a, c) - rho * (ab + loss_of(id, b, c)));
      }
    }
  }

  // Witness triple: the golden-ratio bound cannot drop below 3/2.
  {
    const Vec a{0, 1}, b{1, 1}, c{1, 0};
    auto ratio = [&](LossId id) {
      return loss_of(id, a, c) / (loss_of(id, a, b) + loss_of(id, b, c));
    };
    report.witness_ratio_dml1 = ratio(LossId::dml1);
    report.witness_ratio_dml2 = ratio(LossId::dml2);
  }

  // DML1 <= DML2 and the Dice-IoU bridge.
  {
    auto rng = next_rng();
    auto& order = add("dml1_le_dml2", 1e-12);
    auto& bridge1 = add("dice_iou_bridge_1", 1e-12);
    auto& bridge2 = add("dice_iou_bridge_2", 1e-12);
    auto& range = add("overlap_range", 0.0);
    for (std::uint64_t t = 0; t < trials; ++t) {
      const std::size_t p = detail::random_length(rng, 64);
      const Vec x = detail::random_unit(rng, p), y = detail::random_unit(rng, p);
      const double d1 = loss_of(LossId::dml1, x, y), d2 = loss_of(LossId::dml2, x, y);
      const double j1 = loss_of(LossId::jml1, x, y), j2 = loss_of(LossId::jml2, x, y);
      order.record(d1 - d2);
      bridge1.record(std::abs(d1 - j1 / (2.0 - j1)));
      bridge2.record(std::abs(d2 - j2 / (2.0 - j2)));
      double worst = 0.0;
      for (LossId id : {LossId::sdl, LossId::sjl, LossId::jml1, LossId::jml2, LossId::dml1,
                        LossId::dml2, LossId::stl, LossId::ctl}) {
        const double v = loss_of(id, x, y);
        worst = std::max({worst, -v, v - 1.0});
      }
      range.record(worst);
    }
  }

  // Tversky family.
  {
    auto rng = next_rng();
    auto& stl_ctl = add("stl_equals_ctl_on_hard_labels", 1e-12);
    auto& ctl_dml = add("ctl_half_half_equals_dml1", 1e-12);
    auto& refl = add("ctl_reflexivity", 1e-12);
    auto& pos = add("ctl_positivity", 0.0);
    for (std::uint64_t t = 0; t < trials; ++t) {
      const std::size_t p = detail::random_length(rng, 64);
      const Vec x = detail::random_unit(rng, p), y = detail::random_unit(rng, p);
      Vec h = detail::random_binary(rng, p);
      h[0] = 1.0;
      // alpha, beta in (0, 1].
      const TverskyParams tp{1.0 - unit_uniform(rng), 1.0 - unit_uniform(rng), 1.0};
      stl_ctl.record(std::abs(loss_of(LossId::stl, x, h, tp) - loss_of(LossId::ctl, x, h, tp)));
      ctl_dml.record(std::abs(loss_of(LossId::ctl, x, y) - loss_of(LossId::dml1, x, y)));
      refl.record(std::abs(loss_of(LossId::ctl, x, x, tp)));
      const double v = loss_of(LossId::ctl, x, y, tp);
      pos.record(v > 0.0 ? -v : 1.0);
    }
  }

  // Minimisers on a 1e-3 grid for scalar soft labels.
  {
    auto rng = next_rng();
    auto& at_label = add("minimizer_at_label", 1e-3 + 1e-12);
    auto& at_vertex = add("minimizer_at_vertex", 0.0);
    const std::uint64_t n = std::min<std::uint64_t>(trials, 100);
    for (std::uint64_t t = 0; t < n; ++t) {
      // Interior labels on the grid's open interval.
      const double y = 0.001 + 0.998 * unit_uniform(rng);
      auto argmin = [&](LossId id) {
        double best = 0.0, best_v = std::numeric_limits<double>::infinity();
        for (int i = 0; i <= 1000; ++i) {
          const double x = i / 1000.0;
          const double v = loss_of(id, Vec{x}, Vec{y});
          if (v < best_v) best_v = v, best = x;
        }
        return best;
      };
      for (LossId id : {LossId::dml1, LossId::dml2, LossId::ctl})
        at_label.record(std::abs(argmin(id) - y));
      for (LossId id : {LossId::sdl, LossId::sjl, LossId::stl}) {
        const double m = argmin(id);
        at_vertex.record(std::min(m, 1.0 - m));
      }
    }
  }

  // Analytic gradients against central differences.
  {
    auto rng = next_rng();
    LossParams params;
    params.allow_soft_stl = true;
    params.tversky = {0.7, 0.3, 2.0};
    if (mutation == Mutation::sign) params.sign_at_zero = 1.0;
    const std::uint64_t n = std::min<std::uint64_t>(trials, 1000);
    auto rel_error = [&](LossId id, Vec x, const Vec& y, double h, double floor) {
      const GradPair g = flat_loss(id, x, y, params);
      double worst = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0 = x[i];
        x[i] = x0 + h;
        const double up = flat_loss(id, x, y, params).value;
        x[i] = x0 - h;
        const double down = flat_loss(id, x, y, params).value;
        x[i] = x0;
        const double fd = (up - down) / (2.0 * h);
        worst = std::max(worst, std::abs(g.grad[i] - fd) / std::max(std::abs(fd), floor));
      }
      return worst;
    };
    auto interior = [&] { return 0.02 + 0.96 * unit_uniform(rng); };

    for (LossId id : kAllLosses) {
      auto& prop = add("gradient_" + std::string(to_string(id)), 1e-5);
      for (std::uint64_t t = 0; t < n; ++t) {
        const std::size_t p = detail::random_length(rng, 8);
        Vec x(p), y(p);
        for (std::size_t i = 0; i < p; ++i) {
          do {
            x[i] = interior();
            y[i] = interior();
          } while (std::abs(x[i] - y[i]) <= 1e-3);
        }
        prop.record(rel_error(id, x, y, 1e-6, 1e-3));
      }
    }
    // At x_i == y_i the subgradient convention sign(0) = 0 matches the
    // symmetric difference quotient of |x_i - y_i|. The quotient is only
    // first-order accurate across the kink, hence the finer step and unit floor.
    for (LossId id : {LossId::jml1, LossId::jml2, LossId::dml1, LossId::dml2, LossId::ctl}) {
      auto& prop = add("tie_gradient_" + std::string(to_string(id)), 1e-5);
      for (std::uint64_t t = 0; t < n; ++t) {
        const std::size_t p = 2 + detail::random_length(rng, 6);
        Vec x(p), y(p);
        for (std::size_t i = 0; i < p; ++i) {
          x[i] = interior();
          if (i % 2 == 0) {
            y[i] = x[i];
          } else {
            do y[i] = interior();
            while (std::abs(x[i] - y[i]) <= 1e-3);
          }
        }
        prop.record(rel_error(id, x, y, 1e-8, 1.0));
      }
    }
  }

  // Calibration: kernels and the recalibrated output.
  {
    auto rng = next_rng();
    auto& dir_beta = add("dirichlet_two_class_equals_beta", 1e-12);
    auto& sym = add("dirichlet_permutation_symmetry", 1e-9);
    auto& simplex = add("kde_output_on_simplex", 1e-12);
    auto& bias = add("bias_bounded_by_calibration_error", 1e-12);
    const std::uint64_t n = std::min<std::uint64_t>(trials, 1000);
    for (std::uint64_t t = 0; t < n; ++t) {
      const double fj = unit_uniform(rng), fi = unit_uniform(rng);
      const double h = std::pow(10.0, -3.0 * unit_uniform(rng));
      const Vec a{fj, 1.0 - fj}, b{fi, 1.0 - fi};
      const double kb = beta_kernel(fj, fi, h), kd = dirichlet_kernel(a, b, h);
      dir_beta.record(std::abs(kb - kd) / std::max(1.0, kb));

      Vec u = detail::random_unit(rng, 3), v = detail::random_unit(rng, 3);
      const double su = u[0] + u[1] + u[2], sv = v[0] + v[1] + v[2];
      for (int k = 0; k < 3; ++k) u[k] /= su, v[k] /= sv;
      const Vec pu{u[2], u[0], u[1]}, pv{v[2], v[0], v[1]};
      const double k1 = log_dirichlet_kernel(u, v, 0.1), k2 = log_dirichlet_kernel(pu, pv, 0.1);
      sym.record(std::abs(k1 - k2) / std::max(1.0, std::abs(k1)));

      KeyPointSet keys;
      keys.width = 3;
      for (int i = 0; i < 16; ++i) {
        Vec f = detail::random_unit(rng, 3);
        const double s = f[0] + f[1] + f[2];
        for (auto& e : f) e /= s;
        keys.confidences.insert(keys.confidences.end(), f.begin(), f.end());
        const std::size_t cls = rng() % 3;
        for (std::size_t k = 0; k < 3; ++k) keys.labels.push_back(k == cls ? 1.0 : 0.0);
        keys.provenance.push_back(static_cast<std::size_t>(i));
      }
      const auto out = kde_calibrate(u, keys, 0.05);
      double dev = std::abs(out[0] + out[1] + out[2] - 1.0);
      for (double e : out) dev = std::max(dev, std::max(-e, e - 1.0));
      simplex.record(dev);

      const std::size_t atoms_n = 1 + rng() % 8;
      std::vector<DistAtom> atoms(atoms_n);
      double mass = 0.0;
      for (auto& at : atoms) {
        at.prob = unit_uniform(rng) + 1e-3;
        mass += at.prob;
        at.f = static_cast<double>(rng() % 5) / 4.0;
        at.p_star = unit_uniform(rng);
      }
      for (auto& at : atoms) at.prob /= mass;
      const BiasBound bb = verify_bias_bound(atoms);
      bias.record(bb.bias - bb.calib_error);
    }
  }

  return report;
}

}  // namespace dicesm

#endif  // DICESM_PROPERTIES_HPP
