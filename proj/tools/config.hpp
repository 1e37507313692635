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

#ifndef DICESM_TOOLS_CONFIG_HPP
#define DICESM_TOOLS_CONFIG_HPP

#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "dicesm/training.hpp"
#include "json.hpp"

namespace dicesm::config {

using nlohmann::json;

// Strict JSON readers for the train/distill configs. Every object is read
// through a Fields cursor that rejects keys it was not asked for.

class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail("expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      fail(std::string("bad value for '") + key + "': " + e.what());
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& at(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string child(const char* key) const { return where_ + "." + key; }

  /// Call after every get(); throws on keys nobody asked for.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail("unknown key '" + it.key() + "'");
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorCode::BadConfig, where_ + ": " + msg);
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <typename E, typename F>
E parse_enum(Fields& f, const char* key, E current, F&& from_string) {
  std::string name;
  f.get(key, name);
  if (name.empty()) return current;
  if (auto v = from_string(name)) return *v;
  f.fail(std::string("unknown value '") + name + "' for '" + key + "'");
}

inline std::optional<ClassMode> class_mode_from_string(std::string_view s) {
  if (s == "mean_present") return ClassMode::mean_present;
  if (s == "mean_all") return ClassMode::mean_all;
  return std::nullopt;
}
inline std::optional<BatchMode> batch_mode_from_string(std::string_view s) {
  if (s == "per_image_then_mean") return BatchMode::per_image_then_mean;
  if (s == "pooled") return BatchMode::pooled;
  return std::nullopt;
}
inline std::optional<TieBreak> tie_break_from_string(std::string_view s) {
  if (s == "background") return TieBreak::background;
  if (s == "lowest_class") return TieBreak::lowest_class;
  return std::nullopt;
}
inline std::optional<WeightScope> weight_scope_from_string(std::string_view s) {
  if (s == "per_image") return WeightScope::per_image;
  if (s == "per_dataset") return WeightScope::per_dataset;
  return std::nullopt;
}
inline std::optional<ModelKind> model_kind_from_string(std::string_view s) {
  if (s == "per_pixel_logistic") return ModelKind::per_pixel_logistic;
  if (s == "conv2") return ModelKind::conv2;
  return std::nullopt;
}
inline std::optional<FeatureSet> feature_set_from_string(std::string_view s) {
  if (s == "intensity") return FeatureSet::intensity;
  if (s == "box_means") return FeatureSet::box_means;
  return std::nullopt;
}
inline std::optional<PixelScope> pixel_scope_from_string(std::string_view s) {
  if (s == "all") return PixelScope::all;
  if (s == "misclassified_and_boundary" || s == "boundary") return PixelScope::misclassified_and_boundary;
  return std::nullopt;
}
inline std::optional<KdTerms> kd_terms_from_string(std::string_view s) {
  if (s == "ce") return KdTerms::ce;
  if (s == "dml") return KdTerms::dml;
  if (s == "both") return KdTerms::both;
  return std::nullopt;
}

inline void read(const json& j, const std::string& where, TverskyParams& tp) {
  Fields f(j, where);
  f.get("alpha", tp.alpha);
  f.get("beta", tp.beta);
  f.get("gamma", tp.gamma);
  f.finish();
}

inline void read(const json& j, const std::string& where, ReductionSpec& r) {
  Fields f(j, where);
  r.class_mode = parse_enum(f, "class_mode", r.class_mode, class_mode_from_string);
  r.batch_mode = parse_enum(f, "batch_mode", r.batch_mode, batch_mode_from_string);
  f.get("empty_both_value", r.empty_both_value);
  f.finish();
}

inline void read(const json& j, const std::string& where, SoftLabelSpec& s) {
  Fields f(j, where);
  s.strategy = parse_enum(f, "strategy", s.strategy, strategy_from_string);
  f.get("epsilon", s.epsilon);
  f.get("seed", s.seed);
  s.tie_break = parse_enum(f, "tie_break", s.tie_break, tie_break_from_string);
  s.weights = parse_enum(f, "weights", s.weights, weight_scope_from_string);
  f.finish();
}

inline void read(const json& j, const std::string& where, LossParams& p) {
  Fields f(j, where);
  if (f.has("tversky")) read(f.at("tversky"), f.child("tversky"), p.tversky);
  f.get("allow_soft_stl", p.allow_soft_stl);
  f.get("w_ce", p.w_ce);
  f.get("w_dml", p.w_dml);
  p.compound_overlap = parse_enum(f, "compound_overlap", p.compound_overlap, loss_from_string);
  f.finish();
}

inline void read(const json& j, const std::string& where, TrainSpec& t) {
  Fields f(j, where);
  f.get("lr0", t.lr0);
  f.get("momentum", t.momentum);
  f.get("weight_decay", t.weight_decay);
  f.get("epochs", t.epochs);
  f.get("batch_size", t.batch_size);
  f.get("poly_power", t.poly_power);
  t.loss = parse_enum(f, "loss", t.loss, loss_from_string);
  if (f.has("loss_params")) read(f.at("loss_params"), f.child("loss_params"), t.loss_params);
  if (f.has("reduction")) read(f.at("reduction"), f.child("reduction"), t.reduction);
  if (f.has("label_source")) read(f.at("label_source"), f.child("label_source"), t.label_source);
  f.get("seed", t.seed);
  f.get("eval_every", t.eval_every);
  f.finish();
}

inline void read(const json& j, const std::string& where, ModelSpec& m) {
  Fields f(j, where);
  m.kind = parse_enum(f, "kind", m.kind, model_kind_from_string);
  m.feature_set = parse_enum(f, "feature_set", m.feature_set, feature_set_from_string);
  f.get("radii", m.radii);
  f.get("channels", m.channels);
  f.get("init_scale", m.init_scale);
  f.get("seed", m.seed);
  f.finish();
}

inline void read(const json& j, const std::string& where, SynthSpec& s) {
  Fields f(j, where);
  f.get("n_images", s.n_images);
  f.get("height", s.height);
  f.get("width", s.width);
  f.get("n_classes", s.n_classes);
  f.get("k_raters", s.k_raters);
  if (f.has("rater_noise")) {
    Fields r(f.at("rater_noise"), f.child("rater_noise"));
    r.get("min_radius", s.rater_noise.min_radius);
    r.get("max_radius", s.rater_noise.max_radius);
    r.get("boundary_flip_prob", s.rater_noise.boundary_flip_prob);
    r.finish();
  }
  f.get("image_noise", s.image_noise);
  f.get("edge_softness", s.edge_softness);
  f.get("seed", s.seed);
  f.finish();
}

inline void read(const json& j, const std::string& where, KdeSpec& k) {
  Fields f(j, where);
  f.get("bandwidth", k.bandwidth);
  f.get("n_key", k.n_key);
  k.pixel_scope = parse_enum(f, "pixel_scope", k.pixel_scope, pixel_scope_from_string);
  f.get("boundary_radius", k.boundary_radius);
  f.get("seed", k.seed);
  f.get("reweight_strata", k.reweight_strata);
  f.finish();
}

inline void read(const json& j, const std::string& where, KdSpec& k) {
  Fields f(j, where);
  f.get("teacher_checkpoint", k.teacher_checkpoint);
  f.get("use_kde", k.use_kde);
  if (f.has("kde")) read(f.at("kde"), f.child("kde"), k.kde);
  f.get("kd_weight", k.kd_weight);
  k.kd_terms = parse_enum(f, "kd_terms", k.kd_terms, kd_terms_from_string);
  f.finish();
}

/// A train or distill run: synthetic data, model, optimiser, and the number
/// of trailing images held out for validation.
struct RunConfig {
  SynthSpec data{};
  ModelSpec model{};
  TrainSpec train{};
  std::size_t validation_images = 0;
  std::optional<KdSpec> kd;
};

/// `seed` fills every seed the file leaves unset.
inline RunConfig parse_run_config(const json& j, std::uint64_t seed, bool with_kd) {
  RunConfig c;
  c.data.seed = c.model.seed = c.train.seed = c.train.label_source.seed = seed;
  Fields f(j, "config");
  if (f.has("data")) read(f.at("data"), f.child("data"), c.data);
  if (f.has("model")) read(f.at("model"), f.child("model"), c.model);
  if (f.has("train")) read(f.at("train"), f.child("train"), c.train);
  c.validation_images = c.data.n_images / 5;
  f.get("validation_images", c.validation_images);
  if (with_kd) {
    KdSpec kd;
    kd.kde.seed = seed;
    if (f.has("kd")) read(f.at("kd"), f.child("kd"), kd);
    c.kd = kd;
  }
  f.finish();
  c.data.check();
  c.train.check();
  if (c.validation_images >= c.data.n_images)
    throw Error(ErrorCode::BadConfig, "validation_images must leave at least one training image");
  return c;
}

inline json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::BadConfig, path + ": " + e.what());
  }
}

}  // namespace dicesm::config

#endif  // DICESM_TOOLS_CONFIG_HPP
