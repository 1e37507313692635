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

// dicesm: command-line front end. JSON results go to stdout, diagnostics to
// stderr. Exit codes: 0 success, 1 validation error, 2 usage error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "config.hpp"
#include "dicesm/calibration.hpp"
#include "dicesm/core.hpp"
#include "dicesm/losses.hpp"
#include "dicesm/metrics.hpp"
#include "dicesm/properties.hpp"
#include "dicesm/softlabels.hpp"
#include "dicesm/synth.hpp"
#include "dicesm/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dicesm;

namespace {

std::uint64_t default_seed() {
  if (const char* env = std::getenv("DICESM_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      std::cerr << "warning: ignoring non-numeric DICESM_SEED\n";
    }
  }
  return 42;
}

template <typename Parse>
auto pick(const std::string& name, const char* what, Parse parse) {
  const auto v = parse(name);
  if (!v) throw Error(ErrorCode::BadParams, std::string("unknown ") + what + " '" + name + "'");
  return *v;
}

void emit(const json& j) { std::cout << j.dump(2) << "\n"; }

// f32 storage rounds multi-class rows off the 1e-9 simplex; rows within 1e-6
// of unit mass are renormalised on load.
std::vector<double> renormalise(const Dims& dims, std::vector<double> v) {
  const std::size_t C = dims[0], P = dims[1] * dims[2];
  if (C < 2) return v;
  for (std::size_t i = 0; i < P; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += v[c * P + i];
    if (s != 1.0 && std::abs(s - 1.0) < 1e-6)
      for (std::size_t c = 0; c < C; ++c) v[c * P + i] /= s;
  }
  return v;
}

// A file holds one [C,H,W] map or a batch [N,C,H,W].
std::vector<Tensor> load_maps(const std::string& path) {
  const Tensor t = read_tensor(path);
  const Dims& d = t.dims();
  if (d.size() == 3) return {Tensor(d, renormalise(d, {t.data().begin(), t.data().end()}))};
  if (d.size() != 4)
    throw Error(ErrorCode::ShapeMismatch, path + ": expected rank 3 [C,H,W] or rank 4 [N,C,H,W]");
  const Dims one{d[1], d[2], d[3]};
  const std::size_t n = d[1] * d[2] * d[3];
  std::vector<Tensor> out;
  for (std::size_t b = 0; b < d[0]; ++b) {
    const auto s = t.data().subspan(b * n, n);
    out.emplace_back(one, renormalise(one, {s.begin(), s.end()}));
  }
  return out;
}

std::vector<ProbField> load_preds(const std::string& path) {
  std::vector<ProbField> out;
  for (auto& t : load_maps(path)) out.emplace_back(std::move(t));
  return out;
}

std::vector<LabelField> load_labels(const std::string& path) {
  std::vector<LabelField> out;
  for (auto& t : load_maps(path)) {
    const Hardness h = is_hard_valued(t) ? Hardness::hard : Hardness::soft;
    out.emplace_back(std::move(t), h);
  }
  return out;
}

template <typename F>
Tensor stack_maps(const std::vector<F>& maps, bool batched) {
  if (!batched) return maps.front().tensor();
  const Dims& d = maps.front().dims();
  std::vector<double> v;
  for (const auto& m : maps) v.insert(v.end(), m.tensor().data().begin(), m.tensor().data().end());
  return Tensor({maps.size(), d[0], d[1], d[2]}, std::move(v));
}

void require_batch_match(std::size_t a, std::size_t b) {
  if (a != b) throw Error(ErrorCode::ShapeMismatch, "prediction and label files hold different image counts");
}

json model_json(const ModelSpec& m) {
  return {{"kind", std::string(to_string(m.kind))},
          {"feature_set", std::string(to_string(m.feature_set))},
          {"radii", m.radii},
          {"channels", m.channels},
          {"init_scale", m.init_scale},
          {"seed", m.seed}};
}

void write_checkpoint(const fs::path& dir, const Model& model) {
  const auto p = model.params();
  write_tensor((dir / "model.sdt").string(), Tensor({p.size()}, {p.begin(), p.end()}));
  const json manifest = {{"format", "dicesm-checkpoint"},
                         {"params", "model.sdt"},
                         {"n_classes", model.n_classes()},
                         {"param_count", model.param_count()},
                         {"model", model_json(model.spec())}};
  std::ofstream(dir / "model.json") << manifest.dump(2) << "\n";
}

Model load_checkpoint(const std::string& manifest_path) {
  const json j = config::load_json(manifest_path);
  config::Fields f(j, manifest_path);
  std::string format, params;
  std::size_t n_classes = 0, count = 0;
  f.get("format", format);
  f.get("params", params);
  f.get("n_classes", n_classes);
  f.get("param_count", count);
  ModelSpec spec;
  if (f.has("model")) config::read(f.at("model"), f.child("model"), spec);
  f.finish();
  if (format != "dicesm-checkpoint") throw Error(ErrorCode::CheckpointMismatch, manifest_path + ": not a checkpoint manifest");
  const Tensor t = read_tensor((fs::path(manifest_path).parent_path() / params).string());
  if (t.rank() != 1 || t.size() != count)
    throw Error(ErrorCode::CheckpointMismatch, "parameter file does not match its manifest");
  return Model(spec, n_classes, {t.data().begin(), t.data().end()});
}

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void write_trace(const fs::path& path, const std::vector<TraceRow>& trace) {
  std::ofstream out(path);
  out << "epoch,split,dice,bdice,ece,loss\n";
  for (const auto& r : trace)
    out << r.epoch << "," << r.split << "," << fmt(r.dice) << "," << fmt(r.bdice) << "," << fmt(r.ece)
        << "," << fmt(r.loss) << "\n";
}

json trace_summary(const std::vector<TraceRow>& trace) {
  json j = json::object();
  for (auto it = trace.rbegin(); it != trace.rend(); ++it) {
    if (it->split == "val" && !j.contains("val")) j["val"] = {{"epoch", it->epoch}, {"dice", it->dice}, {"bdice", it->bdice}, {"ece", it->ece}};
    if (it->split == "train" && !j.contains("train")) j["train"] = {{"epoch", it->epoch}, {"loss", it->loss}};
  }
  return j;
}

// ---------------------------------------------------------------------------

struct LossArgs {
  std::string loss = "dml1", pred, label, grad_out;
  double alpha = 0.5, beta = 0.5, gamma = 1.0, empty_both = 0.0, w_ce = 0.25, w_dml = 0.75;
  std::string class_mode = "mean_present", batch_mode = "per_image_then_mean", compound_overlap = "dml1";
  bool allow_soft_stl = false, curve = false;
  double curve_label = 0.8, curve_step = 0.01;
  std::vector<double> gammas{1.0, 2.0, 4.0};
};

int run_eval_loss(const LossArgs& a) {
  const auto id = loss_from_string(a.loss);
  if (!id) throw Error(ErrorCode::BadParams, "unknown loss '" + a.loss + "'");
  LossParams params;
  params.tversky = {a.alpha, a.beta, a.gamma};
  params.allow_soft_stl = a.allow_soft_stl;
  params.w_ce = a.w_ce;
  params.w_dml = a.w_dml;
  const auto overlap = loss_from_string(a.compound_overlap);
  if (!overlap) throw Error(ErrorCode::BadParams, "unknown compound overlap '" + a.compound_overlap + "'");
  params.compound_overlap = *overlap;

  if (a.curve) {
    // Loss against a scalar prediction for one soft label, one column per gamma.
    if (!(a.curve_step > 0.0 && a.curve_step <= 1.0)) throw Error(ErrorCode::BadParams, "curve step must lie in (0,1]");
    std::cout << "x";
    for (double g : a.gammas) std::cout << ",gamma_" << fmt(g);
    std::cout << "\n";
    const auto n = static_cast<std::size_t>(std::llround(1.0 / a.curve_step));
    for (std::size_t i = 0; i <= n; ++i) {
      const double x = std::min(1.0, static_cast<double>(i) * a.curve_step);
      std::cout << fmt(x);
      for (double g : a.gammas) {
        LossParams p = params;
        p.tversky.gamma = g;
        p.allow_soft_stl = true;
        std::cout << "," << fmt(evaluate(*id, binary_prob({x}), binary_label({a.curve_label}), p).value);
      }
      std::cout << "\n";
    }
    return 0;
  }

  if (a.pred.empty() || a.label.empty()) throw Error(ErrorCode::BadParams, "--pred and --label are required");
  ReductionSpec red;
  red.empty_both_value = a.empty_both;
  red.class_mode = pick(a.class_mode, "class mode", config::class_mode_from_string);
  red.batch_mode = pick(a.batch_mode, "batch mode", config::batch_mode_from_string);

  const Tensor raw_pred = read_tensor(a.pred);
  const auto xs = load_preds(a.pred);
  const auto ys = load_labels(a.label);
  require_batch_match(xs.size(), ys.size());
  const BatchGrad g = evaluate_batch(*id, xs, ys, params, red);
  if (!a.grad_out.empty()) {
    std::vector<double> flat;
    for (const auto& t : g.grads) flat.insert(flat.end(), t.data().begin(), t.data().end());
    write_tensor(a.grad_out, Tensor(raw_pred.dims(), std::move(flat)));
  }
  emit({{"loss", a.loss}, {"value", g.value}, {"n_images", xs.size()}});
  return 0;
}

struct EvalArgs {
  std::string pred, label, metric = "dice";
  std::vector<double> thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::size_t bins = 15;
  double empty_both_dice = 1.0;
};

int run_eval(const EvalArgs& a) {
  const auto xs = load_preds(a.pred);
  const auto ys = load_labels(a.label);
  require_batch_match(xs.size(), ys.size());
  for (std::size_t b = 0; b < xs.size(); ++b) require_same_dims(xs[b], ys[b]);
  const auto classes = foreground_classes(xs[0].channels());
  std::vector<double> per_class(classes.size(), 0.0);
  const double n = static_cast<double>(xs.size());
  if (a.metric == "dice") {
    for (std::size_t b = 0; b < xs.size(); ++b) {
      const LabelField hx = binarize(xs[b]);
      for (std::size_t k = 0; k < classes.size(); ++k)
        per_class[k] += hard_dice(hx, ys[b], classes[k], a.empty_both_dice) / n;
    }
  } else if (a.metric == "bdice") {
    BDiceSpec spec;
    spec.thresholds = a.thresholds;
    spec.empty_both_dice = a.empty_both_dice;
    spec.check();
    for (std::size_t b = 0; b < xs.size(); ++b) {
      for (std::size_t k = 0; k < classes.size(); ++k) {
        // One class at a time through the single-channel path.
        const auto xc = xs[b].channel(classes[k]);
        const auto yc = ys[b].channel(classes[k]);
        const Dims d{1, xs[b].height(), xs[b].width()};
        per_class[k] += bdice(ProbField(Tensor(d, {xc.begin(), xc.end()})),
                              LabelField(Tensor(d, {yc.begin(), yc.end()}), Hardness::soft), spec) / n;
      }
    }
  } else if (a.metric == "ece") {
    for (std::size_t k = 0; k < classes.size(); ++k) {
      EceAccumulator acc(a.bins);
      for (std::size_t b = 0; b < xs.size(); ++b) {
        if (!ys[b].is_hard()) throw Error(ErrorCode::SoftInput, "ECE needs hard labels");
        const auto xc = xs[b].channel(classes[k]);
        const auto yc = ys[b].channel(classes[k]);
        for (std::size_t i = 0; i < xc.size(); ++i) acc.add(xc[i], yc[i]);
      }
      per_class[k] = acc.value();
    }
  } else {
    throw Error(ErrorCode::BadParams, "unknown metric '" + a.metric + "'");
  }
  double value = 0.0;
  for (double v : per_class) value += v / static_cast<double>(per_class.size());
  if (a.metric == "ece") {
    // Pooled over foreground classes.
    EceAccumulator acc(a.bins);
    for (std::size_t b = 0; b < xs.size(); ++b) acc.add(xs[b], ys[b]);
    value = acc.value();
  }
  emit({{"metric", a.metric}, {"value", value}, {"per_class", per_class}, {"n_images", xs.size()}});
  return 0;
}

struct SoftArgs {
  std::vector<std::string> raters;
  std::string strategy = "uniform_avg", weights = "per_image", tie_break = "background", out;
  double epsilon = 0.1;
  std::uint64_t seed = 42;
};

int run_make_soft_labels(const SoftArgs& a) {
  SoftLabelSpec spec;
  const auto st = strategy_from_string(a.strategy);
  if (!st) throw Error(ErrorCode::BadParams, "unknown strategy '" + a.strategy + "'");
  spec.strategy = *st;
  spec.epsilon = a.epsilon;
  spec.seed = a.seed;
  spec.weights = pick(a.weights, "weight scope", config::weight_scope_from_string);
  spec.tie_break = pick(a.tie_break, "tie break", config::tie_break_from_string);
  if (a.raters.empty()) throw Error(ErrorCode::EmptyStack, "no rater files given");

  std::vector<std::vector<LabelField>> per_rater;
  bool batched = false;
  for (const auto& path : a.raters) {
    batched = batched || read_tensor(path).rank() == 4;
    per_rater.push_back(load_labels(path));
  }
  const std::size_t n = per_rater[0].size();
  for (const auto& r : per_rater) require_batch_match(r.size(), n);
  std::vector<RaterStack> stacks;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<LabelField> k;
    for (const auto& r : per_rater) k.push_back(r[i]);
    stacks.emplace_back(std::move(k));
  }
  const auto targets = make_targets(stacks, spec);
  bool hard = true;
  for (const auto& t : targets) hard = hard && t.is_hard();
  if (!a.out.empty()) write_tensor(a.out, stack_maps(targets, batched));
  emit({{"strategy", a.strategy}, {"n_images", n}, {"n_raters", a.raters.size()}, {"hard", hard}, {"out", a.out}});
  return 0;
}

struct CalibArgs {
  std::string pred, label, out, scope = "boundary";
  double bandwidth = 1e-3;
  std::size_t n_key = 256, boundary_radius = 1, bins = 15;
  std::uint64_t seed = 42;
  bool reweight = false;
  std::vector<double> sweep;
};

int run_calibrate(const CalibArgs& a) {
  const auto xs = load_preds(a.pred);
  const auto ys = load_labels(a.label);
  require_batch_match(xs.size(), ys.size());
  for (const auto& y : ys)
    if (!y.is_hard()) throw Error(ErrorCode::SoftInput, "calibration keys need hard labels");
  KdeSpec spec;
  spec.n_key = a.n_key;
  spec.seed = a.seed;
  spec.boundary_radius = a.boundary_radius;
  spec.reweight_strata = a.reweight;
  if (a.scope == "all") spec.pixel_scope = PixelScope::all;
  else if (a.scope != "boundary") throw Error(ErrorCode::BadParams, "scope must be all or boundary");

  auto ece_of = [&](const std::vector<ProbField>& ps) {
    EceAccumulator acc(a.bins);
    for (std::size_t b = 0; b < ps.size(); ++b) acc.add(ps[b], ys[b]);
    return acc.value();
  };
  const double before = ece_of(xs);
  auto one = [&](double h) {
    KdeSpec s = spec;
    s.bandwidth = h;
    std::uint64_t evals = 0;
    auto out = calibrate_batch(xs, ys, s, &evals);
    return std::make_pair(std::move(out), evals);
  };
  if (!a.sweep.empty()) {
    json rows = json::array();
    for (double h : a.sweep) {
      auto [out, evals] = one(h);
      rows.push_back({{"bandwidth", h}, {"ece_after", ece_of(out)}, {"kernel_evaluations", evals}});
    }
    emit({{"ece_before", before}, {"sweep", rows}, {"n_key", a.n_key}, {"scope", a.scope}});
    return 0;
  }
  auto [out, evals] = one(a.bandwidth);
  if (!a.out.empty()) write_tensor(a.out, stack_maps(out, read_tensor(a.pred).rank() == 4));
  emit({{"bandwidth", a.bandwidth}, {"n_key", a.n_key}, {"scope", a.scope}, {"ece_before", before},
        {"ece_after", ece_of(out)}, {"kernel_evaluations", evals}, {"out", a.out}});
  return 0;
}

struct RunArgs {
  std::string config, out_dir, teacher;
  std::uint64_t seed = 42;
};

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split(const config::RunConfig& c) {
  std::vector<std::size_t> tr, va;
  const std::size_t n_train = c.data.n_images - c.validation_images;
  for (std::size_t i = 0; i < c.data.n_images; ++i) (i < n_train ? tr : va).push_back(i);
  return {tr, va};
}

int run_train(const RunArgs& a, bool kd_mode) {
  const config::RunConfig c = config::parse_run_config(config::load_json(a.config), a.seed, kd_mode);
  const Dataset ds = generate_synthetic(c.data);
  const PreparedData data(ds, c.model);
  const auto [tr, va] = split(c);
  fs::create_directories(a.out_dir);
  TrainResult r;
  json extra = json::object();
  if (kd_mode) {
    KdSpec kd = *c.kd;
    if (!a.teacher.empty()) kd.teacher_checkpoint = a.teacher;
    if (kd.teacher_checkpoint.empty()) throw Error(ErrorCode::BadConfig, "distill needs kd.teacher_checkpoint or --teacher");
    const Model teacher = load_checkpoint(kd.teacher_checkpoint);
    // The teacher sees the student's inputs, so both must share a feature set.
    if (teacher.spec().feature_set != c.model.feature_set || teacher.spec().radii != c.model.radii)
      throw Error(ErrorCode::CheckpointMismatch, "teacher and student use different input features");
    std::uint64_t evals = 0;
    r = distill(data, tr, va, teacher, c.model, c.train, kd, &evals);
    extra["kernel_evaluations"] = evals;
  } else {
    r = train(data, tr, va, c.model, c.train);
  }
  write_trace(fs::path(a.out_dir) / "trace.csv", r.trace);
  write_checkpoint(a.out_dir, r.model);
  json out = {{"command", kd_mode ? "distill" : "train"},
              {"train_images", tr.size()},
              {"validation_images", va.size()},
              {"param_count", r.model.param_count()},
              {"checkpoint", (fs::path(a.out_dir) / "model.json").string()},
              {"trace", (fs::path(a.out_dir) / "trace.csv").string()},
              {"final", trace_summary(r.trace)}};
  out.update(extra);
  emit(out);
  return 0;
}

struct PropArgs {
  std::uint64_t trials = 10000, seed = 42;
  std::string mutate = "none";
};

int run_check_properties(const PropArgs& a) {
  Mutation m = Mutation::none;
  if (a.mutate == "sign") m = Mutation::sign;
  else if (a.mutate != "none") throw Error(ErrorCode::BadParams, "mutation must be none or sign");
  const PropertyReport r = check_properties(a.trials, a.seed, m);
  json props = json::array();
  for (const auto& p : r.properties)
    props.push_back({{"name", p.name}, {"checked", p.checked}, {"passed", p.passed},
                     {"max_violation", p.max_violation}, {"tolerance", p.tolerance}, {"ok", p.ok()}});
  emit({{"trials", r.trials}, {"seed", r.seed}, {"mutation", a.mutate},
        {"witness_ratio", {{"dml1", r.witness_ratio_dml1}, {"dml2", r.witness_ratio_dml2}}},
        {"properties", props}, {"all_passed", r.all_passed()}});
  return r.all_passed() ? 0 : 1;
}

struct GenArgs {
  std::string out_dir;
  SynthSpec spec;
};

int run_gen_data(GenArgs a) {
  a.spec.check();
  const Dataset ds = generate_synthetic(a.spec);
  fs::create_directories(a.out_dir);
  const fs::path dir(a.out_dir);
  const std::size_t N = ds.size(), C = ds.n_classes, H = a.spec.height, W = a.spec.width;
  std::vector<double> images, clean;
  for (const auto& s : ds.samples) {
    images.insert(images.end(), s.image.data().begin(), s.image.data().end());
    clean.insert(clean.end(), s.clean.tensor().data().begin(), s.clean.tensor().data().end());
  }
  write_tensor((dir / "images.sdt").string(), Tensor({N, 1, H, W}, std::move(images)));
  write_tensor((dir / "clean.sdt").string(), Tensor({N, C, H, W}, std::move(clean)));
  json raters = json::array();
  for (std::size_t k = 0; k < a.spec.k_raters; ++k) {
    std::vector<double> v;
    for (const auto& s : ds.samples) v.insert(v.end(), s.raters[k].tensor().data().begin(), s.raters[k].tensor().data().end());
    const std::string name = "rater_" + std::to_string(k) + ".sdt";
    write_tensor((dir / name).string(), Tensor({N, C, H, W}, std::move(v)));
    raters.push_back(name);
  }
  emit({{"n_images", N}, {"n_classes", C}, {"height", H}, {"width", W}, {"seed", a.spec.seed},
        {"images", "images.sdt"}, {"clean", "clean.sdt"}, {"raters", raters}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dice semimetric losses, soft labels, calibration and training harness"};
  app.require_subcommand(1);
  const std::uint64_t seed0 = default_seed();

  LossArgs la;
  auto* el = app.add_subcommand("eval-loss", "Evaluate a loss on prediction/label files");
  el->add_option("--loss", la.loss, "sdl|sjl|jml1|jml2|dml1|dml2|stl|ctl|cftl|ce|compound")->capture_default_str();
  el->add_option("--pred", la.pred, "Prediction file (SDT1)");
  el->add_option("--label", la.label, "Label file (SDT1)");
  el->add_option("--alpha", la.alpha, "Tversky alpha")->capture_default_str();
  el->add_option("--beta", la.beta, "Tversky beta")->capture_default_str();
  el->add_option("--gamma", la.gamma, "Focal exponent")->capture_default_str();
  el->add_option("--class-mode", la.class_mode, "mean_present|mean_all")->capture_default_str();
  el->add_option("--batch-mode", la.batch_mode, "per_image_then_mean|pooled")->capture_default_str();
  el->add_option("--empty-both-value", la.empty_both, "Loss when both maps are empty")->capture_default_str();
  el->add_option("--w-ce", la.w_ce, "Compound CE weight")->capture_default_str();
  el->add_option("--w-dml", la.w_dml, "Compound overlap weight")->capture_default_str();
  el->add_option("--compound-overlap", la.compound_overlap, "Overlap term of the compound loss")->capture_default_str();
  el->add_flag("--allow-soft-stl", la.allow_soft_stl, "Evaluate STL on soft labels anyway");
  el->add_option("--grad-out", la.grad_out, "Write dL/dpred to this file");
  el->add_flag("--curve", la.curve, "Print a CSV of the loss against a scalar prediction");
  el->add_option("--curve-label", la.curve_label, "Soft label of the curve")->capture_default_str();
  el->add_option("--curve-step", la.curve_step, "Grid step of the curve")->capture_default_str();
  el->add_option("--gammas", la.gammas, "Focal exponents, one curve column each")->delimiter(',')->capture_default_str();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate a metric");
  ev->add_option("--pred", ea.pred, "Prediction file")->required();
  ev->add_option("--label", ea.label, "Label file")->required();
  ev->add_option("--metric", ea.metric, "dice|bdice|ece")->capture_default_str();
  ev->add_option("--thresholds", ea.thresholds, "BDice thresholds")->delimiter(',')->capture_default_str();
  ev->add_option("--bins", ea.bins, "ECE bins")->capture_default_str();
  ev->add_option("--empty-both-dice", ea.empty_both_dice, "Dice when both masks are empty")->capture_default_str();

  SoftArgs sa;
  sa.seed = seed0;
  auto* ms = app.add_subcommand("make-soft-labels", "Fuse rater annotations into training targets");
  ms->add_option("--raters", sa.raters, "One file per rater")->required();
  ms->add_option("--strategy", sa.strategy, "majority|random_rater|uniform_avg|weighted_avg|label_smoothing")->capture_default_str();
  ms->add_option("--epsilon", sa.epsilon, "Label-smoothing epsilon")->capture_default_str();
  ms->add_option("--seed", sa.seed, "Seed (random_rater)")->capture_default_str();
  ms->add_option("--weights", sa.weights, "per_image|per_dataset")->capture_default_str();
  ms->add_option("--tie-break", sa.tie_break, "background|lowest_class")->capture_default_str();
  ms->add_option("--out", sa.out, "Output file");

  CalibArgs ca;
  ca.seed = seed0;
  auto* cb = app.add_subcommand("calibrate", "KDE recalibration of a prediction");
  cb->add_option("--pred", ca.pred, "Prediction file")->required();
  cb->add_option("--label", ca.label, "Hard label file")->required();
  cb->add_option("--bandwidth", ca.bandwidth, "Kernel bandwidth h")->capture_default_str();
  cb->add_option("--n-key", ca.n_key, "Key points per batch")->capture_default_str();
  cb->add_option("--scope", ca.scope, "all|boundary")->capture_default_str();
  cb->add_option("--boundary-radius", ca.boundary_radius, "Chebyshev radius of the boundary band")->capture_default_str();
  cb->add_option("--seed", ca.seed, "Key-point sampling seed")->capture_default_str();
  cb->add_flag("--reweight-strata", ca.reweight, "Weight keys by their class's inverse sampling rate");
  cb->add_option("--bins", ca.bins, "ECE bins for the report")->capture_default_str();
  cb->add_option("--sweep", ca.sweep, "Bandwidth grid, e.g. 5e-5,1e-4,5e-4,1e-3,5e-3,1e-2")->delimiter(',');
  cb->add_option("--out", ca.out, "Output file");

  RunArgs ta;
  ta.seed = seed0;
  auto* tr = app.add_subcommand("train", "Train a model on synthetic multi-rater data");
  tr->add_option("--config", ta.config, "JSON config")->required();
  tr->add_option("--out-dir", ta.out_dir, "Output directory")->required();
  tr->add_option("--seed", ta.seed, "Default for seeds the config leaves unset")->capture_default_str();

  RunArgs da;
  da.seed = seed0;
  auto* di = app.add_subcommand("distill", "Distil a student from a teacher checkpoint");
  di->add_option("--config", da.config, "JSON config")->required();
  di->add_option("--out-dir", da.out_dir, "Output directory")->required();
  di->add_option("--teacher", da.teacher, "Teacher manifest (overrides kd.teacher_checkpoint)");
  di->add_option("--seed", da.seed, "Default for seeds the config leaves unset")->capture_default_str();

  PropArgs pa;
  pa.seed = seed0;
  auto* cp = app.add_subcommand("check-properties", "Run the randomised invariant suite");
  cp->add_option("--trials", pa.trials, "Random cases per property")->capture_default_str();
  cp->add_option("--seed", pa.seed, "Seed")->capture_default_str();
  cp->add_option("--mutate", pa.mutate, "none|sign (sign: sign(0) = 1)")->capture_default_str();

  GenArgs ga;
  ga.spec.seed = seed0;
  auto* gd = app.add_subcommand("gen-data", "Write a synthetic multi-rater dataset");
  gd->add_option("--out-dir", ga.out_dir, "Output directory")->required();
  gd->add_option("--n-images", ga.spec.n_images, "Images")->capture_default_str();
  gd->add_option("--height", ga.spec.height, "Height")->capture_default_str();
  gd->add_option("--width", ga.spec.width, "Width")->capture_default_str();
  gd->add_option("--classes", ga.spec.n_classes, "1 (binary channel) or 2 (one-hot)")->capture_default_str();
  gd->add_option("--raters", ga.spec.k_raters, "Raters per image")->capture_default_str();
  gd->add_option("--min-radius", ga.spec.rater_noise.min_radius, "Smallest rater dilation radius")->capture_default_str();
  gd->add_option("--max-radius", ga.spec.rater_noise.max_radius, "Largest rater dilation radius")->capture_default_str();
  gd->add_option("--flip-prob", ga.spec.rater_noise.boundary_flip_prob, "Border flip probability")->capture_default_str();
  gd->add_option("--image-noise", ga.spec.image_noise, "Image noise std. dev.")->capture_default_str();
  gd->add_option("--edge-softness", ga.spec.edge_softness, "Blob edge ramp width")->capture_default_str();
  gd->add_option("--seed", ga.spec.seed, "Seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*el) return run_eval_loss(la);
    if (*ev) return run_eval(ea);
    if (*ms) return run_make_soft_labels(sa);
    if (*cb) return run_calibrate(ca);
    if (*tr) return run_train(ta, false);
    if (*di) return run_train(da, true);
    if (*cp) return run_check_properties(pa);
    if (*gd) return run_gen_data(ga);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
