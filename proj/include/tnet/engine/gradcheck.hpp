#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tnet/data/windows.hpp"
#include "tnet/engine/objective.hpp"

namespace tnet {

struct GradCheckOptions {
  double step = 1e-4;
  // A coordinate whose perturbation crosses a non-smooth point is retried
  // with the step divided by 10 until it falls below this bound.
  double min_step = 1e-5;
  int coords_per_tensor = 25;
  int max_attempts_per_tensor = 100;
  double tolerance = 1e-3;
  double abs_floor = 1e-6;   // denominators below this are treated as this value
  double loss_scale = 1.0;   // 0 gives the zero-loss configuration
  double backward_fault = 1.0;
  int batch = 2;
};

struct TensorCheck {
  std::string name;
  ParamKind kind = ParamKind::weight;
  int checked = 0;
  int kinks = 0;  // sampled coordinates rejected because a perturbation crossed a non-smooth point
  double max_rel_error = 0;
  double max_abs_grad = 0;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;
  // Loss components on the check batch: bce, smooth_l1, eiou, focal, dice, l2.
  std::map<std::string, double> terms;
  double max_rel_error = 0;
  int checked = 0;
  int kinks = 0;
  double tolerance = 0;
  bool passed = false;
};

inline void to_json(nlohmann::json& j, const TensorCheck& t) {
  j = {{"name", t.name},   {"kind", kind_name(t.kind)},       {"checked", t.checked},
       {"kinks", t.kinks}, {"max_rel_error", t.max_rel_error}, {"max_abs_grad", t.max_abs_grad}};
}

inline void to_json(nlohmann::json& j, const GradCheckReport& r) {
  j = {{"passed", r.passed},   {"max_rel_error", r.max_rel_error}, {"tolerance", r.tolerance},
       {"checked", r.checked}, {"kinks", r.kinks},                 {"terms", r.terms},
       {"tensors", r.tensors}};
}

// Random batch for the check: unit-normal features with a few labelled
// intervals. The last window is partially padded.
inline std::vector<WindowSample> gradcheck_batch(const ModelConfig& mc, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<WindowSample> out(n);
  for (int s = 0; s < n; ++s) {
    auto& w = out[s];
    w.video_id = "check" + std::to_string(s);
    w.channels = mc.in_channels;
    w.length = mc.window;
    w.valid_length = (s == n - 1 && n > 1) ? mc.window - mc.window / 8 : mc.window;
    w.features.assign(static_cast<std::size_t>(w.channels) * w.length, 0.0f);
    for (int c = 0; c < w.channels; ++c)
      for (int t = 0; t < w.valid_length; ++t) w.features[static_cast<std::size_t>(c) * w.length + t] = rng.normal();
    const int events = 1 + static_cast<int>(rng.below(2));
    const int span = w.valid_length / events;
    for (int e = 0; e < events; ++e) {
      const double len = rng.uniform(3.0, std::max(4.0, 0.6 * span));
      const double st = e * span + rng.uniform(0.0, span - len);
      w.gt_intervals.push_back({std::floor(st), std::floor(st + len)});
    }
    w.frame_labels = labels_from_intervals(w.gt_intervals, w.length);
  }
  return out;
}

// Anchor lengths spread geometrically over [3, T*0.7].
inline AnchorSet gradcheck_anchors(const ModelConfig& mc) {
  AnchorSet set;
  const int a = mc.anchors_per_position;
  const int k = 4 * a;
  const double lo = 3.0, hi = 0.7 * mc.window;
  for (int l = 0; l < 4; ++l) {
    AnchorLevel lev{ModelConfig::level_strides[l], {}};
    for (int j = 0; j < a; ++j) {
      const int idx = l * a + j;
      lev.lengths.push_back(lo * std::pow(hi / lo, static_cast<double>(idx) / (k - 1)));
    }
    set.levels.push_back(lev);
  }
  return set;
}

namespace detail {

struct CheckContext {
  std::vector<WindowSample> batch;
  std::vector<WindowTargets> targets;
  std::vector<const WindowSample*> bp;
  std::vector<const WindowTargets*> tp;
  std::vector<AnchorRef> refs;
};

inline std::map<std::string, double> loss_terms(TNet<double>& model, const CheckContext& ctx, const LossConfig& lc) {
  Graph<double> g(false);
  const auto& mc = model.config();
  auto out = model.forward(g, batch_tensor<double>(std::span<const WindowSample* const>(ctx.bp)), true);
  auto boxes = decode_boxes(g, out.reg_flat, ctx.refs, mc.max_log_scale);
  std::vector<int> valid;
  for (const auto* w : ctx.bp) valid.push_back(w->valid_length);
  Var<double> refined;
  if (mc.has_segmentation()) refined = model.fusion_logits(g, out.seg[0], boxes, ops::sigmoid(g, out.cls_flat), valid);
  std::map<std::string, double> t{{"bce", 0}, {"smooth_l1", 0}, {"eiou", 0}, {"focal", 0}, {"dice", 0}};
  const int m = static_cast<int>(ctx.refs.size());
  for (std::size_t s = 0; s < ctx.bp.size(); ++s) {
    auto row = [&](const Var<double>& v, int c) {
      std::vector<double> r(m);
      for (int i = 0; i < m; ++i) r[i] = v->val()(c, static_cast<int>(s), i);
      return r;
    };
    const auto rl = row(out.cls_flat, 0), dm = row(out.reg_flat, 0), dd = row(out.reg_flat, 1);
    const auto bs = row(boxes, 0), be = row(boxes, 1);
    const auto fl = refined ? row(refined, 0) : std::vector<double>{};
    const DetectionInputs in{rl, fl, dm, dd, bs, be};
    LossConfig only_cls = lc, no_eiou = lc;
    only_cls.gamma = 0;
    no_eiou.lambda = 0;
    const double c = detection_loss(in, *ctx.tp[s], only_cls).value;
    const double r1 = detection_loss(in, *ctx.tp[s], no_eiou).value;
    const double full = detection_loss(in, *ctx.tp[s], lc).value;
    t["bce"] += c;
    if (lc.gamma > 0) t["smooth_l1"] += (r1 - c) / lc.gamma;
    if (lc.gamma * lc.lambda > 0) t["eiou"] += (full - r1) / (lc.gamma * lc.lambda);
    if (mc.has_segmentation()) {
      const int v = ctx.bp[s]->valid_length;
      for (const auto& st : out.seg) {
        const auto p = st->val().row(0, static_cast<int>(s));
        const auto& y = ctx.bp[s]->frame_labels;
        for (int j = 0; j < v; ++j) t["focal"] += focal_loss(p[j], y[j], lc.focal_alpha, lc.focal_gamma) / v;
        t["dice"] += dice_loss(std::span<const double>(p.data(), v), std::span<const std::uint8_t>(y.data(), v),
                               lc.dice_eps);
      }
    }
  }
  t["l2"] = model.params().l2();
  return t;
}

}  // namespace detail

// Compares backpropagated gradients of the full training loss with central
// finite differences. Coordinates whose perturbation changes the branch
// signature (a ReLU mask, pooling argmax, clamp or mined-negative set) are
// resampled, since the loss is not differentiable across that point.
inline GradCheckReport grad_check(const ModelConfig& model_cfg, const LossConfig& loss_cfg, std::uint64_t seed,
                                  const GradCheckOptions& opt = {}) {
  model_cfg.validate();
  loss_cfg.validate();
  TNet<double> model(model_cfg, derive_seed(seed, 1));
  detail::CheckContext ctx;
  ctx.batch = gradcheck_batch(model_cfg, opt.batch, derive_seed(seed, 2));
  const auto anchors = gradcheck_anchors(model_cfg);
  ctx.refs = window_anchors(anchors, model_cfg.window);
  for (const auto& w : ctx.batch)
    ctx.targets.push_back(make_targets(ctx.refs, w.gt_intervals, w.valid_length, loss_cfg.thresholds()));
  for (std::size_t i = 0; i < ctx.batch.size(); ++i) {
    ctx.bp.push_back(&ctx.batch[i]);
    ctx.tp.push_back(&ctx.targets[i]);
  }
  auto& store = model.params();

  // Loss value and branch signature at the current parameters.
  auto evaluate = [&](std::uint64_t& signature) {
    Graph<double> g(false);
    g.set_track_branches(true);
    auto obj = build_objective(g, model, ctx.bp, ctx.tp, ctx.refs, loss_cfg, true);
    signature = g.signature();
    return opt.loss_scale * (obj.total->val()[0] + loss_cfg.beta * store.l2());
  };

  // Analytic gradient.
  store.zero_grad();
  std::uint64_t base_sig = 0;
  {
    Graph<double> g(true);
    g.set_track_branches(true);
    g.set_backward_fault(opt.backward_fault);
    auto obj = build_objective(g, model, ctx.bp, ctx.tp, ctx.refs, loss_cfg, true);
    base_sig = g.signature();
    g.backward(obj.total, opt.loss_scale);
    apply_l2(store, loss_cfg.beta * opt.loss_scale);
  }
  // Running statistics moved during the forward passes; they do not enter
  // the training-mode loss, so the signature is the only state compared.

  GradCheckReport rep;
  rep.tolerance = opt.tolerance;
  rep.terms = detail::loss_terms(model, ctx, loss_cfg);
  Rng rng(derive_seed(seed, 3));
  for (const auto& p : store.all()) {
    if (!p->trainable()) continue;
    TensorCheck tc{p->name, p->kind};
    std::vector<std::size_t> order(p->value.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order.begin(), order.end());
    int attempts = 0;
    for (std::size_t k = 0; k < order.size() && tc.checked < opt.coords_per_tensor &&
                            attempts < opt.max_attempts_per_tensor;
         ++k, ++attempts) {
      const std::size_t i = order[k];
      const double orig = p->value[i];
      std::optional<double> fd;
      for (double h = opt.step; h >= opt.min_step * (1 - 1e-9); h /= 10) {
        std::uint64_t sp = 0, sm = 0;
        p->value[i] = orig + h;
        const double fp = evaluate(sp);
        p->value[i] = orig - h;
        const double fm = evaluate(sm);
        p->value[i] = orig;
        if (sp == base_sig && sm == base_sig) {
          fd = (fp - fm) / (2 * h);
          break;
        }
      }
      if (!fd) {
        ++tc.kinks;
        continue;
      }
      const double an = p->grad[i];
      const double rel = std::abs(an - *fd) / std::max({std::abs(an), std::abs(*fd), opt.abs_floor});
      tc.max_rel_error = std::max(tc.max_rel_error, rel);
      tc.max_abs_grad = std::max(tc.max_abs_grad, std::abs(an));
      ++tc.checked;
    }
    rep.max_rel_error = std::max(rep.max_rel_error, tc.max_rel_error);
    rep.checked += tc.checked;
    rep.kinks += tc.kinks;
    rep.tensors.push_back(tc);
  }
  rep.passed = rep.checked > 0 && rep.max_rel_error <= opt.tolerance;
  return rep;
}

}  // namespace tnet
