#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "json.hpp"
#include "tnet/core/error.hpp"
#include "tnet/geometry/anchors.hpp"
#include "tnet/geometry/interval.hpp"

namespace tnet {

struct LossConfig {
  double gamma = 2.0;     // regression weight
  double lambda = 1.5;    // EIoU share of regression
  double alpha = 3.0;     // segmentation weight
  double beta = 0.001;    // L2 weight
  double hnm_ratio = 3.0; // negatives kept per positive
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double dice_eps = 1e-6;
  bool supervise_raw = true;
  double match_positive = 0.3;
  double match_negative = -0.4;

  void validate() const {
    for (double w : {gamma, lambda, alpha, beta, focal_alpha, focal_gamma, dice_eps})
      if (!(w >= 0)) throw ConfigError("loss weights must be >= 0");
    if (!(hnm_ratio >= 1)) throw ConfigError("loss.hnm_ratio must be >= 1");
    if (!(match_negative <= match_positive)) throw ConfigError("loss.match_negative must not exceed match_positive");
  }
  MatchThresholds thresholds() const { return {match_positive, match_negative}; }
  bool operator==(const LossConfig&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossConfig, gamma, lambda, alpha, beta, hnm_ratio, focal_alpha,
                                                focal_gamma, dice_eps, supervise_raw, match_positive, match_negative)

// ---------------------------------------------------------------------------
// Elementary terms, each with its derivative.
// ---------------------------------------------------------------------------

inline double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

inline double smooth_l1_grad(double x) {
  if (x >= 1.0) return 1.0;
  if (x <= -1.0) return -1.0;
  return x;
}

// Binary cross-entropy on a logit, numerically stable.
inline double bce_logit(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

inline double bce_logit_grad(double z, double y) { return 1.0 / (1.0 + std::exp(-z)) - y; }

inline double bce_prob(double p, double y) {
  p = std::clamp(p, 1e-7, 1 - 1e-7);
  return -(y * std::log(p) + (1 - y) * std::log(1 - p));
}

inline constexpr double kProbClamp = 1e-7;

inline double focal_loss(double p, int y, double a, double g) {
  p = std::clamp(p, kProbClamp, 1 - kProbClamp);
  if (y == 1) return -a * std::pow(1 - p, g) * std::log(p);
  return -(1 - a) * std::pow(p, g) * std::log(1 - p);
}

inline double focal_loss_grad(double p, int y, double a, double g) {
  if (p <= kProbClamp || p >= 1 - kProbClamp) return 0.0;
  if (y == 1) {
    const double q = 1 - p;
    const double dpow = g == 0 ? 0.0 : -g * std::pow(q, g - 1);
    return -a * (dpow * std::log(p) + std::pow(q, g) / p);
  }
  const double dpow = g == 0 ? 0.0 : g * std::pow(p, g - 1);
  return -(1 - a) * (dpow * std::log(1 - p) - std::pow(p, g) / (1 - p));
}

inline double eiou_loss(const Interval& pred, const Interval& gt) { return 1.0 - eiou(pred, gt); }

template <typename P, typename L>
double dice_loss(std::span<const P> p, std::span<const L> s, double eps) {
  if (p.size() != s.size()) throw ShapeError("dice_loss: length mismatch");
  double inter = 0, sp = 0, ss = 0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    inter += double(p[j]) * double(s[j]);
    sp += p[j];
    ss += s[j];
  }
  return 1.0 - (2 * inter + eps) / (sp + ss + eps);
}

inline double dice_loss(const std::vector<double>& p, const std::vector<double>& s, double eps) {
  return dice_loss(std::span<const double>(p), std::span<const double>(s), eps);
}

// ---------------------------------------------------------------------------
// Per-window detection loss
// ---------------------------------------------------------------------------

struct WindowTargets {
  std::vector<MatchLabel> labels;  // per anchor
  std::vector<Interval> gts;
  std::vector<Offsets> offsets;    // encoded gt offsets, valid for positives
};

inline WindowTargets make_targets(const std::vector<AnchorRef>& anchors, const std::vector<Interval>& gts,
                                  int valid_length, const MatchThresholds& th) {
  WindowTargets t;
  t.gts = gts;
  std::vector<Interval> ivs(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) ivs[i] = anchors[i].interval;
  t.labels = match_anchors(ivs, gts, th);
  t.offsets.resize(anchors.size());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    auto& lab = t.labels[i];
    if (lab.kind == MatchKind::positive) {
      t.offsets[i] = encode_offsets(gts[lab.gt], ivs[i]);
    } else if (ivs[i].center() >= valid_length) {
      lab = {MatchKind::ignored, -1};  // anchored in zero padding
    }
  }
  return t;
}

// Flat per-window head outputs. `refined` may be empty (detection-only model).
struct DetectionInputs {
  std::span<const double> raw_logit;
  std::span<const double> refined_logit;
  std::span<const double> dm, dd;
  std::span<const double> box_start, box_end;
};

struct DetectionLossResult {
  double value = 0;
  std::vector<double> d_raw, d_refined, d_dm, d_dd, d_start, d_end;
  std::vector<std::size_t> mined;  // selected negatives, sorted by anchor index
  std::size_t positives = 0;
};

inline DetectionLossResult detection_loss(const DetectionInputs& in, const WindowTargets& t, const LossConfig& cfg) {
  const std::size_t m = in.raw_logit.size();
  const bool has_refined = !in.refined_logit.empty();
  DetectionLossResult r;
  r.d_raw.assign(m, 0);
  r.d_refined.assign(has_refined ? m : 0, 0);
  r.d_dm.assign(m, 0);
  r.d_dd.assign(m, 0);
  r.d_start.assign(m, 0);
  r.d_end.assign(m, 0);

  // Classification term and its logit derivatives for target y.
  const double w_raw = has_refined ? (cfg.supervise_raw ? 0.5 : 0.0) : 1.0;
  const double w_ref = has_refined ? (cfg.supervise_raw ? 0.5 : 1.0) : 0.0;
  auto cls = [&](std::size_t i, double y) {
    double v = 0;
    if (w_raw > 0) v += w_raw * bce_logit(in.raw_logit[i], y);
    if (w_ref > 0) v += w_ref * bce_logit(in.refined_logit[i], y);
    return v;
  };

  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < m; ++i) {
    if (t.labels[i].kind == MatchKind::positive) pos.push_back(i);
    if (t.labels[i].kind == MatchKind::negative) neg.push_back(i);
  }
  r.positives = pos.size();
  std::vector<double> neg_loss(m, 0);
  for (auto i : neg) neg_loss[i] = cls(i, 0.0);
  const std::size_t keep = std::min(neg.size(), static_cast<std::size_t>(std::ceil(
                                                      cfg.hnm_ratio * static_cast<double>(std::max<std::size_t>(pos.size(), 1)))));
  std::stable_sort(neg.begin(), neg.end(), [&](std::size_t a, std::size_t b) { return neg_loss[a] > neg_loss[b]; });
  neg.resize(keep);
  std::sort(neg.begin(), neg.end());
  r.mined = neg;

  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(pos.size(), 1));
  auto add_cls = [&](std::size_t i, double y) {
    r.value += norm * cls(i, y);
    if (w_raw > 0) r.d_raw[i] += norm * w_raw * bce_logit_grad(in.raw_logit[i], y);
    if (w_ref > 0) r.d_refined[i] += norm * w_ref * bce_logit_grad(in.refined_logit[i], y);
  };
  for (auto i : neg) add_cls(i, 0.0);
  for (auto i : pos) {
    add_cls(i, 1.0);
    const auto& off = t.offsets[i];
    const double xm = in.dm[i] - off.dm, xd = in.dd[i] - off.dd;
    r.value += norm * cfg.gamma * (smooth_l1(xm) + smooth_l1(xd));
    r.d_dm[i] += norm * cfg.gamma * smooth_l1_grad(xm);
    r.d_dd[i] += norm * cfg.gamma * smooth_l1_grad(xd);
    const auto eg = eiou_with_grad({in.box_start[i], in.box_end[i]}, t.gts[t.labels[i].gt]);
    r.value += norm * cfg.gamma * cfg.lambda * (1.0 - eg.value);
    r.d_start[i] -= norm * cfg.gamma * cfg.lambda * eg.d_start;
    r.d_end[i] -= norm * cfg.gamma * cfg.lambda * eg.d_end;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Per-window segmentation loss over K deeply supervised stages
// ---------------------------------------------------------------------------

struct SegmentationLossResult {
  double value = 0;
  std::vector<std::vector<double>> d_probs;  // per stage, per frame
};

// Frames at or beyond `valid` are excluded.
inline SegmentationLossResult segmentation_loss(const std::vector<std::span<const double>>& probs,
                                                std::span<const std::uint8_t> labels, int valid,
                                                const LossConfig& cfg) {
  SegmentationLossResult r;
  const double inv_t = 1.0 / valid;
  for (const auto& p : probs) {
    if (static_cast<int>(p.size()) < valid || static_cast<int>(labels.size()) < valid)
      throw ShapeError("segmentation_loss: sequence shorter than valid length");
    std::vector<double> d(p.size(), 0.0);
    double inter = 0, sp = 0, ss = 0;
    for (int j = 0; j < valid; ++j) {
      const int y = labels[j];
      r.value += inv_t * focal_loss(p[j], y, cfg.focal_alpha, cfg.focal_gamma);
      d[j] += inv_t * focal_loss_grad(p[j], y, cfg.focal_alpha, cfg.focal_gamma);
      inter += p[j] * y;
      sp += p[j];
      ss += y;
    }
    const double den = sp + ss + cfg.dice_eps;
    const double num = 2 * inter + cfg.dice_eps;
    r.value += 1.0 - num / den;
    for (int j = 0; j < valid; ++j) d[j] += -(2.0 * labels[j] * den - num) / (den * den);
    r.d_probs.push_back(std::move(d));
  }
  return r;
}

// L_D + alpha * L_S + beta * (sum of squared regularized weights).
inline double total_loss(double det, double seg, double l2_sum, const LossConfig& cfg) {
  return det + cfg.alpha * seg + cfg.beta * l2_sum;
}

}  // namespace tnet
