#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "tnet/core/rng.hpp"
#include "tnet/data/types.hpp"
#include "tnet/loss/losses.hpp"
#include "tnet/model/detection.hpp"

// Direct reference implementations of the losses, NMS and AP, plus random
// instance generators, shared by the unit and acceptance suites.
namespace tnet::oracle {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline double bce(double z, double y) {
  // -y log s - (1 - y) log(1 - s), with log s = -log(1 + e^-z).
  const double log_s = -std::log1p(std::exp(-z));
  const double log_1ms = -std::log1p(std::exp(z));
  return -(y * log_s + (1 - y) * log_1ms);
}

inline double eiou_scalar(double as, double ae, double gs, double ge) {
  const double inter = std::max(0.0, std::min(ae, ge) - std::max(as, gs));
  const double uni = (ae - as) + (ge - gs) - inter;
  const double c = std::max(ae, ge) - std::min(as, gs);
  const double dm = 0.5 * (as + ae) - 0.5 * (gs + ge);
  const double dd = (ae - as) - (ge - gs);
  return inter / uni - (dm * dm) / (c * c) - (dd * dd) / (c * c);
}

inline double sl1(double x) { return std::abs(x) < 1 ? 0.5 * x * x : std::abs(x) - 0.5; }

struct DetInstance {
  std::vector<double> raw, refined, dm, dd, bs, be;
  WindowTargets targets;
};

inline double detection_loss(const DetInstance& in, const LossConfig& cfg) {
  const std::size_t m = in.raw.size();
  const bool has_ref = !in.refined.empty();
  auto cls = [&](std::size_t i, double y) {
    if (!has_ref) return bce(in.raw[i], y);
    if (!cfg.supervise_raw) return bce(in.refined[i], y);
    return 0.5 * (bce(in.raw[i], y) + bce(in.refined[i], y));
  };
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < m; ++i) {
    if (in.targets.labels[i].kind == MatchKind::positive) pos.push_back(i);
    if (in.targets.labels[i].kind == MatchKind::negative) neg.push_back(i);
  }
  const double np = static_cast<double>(std::max<std::size_t>(1, pos.size()));
  const std::size_t keep = std::min<std::size_t>(neg.size(), static_cast<std::size_t>(std::ceil(cfg.hnm_ratio * np)));
  // Hardest first; equal losses resolved by the lower anchor index.
  std::sort(neg.begin(), neg.end(), [&](std::size_t a, std::size_t b) {
    const double la = cls(a, 0), lb = cls(b, 0);
    return la != lb ? la > lb : a < b;
  });
  double sum = 0;
  for (std::size_t k = 0; k < keep; ++k) sum += cls(neg[k], 0);
  for (auto i : pos) {
    const auto& g = in.targets.gts[in.targets.labels[i].gt];
    const auto& o = in.targets.offsets[i];
    sum += cls(i, 1);
    sum += cfg.gamma * (sl1(in.dm[i] - o.dm) + sl1(in.dd[i] - o.dd));
    sum += cfg.gamma * cfg.lambda * (1 - eiou_scalar(in.bs[i], in.be[i], g.start, g.end));
  }
  return sum / np;
}

inline double focal(double p, int y, double a, double g) {
  p = std::min(std::max(p, 1e-7), 1 - 1e-7);
  return y ? -a * std::pow(1 - p, g) * std::log(p) : -(1 - a) * std::pow(p, g) * std::log(1 - p);
}

inline double segmentation_loss(const std::vector<std::vector<double>>& stages, const std::vector<std::uint8_t>& s,
                                int valid, const LossConfig& cfg) {
  double total = 0;
  for (const auto& p : stages) {
    double f = 0, inter = 0, ps = 0, ss = 0;
    for (int j = 0; j < valid; ++j) {
      f += focal(p[j], s[j], cfg.focal_alpha, cfg.focal_gamma);
      inter += p[j] * s[j];
      ps += p[j];
      ss += s[j];
    }
    const double dice = 1 - (2 * inter + cfg.dice_eps) / (ps + ss + cfg.dice_eps);
    total += (f + valid * dice) / valid;
  }
  return total;
}

// Random detection-loss instance with at most `max_anchors` anchors. With
// `ties` the logits come from a small discrete set so mining must break ties.
inline DetInstance random_det_instance(Rng& rng, int max_anchors, bool refined, bool ties) {
  DetInstance in;
  const int m = 1 + static_cast<int>(rng.below(max_anchors));
  const int ngt = 1 + static_cast<int>(rng.below(3));
  for (int j = 0; j < ngt; ++j) {
    const double s = rng.uniform(0, 60);
    in.targets.gts.push_back({s, s + rng.uniform(2, 30)});
  }
  in.targets.labels.resize(m);
  in.targets.offsets.resize(m);
  auto logit = [&] { return ties ? 0.5 * (static_cast<double>(rng.below(7)) - 3.0) : rng.uniform(-4, 4); };
  for (int i = 0; i < m; ++i) {
    const double u = rng.uniform();
    if (u < 0.3) {
      const int g = static_cast<int>(rng.below(ngt));
      in.targets.labels[i] = {MatchKind::positive, g};
      const Interval anchor{rng.uniform(0, 60), 0};
      const Interval a{anchor.start, anchor.start + rng.uniform(2, 30)};
      in.targets.offsets[i] = encode_offsets(in.targets.gts[g], a);
    } else if (u < 0.85) {
      in.targets.labels[i] = {MatchKind::negative, -1};
    } else {
      in.targets.labels[i] = {MatchKind::ignored, -1};
    }
    in.raw.push_back(logit());
    if (refined) in.refined.push_back(logit());
    in.dm.push_back(rng.uniform(-1.5, 1.5));
    in.dd.push_back(rng.uniform(-1.5, 1.5));
    const double s = rng.uniform(0, 60);
    in.bs.push_back(s);
    in.be.push_back(s + rng.uniform(1, 30));
  }
  return in;
}

inline DetectionInputs as_inputs(const DetInstance& in) {
  return {in.raw, in.refined, in.dm, in.dd, in.bs, in.be};
}

// Greedy NMS written out directly: repeatedly take the best remaining
// detection (score, then earlier start, then input index) and drop everything
// overlapping it by more than the threshold. Returns input indices.
inline std::vector<std::size_t> nms(const std::vector<Detection>& dets, double thr) {
  std::vector<std::size_t> remaining(dets.size());
  std::iota(remaining.begin(), remaining.end(), 0);
  std::vector<std::size_t> kept;
  auto better = [&](std::size_t a, std::size_t b) {
    if (dets[a].refined_prob != dets[b].refined_prob) return dets[a].refined_prob > dets[b].refined_prob;
    if (dets[a].interval.start != dets[b].interval.start) return dets[a].interval.start < dets[b].interval.start;
    return a < b;
  };
  while (!remaining.empty()) {
    const auto top = *std::min_element(remaining.begin(), remaining.end(), better);
    kept.push_back(top);
    std::vector<std::size_t> next;
    for (auto i : remaining) {
      const auto& a = dets[top].interval;
      const auto& b = dets[i].interval;
      if (i != top && !(eiou_scalar(a.start, a.end, b.start, b.end) > thr)) next.push_back(i);
    }
    remaining = next;
  }
  return kept;
}

inline double iou_scalar(const Interval& a, const Interval& b) {
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  return inter / ((a.end - a.start) + (b.end - b.start) - inter);
}

// AP from an explicitly built precision-recall table: each true positive adds
// 1/G recall at the best precision achieved at that rank or any later one.
inline double average_precision(const std::vector<Detection>& dets, const std::vector<Annotation>& gts, double thr) {
  if (gts.empty()) return dets.empty() ? 1.0 : 0.0;
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  // Insertion sort keeps equal scores in input order.
  for (std::size_t i = 1; i < order.size(); ++i)
    for (std::size_t j = i; j > 0 && dets[order[j]].refined_prob > dets[order[j - 1]].refined_prob; --j)
      std::swap(order[j], order[j - 1]);
  std::vector<bool> used(gts.size(), false), tp(order.size(), false);
  std::vector<double> precision(order.size());
  int hits = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto& d = dets[order[r]];
    int best = -1;
    double best_iou = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].video_id != d.video_id) continue;
      const double v = iou_scalar(d.interval, gts[g].interval);
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0 && best_iou > thr) {
      used[best] = true;
      tp[r] = true;
      ++hits;
    }
    precision[r] = static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  double ap = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (!tp[r]) continue;
    double best = 0;
    for (std::size_t q = r; q < order.size(); ++q) best = std::max(best, precision[q]);
    ap += best / static_cast<double>(gts.size());
  }
  return ap;
}

// Random AP instance on a coarse grid so that IoU and score ties occur.
inline std::pair<std::vector<Detection>, std::vector<Annotation>> random_ap_instance(Rng& rng, int max_dets,
                                                                                    int max_gts) {
  std::vector<Detection> dets(rng.below(max_dets + 1));
  std::vector<Annotation> gts(rng.below(max_gts + 1));
  const char* videos[] = {"a", "b"};
  for (auto& g : gts) {
    g.video_id = videos[rng.below(2)];
    const double s = static_cast<double>(rng.below(40));
    g.interval = {s, s + 2 + static_cast<double>(rng.below(10))};
  }
  for (auto& d : dets) {
    d.video_id = videos[rng.below(2)];
    if (!gts.empty() && rng.uniform() < 0.6) {
      const auto& g = gts[rng.below(gts.size())];
      d.video_id = g.video_id;
      const double js = static_cast<double>(static_cast<int>(rng.below(5)) - 2);
      d.interval = {g.interval.start + js, g.interval.end + static_cast<double>(static_cast<int>(rng.below(5)) - 2)};
      if (!(d.interval.end > d.interval.start)) d.interval.end = d.interval.start + 1;
    } else {
      const double s = static_cast<double>(rng.below(40));
      d.interval = {s, s + 1 + static_cast<double>(rng.below(10))};
    }
    d.refined_prob = 0.1 * (1 + static_cast<double>(rng.below(9)));
    d.raw_prob = d.refined_prob;
  }
  return {dets, gts};
}

// Random NMS instance on an integer grid with tied scores.
inline std::vector<Detection> random_nms_instance(Rng& rng, int max_dets) {
  std::vector<Detection> dets(rng.below(max_dets + 1));
  for (auto& d : dets) {
    d.interval = {static_cast<double>(rng.below(20)), 0};
    d.interval.end = d.interval.start + 1 + static_cast<double>(rng.below(15));
    d.refined_prob = 0.1 * (1 + static_cast<double>(rng.below(5)));
  }
  return dets;
}

// Random segmentation-loss instance: K stages of length T, binary labels.
struct SegInstance {
  std::vector<std::vector<double>> stages;
  std::vector<std::uint8_t> labels;
  int valid = 0;
};

inline SegInstance random_seg_instance(Rng& rng, int len, int stages) {
  SegInstance in;
  in.valid = 1 + static_cast<int>(rng.below(len));
  in.stages.assign(stages, std::vector<double>(len));
  in.labels.resize(len);
  for (auto& st : in.stages)
    for (auto& p : st) p = rng.below(10) == 0 ? static_cast<double>(rng.below(2)) : rng.uniform();
  for (auto& v : in.labels) v = static_cast<std::uint8_t>(rng.below(2));
  return in;
}

}  // namespace tnet::oracle
