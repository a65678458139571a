#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "tnet/data/types.hpp"
#include "tnet/model/detection.hpp"

namespace tnet {

struct PrPoint {
  double score = 0;
  double precision = 0;
  double recall = 0;
  bool true_positive = false;
};

// Ranks detections by score (descending; ties keep input order) and greedily
// matches each to the unmatched ground truth of the same video with the
// highest IoU, counting a true positive when that IoU exceeds `iou_thresh`.
inline std::vector<PrPoint> pr_curve(const std::vector<Detection>& dets, const std::vector<Annotation>& gts,
                                     double iou_thresh, ScoreField field = ScoreField::refined) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score(field) > dets[b].score(field); });
  std::map<std::string, std::vector<std::size_t>> by_video;
  for (std::size_t g = 0; g < gts.size(); ++g) by_video[gts[g].video_id].push_back(g);
  std::vector<bool> matched(gts.size(), false);
  std::vector<PrPoint> curve;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto& d = dets[order[r]];
    double best = -1;
    std::size_t best_g = gts.size();
    if (auto it = by_video.find(d.video_id); it != by_video.end()) {
      for (auto g : it->second) {
        if (matched[g]) continue;
        const double v = iou(d.interval, gts[g].interval);
        if (v > best) {
          best = v;
          best_g = g;
        }
      }
    }
    PrPoint p;
    p.score = d.score(field);
    if (best_g < gts.size() && best > iou_thresh) {
      matched[best_g] = true;
      p.true_positive = true;
      ++tp;
    }
    p.precision = static_cast<double>(tp) / static_cast<double>(r + 1);
    p.recall = gts.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(gts.size());
    curve.push_back(p);
  }
  return curve;
}

// Area under the all-point interpolated precision-recall curve.
inline double average_precision(const std::vector<Detection>& dets, const std::vector<Annotation>& gts,
                                double iou_thresh, ScoreField field = ScoreField::refined) {
  if (gts.empty()) return dets.empty() ? 1.0 : 0.0;
  const auto curve = pr_curve(dets, gts, iou_thresh, field);
  std::vector<double> envelope(curve.size());
  double run = 0;
  for (std::size_t i = curve.size(); i-- > 0;) {
    run = std::max(run, curve[i].precision);
    envelope[i] = run;
  }
  double ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    ap += (curve[i].recall - prev_recall) * envelope[i];
    prev_recall = curve[i].recall;
  }
  return ap;
}

}  // namespace tnet
