#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "tnet/geometry/interval.hpp"
#include "tnet/model/detection.hpp"

namespace tnet {

// Greedy NMS with EIoU overlap. Order: score descending, then earlier
// start, then lower input index.
inline std::vector<Detection> nms_eiou(const std::vector<Detection>& dets, double threshold,
                                       ScoreField field = ScoreField::refined) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = dets[a].score(field), sb = dets[b].score(field);
    if (sa != sb) return sa > sb;
    if (dets[a].interval.start != dets[b].interval.start) return dets[a].interval.start < dets[b].interval.start;
    return a < b;
  });
  std::vector<Detection> kept;
  std::vector<bool> suppressed(dets.size(), false);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const auto i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(dets[i]);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const auto j = order[oj];
      if (!suppressed[j] && eiou(dets[i].interval, dets[j].interval) > threshold) suppressed[j] = true;
    }
  }
  return kept;
}

}  // namespace tnet
