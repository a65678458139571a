#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tnet/core/error.hpp"
#include "tnet/core/rng.hpp"
#include "tnet/data/types.hpp"

namespace tnet {

inline FrameLabels labels_from_intervals(const std::vector<Interval>& intervals, int length) {
  FrameLabels labels(length, 0);
  for (const auto& iv : intervals) {
    const int lo = std::max(0, static_cast<int>(std::floor(iv.start)));
    const int hi = std::min(length, static_cast<int>(std::ceil(iv.end)));
    for (int j = lo; j < hi; ++j)
      if (std::max<double>(j, iv.start) < std::min<double>(j + 1, iv.end)) labels[j] = 1;
  }
  return labels;
}

inline std::vector<int> window_starts(int frames, int window, int stride) {
  if (window < 1 || stride < 1 || stride > window) {
    throw ConfigError("window_starts: need window >= 1 and 1 <= stride <= window");
  }
  std::vector<int> starts;
  if (frames <= window) return {0};
  for (int s = 0; s + window <= frames; s += stride) starts.push_back(s);
  if (starts.back() != frames - window) starts.push_back(frames - window);
  return starts;
}

inline std::vector<WindowSample> make_windows(const FeatureSequence& seq, const std::vector<Annotation>& anns,
                                              int window, int stride) {
  std::vector<WindowSample> out;
  for (int start : window_starts(seq.frames, window, stride)) {
    WindowSample w;
    w.video_id = seq.video_id;
    w.start = start;
    w.channels = seq.channels;
    w.length = window;
    w.valid_length = std::min(window, seq.frames - start);
    w.features.assign(static_cast<std::size_t>(seq.channels) * window, 0.0f);
    for (int c = 0; c < seq.channels; ++c)
      for (int t = 0; t < w.valid_length; ++t) w.features[static_cast<std::size_t>(c) * window + t] = seq.at(c, start + t);
    for (const auto& a : anns) {
      if (a.video_id != seq.video_id) continue;
      const double lo = std::max<double>(a.interval.start, start) - start;
      const double hi = std::min<double>(a.interval.end, start + w.valid_length) - start;
      if (hi - lo >= 1.0) w.gt_intervals.push_back({lo, hi});
    }
    w.frame_labels = labels_from_intervals(w.gt_intervals, window);
    out.push_back(std::move(w));
  }
  return out;
}

inline WindowSample augment_noise(WindowSample sample, double sigma, double prob, std::uint64_t seed) {
  Rng rng(seed);
  if (sigma <= 0 || !(rng.uniform() < prob)) return sample;
  for (auto& v : sample.features) v += static_cast<float>(sigma * rng.normal());
  return sample;
}

}  // namespace tnet
