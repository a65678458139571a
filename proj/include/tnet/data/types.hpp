#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tnet/geometry/interval.hpp"

namespace tnet {

// Per-frame features of one video, stored channel-major (row = channel).
struct FeatureSequence {
  std::string video_id;
  std::string session_id;
  int channels = 0;
  int frames = 0;
  std::vector<float> values;

  float& at(int c, int l) { return values[static_cast<std::size_t>(c) * frames + l]; }
  float at(int c, int l) const { return values[static_cast<std::size_t>(c) * frames + l]; }
};

struct Annotation {
  std::string video_id;
  Interval interval;
  bool operator==(const Annotation&) const = default;
};

using FrameLabels = std::vector<std::uint8_t>;

struct WindowSample {
  std::string video_id;
  int start = 0;         // global frame of local frame 0
  int channels = 0;
  int length = 0;        // T
  int valid_length = 0;  // frames backed by real data; the rest is zero padding
  std::vector<float> features;  // channels x length
  FrameLabels frame_labels;
  std::vector<Interval> gt_intervals;  // window-local

  float at(int c, int t) const { return features[static_cast<std::size_t>(c) * length + t]; }
  std::string id() const { return video_id + "@" + std::to_string(start); }
};

}  // namespace tnet
