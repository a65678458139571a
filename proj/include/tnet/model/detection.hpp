#pragma once

#include <string>

#include "json.hpp"
#include "tnet/geometry/interval.hpp"

namespace tnet {

enum class ScoreField { refined, raw };

struct Detection {
  Interval interval;
  double raw_prob = 0;
  double refined_prob = 0;
  int level = 0;
  // Index on the window's flat anchor axis (see window_anchors).
  int anchor_index = 0;
  // Start frame of the window that produced the detection.
  int window_start = 0;
  std::string video_id;

  double score(ScoreField f) const noexcept { return f == ScoreField::refined ? refined_prob : raw_prob; }
};

inline void to_json(nlohmann::json& j, const Detection& d) {
  j = {{"video_id", d.video_id},     {"start", d.interval.start}, {"end", d.interval.end},
       {"raw_prob", d.raw_prob},     {"refined_prob", d.refined_prob}, {"level", d.level},
       {"anchor_index", d.anchor_index}, {"window_start", d.window_start}};
}

inline void from_json(const nlohmann::json& j, Detection& d) {
  d.video_id = j.at("video_id").get<std::string>();
  d.interval = {j.at("start").get<double>(), j.at("end").get<double>()};
  d.raw_prob = j.at("raw_prob").get<double>();
  d.refined_prob = j.at("refined_prob").get<double>();
  d.level = j.at("level").get<int>();
  d.anchor_index = j.value("anchor_index", 0);
  d.window_start = j.value("window_start", 0);
}

}  // namespace tnet
