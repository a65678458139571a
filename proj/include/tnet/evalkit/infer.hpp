#pragma once

#include <algorithm>
#include <vector>

#include "tnet/data/windows.hpp"
#include "tnet/evalkit/protocol.hpp"
#include "tnet/geometry/nms.hpp"
#include "tnet/model/inference.hpp"

namespace tnet {

// Window-local detections of a prediction shifted into video frames and
// clamped to [0, frames).
inline std::vector<Detection> to_video_frames(std::vector<Detection> dets, int window_start, int frames) {
  std::vector<Detection> out;
  for (auto& d : dets) {
    d.interval = clamp_interval({d.interval.start + window_start, d.interval.end + window_start}, 0.0, frames);
    d.window_start = window_start;
    if (d.interval.valid()) out.push_back(std::move(d));
  }
  return out;
}

// Sliding-window inference over a whole video followed by one global NMS.
template <typename S>
std::vector<Detection> infer_video(const TNet<S>& model, const FeatureSequence& seq, const AnchorSet& anchors,
                                   const EvalProtocol& protocol) {
  const auto& cfg = model.config();
  if (seq.channels != cfg.in_channels) {
    throw ShapeError("infer_video: video " + seq.video_id + " has " + std::to_string(seq.channels) +
                     " channels, model expects " + std::to_string(cfg.in_channels));
  }
  const auto windows = make_windows(seq, {}, cfg.window, cfg.window / 2);
  std::vector<Detection> pooled;
  for (std::size_t b0 = 0; b0 < windows.size(); b0 += protocol.batch_size) {
    const std::size_t b1 = std::min(windows.size(), b0 + protocol.batch_size);
    std::vector<const WindowSample*> batch;
    for (std::size_t i = b0; i < b1; ++i) batch.push_back(&windows[i]);
    auto preds = detect_windows(model, std::span<const WindowSample* const>(batch), anchors, protocol.candidate_thresh);
    for (std::size_t k = 0; k < preds.size(); ++k) {
      std::vector<Detection> kept;
      for (auto& d : preds[k].detections)
        if (d.score(protocol.score_field) >= protocol.prob_thresh) kept.push_back(std::move(d));
      auto shifted = to_video_frames(std::move(kept), batch[k]->start, seq.frames);
      pooled.insert(pooled.end(), shifted.begin(), shifted.end());
    }
  }
  return nms_eiou(pooled, protocol.nms_eiou_thresh, protocol.score_field);
}

}  // namespace tnet
