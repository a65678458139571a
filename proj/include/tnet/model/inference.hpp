#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "tnet/data/types.hpp"
#include "tnet/geometry/anchors.hpp"
#include "tnet/model/detection.hpp"
#include "tnet/model/tnet.hpp"

namespace tnet {

// Stacks windows into a (C, N, T) tensor.
template <typename S>
Tensor<S> batch_tensor(std::span<const WindowSample* const> batch) {
  const int c = batch.front()->channels, t = batch.front()->length, n = static_cast<int>(batch.size());
  Tensor<S> x(c, n, t);
  for (int s = 0; s < n; ++s) {
    if (batch[s]->channels != c || batch[s]->length != t) throw ShapeError("batch_tensor: inconsistent window shapes");
    for (int ch = 0; ch < c; ++ch)
      for (int j = 0; j < t; ++j) x(ch, s, j) = static_cast<S>(batch[s]->at(ch, j));
  }
  return x;
}

template <typename S>
void check_anchor_consistency(const TNet<S>& model, const AnchorSet& anchors) {
  const auto& cfg = model.config();
  if (static_cast<int>(anchors.levels.size()) != 4 || anchors.anchors_per_position() != cfg.anchors_per_position) {
    throw ConfigError("anchor set has " + std::to_string(anchors.levels.size()) + " levels x " +
                      std::to_string(anchors.anchors_per_position()) + " lengths; model expects 4 x " +
                      std::to_string(cfg.anchors_per_position));
  }
  for (int l = 0; l < 4; ++l)
    if (anchors.levels[l].stride != ModelConfig::level_strides[l])
      throw ConfigError("anchor level " + std::to_string(l) + " stride does not match the model");
}

// Refines detection probabilities with the fusion head. Intervals are
// window-local and must lie within [0, T).
template <typename S>
std::vector<Detection> fuse_scores(const TNet<S>& model, std::vector<Detection> dets, std::span<const double> seg_p1) {
  const int window = model.config().window;
  if (static_cast<int>(seg_p1.size()) != window) throw ShapeError("fuse_scores: P1 length differs from window");
  for (const auto& d : dets) {
    if (!d.interval.valid() || d.interval.start < 0 || d.interval.end > window) {
      throw ContractError("fuse_scores: detection [" + std::to_string(d.interval.start) + ", " +
                          std::to_string(d.interval.end) + ") outside window");
    }
  }
  if (dets.empty()) return dets;
  if (!model.config().has_segmentation()) {
    for (auto& d : dets) d.refined_prob = d.raw_prob;
    return dets;
  }
  const int n = static_cast<int>(dets.size());
  Graph<S> g(false);
  Tensor<S> p(1, 1, window), boxes(2, 1, n), raw(1, 1, n);
  for (int j = 0; j < window; ++j) p(0, 0, j) = static_cast<S>(seg_p1[j]);
  for (int i = 0; i < n; ++i) {
    boxes(0, 0, i) = static_cast<S>(dets[i].interval.start);
    boxes(1, 0, i) = static_cast<S>(dets[i].interval.end);
    raw(0, 0, i) = static_cast<S>(dets[i].raw_prob);
  }
  auto logits = model.fusion_logits(g, g.constant(p), g.constant(boxes), g.constant(raw), {window});
  for (int i = 0; i < n; ++i) {
    dets[i].refined_prob = 1.0 / (1.0 + std::exp(-double(logits->val()(0, 0, i))));
  }
  return dets;
}

struct WindowPrediction {
  std::vector<Detection> detections;
  std::vector<double> seg_p1;
};

// Batched per-window detection in inference mode. Candidates keep
// raw_prob >= prob_thresh, are clamped to the window's valid range and
// refined by the fusion head. No NMS.
template <typename S>
std::vector<WindowPrediction> detect_windows(const TNet<S>& model, std::span<const WindowSample* const> windows,
                                             const AnchorSet& anchors, double prob_thresh) {
  check_anchor_consistency(model, anchors);
  const auto& cfg = model.config();
  const auto refs = window_anchors(anchors, cfg.window);
  Graph<S> g(false);
  auto out = model.forward(g, batch_tensor<S>(windows), false);
  const auto& C = out.cls_flat->val();
  const auto& R = out.reg_flat->val();
  std::vector<WindowPrediction> result(windows.size());
  for (std::size_t s = 0; s < windows.size(); ++s) {
    const int sn = static_cast<int>(s);
    const double limit = windows[s]->valid_length;
    auto& wp = result[s];
    if (cfg.has_segmentation()) {
      const auto row = out.seg[0]->val().row(0, sn);
      wp.seg_p1.assign(row.begin(), row.end());
    }
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const int m = static_cast<int>(i);
      const double prob = 1.0 / (1.0 + std::exp(-double(C(0, sn, m))));
      if (!(prob >= prob_thresh)) continue;
      const double dd = std::clamp<double>(R(1, sn, m), -cfg.max_log_scale, cfg.max_log_scale);
      auto iv = clamp_interval(decode_offsets(R(0, sn, m), dd, refs[i].interval), 0.0, limit);
      if (!iv.valid()) continue;
      Detection d;
      d.interval = iv;
      d.raw_prob = prob;
      d.refined_prob = prob;
      d.level = refs[i].level;
      d.anchor_index = m;
      d.video_id = windows[s]->video_id;
      wp.detections.push_back(d);
    }
    if (cfg.has_segmentation()) wp.detections = fuse_scores(model, std::move(wp.detections), wp.seg_p1);
  }
  return result;
}

template <typename S>
std::vector<Detection> detect_window(const TNet<S>& model, const WindowSample& window, const AnchorSet& anchors,
                                     double prob_thresh) {
  const WindowSample* ptr = &window;
  return detect_windows(model, std::span<const WindowSample* const>(&ptr, 1), anchors, prob_thresh)
      .front()
      .detections;
}

}  // namespace tnet
