#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tnet/core/ops.hpp"
#include "tnet/data/types.hpp"
#include "tnet/model/detection.hpp"
#include "tnet/model/inference.hpp"

namespace tnet {

struct CamResult {
  Detection detection;
  std::vector<double> cam;  // length T, values in [0, 1]
  std::string target_layer;
};

inline void to_json(nlohmann::json& j, const CamResult& r) {
  j = {{"detection", r.detection}, {"target_layer", r.target_layer}, {"cam", r.cam}};
}

// Grad-CAM from one sample's feature map F (C', L') and dLogit/dF:
// w_c = mean_t grad[c][t], cam = ReLU(sum_c w_c F_c), linearly resampled to
// `out_len` and divided by its maximum when that is positive.
template <typename S>
std::vector<double> compute_cam(const Tensor<S>& map, const Tensor<S>& grad, int sample, int out_len) {
  require_same_shape(map, grad, "compute_cam");
  const int c = map.channels(), len = map.length();
  std::vector<double> raw(len, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    double w = 0;
    for (int t = 0; t < len; ++t) w += grad(ch, sample, t);
    w /= len;
    if (w == 0) continue;
    for (int t = 0; t < len; ++t) raw[t] += w * map(ch, sample, t);
  }
  for (auto& v : raw) v = std::max(v, 0.0);
  std::vector<double> cam(out_len);
  const auto taps = ops::linear_taps(len, out_len);
  for (int t = 0; t < out_len; ++t) cam[t] = (1 - taps[t].w1) * raw[taps[t].i0] + taps[t].w1 * raw[taps[t].i1];
  const double mx = *std::max_element(cam.begin(), cam.end());
  if (mx > 0)
    for (auto& v : cam) v = std::min(1.0, v / mx);
  return cam;
}

inline std::string default_target_layer(const Detection& d) { return "fpn" + std::to_string(d.level + 1); }

// Grad-CAM for a window-local detection: gradients of its raw classification
// logit with respect to `target_layer` (an encoder stage "en0".."en4" or FPN
// level "fpn1".."fpn4"; empty selects the detection's own FPN level).
template <typename S>
CamResult grad_cam(const TNet<S>& model, const WindowSample& window, const Detection& det,
                   std::string target_layer = {}) {
  if (target_layer.empty()) target_layer = default_target_layer(det);
  const auto names = TNet<S>::target_layer_names();
  if (std::find(names.begin(), names.end(), target_layer) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw ConfigError("grad_cam: unknown target layer '" + target_layer + "' (expected one of " + list + ")");
  }
  const auto& cfg = model.config();
  if (det.anchor_index < 0 || det.anchor_index >= cfg.anchors_per_window())
    throw ContractError("grad_cam: detection anchor index out of range");
  Graph<S> g(true);
  g.set_param_grads(false);
  g.set_input_grads(true);
  const WindowSample* ptr = &window;
  auto out = model.forward(g, batch_tensor<S>(std::span<const WindowSample* const>(&ptr, 1)), false);
  auto logit = ops::pick(g, out.cls_flat, 0, 0, det.anchor_index);
  g.backward(logit);
  const auto& node = out.maps.at(target_layer);
  const auto& F = node->val();
  const Tensor<S> grad = node->has_grad() ? node->grad : Tensor<S>(F.channels(), F.batch(), F.length());
  return {det, compute_cam(F, grad, 0, cfg.window), target_layer};
}

inline void write_cam_csv(const CamResult& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(10);
  out << "frame,value\n";
  for (std::size_t t = 0; t < r.cam.size(); ++t) out << t << ',' << r.cam[t] << '\n';
}

// Frames x {cam, input channels}: one row per window frame.
inline void write_cam_heatmap(const CamResult& r, const WindowSample& window, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(8);
  out << "frame,cam";
  for (int c = 0; c < window.channels; ++c) out << ",ch" << c;
  out << '\n';
  for (int t = 0; t < window.length; ++t) {
    out << window.start + t << ',' << r.cam[t];
    for (int c = 0; c < window.channels; ++c) out << ',' << window.at(c, t);
    out << '\n';
  }
}

}  // namespace tnet
