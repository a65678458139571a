#pragma once

#include <vector>

#include "tnet/loss/graph_losses.hpp"
#include "tnet/model/inference.hpp"

namespace tnet {

template <typename S>
struct Objective {
  Var<S> det;    // batch-mean detection loss
  Var<S> seg;    // batch-mean segmentation loss, null without a segmentation branch
  Var<S> total;  // det + alpha * seg; the L2 term is handled by apply_l2
};

// Builds the training objective for one batch on graph `g`.
template <typename S>
Objective<S> build_objective(Graph<S>& g, const TNet<S>& model, const std::vector<const WindowSample*>& batch,
                             const std::vector<const WindowTargets*>& targets, const std::vector<AnchorRef>& refs,
                             const LossConfig& cfg, bool training) {
  if (batch.empty()) throw ContractError("build_objective: empty batch");
  if (targets.size() != batch.size()) throw ShapeError("build_objective: one target set per window required");
  const auto& mc = model.config();
  auto out = model.forward(g, batch_tensor<S>(std::span<const WindowSample* const>(batch)), training);
  auto boxes = decode_boxes(g, out.reg_flat, refs, mc.max_log_scale);
  std::vector<int> valid;
  for (const auto* w : batch) valid.push_back(w->valid_length);
  Objective<S> obj;
  Var<S> refined;
  if (mc.has_segmentation()) {
    refined = model.fusion_logits(g, out.seg[0], boxes, ops::sigmoid(g, out.cls_flat), valid);
  }
  obj.det = detection_loss_op(g, out.cls_flat, refined, out.reg_flat, boxes, targets, cfg);
  if (mc.has_segmentation()) {
    std::vector<const FrameLabels*> labels;
    for (const auto* w : batch) labels.push_back(&w->frame_labels);
    obj.seg = segmentation_loss_op(g, {out.seg[0], out.seg[1], out.seg[2]}, labels, valid, cfg);
    obj.total = ops::weighted_sum(g, {obj.det, obj.seg}, {S(1), static_cast<S>(cfg.alpha)});
  } else {
    obj.total = obj.det;
  }
  return obj;
}

}  // namespace tnet
