#pragma once

#include <array>
#include <vector>

#include "tnet/core/graph.hpp"
#include "tnet/core/ops.hpp"
#include "tnet/data/types.hpp"
#include "tnet/loss/losses.hpp"
#include "tnet/model/params.hpp"

namespace tnet {

// Batch-mean detection loss over flat head outputs.
//   raw (1,N,M) logits, refined (1,N,M) logits or null, offsets (2,N,M), boxes (2,N,M)
template <typename S>
Var<S> detection_loss_op(Graph<S>& g, const Var<S>& raw, const Var<S>& refined, const Var<S>& offsets,
                         const Var<S>& boxes, const std::vector<const WindowTargets*>& targets, const LossConfig& cfg) {
  const int n = raw->val().batch(), m = raw->val().length();
  const double inv_n = 1.0 / n;
  std::vector<DetectionLossResult> res(n);
  Tensor<S> out(1, 1, 1);
  for (int s = 0; s < n; ++s) {
    auto copy = [&](const Var<S>& v, int c) {
      std::vector<double> r(m);
      for (int i = 0; i < m; ++i) r[i] = v->val()(c, s, i);
      return r;
    };
    const auto rl = copy(raw, 0);
    const auto fl = refined ? copy(refined, 0) : std::vector<double>{};
    const auto dm = copy(offsets, 0), dd = copy(offsets, 1);
    const auto bs = copy(boxes, 0), be = copy(boxes, 1);
    res[s] = detection_loss({rl, fl, dm, dd, bs, be}, *targets[s], cfg);
    out[0] += static_cast<S>(inv_n * res[s].value);
    if (g.tracking_branches()) {
      std::uint64_t h = 1469598103934665603ULL;
      for (auto i : res[s].mined) h = (h ^ i) * 1099511628211ULL;
      // Smooth L1 branches and EIoU's min/max choices for positives.
      for (int i = 0; i < m; ++i) {
        const auto& lab = targets[s]->labels[i];
        if (lab.kind != MatchKind::positive) continue;
        const auto& off = targets[s]->offsets[i];
        const auto& gt = targets[s]->gts[lab.gt];
        const std::uint64_t bits = (std::abs(dm[i] - off.dm) < 1) | (std::abs(dd[i] - off.dd) < 1) << 1 |
                                   (bs[i] >= gt.start) << 2 | (be[i] <= gt.end) << 3 |
                                   (std::min(be[i], gt.end) - std::max(bs[i], gt.start) > 0) << 4;
        h = (h ^ (bits + 32 * static_cast<std::uint64_t>(i))) * 1099511628211ULL;
      }
      g.branch(h);
    }
  }
  return g.make(std::move(out), {raw, refined, offsets, boxes},
                [raw, refined, offsets, boxes, res = std::move(res), n, m, inv_n](Node<S>& self) {
                  const double up = self.grad[0] * inv_n;
                  for (int s = 0; s < n; ++s) {
                    const auto& r = res[s];
                    for (int i = 0; i < m; ++i) {
                      if (raw->requires_grad) raw->ensure_grad()(0, s, i) += static_cast<S>(up * r.d_raw[i]);
                      if (refined && refined->requires_grad)
                        refined->ensure_grad()(0, s, i) += static_cast<S>(up * r.d_refined[i]);
                      if (offsets->requires_grad) {
                        offsets->ensure_grad()(0, s, i) += static_cast<S>(up * r.d_dm[i]);
                        offsets->ensure_grad()(1, s, i) += static_cast<S>(up * r.d_dd[i]);
                      }
                      if (boxes->requires_grad) {
                        boxes->ensure_grad()(0, s, i) += static_cast<S>(up * r.d_start[i]);
                        boxes->ensure_grad()(1, s, i) += static_cast<S>(up * r.d_end[i]);
                      }
                    }
                  }
                });
}

// Batch-mean segmentation loss over K stage probabilities (1,N,T).
template <typename S>
Var<S> segmentation_loss_op(Graph<S>& g, const std::vector<Var<S>>& stages,
                            const std::vector<const FrameLabels*>& labels, const std::vector<int>& valid,
                            const LossConfig& cfg) {
  const int n = stages.front()->val().batch(), len = stages.front()->val().length();
  const double inv_n = 1.0 / n;
  Tensor<S> out(1, 1, 1);
  std::vector<SegmentationLossResult> res(n);
  std::uint64_t h = 0;
  for (int s = 0; s < n; ++s) {
    std::vector<std::vector<double>> rows;
    for (const auto& st : stages) {
      auto row = st->val().row(0, s);
      rows.emplace_back(row.begin(), row.end());
    }
    std::vector<std::span<const double>> spans(rows.begin(), rows.end());
    res[s] = segmentation_loss(spans, *labels[s], valid[s], cfg);
    out[0] += static_cast<S>(inv_n * res[s].value);
    if (g.tracking_branches())
      for (const auto& r : rows)
        for (double p : r) h = (h * 31) ^ (p <= kProbClamp || p >= 1 - kProbClamp);
  }
  g.branch(h);
  return g.make(std::move(out), stages, [stages, res = std::move(res), n, len, inv_n](Node<S>& self) {
    const double up = self.grad[0] * inv_n;
    for (std::size_t k = 0; k < stages.size(); ++k) {
      if (!stages[k]->requires_grad) continue;
      auto& d = stages[k]->ensure_grad();
      for (int s = 0; s < n; ++s)
        for (int j = 0; j < len; ++j) d(0, s, j) += static_cast<S>(up * res[s].d_probs[k][j]);
    }
  });
}

// Adds the L2 gradient 2*beta*w to regularized parameters; returns sum |w|^2.
template <typename S>
double apply_l2(ParamStore<S>& store, double beta) {
  double sum = 0;
  for (auto& p : store.all()) {
    if (!p->regularized()) continue;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      sum += double(p->value[i]) * p->value[i];
      p->grad[i] += static_cast<S>(2 * beta * p->value[i]);
    }
  }
  return sum;
}

template <typename S>
double total_loss(double det, double seg, const ParamStore<S>& store, const LossConfig& cfg) {
  return total_loss(det, seg, store.l2(), cfg);
}

}  // namespace tnet
