#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "tnet/core/ops.hpp"
#include "tnet/geometry/anchors.hpp"

namespace tnet {

// Decodes flat regression outputs (2, N, M) against the window anchors into
// boxes (2, N, M) holding (start, end). The log-scale channel is clipped to
// +-max_log_scale.
template <typename S>
Var<S> decode_boxes(Graph<S>& g, const Var<S>& offsets, const std::vector<AnchorRef>& anchors, double max_log_scale) {
  const auto& O = offsets->val();
  const int n = O.batch(), m = O.length();
  if (O.channels() != 2 || m != static_cast<int>(anchors.size())) throw ShapeError("decode_boxes: offsets/anchor mismatch");
  Tensor<S> B(2, n, m);
  Tensor<S> len(1, n, m);
  std::vector<bool> clipped(static_cast<std::size_t>(n) * m);
  for (int s = 0; s < n; ++s)
    for (int i = 0; i < m; ++i) {
      const auto& a = anchors[i].interval;
      const double dd_raw = O(1, s, i);
      const double dd = std::clamp(dd_raw, -max_log_scale, max_log_scale);
      clipped[static_cast<std::size_t>(s) * m + i] = dd != dd_raw;
      const double c = a.center() + double(O(0, s, i)) * a.length();
      const double d = a.length() * std::exp(dd);
      B(0, s, i) = static_cast<S>(c - 0.5 * d);
      B(1, s, i) = static_cast<S>(c + 0.5 * d);
      len(0, s, i) = static_cast<S>(d);
    }
  g.branch(ops::hash_bits(clipped));
  return g.make(std::move(B), {offsets},
                [offsets, anchors, len = std::move(len), clipped = std::move(clipped), n, m](Node<S>& self) {
                  auto& dO = offsets->ensure_grad();
                  for (int s = 0; s < n; ++s)
                    for (int i = 0; i < m; ++i) {
                      const double gs = self.grad(0, s, i), ge = self.grad(1, s, i);
                      // start = c - d/2, end = c + d/2; c linear in dm, d = da*exp(dd).
                      dO(0, s, i) += static_cast<S>((gs + ge) * anchors[i].interval.length());
                      if (!clipped[static_cast<std::size_t>(s) * m + i]) {
                        dO(1, s, i) += static_cast<S>(0.5 * (ge - gs) * len(0, s, i));
                      }
                    }
                });
}

// Average of a piecewise-constant sequence (frame j spans [j, j+1)) over
// [a, b), with partial weight for fractional edge frames.
struct SpanAverage {
  // prefix[i] = sum of p[0..i)
  std::vector<double> prefix;
  std::span<const double> p;

  explicit SpanAverage(std::span<const double> values) : prefix(values.size() + 1, 0.0), p(values) {
    for (std::size_t i = 0; i < values.size(); ++i) prefix[i + 1] = prefix[i] + values[i];
  }

  int cell(double x) const {
    const int len = static_cast<int>(p.size());
    return std::clamp(static_cast<int>(std::floor(x)), 0, len - 1);
  }
  double integral_to(double x) const {
    const int i = cell(x);
    return prefix[i] + p[i] * (x - i);
  }
  double average(double a, double b) const {
    if (b - a < 1e-9) return p[cell(a)];
    return (integral_to(b) - integral_to(a)) / (b - a);
  }
};

// RoI average pooling of probabilities (1, N, T) over boxes (2, N, M) into
// `bins` equal bins per box: output (bins, N, M). Boxes are clamped to each
// sample's valid range [0, valid_length).
template <typename S>
Var<S> roi_pool(Graph<S>& g, const Var<S>& probs, const Var<S>& boxes, int bins, const std::vector<int>& valid_lengths) {
  const auto& P = probs->val();
  const auto& B = boxes->val();
  const int n = B.batch(), m = B.length();
  if (P.batch() != n || P.channels() != 1) throw ShapeError("roi_pool: probs/boxes batch mismatch");
  Tensor<S> V(bins, n, m);
  std::vector<std::uint64_t> cells;
  const bool track = g.tracking_branches();
  std::vector<std::vector<double>> rows(n);
  for (int s = 0; s < n; ++s) {
    const int valid = valid_lengths[s];
    rows[s].assign(P.row(0, s).begin(), P.row(0, s).begin() + valid);
    SpanAverage avg(rows[s]);
    for (int i = 0; i < m; ++i) {
      const double st = std::clamp<double>(B(0, s, i), 0.0, valid);
      const double en = std::clamp<double>(B(1, s, i), 0.0, valid);
      const double w = (en - st) / bins;
      for (int k = 0; k < bins; ++k) {
        const double a = st + k * w, b = st + (k + 1) * w;
        V(k, s, i) = static_cast<S>(avg.average(a, b));
        if (track) cells.push_back(static_cast<std::uint64_t>(avg.cell(a)) * 131071u + avg.cell(b));
      }
      if (track) {
        cells.push_back((B(0, s, i) <= 0) * 1 + (B(0, s, i) >= valid) * 2 + (B(1, s, i) <= 0) * 4 +
                        (B(1, s, i) >= valid) * 8 + (en - st < 1e-9) * 16);
      }
    }
  }
  if (track) {
    std::uint64_t h = 1469598103934665603ULL;
    for (auto c : cells) h = (h ^ c) * 1099511628211ULL;
    g.branch(h);
  }
  return g.make(std::move(V), {probs, boxes},
                [probs, boxes, bins, valid_lengths, n, m, rows = std::move(rows)](Node<S>& self) {
                  const auto& B = boxes->val();
                  for (int s = 0; s < n; ++s) {
                    const int valid = valid_lengths[s];
                    SpanAverage avg(rows[s]);
                    for (int i = 0; i < m; ++i) {
                      const double raw_s = B(0, s, i), raw_e = B(1, s, i);
                      const double st = std::clamp<double>(raw_s, 0.0, valid);
                      const double en = std::clamp<double>(raw_e, 0.0, valid);
                      const double w = (en - st) / bins;
                      double d_st = 0, d_en = 0;
                      for (int k = 0; k < bins; ++k) {
                        const double gv = self.grad(k, s, i);
                        if (gv == 0) continue;
                        const double a = st + k * w, b = st + (k + 1) * w;
                        if (b - a < 1e-9) {
                          if (probs->requires_grad) probs->ensure_grad()(0, s, avg.cell(a)) += static_cast<S>(gv);
                          continue;
                        }
                        const double inv = 1.0 / (b - a);
                        if (probs->requires_grad) {
                          auto& dP = probs->ensure_grad();
                          const int lo = avg.cell(a);
                          const int hi = std::min(valid - 1, static_cast<int>(std::ceil(b)) - 1);
                          for (int j = lo; j <= hi; ++j) {
                            const double ov = std::min<double>(j + 1, b) - std::max<double>(j, a);
                            if (ov > 0) dP(0, s, j) += static_cast<S>(gv * ov * inv);
                          }
                        }
                        const double v = avg.average(a, b);
                        const double dv_db = (avg.p[avg.cell(b)] - v) * inv;
                        const double dv_da = (v - avg.p[avg.cell(a)]) * inv;
                        const double fa = double(k) / bins, fb = double(k + 1) / bins;
                        d_st += gv * (dv_da * (1 - fa) + dv_db * (1 - fb));
                        d_en += gv * (dv_da * fa + dv_db * fb);
                      }
                      if (boxes->requires_grad) {
                        auto& dB = boxes->ensure_grad();
                        if (raw_s > 0 && raw_s < valid) dB(0, s, i) += static_cast<S>(d_st);
                        if (raw_e > 0 && raw_e < valid) dB(1, s, i) += static_cast<S>(d_en);
                      }
                    }
                  }
                });
}

}  // namespace tnet
