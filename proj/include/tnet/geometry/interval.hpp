#pragma once

#include <algorithm>
#include <cmath>

namespace tnet {

// Half-open interval [start, end) in frame units.
struct Interval {
  double start = 0;
  double end = 0;

  double center() const noexcept { return 0.5 * (start + end); }
  double length() const noexcept { return end - start; }
  bool valid() const noexcept { return std::isfinite(start) && std::isfinite(end) && end > start; }
  bool operator==(const Interval&) const = default;
};

inline double intersection_length(const Interval& a, const Interval& b) {
  return std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
}

inline double iou(const Interval& a, const Interval& b) {
  const double inter = intersection_length(a, b);
  const double uni = a.length() + b.length() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// IoU minus the squared center distance and squared length difference,
// both normalized by the squared length of the smallest enclosing interval.
inline double eiou(const Interval& a, const Interval& g) {
  const double enclose = std::max(a.end, g.end) - std::min(a.start, g.start);
  const double dc2 = enclose * enclose;
  const double dm = a.center() - g.center();
  const double dd = a.length() - g.length();
  return iou(a, g) - dm * dm / dc2 - dd * dd / dc2;
}

// Value of eiou(a, g) together with its partial derivatives in a.start and
// a.end. Piecewise smooth; at ties the left branch is taken.
struct EiouGrad {
  double value;
  double d_start;
  double d_end;
};

inline EiouGrad eiou_with_grad(const Interval& a, const Interval& g) {
  // Intersection endpoints.
  const bool lo_a = a.start >= g.start;  // max(start) comes from a
  const bool hi_a = a.end <= g.end;      // min(end) comes from a
  const double ilo = lo_a ? a.start : g.start;
  const double ihi = hi_a ? a.end : g.end;
  const double raw_inter = ihi - ilo;
  const bool overlap = raw_inter > 0;
  const double inter = overlap ? raw_inter : 0.0;
  double di_ds = 0, di_de = 0;
  if (overlap) {
    di_ds = lo_a ? -1.0 : 0.0;
    di_de = hi_a ? 1.0 : 0.0;
  }
  const double uni = a.length() + g.length() - inter;
  const double du_ds = -1.0 - di_ds;
  const double du_de = 1.0 - di_de;
  const double iou_v = inter / uni;
  const double diou_ds = (di_ds * uni - inter * du_ds) / (uni * uni);
  const double diou_de = (di_de * uni - inter * du_de) / (uni * uni);

  // Enclosing interval.
  const bool clo_a = a.start <= g.start;
  const bool chi_a = a.end >= g.end;
  const double enclose = (chi_a ? a.end : g.end) - (clo_a ? a.start : g.start);
  const double dc_ds = clo_a ? -1.0 : 0.0;
  const double dc_de = chi_a ? 1.0 : 0.0;
  const double dc2 = enclose * enclose;

  const double dm = a.center() - g.center();
  const double dd = a.length() - g.length();
  const double num = dm * dm + dd * dd;
  // d(num)/d(start) = 2 dm * 0.5 + 2 dd * (-1); d/d(end) = 2 dm * 0.5 + 2 dd.
  const double dnum_ds = dm - 2 * dd;
  const double dnum_de = dm + 2 * dd;
  const double pen = num / dc2;
  const double dpen_ds = dnum_ds / dc2 - 2 * num * dc_ds / (dc2 * enclose);
  const double dpen_de = dnum_de / dc2 - 2 * num * dc_de / (dc2 * enclose);
  return {iou_v - pen, diou_ds - dpen_ds, diou_de - dpen_de};
}

inline Interval clamp_interval(const Interval& iv, double lo, double hi) {
  return {std::clamp(iv.start, lo, hi), std::clamp(iv.end, lo, hi)};
}

}  // namespace tnet
