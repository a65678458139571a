#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <vector>

#include "json.hpp"
#include "tnet/core/error.hpp"
#include "tnet/core/rng.hpp"
#include "tnet/geometry/interval.hpp"

namespace tnet {

struct AnchorLevel {
  int stride = 0;
  std::vector<double> lengths;
  bool operator==(const AnchorLevel&) const = default;
};

struct AnchorSet {
  std::vector<AnchorLevel> levels;

  int anchors_per_position() const { return levels.empty() ? 0 : static_cast<int>(levels.front().lengths.size()); }
  bool operator==(const AnchorSet&) const = default;

  void validate() const {
    if (levels.empty()) throw ConfigError("anchor set has no levels");
    double prev_len = 0;
    int prev_stride = 0;
    for (const auto& lv : levels) {
      if (lv.stride <= prev_stride) throw ConfigError("anchor strides must strictly increase");
      if (lv.lengths.size() != levels.front().lengths.size() || lv.lengths.empty())
        throw ConfigError("every anchor level needs the same non-zero number of lengths");
      for (double len : lv.lengths) {
        if (!(len > 0)) throw ConfigError("anchor lengths must be positive");
        if (len < prev_len) throw ConfigError("anchor lengths must be sorted ascending");
        prev_len = len;
      }
      prev_stride = lv.stride;
    }
  }
};

inline void to_json(nlohmann::json& j, const AnchorSet& a) {
  j = nlohmann::json{{"levels", nlohmann::json::array()}};
  for (const auto& lv : a.levels) j["levels"].push_back({{"stride", lv.stride}, {"lengths", lv.lengths}});
}

inline void from_json(const nlohmann::json& j, AnchorSet& a) {
  a.levels.clear();
  for (const auto& lv : j.at("levels")) {
    a.levels.push_back({lv.at("stride").get<int>(), lv.at("lengths").get<std::vector<double>>()});
  }
  a.validate();
}

// ---------------------------------------------------------------------------
// k-means over log-durations
// ---------------------------------------------------------------------------

// k-means++ seeding on already sorted values.
inline std::vector<double> kmeanspp_init(const std::vector<double>& sorted_values, int k, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> centers;
  centers.push_back(sorted_values[rng.below(sorted_values.size())]);
  std::vector<double> d2(sorted_values.size());
  while (static_cast<int>(centers.size()) < k) {
    double total = 0;
    for (std::size_t i = 0; i < sorted_values.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centers) best = std::min(best, (sorted_values[i] - c) * (sorted_values[i] - c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0) break;
    double r = rng.uniform() * total;
    std::size_t pick = sorted_values.size() - 1;
    for (std::size_t i = 0; i < sorted_values.size(); ++i) {
      r -= d2[i];
      if (r < 0 && d2[i] > 0) {
        pick = i;
        break;
      }
    }
    centers.push_back(sorted_values[pick]);
  }
  return centers;
}

// Lloyd iterations with squared distance; stops when assignments repeat
// or after max_iter rounds. Empty clusters keep their previous center.
inline std::vector<double> lloyd(const std::vector<double>& values, std::vector<double> centers, int max_iter = 100) {
  const std::size_t k = centers.size();
  std::vector<std::size_t> assign(values.size(), k);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = (values[i] - centers[c]) * (values[i] - centers[c]);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<double> sum(k, 0.0);
    std::vector<std::size_t> cnt(k, 0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      sum[assign[i]] += values[i];
      ++cnt[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (cnt[c] > 0) centers[c] = sum[c] / static_cast<double>(cnt[c]);
  }
  return centers;
}

inline std::vector<double> kmeans_anchors(std::vector<double> durations, int k, std::uint64_t seed) {
  if (durations.empty()) throw DataError("kmeans_anchors: no durations");
  for (double d : durations)
    if (!(d > 0) || !std::isfinite(d)) throw DataError("kmeans_anchors: durations must be positive and finite");
  std::sort(durations.begin(), durations.end());
  const auto distinct = std::set<double>(durations.begin(), durations.end()).size();
  if (k < 1 || static_cast<std::size_t>(k) > distinct) {
    throw ConfigError("kmeans_anchors: k=" + std::to_string(k) + " but only " + std::to_string(distinct) +
                      " distinct durations");
  }
  std::vector<double> logs(durations.size());
  std::transform(durations.begin(), durations.end(), logs.begin(), [](double d) { return std::log(d); });
  auto centers = lloyd(logs, kmeanspp_init(logs, k, seed));
  for (auto& c : centers) c = std::exp(c);
  std::sort(centers.begin(), centers.end());
  return centers;
}

inline AnchorSet build_anchor_set(std::vector<double> centroids, const std::vector<int>& strides) {
  if (strides.empty() || centroids.empty() || centroids.size() % strides.size() != 0) {
    throw ConfigError("build_anchor_set: " + std::to_string(centroids.size()) + " centroids cannot be split over " +
                      std::to_string(strides.size()) + " levels");
  }
  std::sort(centroids.begin(), centroids.end());
  const std::size_t per = centroids.size() / strides.size();
  AnchorSet set;
  for (std::size_t l = 0; l < strides.size(); ++l) {
    set.levels.push_back({strides[l], std::vector<double>(centroids.begin() + l * per, centroids.begin() + (l + 1) * per)});
  }
  set.validate();
  return set;
}

// One anchor on a window's flat anchor axis.
struct AnchorRef {
  Interval interval;
  int level = 0;
  int position = 0;
  int slot = 0;
};

// Flat order: levels ascending, then positions, then slots; matches the
// model's flattened head outputs.
inline std::vector<AnchorRef> window_anchors(const AnchorSet& set, int window) {
  std::vector<AnchorRef> out;
  for (std::size_t l = 0; l < set.levels.size(); ++l) {
    const auto& lv = set.levels[l];
    if (window % lv.stride != 0) {
      throw ConfigError("window length " + std::to_string(window) + " not divisible by stride " +
                        std::to_string(lv.stride));
    }
    const int positions = window / lv.stride;
    for (int p = 0; p < positions; ++p) {
      const double center = (p + 0.5) * lv.stride;
      for (std::size_t a = 0; a < lv.lengths.size(); ++a) {
        const double half = 0.5 * lv.lengths[a];
        out.push_back({{center - half, center + half}, static_cast<int>(l), p, static_cast<int>(a)});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matching and offset coding
// ---------------------------------------------------------------------------

enum class MatchKind { negative, ignored, positive };

struct MatchLabel {
  MatchKind kind = MatchKind::negative;
  int gt = -1;
  bool operator==(const MatchLabel&) const = default;
};

struct MatchThresholds {
  double positive = 0.3;
  double negative = -0.4;
};

inline std::vector<MatchLabel> match_anchors(const std::vector<Interval>& anchors, const std::vector<Interval>& gts,
                                             const MatchThresholds& th = {}) {
  std::vector<MatchLabel> out(anchors.size());
  if (gts.empty()) return out;
  std::vector<double> best_for_gt(gts.size(), -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> best_anchor(gts.size(), 0);
  std::vector<double> best_for_anchor(anchors.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    int arg = -1;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      const double e = eiou(anchors[i], gts[j]);
      if (e > best_for_anchor[i]) {
        best_for_anchor[i] = e;
        arg = static_cast<int>(j);
      }
      if (e > best_for_gt[j]) {
        best_for_gt[j] = e;
        best_anchor[j] = i;
      }
    }
    if (best_for_anchor[i] > th.positive) {
      out[i] = {MatchKind::positive, arg};
    } else if (best_for_anchor[i] < th.negative) {
      out[i] = {MatchKind::negative, -1};
    } else {
      out[i] = {MatchKind::ignored, -1};
    }
  }
  // Every gt keeps at least its best anchor. When two gts claim the same
  // anchor, the one with higher EIoU wins.
  std::vector<double> forced_score(anchors.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t j = 0; j < gts.size(); ++j) {
    const auto a = best_anchor[j];
    if (best_for_gt[j] > forced_score[a]) {
      forced_score[a] = best_for_gt[j];
      out[a] = {MatchKind::positive, static_cast<int>(j)};
    }
  }
  return out;
}

struct Offsets {
  double dm = 0;
  double dd = 0;
};

inline Offsets encode_offsets(const Interval& gt, const Interval& anchor) {
  return {(gt.center() - anchor.center()) / anchor.length(), std::log(gt.length() / anchor.length())};
}

inline Interval decode_offsets(double dm, double dd, const Interval& anchor) {
  const double m = anchor.center() + dm * anchor.length();
  const double d = anchor.length() * std::exp(dd);
  return {m - 0.5 * d, m + 0.5 * d};
}

}  // namespace tnet
