#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "tnet/data/manifest.hpp"
#include "tnet/engine/trainer.hpp"
#include "tnet/evalkit/ap.hpp"
#include "tnet/evalkit/infer.hpp"

namespace tnet {

enum class CvStrategy { loso, lovo };

NLOHMANN_JSON_SERIALIZE_ENUM(CvStrategy, {{CvStrategy::loso, "LOSO"}, {CvStrategy::lovo, "LOVO"}})

inline CvStrategy parse_strategy(const std::string& s) {
  if (s == "LOSO" || s == "loso") return CvStrategy::loso;
  if (s == "LOVO" || s == "lovo") return CvStrategy::lovo;
  throw ConfigError("unknown cross-validation strategy '" + s + "' (expected LOSO or LOVO)");
}

// Anchor set from k-means over annotation durations, 4 levels x A lengths.
inline AnchorSet anchors_from_annotations(const std::vector<Annotation>& anns, const ModelConfig& mc,
                                          std::uint64_t seed) {
  std::vector<double> durations;
  for (const auto& a : anns) durations.push_back(a.interval.length());
  if (durations.empty()) throw DataError("no annotations to cluster into anchors");
  return build_anchor_set(kmeans_anchors(durations, 4 * mc.anchors_per_position, seed), mc.strides());
}

inline std::vector<WindowSample> training_windows(const std::vector<const VideoRecord*>& videos, int window) {
  std::vector<WindowSample> out;
  for (const auto* v : videos) {
    auto w = make_windows(v->features, v->annotations, window, window / 2);
    out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  return out;
}

struct Fold {
  std::string fold_id;
  std::vector<std::string> test_ids;
};

inline std::vector<Fold> make_folds(const std::vector<VideoRecord>& videos, CvStrategy strategy) {
  std::vector<Fold> folds;
  if (strategy == CvStrategy::lovo) {
    for (const auto& v : videos) folds.push_back({v.entry.video_id, {v.entry.video_id}});
  } else {
    std::map<std::string, std::vector<std::string>> sessions;
    for (const auto& v : videos) {
      if (v.entry.session_id.empty()) throw FoldError("video " + v.entry.video_id + " has no session_id");
      sessions[v.entry.session_id].push_back(v.entry.video_id);
    }
    for (auto& [s, ids] : sessions) folds.push_back({s, ids});
  }
  return folds;
}

struct FoldResult {
  std::string fold_id;
  std::vector<std::string> test_ids;
  double ap = 0;
  std::size_t train_windows = 0;
  AnchorSet anchors;
  std::vector<Detection> detections;
  std::vector<PrPoint> pr;
  std::vector<EpochSummary> epochs;
};

struct CvReport {
  CvStrategy strategy = CvStrategy::lovo;
  Variant variant = Variant::shared;
  std::vector<FoldResult> folds;
  double mean_ap = 0;
};

inline void to_json(nlohmann::json& j, const CvReport& r) {
  j = {{"strategy", r.strategy}, {"variant", variant_name(r.variant)}, {"mean_ap", r.mean_ap}};
  j["folds"] = nlohmann::json::array();
  for (const auto& f : r.folds)
    j["folds"].push_back({{"fold_id", f.fold_id}, {"test_ids", f.test_ids}, {"ap", f.ap},
                          {"train_windows", f.train_windows}});
}

struct CvSettings {
  ModelConfig model;
  TrainConfig train;
  LossConfig loss;
  EvalProtocol protocol;
  int jobs = 1;
  std::function<void(const FoldResult&)> on_fold;  // called under a lock as folds finish
};

inline std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold) { return derive_seed(seed, 17, fold); }

// Trains one model per fold from scratch and evaluates AP on the held-out
// videos. Folds run on up to `jobs` threads; results do not depend on it.
inline CvReport cross_validate(const std::vector<VideoRecord>& videos, CvStrategy strategy, const CvSettings& s) {
  s.protocol.validate();
  const auto folds = make_folds(videos, strategy);
  if (folds.empty()) throw FoldError("no videos to split");
  CvReport report;
  report.strategy = strategy;
  report.variant = s.train.variant;
  report.folds.resize(folds.size());

  // Validate every fold before any training starts.
  for (const auto& f : folds) {
    const std::set<std::string> test(f.test_ids.begin(), f.test_ids.end());
    std::size_t anns = 0;
    for (const auto& v : videos)
      if (!test.count(v.entry.video_id)) anns += v.annotations.size();
    if (anns == 0) throw FoldError("fold " + f.fold_id + " has no training annotations");
  }

  auto run_fold = [&](std::size_t k) {
    const auto& f = folds[k];
    const std::set<std::string> test(f.test_ids.begin(), f.test_ids.end());
    std::vector<const VideoRecord*> train_v, test_v;
    std::vector<Annotation> train_anns, test_anns;
    for (const auto& v : videos) {
      auto& dst_v = test.count(v.entry.video_id) ? test_v : train_v;
      auto& dst_a = test.count(v.entry.video_id) ? test_anns : train_anns;
      dst_v.push_back(&v);
      dst_a.insert(dst_a.end(), v.annotations.begin(), v.annotations.end());
    }
    TrainConfig tc = s.train;
    tc.seed = fold_seed(s.train.seed, k);
    FoldResult res;
    res.fold_id = f.fold_id;
    res.test_ids = f.test_ids;
    res.anchors = anchors_from_annotations(train_anns, s.model, derive_seed(tc.seed, 4));
    const auto windows = training_windows(train_v, s.model.window);
    res.train_windows = windows.size();
    auto fitted = fit<float>(windows, res.anchors, s.model, tc, s.loss);
    res.epochs = fitted.epochs;
    for (const auto* v : test_v) {
      auto d = infer_video(*fitted.model, v->features, res.anchors, s.protocol);
      res.detections.insert(res.detections.end(), d.begin(), d.end());
    }
    res.ap = average_precision(res.detections, test_anns, s.protocol.iou_thresh, s.protocol.score_field);
    res.pr = pr_curve(res.detections, test_anns, s.protocol.iou_thresh, s.protocol.score_field);
    return res;
  };

  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= folds.size()) return;
      {
        std::lock_guard lock(mu);
        if (failure) return;
      }
      try {
        auto r = run_fold(k);
        std::lock_guard lock(mu);
        report.folds[k] = std::move(r);
        if (s.on_fold) s.on_fold(report.folds[k]);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(s.jobs, static_cast<int>(folds.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  double sum = 0;
  for (const auto& f : report.folds) sum += f.ap;
  report.mean_ap = sum / static_cast<double>(report.folds.size());
  return report;
}

inline void write_pr_csv(const FoldResult& f, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "rank,score,precision,recall,true_positive\n";
  out.precision(10);
  for (std::size_t i = 0; i < f.pr.size(); ++i)
    out << i << ',' << f.pr[i].score << ',' << f.pr[i].precision << ',' << f.pr[i].recall << ','
        << (f.pr[i].true_positive ? 1 : 0) << '\n';
}

}  // namespace tnet
