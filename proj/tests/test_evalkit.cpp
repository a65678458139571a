#include <gtest/gtest.h>

#include <fstream>

#include "oracles.hpp"
#include "test_util.hpp"
#include "tnet/data/synth.hpp"
#include "tnet/engine/gradcheck.hpp"
#include "tnet/evalkit/crossval.hpp"

using namespace tnet;

namespace {

Detection det(const std::string& v, double s, double e, double score) {
  Detection d;
  d.video_id = v;
  d.interval = {s, e};
  d.refined_prob = d.raw_prob = score;
  return d;
}

std::vector<VideoRecord> synth_records(int videos, int sessions, int frames, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.videos = videos;
  cfg.sessions = sessions;
  cfg.frames = frames;
  auto ds = synth_generate(cfg, seed);
  std::vector<VideoRecord> out;
  for (auto& seq : ds.sequences) {
    VideoRecord r;
    r.entry.video_id = seq.video_id;
    r.entry.session_id = seq.session_id;
    for (const auto& a : ds.annotations)
      if (a.video_id == seq.video_id) r.annotations.push_back(a);
    r.features = std::move(seq);
    out.push_back(std::move(r));
  }
  return out;
}

FeatureSequence random_sequence(const std::string& id, int channels, int frames, std::uint64_t seed) {
  Rng rng(seed);
  FeatureSequence s;
  s.video_id = id;
  s.channels = channels;
  s.frames = frames;
  s.values.resize(static_cast<std::size_t>(channels) * frames);
  for (auto& v : s.values) v = static_cast<float>(rng.normal());
  return s;
}

}  // namespace

TEST(AveragePrecision, Examples) {
  const std::vector<Annotation> gts{{"v", {0, 10}}, {"v", {20, 30}}, {"w", {5, 9}}};
  EXPECT_EQ(average_precision({det("v", 0, 10, 0.1), det("v", 20, 30, 0.7), det("w", 5, 9, 0.3)}, gts, 0.5), 1.0);
  EXPECT_EQ(average_precision({}, gts, 0.5), 0.0);
  const std::vector<Annotation> two{{"v", {0, 10}}, {"v", {20, 30}}};
  EXPECT_DOUBLE_EQ(average_precision({det("v", 0, 10, 0.9), det("v", 50, 60, 0.8)}, two, 0.5), 0.5);
  EXPECT_EQ(average_precision({}, {}, 0.5), 1.0);
  EXPECT_EQ(average_precision({det("v", 0, 1, 0.5)}, {}, 0.5), 0.0);
}

TEST(AveragePrecision, IouMustExceedThresholdAndVideosMustMatch) {
  const std::vector<Annotation> gts{{"v", {0, 10}}};
  // IoU of [0,10) and [0,5) is exactly 0.5, which does not count.
  EXPECT_EQ(average_precision({det("v", 0, 5, 0.9)}, gts, 0.5), 0.0);
  EXPECT_EQ(average_precision({det("u", 0, 10, 0.9)}, gts, 0.5), 0.0);
  // The second exact duplicate finds its gt already matched.
  const auto curve = pr_curve({det("v", 0, 10, 0.9), det("v", 0, 10, 0.8)}, gts, 0.5);
  ASSERT_EQ(curve.size(), 2u);
  EXPECT_TRUE(curve[0].true_positive);
  EXPECT_FALSE(curve[1].true_positive);
  EXPECT_DOUBLE_EQ(curve[1].precision, 0.5);
}

TEST(AveragePrecision, MatchesExplicitPrTableReference) {
  Rng rng(1);
  for (int trial = 0; trial < 3000; ++trial) {
    const auto [dets, gts] = oracle::random_ap_instance(rng, 15, 10);
    const double got = average_precision(dets, gts, 0.5);
    ASSERT_NEAR(got, oracle::average_precision(dets, gts, 0.5), 1e-12) << "trial " << trial;
    ASSERT_GE(got, 0.0);
    ASSERT_LE(got, 1.0);
  }
}

TEST(AveragePrecision, InvariantUnderMonotoneScoreTransform) {
  Rng rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    auto [dets, gts] = oracle::random_ap_instance(rng, 15, 10);
    const double base = average_precision(dets, gts, 0.5);
    for (auto& d : dets) d.refined_prob = std::exp(3 * d.refined_prob) - 7;
    EXPECT_EQ(average_precision(dets, gts, 0.5), base);
  }
}

TEST(AveragePrecision, LowestScoringFalsePositiveNeverHelps) {
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    auto [dets, gts] = oracle::random_ap_instance(rng, 15, 10);
    const double base = average_precision(dets, gts, 0.5);
    dets.push_back(det("nowhere", 0, 5, 0.0));
    EXPECT_LE(average_precision(dets, gts, 0.5), base + 1e-15);
  }
}

TEST(AveragePrecision, RawScoreFieldRanksByRawProbability) {
  const std::vector<Annotation> gts{{"v", {0, 10}}};
  auto tp = det("v", 0, 10, 0.1);
  auto fp = det("v", 40, 50, 0.9);
  tp.raw_prob = 0.9;
  fp.raw_prob = 0.1;
  EXPECT_EQ(average_precision({tp, fp}, gts, 0.5, ScoreField::raw), 1.0);
  EXPECT_EQ(average_precision({tp, fp}, gts, 0.5, ScoreField::refined), 0.5);
}

TEST(InferVideo, ShortVideoDetectionsStayInsideIt) {
  const auto mc = reduced_model_config();
  TNet<float> model(mc, 1);
  EvalProtocol p;
  p.prob_thresh = 0;
  const auto dets = infer_video(model, random_sequence("s", mc.in_channels, 40, 2), gradcheck_anchors(mc), p);
  ASSERT_FALSE(dets.empty());
  for (const auto& d : dets) {
    EXPECT_GE(d.interval.start, 0.0);
    EXPECT_LE(d.interval.end, 40.0);
    EXPECT_EQ(d.video_id, "s");
  }
}

TEST(InferVideo, ProbabilityThresholdOneGivesNothing) {
  const auto mc = reduced_model_config();
  TNet<float> model(mc, 1);
  EvalProtocol p;
  p.prob_thresh = 1.0;
  EXPECT_TRUE(infer_video(model, random_sequence("s", mc.in_channels, 300, 3), gradcheck_anchors(mc), p).empty());
}

TEST(InferVideo, SingleWindowMatchesDetectWindowPlusNms) {
  const auto mc = reduced_model_config();
  TNet<float> model(mc, 4);
  const auto anchors = gradcheck_anchors(mc);
  const auto seq = random_sequence("s", mc.in_channels, mc.window, 5);
  EvalProtocol p;
  p.prob_thresh = 0.005;
  const auto got = infer_video(model, seq, anchors, p);
  const auto win = make_windows(seq, {}, mc.window, mc.window / 2);
  ASSERT_EQ(win.size(), 1u);
  std::vector<Detection> kept;
  for (const auto& d : detect_window(model, win[0], anchors, 0.0))
    if (d.refined_prob >= p.prob_thresh) kept.push_back(d);
  const auto ref = nms_eiou(kept, p.nms_eiou_thresh);
  ASSERT_EQ(got.size(), ref.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_EQ(got[i].interval, ref[i].interval);
    EXPECT_EQ(got[i].refined_prob, ref[i].refined_prob);
  }
}

TEST(InferVideo, OverlappingWindowDuplicatesCollapse) {
  auto a = det("v", 100, 130, 0.8);
  auto b = a;
  a.window_start = 0;
  b.window_start = 208;
  const auto kept = nms_eiou({a, b}, 0.2);
  EXPECT_EQ(kept.size(), 1u);
  const auto shifted = to_video_frames({det("v", 10, 30, 0.5), det("v", 50, 70, 0.5)}, 200, 240);
  ASSERT_EQ(shifted.size(), 1u);
  EXPECT_EQ(shifted[0].interval, (Interval{210, 230}));
  EXPECT_EQ(shifted[0].window_start, 200);
}

TEST(InferVideo, ChannelMismatchIsAShapeError) {
  const auto mc = reduced_model_config();
  TNet<float> model(mc, 1);
  EXPECT_THROW(infer_video(model, random_sequence("s", mc.in_channels + 1, 100, 1), gradcheck_anchors(mc), {}),
               ShapeError);
}

TEST(Folds, CountsPerStrategy) {
  const auto recs = synth_records(12, 4, 500, 1);
  EXPECT_EQ(make_folds(recs, CvStrategy::lovo).size(), 12u);
  const auto loso = make_folds(recs, CvStrategy::loso);
  ASSERT_EQ(loso.size(), 4u);
  std::size_t total = 0;
  for (const auto& f : loso) total += f.test_ids.size();
  EXPECT_EQ(total, 12u);
  EXPECT_EQ(parse_strategy("LOSO"), CvStrategy::loso);
  EXPECT_THROW(parse_strategy("kfold"), ConfigError);
}

TEST(Folds, DegenerateSplitsAreFoldErrors) {
  CvSettings s;
  s.model = reduced_model_config();
  s.model.in_channels = 17;
  s.train.epochs = 1;
  const auto one_session = synth_records(3, 1, 500, 2);
  EXPECT_THROW(cross_validate(one_session, CvStrategy::loso, s), FoldError);
  auto missing = synth_records(2, 2, 500, 3);
  missing[0].entry.session_id.clear();
  EXPECT_THROW(make_folds(missing, CvStrategy::loso), FoldError);
  EXPECT_THROW(cross_validate({}, CvStrategy::lovo, s), FoldError);
}

TEST(Folds, AnchorsNeedAnnotations) {
  EXPECT_THROW(anchors_from_annotations({}, reduced_model_config(), 1), DataError);
}

TEST(CrossValidate, ReportsEveryFoldAndIgnoresJobCount) {
  CvSettings s;
  s.model = reduced_model_config();
  s.model.in_channels = 17;
  s.train.epochs = 1;
  s.train.batch_size = 8;
  s.train.seed = 5;
  const auto recs = synth_records(4, 2, 1500, 4);
  const auto a = cross_validate(recs, CvStrategy::loso, s);
  ASSERT_EQ(a.folds.size(), 2u);
  double sum = 0;
  for (const auto& f : a.folds) {
    EXPECT_GE(f.ap, 0.0);
    EXPECT_LE(f.ap, 1.0);
    EXPECT_GT(f.train_windows, 0u);
    EXPECT_EQ(f.test_ids.size(), 2u);
    sum += f.ap;
  }
  EXPECT_DOUBLE_EQ(a.mean_ap, sum / 2);
  s.jobs = 2;
  const auto b = cross_validate(recs, CvStrategy::loso, s);
  for (std::size_t k = 0; k < a.folds.size(); ++k) {
    EXPECT_EQ(a.folds[k].fold_id, b.folds[k].fold_id);
    EXPECT_EQ(a.folds[k].ap, b.folds[k].ap);
    EXPECT_EQ(a.folds[k].detections.size(), b.folds[k].detections.size());
  }
  const auto dir = tnet::testing::temp_dir("prcsv");
  write_pr_csv(a.folds[0], dir / "pr.csv");
  std::ifstream in(dir / "pr.csv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, a.folds[0].pr.size() + 1);
}

TEST(EvalProtocol, DefaultsAndValidation) {
  EvalProtocol p;
  EXPECT_EQ(p.iou_thresh, 0.5);
  EXPECT_EQ(p.prob_thresh, 0.2);
  EXPECT_EQ(p.nms_eiou_thresh, 0.2);
  EXPECT_EQ(p.score_field, ScoreField::refined);
  p.prob_thresh = 1.5;
  EXPECT_THROW(p.validate(), ConfigError);
}
