// Acceptance checks. Prints one PASS/FAIL line per criterion; exits non-zero
// if any criterion fails. Optional arguments select criteria by number.
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "tnet/data/synth.hpp"
#include "tnet/engine/gradcheck.hpp"
#include "tnet/evalkit/crossval.hpp"
#include "tnet/explain/gradcam.hpp"

using namespace tnet;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("tnet_accept_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TNET_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// 1. EIoU values against an independent scalar evaluation.
Outcome eiou_suite() {
  Outcome o;
  const auto t0 = Clock::now();
  o.require(eiou({3, 17}, {3, 17}) == 1.0, "eiou(a, a) != 1");
  o.require(std::abs(eiou({0, 10}, {10, 20}) + 0.25) <= 1e-9, "[0,10) vs [10,20) != -0.25");
  o.require(std::abs(eiou({0, 20}, {5, 15}) - 0.25) <= 1e-9, "[0,20) vs [5,15) != 0.25");
  Rng rng(2024);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const double as = rng.uniform(-50, 150), gs = rng.uniform(-50, 150);
    const Interval a{as, as + rng.uniform(0.1, 80)}, g{gs, gs + rng.uniform(0.1, 80)};
    worst = std::max(worst, std::abs(eiou(a, g) - oracle::eiou_scalar(a.start, a.end, g.start, g.end)));
  }
  const double secs = seconds_since(t0);
  o.require(worst <= 1e-9, "random pair error " + std::to_string(worst));
  o.require(secs < 1.0, "runtime " + std::to_string(secs) + " s");
  std::ostringstream os;
  os << "3 anchors + 1000 pairs, max abs error " << worst << ", " << secs << " s";
  if (o.pass) o.detail = os.str();
  return o;
}

// 2. Gradient check on the reduced model in double precision.
Outcome gradient_check() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto rep = grad_check(reduced_model_config(), LossConfig{}, 7);
  const double secs = seconds_since(t0);
  o.require(rep.passed && rep.max_rel_error <= 1e-3, "max relative error " + std::to_string(rep.max_rel_error));
  const std::vector<std::pair<std::string, std::string>> groups{
      {"conv", "encoder.stem.conv.weight"}, {"norm", ".norm.gamma"},    {"residual", ".down."},
      {"fpn", "fpn."},                      {"unet3+", "seg_decoder."}, {"fusion", "fusion."},
      {"head", "head."}};
  for (const auto& [group, needle] : groups) {
    bool seen = false;
    for (const auto& t : rep.tensors) seen = seen || (t.checked > 0 && t.name.find(needle) != std::string::npos);
    o.require(seen, "no checked tensor in group " + group);
  }
  int unchecked = 0;
  for (const auto& t : rep.tensors) unchecked += t.checked == 0;
  o.require(unchecked == 0, std::to_string(unchecked) + " tensors without a checked coordinate");
  for (const char* term : {"bce", "smooth_l1", "eiou", "focal", "dice"})
    o.require(rep.terms.count(term) && rep.terms.at(term) > 0, std::string("loss term ") + term + " is zero");
  o.require(secs < 300, "runtime " + std::to_string(secs) + " s");
  std::ostringstream os;
  os << rep.tensors.size() << " tensors, " << rep.checked << " coordinates, max rel error " << rep.max_rel_error
     << ", " << rep.kinks << " kink resamples, " << secs << " s";
  if (o.pass) o.detail = os.str();
  return o;
}

// 3. Brute-force oracle equivalence.
Outcome oracle_equivalence() {
  Outcome o;
  const auto t0 = Clock::now();
  Rng rng(77);
  const int n = 1000;
  int nms_bad = 0, ap_bad = 0, det_bad = 0, seg_bad = 0;
  for (int i = 0; i < n; ++i) {
    const auto dets = oracle::random_nms_instance(rng, 20);
    const double thr = rng.uniform(-0.5, 0.9);
    const auto got = nms_eiou(dets, thr);
    const auto ref = oracle::nms(dets, thr);
    bool same = got.size() == ref.size();
    for (std::size_t k = 0; same && k < ref.size(); ++k)
      same = got[k].interval == dets[ref[k]].interval && got[k].refined_prob == dets[ref[k]].refined_prob;
    nms_bad += !same;
  }
  for (int i = 0; i < n; ++i) {
    const auto [dets, gts] = oracle::random_ap_instance(rng, 15, 5);
    ap_bad += std::abs(average_precision(dets, gts, 0.5) - oracle::average_precision(dets, gts, 0.5)) > 1e-12;
  }
  for (int i = 0; i < n; ++i) {
    LossConfig cfg;
    cfg.supervise_raw = rng.below(4) != 0;
    const auto in = oracle::random_det_instance(rng, 20, rng.below(3) != 0, i % 2 == 0);
    const double got = detection_loss(oracle::as_inputs(in), in.targets, cfg).value;
    const double ref = oracle::detection_loss(in, cfg);
    det_bad += std::abs(got - ref) > 1e-10 * std::max(1.0, std::abs(ref));
  }
  for (int i = 0; i < n; ++i) {
    LossConfig cfg;
    const auto in = oracle::random_seg_instance(rng, 20, 1 + static_cast<int>(rng.below(3)));
    std::vector<std::span<const double>> spans(in.stages.begin(), in.stages.end());
    const double got = segmentation_loss(spans, in.labels, in.valid, cfg).value;
    const double ref = oracle::segmentation_loss(in.stages, in.labels, in.valid, cfg);
    seg_bad += std::abs(got - ref) > 1e-10 * std::max(1.0, std::abs(ref));
  }
  const double secs = seconds_since(t0);
  o.require(nms_bad == 0, std::to_string(nms_bad) + " nms mismatches");
  o.require(ap_bad == 0, std::to_string(ap_bad) + " AP mismatches");
  o.require(det_bad == 0, std::to_string(det_bad) + " detection loss mismatches");
  o.require(seg_bad == 0, std::to_string(seg_bad) + " segmentation loss mismatches");
  o.require(secs < 60, "runtime " + std::to_string(secs) + " s");
  std::ostringstream os;
  os << n << " instances each for nms, AP, detection and segmentation loss, all equal, " << secs << " s";
  if (o.pass) o.detail = os.str();
  return o;
}

constexpr int kBenchmarkEpochs = 10;

// 4. Synthetic end-to-end LOVO benchmark plus the three-variant ablation.
Outcome synthetic_benchmark() {
  Outcome o;
  const auto t0 = Clock::now();
  const SynthConfig sc;
  const std::uint64_t seed = 0;
  auto ds = synth_generate(sc, derive_seed(seed, 5));
  std::vector<VideoRecord> videos;
  for (auto& seq : ds.sequences) {
    VideoRecord r;
    r.entry.video_id = seq.video_id;
    r.entry.session_id = seq.session_id;
    for (const auto& a : ds.annotations)
      if (a.video_id == seq.video_id) r.annotations.push_back(a);
    r.features = std::move(seq);
    videos.push_back(std::move(r));
  }
  std::vector<CvReport> reports;
  std::vector<double> times;
  for (Variant v : {Variant::shared, Variant::detection_only, Variant::independent}) {
    const auto tv = Clock::now();
    CvSettings cs;
    cs.train.seed = seed;
    cs.train.epochs = kBenchmarkEpochs;
    cs.train.variant = v;
    if (v == Variant::detection_only) cs.protocol.score_field = ScoreField::raw;
    cs.jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    reports.push_back(cross_validate(videos, CvStrategy::lovo, cs));
    times.push_back(seconds_since(tv));
    std::cout << "  " << variant_name(v) << ": mean AP " << reports.back().mean_ap << " over "
              << reports.back().folds.size() << " folds, " << times.back() << " s" << std::endl;
  }
  const double secs = seconds_since(t0);
  std::cout << "  ablation (LOVO, AP@0.5, prob 0.2, NMS 0.2, " << kBenchmarkEpochs << " epochs):\n";
  std::cout << "  | variant | folds | mean AP | seconds |\n  |---|---|---|---|\n";
  for (std::size_t i = 0; i < reports.size(); ++i)
    std::cout << "  | " << variant_name(reports[i].variant) << " | " << reports[i].folds.size() << " | " << std::fixed
              << std::setprecision(4) << reports[i].mean_ap << " | " << std::setprecision(0) << times[i] << " |\n"
              << std::defaultfloat << std::setprecision(6);
  const double shared_ap = reports.front().mean_ap;
  o.require(reports.front().folds.size() == 12, "expected 12 LOVO folds");
  o.require(shared_ap >= 0.60, "shared mean AP " + std::to_string(shared_ap) + " < 0.60");
  o.require(reports.size() == 3, "ablation incomplete");
  o.require(secs <= 3600, "runtime " + std::to_string(secs) + " s");
  std::ostringstream os;
  os << "shared LOVO mean AP " << shared_ap << " >= 0.60, ablation of 3 variants ran, " << secs << " s";
  if (o.pass) o.detail = os.str();
  return o;
}

// 5. Loss anchors.
Outcome loss_anchors() {
  Outcome o;
  o.require(std::abs(focal_loss(0.5, 1, 0.25, 2) - 0.25 * 0.25 * std::log(2.0)) <= 1e-9, "focal anchor");
  o.require(std::abs(dice_loss({1, 1, 1, 1}, {1, 1, 0, 0}, LossConfig{}.dice_eps) - 1.0 / 3.0) <= 1e-6,
            "dice anchor");
  o.require(smooth_l1(0.5) == 0.125, "smooth_l1 anchor");
  o.require(total_loss(1.0, 2.0, 0.0, LossConfig{}) == 7.0, "total loss anchor");
  ParamStore<double> zero;
  zero.add("w", ParamKind::weight, Tensor<double>(2, 2, 2, 0.0));
  o.require(total_loss(1.0, 2.0, zero, LossConfig{}) == 7.0, "total loss with zero weights");
  if (o.pass) o.detail = "focal, dice, smooth_l1 and total loss anchors hold";
  return o;
}

// 6. Two full CLI training runs are identical.
Outcome determinism() {
  Outcome o;
  const auto d = scratch("determinism");
  std::ofstream(d / "config.json") << R"({
    "synth": {"videos": 4, "sessions": 2, "frames": 2000},
    "model": {"stem_width": 16, "stage_widths": [16, 32, 64, 128], "fpn_width": 32, "seg_width": 16},
    "train": {"epochs": 2, "batch_size": 8, "seed": 11}
  })";
  o.require(run_cli("synth --config " + (d / "config.json").string() + " --out " + (d / "data").string()) == 0,
            "synth failed");
  const std::string exp = (d / "data" / "experiment.json").string();
  o.require(run_cli("train --config " + exp + " --out " + (d / "a").string()) == 0, "first train failed");
  o.require(run_cli("train --config " + exp + " --out " + (d / "b").string()) == 0, "second train failed");
  if (!o.pass) return o;
  const auto la = slurp(d / "a" / "train_log.jsonl"), lb = slurp(d / "b" / "train_log.jsonl");
  const auto ca = slurp(d / "a" / "model.ckpt"), cb = slurp(d / "b" / "model.ckpt");
  o.require(!la.empty() && la == lb, "training logs differ");
  o.require(!ca.empty() && ca == cb, "checkpoints differ");
  std::ostringstream os;
  os << "logs (" << std::count(la.begin(), la.end(), '\n') << " steps) and checkpoints (" << ca.size()
     << " bytes) identical";
  if (o.pass) o.detail = os.str();
  return o;
}

// 7. Grad-CAM contracts.
Outcome gradcam_contracts() {
  Outcome o;
  const auto mc = reduced_model_config();
  TNet<double> model(mc, 3);
  const auto win = gradcheck_batch(mc, 1, 4).front();
  const auto dets = detect_window(model, win, gradcheck_anchors(mc), 0.0);
  o.require(!dets.empty(), "no detections to explain");
  int checked = 0;
  for (std::size_t i = 0; i < dets.size(); i += std::max<std::size_t>(1, dets.size() / 10)) {
    for (const auto& layer : TNet<double>::target_layer_names()) {
      const auto r = grad_cam(model, win, dets[i], layer);
      o.require(static_cast<int>(r.cam.size()) == mc.window, "cam length != T");
      double mx = 0;
      for (double v : r.cam) {
        o.require(v >= 0 && v <= 1, "cam value outside [0, 1]");
        mx = std::max(mx, v);
      }
      o.require(mx == 0 || mx == 1, "cam maximum is neither 0 nor 1");
      ++checked;
    }
  }
  Rng rng(5);
  Tensor<double> F(6, 1, 24), A(6, 1, 24);
  for (std::size_t i = 0; i < F.size(); ++i) {
    F[i] = rng.normal();
    A[i] = rng.normal();
  }
  for (double v : compute_cam(F, Tensor<double>(6, 1, 24), 0, mc.window)) o.require(v == 0, "zero gradient cam != 0");
  // Linear head: logit = sum(A * F), so dlogit/dF = A for every map scale.
  auto linear_grad = [&](const Tensor<double>& map) {
    Graph<double> g(true);
    g.set_input_grads(true);
    auto f = g.input(map);
    Tensor<double> w(1, map.channels(), map.length());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = A[i];
    g.backward(ops::conv1d(g, f, g.constant(w), Var<double>{}, 1, 0));
    return f->grad;
  };
  const auto base = compute_cam(F, linear_grad(F), 0, mc.window);
  for (double k : {0.05, 4.0, 300.0}) {
    Tensor<double> Fk = F;
    for (std::size_t i = 0; i < Fk.size(); ++i) Fk[i] *= k;
    const auto cam = compute_cam(Fk, linear_grad(Fk), 0, mc.window);
    for (std::size_t t = 0; t < cam.size(); ++t)
      o.require(std::abs(cam[t] - base[t]) <= 1e-12, "linear-head rescaling changed the cam");
  }
  std::ostringstream os;
  os << checked << " model cams length T in [0,1], zero-gradient cam is zero, rescaling invariance holds";
  if (o.pass) o.detail = os.str();
  return o;
}

// 8. Data pipeline fuzz.
Outcome data_pipeline() {
  Outcome o;
  Rng rng(88);
  int coverage_fail = 0, label_fail = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const int window = 1 + static_cast<int>(rng.below(500));
    const int stride = 1 + static_cast<int>(rng.below(window));
    const int frames = 1 + static_cast<int>(rng.below(5000));
    std::vector<bool> covered(frames, false);
    for (int s : window_starts(frames, window, stride)) {
      if (s < 0 || (frames > window && s + window > frames)) ++coverage_fail;
      for (int l = std::max(0, s); l < std::min(frames, s + window); ++l) covered[l] = true;
    }
    coverage_fail += std::count(covered.begin(), covered.end(), false) > 0;
  }
  for (int trial = 0; trial < 1000; ++trial) {
    const int frames = 20 + static_cast<int>(rng.below(600));
    const int window = 8 * (1 + static_cast<int>(rng.below(20)));
    const int stride = 1 + static_cast<int>(rng.below(window));
    FeatureSequence seq;
    seq.video_id = "f";
    seq.channels = 1;
    seq.frames = frames;
    seq.values.assign(frames, 0.0f);
    std::vector<Annotation> anns;
    const int n = static_cast<int>(rng.below(8));
    for (int i = 0; i < n; ++i) {
      const int a = static_cast<int>(rng.below(frames));
      const int b = std::min(frames, a + 1 + static_cast<int>(rng.below(80)));
      anns.push_back({"f", {static_cast<double>(a), static_cast<double>(b)}});
    }
    bool ok = true;
    for (const auto& w : make_windows(seq, anns, window, stride)) {
      for (int j = 0; j < window; ++j) {
        bool expect = false;
        const int g = w.start + j;
        if (j < w.valid_length)
          for (const auto& a : anns) expect = expect || (a.interval.start <= g && g < a.interval.end);
        ok = ok && w.frame_labels[j] == (expect ? 1 : 0);
      }
    }
    label_fail += !ok;
  }
  o.require(coverage_fail == 0, std::to_string(coverage_fail) + " coverage failures");
  o.require(label_fail == 0, std::to_string(label_fail) + " label mismatches");
  if (o.pass) o.detail = "2000 fuzzed (L, T, stride) covered, 1000 label fixtures consistent";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"EIoU unit suite", eiou_suite},
      {"gradient verification", gradient_check},
      {"oracle equivalence", oracle_equivalence},
      {"synthetic end-to-end", synthetic_benchmark},
      {"loss anchors", loss_anchors},
      {"determinism", determinism},
      {"Grad-CAM contracts", gradcam_contracts},
      {"data pipeline", data_pipeline},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
