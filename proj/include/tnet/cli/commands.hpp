#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tnet/cli/config.hpp"
#include "tnet/data/io.hpp"
#include "tnet/data/manifest.hpp"
#include "tnet/data/synth.hpp"
#include "tnet/engine/checkpoint.hpp"
#include "tnet/engine/trainer.hpp"
#include "tnet/evalkit/crossval.hpp"
#include "tnet/explain/gradcam.hpp"

namespace tnet::cli {

inline constexpr const char* kVersion = "1.0.0";

namespace fs = std::filesystem;

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string out;
};

struct Context {
  ExperimentConfig cfg;
  fs::path out;
  int jobs = 1;
  std::string command;
  std::vector<std::string> argv;
  std::vector<std::string> outputs;
  std::ostream* log = &std::cerr;

  fs::path output(const std::string& rel) {
    const fs::path p = out / rel;
    fs::create_directories(p.parent_path());
    outputs.push_back(fs::relative(p, out).generic_string());
    return p;
  }
};

inline void write_json(const nlohmann::json& j, const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

inline std::string absolute_or_empty(const std::string& p) {
  return p.empty() ? p : fs::absolute(p).lexically_normal().string();
}

// Config echo with absolute paths, so a rerun from the manifest does not
// depend on the working directory.
inline nlohmann::json config_echo(const Context& ctx) {
  auto c = ctx.cfg;
  c.data.manifest = absolute_or_empty(c.data.manifest);
  c.data.annotations = absolute_or_empty(c.data.annotations);
  c.anchors.path = absolute_or_empty(c.anchors.path);
  c.output_dir = absolute_or_empty(ctx.out.string());
  return c;
}

inline void write_run_manifest(Context& ctx) {
  nlohmann::json m = {{"command", ctx.command},
                      {"argv", ctx.argv},
                      {"seed", ctx.cfg.train.seed},
                      {"code_version", kVersion},
                      {"config", config_echo(ctx)},
                      {"outputs", ctx.outputs}};
  fs::create_directories(ctx.out);
  write_json(m, ctx.out / ("run_manifest_" + ctx.command + ".json"));
}

// ---------------------------------------------------------------------------
// Data access
// ---------------------------------------------------------------------------

inline void require_file(const std::string& path, const char* field) {
  if (path.empty()) throw ConfigError(std::string(field) + " is not set");
  if (!fs::exists(path)) throw ConfigError(std::string(field) + ": " + path + " does not exist");
}

inline std::vector<VideoRecord> load_dataset(const ExperimentConfig& cfg) {
  require_file(cfg.data.manifest, "data.manifest");
  require_file(cfg.data.annotations, "data.annotations");
  auto videos = load_videos(load_manifest(cfg.data.manifest), load_annotations(cfg.data.annotations));
  if (videos.empty()) throw DataError("manifest " + cfg.data.manifest + " lists no videos");
  for (const auto& v : videos)
    if (v.features.channels != cfg.model.in_channels)
      throw ShapeError("video " + v.entry.video_id + " has " + std::to_string(v.features.channels) +
                       " channels, model.in_channels is " + std::to_string(cfg.model.in_channels));
  return videos;
}

// Videos carrying `tag`; when no video carries any split tag, `untagged`
// decides whether all videos are returned.
inline std::vector<const VideoRecord*> split(const std::vector<VideoRecord>& videos, const std::string& tag,
                                             bool untagged) {
  bool any_tags = false;
  for (const auto& v : videos) any_tags = any_tags || !v.entry.split_tags.empty();
  std::vector<const VideoRecord*> out;
  for (const auto& v : videos)
    if (any_tags ? v.entry.has_tag(tag) : untagged) out.push_back(&v);
  return out;
}

inline std::vector<Annotation> annotations_of(const std::vector<const VideoRecord*>& vs) {
  std::vector<Annotation> out;
  for (const auto* v : vs) out.insert(out.end(), v->annotations.begin(), v->annotations.end());
  return out;
}

inline std::uint64_t anchor_seed(const ExperimentConfig& cfg) { return derive_seed(cfg.train.seed, 4); }

inline AnchorSet resolve_anchors(const ExperimentConfig& cfg, const std::vector<const VideoRecord*>& train) {
  if (!cfg.anchors.path.empty()) {
    require_file(cfg.anchors.path, "anchors.path");
    try {
      return read_json(cfg.anchors.path).get<AnchorSet>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(cfg.anchors.path + ": " + e.what());
    }
  }
  return anchors_from_annotations(annotations_of(train), cfg.effective_model(), anchor_seed(cfg));
}

template <typename S>
double evaluate_ap(const TNet<S>& model, const std::vector<const VideoRecord*>& videos, const AnchorSet& anchors,
                   const EvalProtocol& protocol, std::vector<Detection>* dets_out = nullptr) {
  std::vector<Detection> dets;
  std::vector<Annotation> gts;
  for (const auto* v : videos) {
    auto d = infer_video(model, v->features, anchors, protocol);
    dets.insert(dets.end(), d.begin(), d.end());
    gts.insert(gts.end(), v->annotations.begin(), v->annotations.end());
  }
  const double ap = average_precision(dets, gts, protocol.iou_thresh, protocol.score_field);
  if (dets_out) *dets_out = std::move(dets);
  return ap;
}

struct LoadedModel {
  std::unique_ptr<TNet<float>> model;
  AnchorSet anchors;
};

inline LoadedModel load_trained(const Context& ctx, const std::string& checkpoint) {
  const fs::path path = checkpoint.empty() ? ctx.out / "model.ckpt" : fs::path(checkpoint);
  if (!fs::exists(path))
    throw UsageError("no checkpoint at " + path.string() + "; run `train` first or pass --checkpoint");
  const auto file = read_checkpoint_file(path);
  LoadedModel lm;
  lm.model = std::make_unique<TNet<float>>(checkpoint_model_config(file, path.string()), 0);
  restore_parameters(*lm.model, file, path.string());
  if (!file.header.contains("anchors")) throw FormatError(path.string() + ": checkpoint carries no anchor set");
  lm.anchors = file.header["anchors"].get<AnchorSet>();
  return lm;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline int cmd_synth(Context& ctx, const std::string& format) {
  const auto& cfg = ctx.cfg;
  const auto ds = synth_generate(cfg.synth, derive_seed(cfg.train.seed, 5));
  const std::string ext = format == "csv" ? ".csv" : ".bin";
  Manifest manifest;
  const std::string last_session = synth_session_id(cfg.synth, cfg.synth.videos - 1);
  for (const auto& s : ds.sequences) {
    const std::string rel = "features/" + s.video_id + ext;
    const auto path = ctx.output(rel);
    if (format == "csv") {
      save_features_csv(s, path);
    } else {
      save_features_binary(s, path);
    }
    const bool test = cfg.synth.sessions > 1 && s.session_id == last_session;
    manifest.push_back({s.video_id, s.session_id, rel, {test ? "test" : "train"}});
  }
  save_manifest(manifest, ctx.output("manifest.json"));
  save_annotations(ds.annotations, ctx.output("annotations.csv"));
  // Ready-to-use experiment config pointing at the generated data.
  auto exp = ctx.cfg;
  exp.data.manifest = fs::absolute(ctx.out / "manifest.json").lexically_normal().string();
  exp.data.annotations = fs::absolute(ctx.out / "annotations.csv").lexically_normal().string();
  exp.output_dir = fs::absolute(ctx.out / "run").lexically_normal().string();
  write_json(exp, ctx.output("experiment.json"));
  *ctx.log << "synth: " << ds.sequences.size() << " videos, " << ds.annotations.size() << " events -> "
           << ctx.out.string() << '\n';
  return 0;
}

inline int cmd_gen_anchors(Context& ctx) {
  const auto videos = load_dataset(ctx.cfg);
  const auto train = split(videos, "train", true);
  if (annotations_of(train).empty()) throw DataError("no training annotations to cluster");
  const int k = ctx.cfg.anchors.k;
  if (k < 4 || k % 4 != 0) throw ConfigError("anchors.k must be a positive multiple of 4, got " + std::to_string(k));
  std::vector<double> durations;
  for (const auto& a : annotations_of(train)) durations.push_back(a.interval.length());
  const auto centroids = kmeans_anchors(durations, k, anchor_seed(ctx.cfg));
  const auto set = build_anchor_set(centroids, ctx.cfg.model.strides());
  write_json(set, ctx.output("anchors.json"));
  std::cout << "centroids:";
  for (double c : centroids) std::cout << ' ' << std::setprecision(6) << c;
  std::cout << '\n';
  return 0;
}

inline int cmd_train(Context& ctx, const std::string& resume) {
  const auto& cfg = ctx.cfg;
  const auto videos = load_dataset(cfg);
  const auto train_v = split(videos, "train", true);
  const auto val_v = split(videos, "val", false);
  if (train_v.empty()) throw DataError("no training videos");
  const auto mc = cfg.effective_model();
  const auto anchors = resolve_anchors(cfg, train_v);
  write_json(anchors, ctx.output("anchors.json"));
  const auto windows = training_windows(train_v, mc.window);

  std::ofstream log(ctx.output("train_log.jsonl"));
  std::ofstream epochs(ctx.output("epochs.jsonl"));
  FitOptions<float> opts;
  opts.on_step = [&](const LogRecord& r) { log << nlohmann::json(r).dump() << '\n'; };
  const auto state_path = ctx.output("train_state.ckpt");
  opts.on_epoch = [&](const EpochSummary& e, const TrainState<float>& st) {
    epochs << nlohmann::json(e).dump() << '\n';
    if (st.epochs_done == cfg.train.epochs) save_train_state(st, state_path, cfg.train, cfg.loss, anchors);
    *ctx.log << "epoch " << e.epoch << " loss " << e.loss_total << " (det " << e.loss_det << ", seg " << e.loss_seg
             << ")" << (e.validation_ap ? " val AP " + std::to_string(*e.validation_ap) : "") << '\n';
  };
  if (!val_v.empty()) {
    opts.validate = [&](const TNet<float>& m) { return evaluate_ap(m, val_v, anchors, cfg.eval); };
  }
  TrainState<float> resumed;
  if (!resume.empty()) {
    if (!fs::exists(resume)) throw UsageError("resume checkpoint " + resume + " does not exist");
    resumed = load_train_state<float>(resume, mc, cfg.train);
    opts.resume = &resumed;
  }
  auto res = fit<float>(windows, anchors, mc, cfg.train, cfg.loss, opts);
  const nlohmann::json extra = {{"anchors", anchors}, {"train", cfg.train}};
  save_checkpoint(*res.model, ctx.output("model.ckpt"), cfg.loss, extra);
  *ctx.log << "train: " << windows.size() << " windows, " << res.log.size() << " steps -> "
           << (ctx.out / "model.ckpt").string() << '\n';
  return 0;
}

inline int cmd_eval(Context& ctx, const std::string& checkpoint) {
  const auto lm = load_trained(ctx, checkpoint);
  const auto videos = load_dataset(ctx.cfg);
  const auto test = split(videos, "test", true);
  if (test.empty()) throw DataError("no test videos");
  std::vector<Detection> dets;
  const double ap = evaluate_ap(*lm.model, test, lm.anchors, ctx.cfg.eval, &dets);
  std::vector<std::string> ids;
  for (const auto* v : test) ids.push_back(v->entry.video_id);
  FoldResult fold;
  fold.fold_id = "test";
  fold.test_ids = ids;
  fold.ap = ap;
  fold.pr = pr_curve(dets, annotations_of(test), ctx.cfg.eval.iou_thresh, ctx.cfg.eval.score_field);
  nlohmann::json report = {{"strategy", "holdout"},
                           {"variant", variant_name(lm.model->config().variant)},
                           {"folds", {{{"fold_id", fold.fold_id}, {"test_ids", ids}, {"ap", ap}}}},
                           {"mean_ap", ap}};
  write_json(report, ctx.output("eval/report.json"));
  write_json(dets, ctx.output("eval/detections.json"));
  write_pr_csv(fold, ctx.output("eval/pr.csv"));
  std::cout << "AP@" << ctx.cfg.eval.iou_thresh << " = " << ap << " over " << ids.size() << " videos\n";
  return 0;
}

inline const VideoRecord& find_video(const std::vector<VideoRecord>& videos, const std::string& id) {
  for (const auto& v : videos)
    if (v.entry.video_id == id) return v;
  throw UsageError("video '" + id + "' is not in the manifest");
}

inline int cmd_infer(Context& ctx, const std::string& checkpoint, const std::string& video,
                     const std::string& features) {
  const auto lm = load_trained(ctx, checkpoint);
  FeatureSequence seq;
  if (!features.empty()) {
    seq = load_features(features, format_from_path(features));
  } else if (!video.empty()) {
    seq = find_video(load_dataset(ctx.cfg), video).features;
  } else {
    throw UsageError("infer needs --video or --features");
  }
  const auto dets = infer_video(*lm.model, seq, lm.anchors, ctx.cfg.eval);
  write_json(dets, ctx.output("infer/" + seq.video_id + ".json"));
  std::cout << seq.video_id << ": " << dets.size() << " detections\n";
  return 0;
}

inline int cmd_explain(Context& ctx, const std::string& checkpoint, const std::string& video, int detection,
                       const std::string& layer) {
  if (video.empty()) throw UsageError("explain needs --video");
  const auto lm = load_trained(ctx, checkpoint);
  const auto videos = load_dataset(ctx.cfg);
  const auto& rec = find_video(videos, video);
  const auto dets = infer_video(*lm.model, rec.features, lm.anchors, ctx.cfg.eval);
  if (detection < 0 || detection >= static_cast<int>(dets.size()))
    throw UsageError("detection index " + std::to_string(detection) + " out of range; video has " +
                     std::to_string(dets.size()) + " detections");
  const auto& d = dets[detection];
  const int window = lm.model->config().window;
  WindowSample win;
  for (auto& w : make_windows(rec.features, {}, window, window / 2))
    if (w.start == d.window_start) win = std::move(w);
  Detection local = d;
  local.interval = {d.interval.start - d.window_start, d.interval.end - d.window_start};
  auto cam = grad_cam(*lm.model, win, local, layer);
  cam.detection = d;
  const std::string stem = "explain/" + video + "_" + std::to_string(detection);
  write_json(cam, ctx.output(stem + ".json"));
  write_cam_csv(cam, ctx.output(stem + ".csv"));
  write_cam_heatmap(cam, win, ctx.output(stem + "_heatmap.csv"));
  std::cout << "grad-cam on " << cam.target_layer << " for detection " << detection << " [" << d.interval.start
            << ", " << d.interval.end << ")\n";
  return 0;
}

inline std::vector<Variant> parse_variants(const std::string& list, Variant fallback) {
  if (list.empty()) return {fallback};
  std::vector<Variant> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    nlohmann::json j = item;
    Variant v;
    try {
      v = j.get<Variant>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("unknown variant '" + item + "'");
    }
    if (nlohmann::json(v).get<std::string>() != item) throw ConfigError("unknown variant '" + item + "'");
    out.push_back(v);
  }
  return out;
}

inline std::string comparison_table(const std::vector<CvReport>& reports) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "| variant | strategy | folds | mean AP |\n|---|---|---|---|\n";
  for (const auto& r : reports)
    os << "| " << variant_name(r.variant) << " | " << nlohmann::json(r.strategy).get<std::string>() << " | "
       << r.folds.size() << " | " << r.mean_ap << " |\n";
  return os.str();
}

inline std::vector<CvReport> run_crossval(Context& ctx, const std::string& strategy_name, const std::string& variants) {
  const auto strategy = parse_strategy(strategy_name);
  const auto videos = load_dataset(ctx.cfg);
  std::vector<CvReport> reports;
  for (auto v : parse_variants(variants, ctx.cfg.train.variant)) {
    CvSettings cs;
    cs.model = ctx.cfg.model;
    cs.train = ctx.cfg.train;
    cs.train.variant = v;
    cs.loss = ctx.cfg.loss;
    cs.protocol = ctx.cfg.eval;
    if (v == Variant::detection_only) cs.protocol.score_field = ScoreField::raw;
    cs.jobs = ctx.jobs;
    cs.on_fold = [&](const FoldResult& f) {
      *ctx.log << variant_name(v) << " fold " << f.fold_id << " AP " << f.ap << '\n';
    };
    auto rep = cross_validate(videos, strategy, cs);
    const std::string dir = std::string("crossval/") + variant_name(v) + "/";
    write_json(rep, ctx.output(dir + "report.json"));
    for (const auto& f : rep.folds) {
      write_pr_csv(f, ctx.output(dir + "pr_" + f.fold_id + ".csv"));
      write_json(f.detections, ctx.output(dir + "detections_" + f.fold_id + ".json"));
    }
    *ctx.log << variant_name(v) << " " << strategy_name << " mean AP " << rep.mean_ap << '\n';
    reports.push_back(std::move(rep));
  }
  const auto table = comparison_table(reports);
  std::ofstream(ctx.output("crossval/comparison.md")) << table;
  std::ofstream csv(ctx.output("crossval/comparison.csv"));
  csv << "variant,strategy,folds,mean_ap\n";
  for (const auto& r : reports)
    csv << variant_name(r.variant) << ',' << nlohmann::json(r.strategy).get<std::string>() << ',' << r.folds.size()
        << ',' << std::setprecision(10) << r.mean_ap << '\n';
  std::cout << table;
  return reports;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int exit_code(const Error& e) { return static_cast<int>(e.category()); }

inline ExperimentConfig resolve_config(const GlobalOptions& g) {
  std::string path = g.config;
  if (path.empty())
    if (const char* env = std::getenv(kConfigEnv); env && *env) path = env;
  ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config(path);
  if (g.seed) cfg.train.seed = *g.seed;
  if (!g.out.empty()) cfg.output_dir = g.out;
  cfg.validate();
  return cfg;
}

inline int run(int argc, const char* const* argv, std::ostream& err = std::cerr) {
  CLI::App app{"T-Net temporal tic detector"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config, "experiment config JSON (default: $TNET_CONFIG)");
  app.add_option("--seed", g.seed, "override train.seed");
  app.add_option("--jobs", g.jobs, "parallel folds for crossval")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "output directory (overrides output_dir)");
  app.set_version_flag("--version", kVersion);

  std::string format = "binary", checkpoint, video, features, layer, strategy = "LOVO", variants, resume;
  int detection = 0;
  auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
  synth->add_option("--format", format, "feature file format")->check(CLI::IsMember({"binary", "csv"}));
  app.add_subcommand("gen-anchors", "k-means anchor lengths from training annotations");
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--resume", resume, "training checkpoint to continue from");
  auto* eval = app.add_subcommand("eval", "evaluate AP on the test split");
  auto* infer = app.add_subcommand("infer", "detect tics in one video");
  auto* explain = app.add_subcommand("explain", "1D Grad-CAM for one detection");
  auto* crossval = app.add_subcommand("crossval", "LOSO/LOVO cross-validation");
  for (auto* sc : {eval, infer, explain}) sc->add_option("--checkpoint", checkpoint, "model checkpoint");
  for (auto* sc : {infer, explain}) sc->add_option("--video", video, "video id from the manifest");
  infer->add_option("--features", features, "feature file to run on instead of a manifest video");
  explain->add_option("--detection", detection, "index into the video's detections");
  explain->add_option("--layer", layer, "target layer (en0..en4, fpn1..fpn4)");
  crossval->add_option("--strategy", strategy, "LOSO or LOVO");
  crossval->add_option("--variants", variants, "comma-separated variants (shared,independent,detection_only)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    std::cout << kVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return static_cast<int>(ErrorCategory::usage);
  }

  try {
    Context ctx;
    ctx.cfg = resolve_config(g);
    ctx.out = ctx.cfg.output_dir;
    ctx.jobs = g.jobs;
    ctx.log = &err;
    for (int i = 0; i < argc; ++i) ctx.argv.emplace_back(argv[i]);
    fs::create_directories(ctx.out);
    int rc = 0;
    const auto* sub = app.get_subcommands().front();
    ctx.command = sub->get_name();
    if (ctx.command == "synth") rc = cmd_synth(ctx, format);
    else if (ctx.command == "gen-anchors") rc = cmd_gen_anchors(ctx);
    else if (ctx.command == "train") rc = cmd_train(ctx, resume);
    else if (ctx.command == "eval") rc = cmd_eval(ctx, checkpoint);
    else if (ctx.command == "infer") rc = cmd_infer(ctx, checkpoint, video, features);
    else if (ctx.command == "explain") rc = cmd_explain(ctx, checkpoint, video, detection, layer);
    else if (ctx.command == "crossval") run_crossval(ctx, strategy, variants);
    write_run_manifest(ctx);
    return rc;
  } catch (const Error& e) {
    err << "error [" << category_name(e.category()) << "]: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    err << "error [internal]: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace tnet::cli
