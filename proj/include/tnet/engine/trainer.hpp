#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tnet/data/windows.hpp"
#include "tnet/engine/checkpoint.hpp"
#include "tnet/engine/objective.hpp"
#include "tnet/engine/optimizer.hpp"

namespace tnet {

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 1e-3;
  int batch_size = 16;
  int epochs = 50;
  std::uint64_t seed = 0;
  std::optional<double> grad_clip;
  Variant variant = Variant::shared;
  bool cosine_decay = false;
  double augment_sigma = 0.01;
  double augment_prob = 0.5;
  double momentum = 0.9;  // sgd only

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("train.learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (grad_clip && !(*grad_clip > 0)) throw ConfigError("train.grad_clip must be > 0 when set");
    if (!(augment_sigma >= 0)) throw ConfigError("train.augment_sigma must be >= 0");
    if (!(augment_prob >= 0 && augment_prob <= 1)) throw ConfigError("train.augment_prob must lie in [0, 1]");
  }

  OptimizerSettings optimizer_settings() const {
    OptimizerSettings s;
    s.kind = optimizer;
    s.momentum = momentum;
    return s;
  }

  // Learning rate for a zero-based global step out of `total_steps`.
  double lr_at(std::int64_t step, std::int64_t total_steps) const {
    if (!cosine_decay || total_steps <= 0) return learning_rate;
    const double t = std::min<double>(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
    return learning_rate * 0.5 * (1 + std::cos(std::numbers::pi * t));
  }
  bool operator==(const TrainConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"optimizer", c.optimizer},         {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
       {"epochs", c.epochs},               {"seed", c.seed},                   {"grad_clip", nullptr},
       {"variant", c.variant},             {"cosine_decay", c.cosine_decay},   {"augment_sigma", c.augment_sigma},
       {"augment_prob", c.augment_prob},   {"momentum", c.momentum}};
  if (c.grad_clip) j["grad_clip"] = *c.grad_clip;
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.optimizer = j.value("optimizer", d.optimizer);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.seed = j.value("seed", d.seed);
  c.grad_clip.reset();
  if (j.contains("grad_clip") && !j["grad_clip"].is_null()) c.grad_clip = j["grad_clip"].get<double>();
  c.variant = j.value("variant", d.variant);
  c.cosine_decay = j.value("cosine_decay", d.cosine_decay);
  c.augment_sigma = j.value("augment_sigma", d.augment_sigma);
  c.augment_prob = j.value("augment_prob", d.augment_prob);
  c.momentum = j.value("momentum", d.momentum);
}

struct LogRecord {
  int epoch = 0;
  std::int64_t step = 0;
  double loss_det = 0;
  double loss_seg = 0;
  double loss_total = 0;
  double lr = 0;
  bool operator==(const LogRecord&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LogRecord, epoch, step, loss_det, loss_seg, loss_total, lr)

struct EpochSummary {
  int epoch = 0;
  double loss_det = 0;
  double loss_seg = 0;
  double loss_total = 0;
  std::optional<double> validation_ap;
};

inline void to_json(nlohmann::json& j, const EpochSummary& e) {
  j = {{"epoch", e.epoch}, {"loss_det", e.loss_det}, {"loss_seg", e.loss_seg}, {"loss_total", e.loss_total}};
  if (e.validation_ap) j["validation_ap"] = *e.validation_ap;
}

struct StepLosses {
  double det = 0;
  double seg = 0;
  double l2 = 0;     // sum of squared regularized weights
  double total = 0;  // det + alpha * seg + beta * l2
};

inline std::string batch_ids(const std::vector<const WindowSample*>& batch) {
  std::string s;
  for (const auto* w : batch) s += (s.empty() ? "" : ", ") + w->id();
  return s;
}

// One optimizer update on a batch. Returns the losses measured before the update.
template <typename S>
StepLosses train_step(TNet<S>& model, Optimizer<S>& opt, const std::vector<const WindowSample*>& batch,
                      const std::vector<const WindowTargets*>& targets, const std::vector<AnchorRef>& refs,
                      const LossConfig& loss, double lr, std::optional<double> grad_clip = std::nullopt) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  model.params().zero_grad();
  Graph<S> g(true);
  auto obj = build_objective(g, model, batch, targets, refs, loss, true);
  StepLosses out;
  out.det = obj.det->val()[0];
  out.seg = obj.seg ? double(obj.seg->val()[0]) : 0.0;
  out.l2 = model.params().l2();
  out.total = total_loss(out.det, out.seg, out.l2, loss);
  if (!std::isfinite(out.total)) {
    throw TrainingError("non-finite training loss", batch_ids(batch));
  }
  g.backward(obj.total);
  apply_l2(model.params(), loss.beta);
  if (grad_clip) clip_grad_norm(model.params(), *grad_clip);
  opt.step(model.params(), lr);
  return out;
}

// Convenience overload: derives anchors and targets from the windows.
template <typename S>
StepLosses train_step(TNet<S>& model, Optimizer<S>& opt, const std::vector<WindowSample>& batch,
                      const AnchorSet& anchors, const LossConfig& loss, double lr,
                      std::optional<double> grad_clip = std::nullopt) {
  check_anchor_consistency(model, anchors);
  const auto refs = window_anchors(anchors, model.config().window);
  std::vector<WindowTargets> targets;
  std::vector<const WindowSample*> bp;
  std::vector<const WindowTargets*> tp;
  targets.reserve(batch.size());
  for (const auto& w : batch) targets.push_back(make_targets(refs, w.gt_intervals, w.valid_length, loss.thresholds()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    bp.push_back(&batch[i]);
    tp.push_back(&targets[i]);
  }
  return train_step(model, opt, bp, tp, refs, loss, lr, grad_clip);
}

// Model and optimizer state between epochs.
template <typename S>
struct TrainState {
  std::unique_ptr<TNet<S>> model;
  std::unique_ptr<Optimizer<S>> optimizer;
  int epochs_done = 0;
  std::int64_t steps_done = 0;
};

template <typename S>
void save_train_state(const TrainState<S>& st, const std::filesystem::path& path, const TrainConfig& tc,
                      const LossConfig& lc, const AnchorSet& anchors) {
  auto file = model_checkpoint(*st.model, lc,
                               {{"kind", "train"}, {"train", tc}, {"anchors", anchors},
                                {"epochs_done", st.epochs_done}, {"steps_done", st.steps_done}});
  append_optimizer_state(file, *st.model, *st.optimizer);
  write_checkpoint_file(file, path);
}

template <typename S>
TrainState<S> load_train_state(const std::filesystem::path& path, const ModelConfig& expected,
                               const TrainConfig& tc) {
  const auto file = read_checkpoint_file(path);
  const auto p = path.string();
  const auto echoed = checkpoint_model_config(file, p);
  if (!(echoed == expected)) throw VersionError(p + ": training state was written for a different model config");
  if (!file.header.contains("epochs_done") || !file.header.contains("steps_done"))
    throw FormatError(p + ": not a training checkpoint");
  TrainState<S> st;
  st.model = std::make_unique<TNet<S>>(expected, 0);
  restore_parameters(*st.model, file, p);
  st.optimizer = std::make_unique<Optimizer<S>>(st.model->params(), tc.optimizer_settings());
  restore_optimizer_state(*st.optimizer, *st.model, file, p);
  st.epochs_done = file.header["epochs_done"].get<int>();
  st.steps_done = file.header["steps_done"].get<std::int64_t>();
  return st;
}

template <typename S>
struct FitOptions {
  // Returns validation AP for the current model; enables best-model retention.
  std::function<double(const TNet<S>&)> validate;
  std::function<void(const LogRecord&)> on_step;
  std::function<void(const EpochSummary&, const TrainState<S>&)> on_epoch;
  TrainState<S>* resume = nullptr;  // continue from this state (consumed)
};

template <typename S>
struct FitResult {
  std::unique_ptr<TNet<S>> model;  // best by validation AP when validating, else final
  std::unique_ptr<Optimizer<S>> optimizer;
  std::vector<LogRecord> log;
  std::vector<EpochSummary> epochs;
  int best_epoch = -1;
  double best_ap = -1;
};

inline std::uint64_t model_seed(const TrainConfig& tc) { return derive_seed(tc.seed, 1); }

inline ModelConfig with_variant(ModelConfig mc, const TrainConfig& tc) {
  mc.variant = tc.variant;
  return mc;
}

// Trains a fresh model (or resumes) on `dataset`. The model variant comes from
// the train config.
template <typename S>
FitResult<S> fit(const std::vector<WindowSample>& dataset, const AnchorSet& anchors, const ModelConfig& model_cfg,
                 const TrainConfig& tc, const LossConfig& lc, FitOptions<S> opts = {}) {
  if (dataset.empty()) throw ConfigError("fit: empty training set");
  tc.validate();
  lc.validate();
  const ModelConfig mc = with_variant(model_cfg, tc);
  TrainState<S> st;
  if (opts.resume) {
    st = std::move(*opts.resume);
    if (!(st.model->config() == mc)) throw VersionError("fit: resume state has a different model config");
  } else {
    st.model = std::make_unique<TNet<S>>(mc, model_seed(tc));
    st.optimizer = std::make_unique<Optimizer<S>>(st.model->params(), tc.optimizer_settings());
  }
  check_anchor_consistency(*st.model, anchors);
  const auto refs = window_anchors(anchors, mc.window);
  std::vector<WindowTargets> targets;
  targets.reserve(dataset.size());
  for (const auto& w : dataset) {
    if (w.channels != mc.in_channels || w.length != mc.window)
      throw ShapeError("fit: window " + w.id() + " does not match the model input shape");
    targets.push_back(make_targets(refs, w.gt_intervals, w.valid_length, lc.thresholds()));
  }

  const std::size_t n = dataset.size();
  const std::size_t bs = static_cast<std::size_t>(tc.batch_size);
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>((n + bs - 1) / bs);
  const std::int64_t total_steps = steps_per_epoch * tc.epochs;
  FitResult<S> res;
  std::vector<Tensor<S>> best;
  const std::uint64_t shuffle_base = derive_seed(tc.seed, 2);
  const std::uint64_t augment_base = derive_seed(tc.seed, 3);

  for (int epoch = st.epochs_done; epoch < tc.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(shuffle_base, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order.begin(), order.end());
    EpochSummary summary;
    summary.epoch = epoch;
    for (std::size_t b0 = 0; b0 < n; b0 += bs) {
      std::vector<WindowSample> augmented;
      std::vector<const WindowSample*> bp;
      std::vector<const WindowTargets*> tp;
      const std::size_t b1 = std::min(n, b0 + bs);
      augmented.reserve(b1 - b0);
      for (std::size_t i = b0; i < b1; ++i) {
        const std::size_t idx = order[i];
        augmented.push_back(augment_noise(dataset[idx], tc.augment_sigma, tc.augment_prob,
                                          derive_seed(augment_base, static_cast<std::uint64_t>(epoch), idx)));
        tp.push_back(&targets[idx]);
      }
      for (const auto& w : augmented) bp.push_back(&w);
      const double lr = tc.lr_at(st.steps_done, total_steps);
      const auto losses = train_step(*st.model, *st.optimizer, bp, tp, refs, lc, lr, tc.grad_clip);
      LogRecord rec{epoch, st.steps_done, losses.det, losses.seg, losses.total, lr};
      ++st.steps_done;
      const double w = static_cast<double>(b1 - b0) / static_cast<double>(n);
      summary.loss_det += w * losses.det;
      summary.loss_seg += w * losses.seg;
      summary.loss_total += w * losses.total;
      if (opts.on_step) opts.on_step(rec);
      res.log.push_back(rec);
    }
    st.epochs_done = epoch + 1;
    if (opts.validate) {
      const double ap = opts.validate(*st.model);
      summary.validation_ap = ap;
      if (ap > res.best_ap) {
        res.best_ap = ap;
        res.best_epoch = epoch;
        best.clear();
        for (const auto& p : st.model->params().all()) best.push_back(p->value);
      }
    }
    res.epochs.push_back(summary);
    if (opts.on_epoch) opts.on_epoch(summary, st);
  }
  if (!best.empty()) {
    const auto& ps = st.model->params().all();
    for (std::size_t k = 0; k < ps.size(); ++k) ps[k]->value = best[k];
  }
  res.model = std::move(st.model);
  res.optimizer = std::move(st.optimizer);
  return res;
}

}  // namespace tnet
