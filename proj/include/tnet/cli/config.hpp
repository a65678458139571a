#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "json.hpp"
#include "tnet/data/synth.hpp"
#include "tnet/engine/trainer.hpp"
#include "tnet/evalkit/protocol.hpp"

namespace tnet::cli {

struct DataPaths {
  std::string manifest;
  std::string annotations;
  bool operator==(const DataPaths&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataPaths, manifest, annotations)

// Anchors come from `path` when set, otherwise from k-means with `k`
// clusters over the training annotations.
struct AnchorSpec {
  std::string path;
  int k = 12;
  bool operator==(const AnchorSpec&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AnchorSpec, path, k)

struct ExperimentConfig {
  DataPaths data;
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  EvalProtocol eval;
  AnchorSpec anchors;
  SynthConfig synth;
  std::string output_dir = "runs/default";

  // Model config with the variant taken from the train section.
  ModelConfig effective_model() const { return with_variant(model, train); }

  void validate() const {
    model.validate();
    loss.validate();
    train.validate();
    eval.validate();
    synth.validate();
    if (anchors.path.empty()) {
      if (anchors.k < 4 || anchors.k % 4 != 0)
        throw ConfigError("anchors.k must be a positive multiple of the 4 pyramid levels, got " +
                          std::to_string(anchors.k));
      if (anchors.k != 4 * model.anchors_per_position)
        throw ConfigError("anchors.k = " + std::to_string(anchors.k) + " does not match 4 x model.anchors_per_position");
    }
  }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"data", c.data},   {"model", c.model},       {"loss", c.loss},       {"train", c.train},
       {"eval", c.eval},   {"anchors", c.anchors},   {"synth", c.synth},     {"output_dir", c.output_dir}};
}

namespace detail {

// Every key of `user` must exist in `schema`; nested objects are checked
// recursively. Returns the dotted path of the first unknown key.
inline std::optional<std::string> unknown_key(const nlohmann::json& user, const nlohmann::json& schema,
                                              const std::string& prefix) {
  if (!user.is_object()) return std::nullopt;
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!schema.is_object() || !schema.contains(it.key())) return path;
    const auto& sub = schema.at(it.key());
    if (sub.is_object())
      if (auto bad = unknown_key(it.value(), sub, path)) return bad;
  }
  return std::nullopt;
}

template <typename T>
T section(const nlohmann::json& j, const char* key, const T& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config section '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const ExperimentConfig defaults;
  if (auto bad = detail::unknown_key(j, nlohmann::json(defaults), "")) throw ConfigError("unknown config field '" + *bad + "'");
  ExperimentConfig c;
  c.data = detail::section(j, "data", defaults.data);
  c.model = detail::section(j, "model", defaults.model);
  c.loss = detail::section(j, "loss", defaults.loss);
  c.train = detail::section(j, "train", defaults.train);
  c.eval = detail::section(j, "eval", defaults.eval);
  c.anchors = detail::section(j, "anchors", defaults.anchors);
  c.synth = detail::section(j, "synth", defaults.synth);
  c.output_dir = detail::section(j, "output_dir", defaults.output_dir);
  const bool model_variant_set = j.contains("model") && j["model"].contains("variant");
  const bool train_variant_set = j.contains("train") && j["train"].contains("variant");
  if (model_variant_set && train_variant_set && c.model.variant != c.train.variant)
    throw ConfigError("model.variant and train.variant disagree");
  if (model_variant_set && !train_variant_set) c.train.variant = c.model.variant;
  c.model.variant = c.train.variant;
  return c;
}

// Resolves a relative path against `base` (the config file's directory).
inline std::string resolve_path(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return p;
  std::filesystem::path fp(p);
  return fp.is_relative() ? (base / fp).lexically_normal().string() : p;
}

// Loads a config file, or the config embedded in a run manifest. Relative
// data and anchor paths are resolved against the file's directory.
inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  if (j.is_object() && j.contains("command") && j.contains("config")) j = j["config"];
  auto c = parse_config(j);
  const auto base = path.parent_path();
  c.data.manifest = resolve_path(c.data.manifest, base);
  c.data.annotations = resolve_path(c.data.annotations, base);
  c.anchors.path = resolve_path(c.anchors.path, base);
  return c;
}

inline constexpr const char* kConfigEnv = "TNET_CONFIG";

}  // namespace tnet::cli
