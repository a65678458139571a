#pragma once

#include <array>
#include <string>
#include <vector>

#include "json.hpp"
#include "tnet/core/error.hpp"
#include "tnet/core/ops.hpp"

namespace tnet {

enum class Variant { shared, independent, detection_only };

NLOHMANN_JSON_SERIALIZE_ENUM(Variant, {{Variant::shared, "shared"},
                                       {Variant::independent, "independent"},
                                       {Variant::detection_only, "detection_only"}})

}  // namespace tnet

namespace tnet::ops {
NLOHMANN_JSON_SERIALIZE_ENUM(NormMode, {{NormMode::batch, "batch"}, {NormMode::instance, "instance"}})
}

namespace tnet {

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::shared: return "shared";
    case Variant::independent: return "independent";
    case Variant::detection_only: return "detection_only";
  }
  return "?";
}

struct ModelConfig {
  int in_channels = 17;
  int window = 416;
  int stem_width = 64;
  std::array<int, 4> stage_widths{64, 128, 256, 512};
  int fpn_width = 128;
  int seg_width = 64;
  int anchors_per_position = 3;
  int roi_bins = 16;
  int fusion_hidden = 32;
  Variant variant = Variant::shared;
  ops::NormMode norm = ops::NormMode::batch;
  double norm_momentum = 0.1;
  double norm_eps = 1e-5;
  double prior_prob = 0.01;
  // Bound on |log length ratio| when decoding regression outputs.
  double max_log_scale = 6.0;

  // Temporal strides of the four pyramid levels relative to the window.
  static constexpr std::array<int, 4> level_strides{4, 8, 16, 32};

  std::vector<int> strides() const { return {level_strides.begin(), level_strides.end()}; }
  int positions(int level) const { return window / level_strides[level]; }
  int anchors_per_window() const {
    int m = 0;
    for (int l = 0; l < 4; ++l) m += positions(l) * anchors_per_position;
    return m;
  }
  bool has_segmentation() const { return variant != Variant::detection_only; }

  void validate() const {
    if (window <= 0 || window % 32 != 0) {
      throw ConfigError("model.window must be a positive multiple of 32, got " + std::to_string(window));
    }
    if (in_channels < 1) throw ConfigError("model.in_channels must be >= 1");
    if (stem_width < 1 || fpn_width < 1 || seg_width < 1 || fusion_hidden < 1)
      throw ConfigError("model widths must be >= 1");
    for (int w : stage_widths)
      if (w < 1) throw ConfigError("model.stage_widths entries must be >= 1");
    if (anchors_per_position < 1) throw ConfigError("model.anchors_per_position must be >= 1");
    if (roi_bins < 1) throw ConfigError("model.roi_bins must be >= 1");
    if (!(prior_prob > 0 && prior_prob < 1)) throw ConfigError("model.prior_prob must be in (0, 1)");
  }

  bool operator==(const ModelConfig&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, in_channels, window, stem_width, stage_widths, fpn_width,
                                                seg_width, anchors_per_position, roi_bins, fusion_hidden, variant, norm,
                                                norm_momentum, norm_eps, prior_prob, max_log_scale)

// Reduced configuration used for gradient verification.
inline ModelConfig reduced_model_config() {
  ModelConfig c;
  c.in_channels = 4;
  c.window = 64;
  c.stem_width = 8;
  c.stage_widths = {8, 16, 32, 64};
  c.fpn_width = 16;
  c.seg_width = 8;
  return c;
}

}  // namespace tnet
