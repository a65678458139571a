#pragma once

#include "json.hpp"
#include "tnet/core/error.hpp"
#include "tnet/model/detection.hpp"

namespace tnet {

NLOHMANN_JSON_SERIALIZE_ENUM(ScoreField, {{ScoreField::refined, "refined"}, {ScoreField::raw, "raw"}})

struct EvalProtocol {
  double iou_thresh = 0.5;
  double prob_thresh = 0.2;
  double nms_eiou_thresh = 0.2;
  ScoreField score_field = ScoreField::refined;
  // Raw-probability pre-filter applied before the fusion head refines scores.
  double candidate_thresh = 0.0;
  int batch_size = 16;  // windows per inference batch

  void validate() const {
    if (!(iou_thresh >= 0 && iou_thresh < 1)) throw ConfigError("eval.iou_thresh must lie in [0, 1)");
    if (!(prob_thresh >= 0 && prob_thresh <= 1)) throw ConfigError("eval.prob_thresh must lie in [0, 1]");
    if (!(nms_eiou_thresh >= -1 && nms_eiou_thresh <= 1)) throw ConfigError("eval.nms_eiou_thresh must lie in [-1, 1]");
    if (!(candidate_thresh >= 0 && candidate_thresh <= 1)) throw ConfigError("eval.candidate_thresh must lie in [0, 1]");
    if (batch_size < 1) throw ConfigError("eval.batch_size must be >= 1");
  }
  bool operator==(const EvalProtocol&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalProtocol, iou_thresh, prob_thresh, nms_eiou_thresh, score_field,
                                                candidate_thresh, batch_size)

}  // namespace tnet
