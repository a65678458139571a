#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "tnet/core/ops.hpp"
#include "tnet/model/config.hpp"
#include "tnet/model/fusion_ops.hpp"
#include "tnet/model/layers.hpp"
#include "tnet/model/params.hpp"

namespace tnet {

template <typename S>
struct TNetOutputs {
  std::array<Var<S>, 4> cls;  // (A, N, T/stride_l) logits
  std::array<Var<S>, 4> reg;  // (2A, N, T/stride_l) offsets, channel a*2 + {center, log-length}
  Var<S> cls_flat;            // (1, N, M)
  Var<S> reg_flat;            // (2, N, M)
  std::array<Var<S>, 3> seg;  // (1, N, T) probabilities, seg[k-1] = P^k, P^1 finest; empty for detection_only
  std::map<std::string, Var<S>> maps;
};

// Two-branch temporal detector: ResNet-18 encoder, FPN detection decoder
// with a shared one-layer head, full-scale-skip segmentation decoder and an
// MLP that refines detection probabilities from pooled segmentation output.
template <typename S>
class TNet {
 public:
  TNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    LayerBuilder<S> b(store_, seed);
    encoder_ = Encoder<S>::make(b, "encoder", cfg_);
    if (cfg_.variant == Variant::independent) {
      seg_encoder_ = Encoder<S>::make(b, "seg_encoder", cfg_);
    } else {
      seg_encoder_ = encoder_;
    }
    fpn_ = Fpn<S>::make(b, "fpn", cfg_);
    const int a = cfg_.anchors_per_position;
    const double prior_bias = -std::log((1 - cfg_.prior_prob) / cfg_.prior_prob);
    head_cls_ = Conv<S>::make(b, "head.cls", cfg_.fpn_width, a, 3, 1, true, 0.01, prior_bias);
    head_reg_ = Conv<S>::make(b, "head.reg", cfg_.fpn_width, 2 * a, 3, 1, true, 0.01);
    if (cfg_.has_segmentation()) {
      seg_decoder_ = SegDecoder<S>::make(b, "seg_decoder", cfg_);
      fusion_hidden_ = Conv<S>::make(b, "fusion.hidden", cfg_.roi_bins + 1, cfg_.fusion_hidden, 1, 1, true);
      fusion_out_ = Conv<S>::make(b, "fusion.out", cfg_.fusion_hidden, 1, 1, 1, true, 0.01, prior_bias);
    }
    norm_ = {cfg_.norm, cfg_.norm_momentum, cfg_.norm_eps};
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  ParamStore<S>& params() noexcept { return store_; }
  const ParamStore<S>& params() const noexcept { return store_; }
  std::size_t parameter_count() const { return store_.trainable_count(); }

  // Encoder parameters used by the segmentation branch.
  std::vector<ParamPtr<S>> segmentation_encoder_params() const { return encoder_params(seg_encoder_); }
  std::vector<ParamPtr<S>> detection_encoder_params() const { return encoder_params(encoder_); }

  TNetOutputs<S> forward(Graph<S>& g, const Tensor<S>& input, bool training) const {
    if (input.channels() != cfg_.in_channels || input.length() != cfg_.window) {
      throw ShapeError("forward: expected input (" + std::to_string(cfg_.in_channels) + ", N, " +
                       std::to_string(cfg_.window) + "), got " + input.shape_string());
    }
    TNetOutputs<S> out;
    auto x = g.input(input);
    const auto det = encoder_(g, x, norm_, training);
    for (int i = 0; i < 5; ++i) out.maps["en" + std::to_string(i)] = det.en[i];
    const auto pyramid = fpn_(g, det);
    std::vector<Var<S>> cls, reg;
    for (int l = 0; l < 4; ++l) {
      out.maps["fpn" + std::to_string(l + 1)] = pyramid[l];
      out.cls[l] = head_cls_(g, pyramid[l]);
      out.reg[l] = head_reg_(g, pyramid[l]);
      cls.push_back(out.cls[l]);
      reg.push_back(out.reg[l]);
    }
    out.cls_flat = ops::flatten_levels(g, cls, cfg_.anchors_per_position, 1);
    out.reg_flat = ops::flatten_levels(g, reg, cfg_.anchors_per_position, 2);
    if (cfg_.has_segmentation()) {
      const auto seg_maps = cfg_.variant == Variant::independent ? seg_encoder_(g, x, norm_, training) : det;
      if (cfg_.variant == Variant::independent)
        for (int i = 0; i < 5; ++i) out.maps["seg_en" + std::to_string(i)] = seg_maps.en[i];
      out.seg = seg_decoder_(g, seg_maps, cfg_.window, norm_, training);
    }
    return out;
  }

  // Refined-probability logits (1, N, D) from pooled P^1 and raw probabilities.
  Var<S> fusion_logits(Graph<S>& g, const Var<S>& seg_p1, const Var<S>& boxes, const Var<S>& raw_prob,
                       const std::vector<int>& valid_lengths) const {
    auto pooled = roi_pool(g, seg_p1, boxes, cfg_.roi_bins, valid_lengths);
    auto in = ops::concat_channels(g, {pooled, raw_prob});
    return fusion_out_(g, ops::relu(g, fusion_hidden_(g, in)));
  }

  static std::vector<std::string> target_layer_names() {
    return {"en0", "en1", "en2", "en3", "en4", "fpn1", "fpn2", "fpn3", "fpn4"};
  }

 private:
  static std::vector<ParamPtr<S>> encoder_params(const Encoder<S>& e) {
    std::vector<ParamPtr<S>> out;
    auto add_cn = [&](const ConvNorm<S>& cn) {
      out.insert(out.end(), {cn.conv.weight, cn.norm.gamma, cn.norm.beta, cn.norm.mean, cn.norm.var});
    };
    add_cn(e.stem);
    for (const auto& st : e.stages)
      for (const auto& blk : st) {
        add_cn(blk.c1);
        add_cn(blk.c2);
        if (blk.down) add_cn(*blk.down);
      }
    return out;
  }

  ModelConfig cfg_;
  ParamStore<S> store_;
  NormSettings norm_;
  Encoder<S> encoder_;
  Encoder<S> seg_encoder_;
  Fpn<S> fpn_;
  Conv<S> head_cls_, head_reg_;
  SegDecoder<S> seg_decoder_;
  Conv<S> fusion_hidden_, fusion_out_;
};

}  // namespace tnet
