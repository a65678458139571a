#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "tnet/core/ops.hpp"
#include "tnet/model/config.hpp"
#include "tnet/model/params.hpp"

namespace tnet {

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

template <typename S>
class LayerBuilder {
 public:
  LayerBuilder(ParamStore<S>& store, std::uint64_t seed) : store_(store), seed_(seed) {}

  // Kaiming-normal over fan-in unless an explicit std is given.
  ParamPtr<S> conv_weight(const std::string& name, int out, int in, int k, double stddev = -1) {
    const double sd = stddev > 0 ? stddev : std::sqrt(2.0 / (in * k));
    return store_.add(name, ParamKind::weight, normal_tensor<S>(out, in, k, sd, derive_seed(seed_, fnv1a(name))));
  }
  ParamPtr<S> bias(const std::string& name, int out, double fill = 0) {
    return store_.add(name, ParamKind::bias, Tensor<S>(out, 1, 1, static_cast<S>(fill)));
  }
  ParamPtr<S> affine(const std::string& name, int out, double fill) {
    return store_.add(name, ParamKind::norm_affine, Tensor<S>(out, 1, 1, static_cast<S>(fill)));
  }
  ParamPtr<S> stat(const std::string& name, int out, double fill) {
    return store_.add(name, ParamKind::norm_stat, Tensor<S>(out, 1, 1, static_cast<S>(fill)));
  }

 private:
  ParamStore<S>& store_;
  std::uint64_t seed_;
};

template <typename S>
struct Conv {
  ParamPtr<S> weight;
  ParamPtr<S> bias;  // may be null
  int stride = 1;
  int pad = 0;

  static Conv make(LayerBuilder<S>& b, const std::string& name, int in, int out, int k, int stride, bool with_bias,
                   double stddev = -1, double bias_fill = 0) {
    Conv c;
    c.weight = b.conv_weight(name + ".weight", out, in, k, stddev);
    if (with_bias) c.bias = b.bias(name + ".bias", out, bias_fill);
    c.stride = stride;
    c.pad = k / 2;
    return c;
  }

  Var<S> operator()(Graph<S>& g, const Var<S>& x) const {
    return ops::conv1d(g, x, g.param(weight), bias ? g.param(bias) : nullptr, stride, pad);
  }
};

struct NormSettings {
  ops::NormMode mode = ops::NormMode::batch;
  double momentum = 0.1;
  double eps = 1e-5;
};

template <typename S>
struct Norm {
  ParamPtr<S> gamma, beta, mean, var;

  static Norm make(LayerBuilder<S>& b, const std::string& name, int ch) {
    return {b.affine(name + ".gamma", ch, 1.0), b.affine(name + ".beta", ch, 0.0), b.stat(name + ".running_mean", ch, 0.0),
            b.stat(name + ".running_var", ch, 1.0)};
  }

  Var<S> operator()(Graph<S>& g, const Var<S>& x, const NormSettings& ns, bool training) const {
    return ops::norm(g, x, g.param(gamma), g.param(beta), mean, var, ns.mode, training, ns.momentum, ns.eps);
  }
};

// conv -> norm, optionally followed by ReLU.
template <typename S>
struct ConvNorm {
  Conv<S> conv;
  Norm<S> norm;

  static ConvNorm make(LayerBuilder<S>& b, const std::string& name, int in, int out, int k, int stride) {
    return {Conv<S>::make(b, name + ".conv", in, out, k, stride, false), Norm<S>::make(b, name + ".norm", out)};
  }

  Var<S> operator()(Graph<S>& g, const Var<S>& x, const NormSettings& ns, bool training, bool relu = true) const {
    auto y = norm(g, conv(g, x), ns, training);
    return relu ? ops::relu(g, y) : y;
  }
};

template <typename S>
struct BasicBlock {
  ConvNorm<S> c1, c2;
  std::optional<ConvNorm<S>> down;

  static BasicBlock make(LayerBuilder<S>& b, const std::string& name, int in, int out, int stride) {
    BasicBlock blk{ConvNorm<S>::make(b, name + ".conv1", in, out, 3, stride),
                   ConvNorm<S>::make(b, name + ".conv2", out, out, 3, 1), std::nullopt};
    if (stride != 1 || in != out) blk.down = ConvNorm<S>::make(b, name + ".down", in, out, 1, stride);
    return blk;
  }

  Var<S> operator()(Graph<S>& g, const Var<S>& x, const NormSettings& ns, bool training) const {
    auto y = c2(g, c1(g, x, ns, training), ns, training, false);
    auto skip = down ? (*down)(g, x, ns, training, false) : x;
    return ops::relu(g, ops::add(g, y, skip));
  }
};

template <typename S>
struct EncoderMaps {
  // en[0] is the stem output at T/2 (before pooling); en[1..4] at T/4..T/32.
  std::array<Var<S>, 5> en;
};

// Temporal ResNet-18.
template <typename S>
struct Encoder {
  ConvNorm<S> stem;
  std::array<std::array<BasicBlock<S>, 2>, 4> stages;

  static Encoder make(LayerBuilder<S>& b, const std::string& name, const ModelConfig& cfg) {
    Encoder e;
    e.stem = ConvNorm<S>::make(b, name + ".stem", cfg.in_channels, cfg.stem_width, 7, 2);
    int in = cfg.stem_width;
    for (int s = 0; s < 4; ++s) {
      const int out = cfg.stage_widths[s];
      const std::string sn = name + ".stage" + std::to_string(s + 1);
      e.stages[s][0] = BasicBlock<S>::make(b, sn + ".block0", in, out, s == 0 ? 1 : 2);
      e.stages[s][1] = BasicBlock<S>::make(b, sn + ".block1", out, out, 1);
      in = out;
    }
    return e;
  }

  EncoderMaps<S> operator()(Graph<S>& g, const Var<S>& x, const NormSettings& ns, bool training) const {
    EncoderMaps<S> m;
    m.en[0] = stem(g, x, ns, training);
    auto h = ops::maxpool1d(g, m.en[0], 3, 2, 1);
    for (int s = 0; s < 4; ++s) {
      h = stages[s][0](g, h, ns, training);
      h = stages[s][1](g, h, ns, training);
      m.en[s + 1] = h;
    }
    return m;
  }
};

// Top-down temporal FPN over En1..En4.
template <typename S>
struct Fpn {
  std::array<Conv<S>, 4> lateral, smooth;

  static Fpn make(LayerBuilder<S>& b, const std::string& name, const ModelConfig& cfg) {
    Fpn f;
    for (int l = 0; l < 4; ++l) {
      const std::string ln = name + ".level" + std::to_string(l + 1);
      f.lateral[l] = Conv<S>::make(b, ln + ".lateral", cfg.stage_widths[l], cfg.fpn_width, 1, 1, true);
      f.smooth[l] = Conv<S>::make(b, ln + ".smooth", cfg.fpn_width, cfg.fpn_width, 3, 1, true);
    }
    return f;
  }

  std::array<Var<S>, 4> operator()(Graph<S>& g, const EncoderMaps<S>& m) const {
    std::array<Var<S>, 4> merged;
    merged[3] = lateral[3](g, m.en[4]);
    for (int l = 2; l >= 0; --l) {
      merged[l] = ops::add(g, lateral[l](g, m.en[l + 1]), ops::upsample_nearest(g, merged[l + 1], 2));
    }
    std::array<Var<S>, 4> out;
    for (int l = 0; l < 4; ++l) out[l] = smooth[l](g, merged[l]);
    return out;
  }
};

// Full-scale-skip decoder stage. Inputs are rescaled to the stage length,
// passed through a 3-wide conv each, concatenated and fused.
template <typename S>
struct SegStage {
  std::vector<ConvNorm<S>> branches;
  ConvNorm<S> fuse;
  Conv<S> side;

  static SegStage make(LayerBuilder<S>& b, const std::string& name, const std::vector<int>& in_widths, int width) {
    SegStage st;
    for (std::size_t i = 0; i < in_widths.size(); ++i) {
      st.branches.push_back(ConvNorm<S>::make(b, name + ".branch" + std::to_string(i), in_widths[i], width, 3, 1));
    }
    st.fuse = ConvNorm<S>::make(b, name + ".fuse", width * static_cast<int>(in_widths.size()), width, 3, 1);
    st.side = Conv<S>::make(b, name + ".side", width, 1, 1, 1, true);
    return st;
  }
};

template <typename S>
Var<S> rescale(Graph<S>& g, const Var<S>& x, int target) {
  const int len = x->val().length();
  if (len == target) return x;
  if (len > target) {
    const int f = len / target;
    return ops::maxpool1d(g, x, f, f, 0);
  }
  return ops::upsample_linear(g, x, target);
}

template <typename S>
struct SegDecoder {
  // stages[0] = Seg3 (T/8), stages[1] = Seg2 (T/4), stages[2] = Seg1 (T/2).
  std::array<SegStage<S>, 3> stages;

  static SegDecoder make(LayerBuilder<S>& b, const std::string& name, const ModelConfig& cfg) {
    SegDecoder d;
    std::vector<int> widths{cfg.stem_width, cfg.stage_widths[0], cfg.stage_widths[1]};
    const char* names[3] = {".seg3", ".seg2", ".seg1"};
    for (int s = 0; s < 3; ++s) {
      d.stages[s] = SegStage<S>::make(b, name + names[s], widths, cfg.seg_width);
      widths.push_back(cfg.seg_width);
    }
    return d;
  }

  // Returns per-stage probability sequences of full window length, ordered
  // finest first: {P1 (Seg1), P2 (Seg2), P3 (Seg3)}.
  std::array<Var<S>, 3> operator()(Graph<S>& g, const EncoderMaps<S>& m, int window, const NormSettings& ns,
                                   bool training) const {
    const std::array<int, 3> lengths{window / 8, window / 4, window / 2};
    std::vector<Var<S>> decoded;
    std::array<Var<S>, 3> probs;
    for (int s = 0; s < 3; ++s) {
      const auto& st = stages[s];
      std::vector<Var<S>> sources{m.en[0], m.en[1], m.en[2]};
      // Deeper decoder outputs, coarsest first.
      for (const auto& d : decoded) sources.push_back(d);
      std::vector<Var<S>> parts;
      for (std::size_t i = 0; i < sources.size(); ++i) {
        parts.push_back(st.branches[i](g, rescale(g, sources[i], lengths[s]), ns, training));
      }
      auto fused = st.fuse(g, ops::concat_channels(g, parts), ns, training);
      decoded.push_back(fused);
      auto logit = ops::upsample_linear(g, st.side(g, fused), window);
      probs[2 - s] = ops::sigmoid(g, logit);
    }
    return probs;
  }
};

}  // namespace tnet
