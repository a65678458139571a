#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tnet/core/error.hpp"
#include "tnet/core/rng.hpp"
#include "tnet/data/types.hpp"

namespace tnet {

struct SynthConfig {
  int videos = 12;
  int sessions = 4;
  int frames = 4500;
  int channels = 17;
  double events_per_kframe = 6.0;
  // Log-normal durations calibrated by median and mean.
  double duration_median = 32.0;
  double duration_mean = 41.15;
  int min_duration = 4;
  int max_duration = 400;
  int min_gap = 8;
  int min_event_channels = 2;
  int max_event_channels = 5;
  double amplitude_lo = 0.8;
  double amplitude_hi = 1.6;
  double noise_std = 0.05;
  double drift_amplitude = 0.1;
  // Fraction of each event spent in the cosine ramps (Tukey window).
  double taper = 0.25;

  double log_mu() const { return std::log(duration_median); }
  double log_sigma() const { return std::sqrt(2.0 * std::log(duration_mean / duration_median)); }

  void validate() const {
    if (videos < 1 || frames < 1 || channels < 1) throw ConfigError("synth: videos, frames and channels must be >= 1");
    if (sessions < 1 || sessions > videos) throw ConfigError("synth: sessions must be in [1, videos]");
    if (events_per_kframe < 0) throw ConfigError("synth: events_per_kframe must be >= 0");
    if (!(duration_mean > duration_median) || duration_median <= 0)
      throw ConfigError("synth: duration_mean must exceed duration_median > 0");
    if (min_duration < 1 || max_duration < min_duration) throw ConfigError("synth: bad duration bounds");
    if (min_event_channels < 1 || max_event_channels < min_event_channels || max_event_channels > channels)
      throw ConfigError("synth: bad event channel range");
    if (taper < 0 || taper > 1) throw ConfigError("synth: taper must be in [0, 1]");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthConfig, videos, sessions, frames, channels, events_per_kframe,
                                                duration_median, duration_mean, min_duration, max_duration, min_gap,
                                                min_event_channels, max_event_channels, amplitude_lo, amplitude_hi,
                                                noise_std, drift_amplitude, taper)

inline int sample_duration(const SynthConfig& cfg, Rng& rng) {
  const double d = std::exp(cfg.log_mu() + cfg.log_sigma() * rng.normal());
  return std::clamp(static_cast<int>(std::lround(d)), cfg.min_duration, cfg.max_duration);
}

inline double tukey(double x, double taper) {
  if (taper <= 0) return 1.0;
  const double h = taper / 2;
  if (x < h) return 0.5 * (1 - std::cos(std::numbers::pi * x / h));
  if (x > 1 - h) return 0.5 * (1 - std::cos(std::numbers::pi * (1 - x) / h));
  return 1.0;
}

inline std::string synth_video_id(int i) {
  return (i < 10 ? "v0" : "v") + std::to_string(i);
}

inline std::string synth_session_id(const SynthConfig& cfg, int video) {
  const int per = (cfg.videos + cfg.sessions - 1) / cfg.sessions;
  return "s" + std::to_string(std::min(video / per, cfg.sessions - 1));
}

struct SynthDataset {
  std::vector<FeatureSequence> sequences;
  std::vector<Annotation> annotations;
};

inline SynthDataset synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SynthDataset ds;
  for (int v = 0; v < cfg.videos; ++v) {
    Rng rng(derive_seed(seed, 0x5eed, static_cast<std::uint64_t>(v)));
    FeatureSequence seq;
    seq.video_id = synth_video_id(v);
    seq.session_id = synth_session_id(cfg, v);
    seq.channels = cfg.channels;
    seq.frames = cfg.frames;
    seq.values.assign(static_cast<std::size_t>(cfg.channels) * cfg.frames, 0.0f);

    // Background: per-channel baseline, two slow sinusoids, white noise.
    for (int c = 0; c < cfg.channels; ++c) {
      const double base = rng.uniform(0.0, 0.5);
      double period[2], phase[2];
      for (int k = 0; k < 2; ++k) {
        period[k] = rng.uniform(500.0, 2000.0);
        phase[k] = rng.uniform(0.0, 2 * std::numbers::pi);
      }
      for (int l = 0; l < cfg.frames; ++l) {
        double x = base + cfg.noise_std * rng.normal();
        for (int k = 0; k < 2; ++k)
          x += 0.5 * cfg.drift_amplitude * std::sin(2 * std::numbers::pi * l / period[k] + phase[k]);
        seq.at(c, l) = static_cast<float>(x);
      }
    }

    // Event layout: durations first, then a random split of the free frames
    // into n + 1 gaps on top of the mandatory minimum gaps.
    const int n = static_cast<int>(std::lround(cfg.events_per_kframe * cfg.frames / 1000.0));
    std::vector<int> durations(n);
    long used = 0;
    for (auto& d : durations) {
      d = sample_duration(cfg, rng);
      used += d;
    }
    const long required = used + static_cast<long>(std::max(0, n - 1)) * cfg.min_gap;
    if (required > cfg.frames) {
      throw GenerationError("synth: " + std::to_string(n) + " events need " + std::to_string(required) +
                            " frames but the video has " + std::to_string(cfg.frames));
    }
    const long free = cfg.frames - required;
    std::vector<double> weights(n + 1);
    double wsum = 0;
    for (auto& w : weights) {
      w = -std::log(1.0 - rng.uniform());
      wsum += w;
    }
    long pos = 0;
    for (int e = 0; e < n; ++e) {
      pos += static_cast<long>(std::floor(free * weights[e] / wsum)) + (e > 0 ? cfg.min_gap : 0);
      const int start = static_cast<int>(pos);
      const int d = durations[e];
      pos += d;

      std::vector<int> chans(cfg.channels);
      for (int c = 0; c < cfg.channels; ++c) chans[c] = c;
      rng.shuffle(chans.begin(), chans.end());
      const int k = cfg.min_event_channels +
                    static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_event_channels - cfg.min_event_channels + 1)));
      for (int i = 0; i < k; ++i) {
        const double amp = rng.uniform(cfg.amplitude_lo, cfg.amplitude_hi);
        for (int t = 0; t < d; ++t) {
          seq.at(chans[i], start + t) += static_cast<float>(amp * tukey((t + 0.5) / d, cfg.taper));
        }
      }
      ds.annotations.push_back({seq.video_id, {static_cast<double>(start), static_cast<double>(start + d)}});
    }
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

}  // namespace tnet
