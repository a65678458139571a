#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tnet/core/error.hpp"
#include "tnet/data/io.hpp"
#include "tnet/data/types.hpp"

namespace tnet {

struct ManifestEntry {
  std::string video_id;
  std::string session_id;
  std::string feature_path;
  std::vector<std::string> split_tags;

  bool has_tag(const std::string& t) const {
    return std::find(split_tags.begin(), split_tags.end(), t) != split_tags.end();
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ManifestEntry, video_id, session_id, feature_path, split_tags)

using Manifest = std::vector<ManifestEntry>;

// Relative feature paths are resolved against the manifest's directory.
inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  Manifest m;
  try {
    m = nlohmann::json::parse(in).get<Manifest>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest " + path.string() + ": " + e.what());
  }
  for (auto& e : m) {
    std::filesystem::path fp(e.feature_path);
    if (fp.is_relative()) e.feature_path = (path.parent_path() / fp).string();
  }
  return m;
}

inline void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << nlohmann::json(m).dump(2) << '\n';
}

// A video with its features and validated annotations.
struct VideoRecord {
  ManifestEntry entry;
  FeatureSequence features;
  std::vector<Annotation> annotations;
};

inline std::vector<VideoRecord> load_videos(const Manifest& m, const std::vector<Annotation>& anns) {
  std::vector<VideoRecord> out;
  for (const auto& e : m) {
    VideoRecord r;
    r.entry = e;
    r.features = load_features(e.feature_path, format_from_path(e.feature_path));
    r.features.video_id = e.video_id;
    r.features.session_id = e.session_id;
    r.annotations = annotations_for(r.features, anns);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace tnet
