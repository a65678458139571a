#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tnet/core/error.hpp"
#include "tnet/data/types.hpp"

namespace tnet {

enum class FeatureFormat { csv, binary };

inline FeatureFormat format_from_path(const std::filesystem::path& p) {
  return p.extension() == ".csv" ? FeatureFormat::csv : FeatureFormat::binary;
}

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// strtod accepts nan/inf spellings, which is what the finite-value check wants to see.
inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

inline std::ifstream open_in(const std::filesystem::path& p, bool binary = false) {
  std::ifstream in(p, binary ? std::ios::binary : std::ios::in);
  if (!in) throw DataError("cannot open " + p.string());
  return in;
}

template <typename T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
bool get_le(std::istream& is, T& v) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) return false;
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  std::memcpy(&v, b, sizeof(T));
  return true;
}

}  // namespace detail

inline FeatureSequence load_features_csv(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  std::size_t width = 0;
  long row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv(line);
    std::vector<double> vals(cells.size());
    bool numeric = true;
    for (std::size_t i = 0; i < cells.size(); ++i) numeric = numeric && detail::parse_double(cells[i], vals[i]);
    if (first) {
      first = false;
      width = cells.size();
      if (!numeric) continue;  // header
    }
    if (cells.size() != width) {
      throw ParseError(path.string() + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                           " columns, expected " + std::to_string(width),
                       row);
    }
    if (!numeric) throw ParseError(path.string() + ": row " + std::to_string(row) + " is not numeric", row);
    for (double v : vals)
      if (!std::isfinite(v)) throw DataError(path.string() + ": non-finite value at frame " + std::to_string(row));
    rows.push_back(std::move(vals));
    ++row;
  }
  if (rows.empty()) throw DataError(path.string() + ": no frames");
  FeatureSequence seq;
  seq.video_id = path.stem().string();
  seq.channels = static_cast<int>(width);
  seq.frames = static_cast<int>(rows.size());
  seq.values.resize(static_cast<std::size_t>(seq.channels) * seq.frames);
  for (int l = 0; l < seq.frames; ++l)
    for (int c = 0; c < seq.channels; ++c) seq.at(c, l) = static_cast<float>(rows[l][c]);
  return seq;
}

inline constexpr char kFeatureMagic[4] = {'T', 'N', 'F', '1'};

inline FeatureSequence load_features_binary(const std::filesystem::path& path) {
  auto in = detail::open_in(path, true);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kFeatureMagic, 4) != 0) {
    throw ParseError(path.string() + ": bad magic", -1);
  }
  std::uint32_t c = 0;
  std::uint64_t l = 0;
  if (!detail::get_le(in, c) || !detail::get_le(in, l)) throw ParseError(path.string() + ": truncated header", -1);
  if (c == 0 || l == 0) throw DataError(path.string() + ": empty feature matrix");
  FeatureSequence seq;
  seq.video_id = path.stem().string();
  seq.channels = static_cast<int>(c);
  seq.frames = static_cast<int>(l);
  seq.values.resize(static_cast<std::size_t>(c) * l);
  for (std::uint64_t f = 0; f < l; ++f) {
    for (std::uint32_t ch = 0; ch < c; ++ch) {
      float v;
      if (!detail::get_le(in, v)) {
        throw ParseError(path.string() + ": truncated payload at frame " + std::to_string(f), static_cast<long>(f));
      }
      if (!std::isfinite(v)) throw DataError(path.string() + ": non-finite value at frame " + std::to_string(f));
      seq.at(static_cast<int>(ch), static_cast<int>(f)) = v;
    }
  }
  return seq;
}

inline FeatureSequence load_features(const std::filesystem::path& path, FeatureFormat format) {
  return format == FeatureFormat::csv ? load_features_csv(path) : load_features_binary(path);
}

inline void save_features_csv(const FeatureSequence& seq, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(9);
  for (int l = 0; l < seq.frames; ++l) {
    for (int c = 0; c < seq.channels; ++c) {
      if (c) out << ',';
      out << seq.at(c, l);
    }
    out << '\n';
  }
}

inline void save_features_binary(const FeatureSequence& seq, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kFeatureMagic, 4);
  detail::put_le(out, static_cast<std::uint32_t>(seq.channels));
  detail::put_le(out, static_cast<std::uint64_t>(seq.frames));
  for (int l = 0; l < seq.frames; ++l)
    for (int c = 0; c < seq.channels; ++c) detail::put_le(out, seq.at(c, l));
}

inline void sort_annotations(std::vector<Annotation>& anns) {
  std::stable_sort(anns.begin(), anns.end(), [](const Annotation& a, const Annotation& b) {
    if (a.video_id != b.video_id) return a.video_id < b.video_id;
    if (a.interval.start != b.interval.start) return a.interval.start < b.interval.start;
    return a.interval.end < b.interval.end;
  });
}

// CSV with header video_id,start_frame,end_frame; frames are inclusive and
// become half-open intervals [start, end + 1).
inline std::vector<Annotation> load_annotations(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  std::vector<Annotation> out;
  std::string line;
  long row = -1;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv(line);
    if (row == -1) {
      ++row;
      double probe;
      if (cells.size() == 3 && !detail::parse_double(cells[1], probe)) continue;  // header
    }
    if (cells.size() != 3) {
      throw ParseError(path.string() + ": row " + std::to_string(row) + " needs 3 columns", row);
    }
    long s = 0, e = 0;
    auto r1 = std::from_chars(cells[1].data(), cells[1].data() + cells[1].size(), s);
    auto r2 = std::from_chars(cells[2].data(), cells[2].data() + cells[2].size(), e);
    if (r1.ec != std::errc{} || r2.ec != std::errc{} || r1.ptr != cells[1].data() + cells[1].size() ||
        r2.ptr != cells[2].data() + cells[2].size()) {
      throw ParseError(path.string() + ": row " + std::to_string(row) + " has non-integer frames", row);
    }
    if (s < 0) throw DataError(path.string() + ": row " + std::to_string(row) + " starts before frame 0");
    if (e < s) throw DataError(path.string() + ": row " + std::to_string(row) + " ends before it starts");
    out.push_back({cells[0], {static_cast<double>(s), static_cast<double>(e + 1)}});
    ++row;
  }
  sort_annotations(out);
  return out;
}

inline void save_annotations(const std::vector<Annotation>& anns, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "video_id,start_frame,end_frame\n";
  for (const auto& a : anns) {
    out << a.video_id << ',' << static_cast<long>(a.interval.start) << ',' << static_cast<long>(a.interval.end) - 1
        << '\n';
  }
}

// Annotations for one video, checked against its frame count.
inline std::vector<Annotation> annotations_for(const FeatureSequence& seq, const std::vector<Annotation>& all) {
  std::vector<Annotation> out;
  for (const auto& a : all) {
    if (a.video_id != seq.video_id) continue;
    if (a.interval.start < 0 || a.interval.end > seq.frames || !(a.interval.length() > 0)) {
      throw DataError("annotation [" + std::to_string(a.interval.start) + ", " + std::to_string(a.interval.end) +
                      ") outside video " + seq.video_id + " of " + std::to_string(seq.frames) + " frames");
    }
    out.push_back(a);
  }
  return out;
}

}  // namespace tnet
