#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "tnet/core/error.hpp"
#include "tnet/data/io.hpp"
#include "tnet/engine/optimizer.hpp"
#include "tnet/loss/losses.hpp"
#include "tnet/model/tnet.hpp"

namespace tnet {

// Container layout (little-endian):
//   "TNCK" | u32 version | u64 header_len | header JSON
//   u64 tensor_count | per tensor: u32 name_len, name, u8 kind, u32 c, u32 n, u32 l, float32[c*n*l]
//   u64 FNV-1a checksum of every byte after the magic
// The header echoes the model and loss configs. Training checkpoints add
// optimizer moments as tensors named "optimizer.m/<param>" and "optimizer.v/<param>".
inline constexpr char kCheckpointMagic[4] = {'T', 'N', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  ParamKind kind = ParamKind::weight;
  int c = 0, n = 0, l = 0;
  std::vector<float> data;
};

struct CheckpointFile {
  nlohmann::json header;
  std::vector<CheckpointTensor> tensors;
};

namespace detail {

class HashingWriter {
 public:
  explicit HashingWriter(std::ostream& os) : os_(os) {}
  template <typename T>
  void put(T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    raw(b, sizeof(T));
  }
  void bytes(const std::string& s) { raw(s.data(), s.size()); }
  void raw(const char* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) hash_ = (hash_ ^ static_cast<unsigned char>(p[i])) * 1099511628211ULL;
    os_.write(p, static_cast<std::streamsize>(n));
  }
  std::uint64_t hash() const { return hash_; }

 private:
  std::ostream& os_;
  std::uint64_t hash_ = 1469598103934665603ULL;
};

class HashingReader {
 public:
  HashingReader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}
  template <typename T>
  T get() {
    char b[sizeof(T)];
    raw(b, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
  std::string bytes(std::size_t n) {
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  void raw(char* p, std::size_t n) {
    if (n && !is_.read(p, static_cast<std::streamsize>(n))) throw FormatError(path_ + ": truncated checkpoint");
    for (std::size_t i = 0; i < n; ++i) hash_ = (hash_ ^ static_cast<unsigned char>(p[i])) * 1099511628211ULL;
  }
  std::uint64_t hash() const { return hash_; }

 private:
  std::istream& is_;
  std::string path_;
  std::uint64_t hash_ = 1469598103934665603ULL;
};

}  // namespace detail

inline void write_checkpoint_file(const CheckpointFile& file, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kCheckpointMagic, 4);
  detail::HashingWriter w(out);
  w.put(kCheckpointVersion);
  const std::string header = file.header.dump();
  w.put(static_cast<std::uint64_t>(header.size()));
  w.bytes(header);
  w.put(static_cast<std::uint64_t>(file.tensors.size()));
  for (const auto& t : file.tensors) {
    w.put(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name);
    w.put(static_cast<std::uint8_t>(t.kind));
    w.put(static_cast<std::uint32_t>(t.c));
    w.put(static_cast<std::uint32_t>(t.n));
    w.put(static_cast<std::uint32_t>(t.l));
    for (float v : t.data) w.put(v);
  }
  detail::put_le(out, w.hash());
  if (!out) throw DataError("write failed for " + path.string());
}

inline CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::string p = path.string();
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError(p + ": not a checkpoint");
  detail::HashingReader r(in, p);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw VersionError(p + ": checkpoint version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  }
  CheckpointFile file;
  const auto header_len = r.get<std::uint64_t>();
  if (header_len > (1u << 24)) throw FormatError(p + ": implausible header size");
  try {
    file.header = nlohmann::json::parse(r.bytes(header_len));
  } catch (const nlohmann::json::exception&) {
    throw FormatError(p + ": corrupt header");
  }
  const auto count = r.get<std::uint64_t>();
  if (count > (1u << 20)) throw FormatError(p + ": implausible tensor count");
  for (std::uint64_t k = 0; k < count; ++k) {
    CheckpointTensor t;
    const auto name_len = r.get<std::uint32_t>();
    if (name_len > 4096) throw FormatError(p + ": implausible tensor name");
    t.name = r.bytes(name_len);
    const auto kind = r.get<std::uint8_t>();
    if (kind > static_cast<std::uint8_t>(ParamKind::norm_stat)) throw FormatError(p + ": bad tensor kind");
    t.kind = static_cast<ParamKind>(kind);
    t.c = static_cast<int>(r.get<std::uint32_t>());
    t.n = static_cast<int>(r.get<std::uint32_t>());
    t.l = static_cast<int>(r.get<std::uint32_t>());
    const std::uint64_t size = std::uint64_t(t.c) * t.n * t.l;
    if (size > (1ull << 32)) throw FormatError(p + ": implausible tensor size");
    t.data.resize(size);
    for (auto& v : t.data) v = r.get<float>();
    file.tensors.push_back(std::move(t));
  }
  const std::uint64_t expected = r.hash();
  std::uint64_t stored = 0;
  if (!detail::get_le(in, stored)) throw FormatError(p + ": truncated checkpoint");
  if (stored != expected) throw FormatError(p + ": checksum mismatch");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(p + ": trailing bytes");
  return file;
}

template <typename S>
CheckpointTensor to_checkpoint_tensor(const std::string& name, ParamKind kind, const Tensor<S>& t) {
  CheckpointTensor out{name, kind, t.channels(), t.batch(), t.length(), {}};
  out.data.reserve(t.size());
  for (S v : t.vec()) out.data.push_back(static_cast<float>(v));
  return out;
}

template <typename S>
void assign_checkpoint_tensor(const CheckpointTensor& src, Tensor<S>& dst, const std::string& path) {
  if (src.c != dst.channels() || src.n != dst.batch() || src.l != dst.length()) {
    throw FormatError(path + ": tensor " + src.name + " has shape (" + std::to_string(src.c) + ", " +
                      std::to_string(src.n) + ", " + std::to_string(src.l) + "), model expects " + dst.shape_string());
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<S>(src.data[i]);
}

template <typename S>
CheckpointFile model_checkpoint(const TNet<S>& model, const LossConfig& loss, const nlohmann::json& extra = {}) {
  CheckpointFile file;
  file.header = {{"format", "tnet-checkpoint"}, {"model", model.config()}, {"loss", loss}};
  if (!extra.is_null())
    for (auto it = extra.begin(); it != extra.end(); ++it) file.header[it.key()] = it.value();
  for (const auto& p : model.params().all()) file.tensors.push_back(to_checkpoint_tensor(p->name, p->kind, p->value));
  return file;
}

template <typename S>
void save_checkpoint(const TNet<S>& model, const std::filesystem::path& path, const LossConfig& loss = {},
                     const nlohmann::json& extra = {}) {
  write_checkpoint_file(model_checkpoint(model, loss, extra), path);
}

inline ModelConfig checkpoint_model_config(const CheckpointFile& file, const std::string& path) {
  try {
    return file.header.at("model").get<ModelConfig>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(path + ": header lacks a model config");
  }
}

template <typename S>
void restore_parameters(TNet<S>& model, const CheckpointFile& file, const std::string& path) {
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : file.tensors) by_name[t.name] = &t;
  for (auto& p : model.params().all()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw FormatError(path + ": missing tensor " + p->name);
    assign_checkpoint_tensor(*it->second, p->value, path);
  }
}

// Loads a model, constructing it from the echoed config.
template <typename S>
std::unique_ptr<TNet<S>> load_checkpoint(const std::filesystem::path& path) {
  const auto file = read_checkpoint_file(path);
  auto model = std::make_unique<TNet<S>>(checkpoint_model_config(file, path.string()), 0);
  restore_parameters(*model, file, path.string());
  return model;
}

// Loads a model and requires the echoed config to equal `expected`.
template <typename S>
std::unique_ptr<TNet<S>> load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  const auto file = read_checkpoint_file(path);
  const auto echoed = checkpoint_model_config(file, path.string());
  if (!(echoed == expected)) {
    throw VersionError(path.string() + ": checkpoint was written for config " + nlohmann::json(echoed).dump() +
                       ", requested " + nlohmann::json(expected).dump());
  }
  auto model = std::make_unique<TNet<S>>(expected, 0);
  restore_parameters(*model, file, path.string());
  return model;
}

template <typename S>
void append_optimizer_state(CheckpointFile& file, const TNet<S>& model, const Optimizer<S>& opt) {
  const auto& ps = model.params().all();
  for (std::size_t k = 0; k < ps.size(); ++k) {
    file.tensors.push_back(to_checkpoint_tensor("optimizer.m/" + ps[k]->name, ps[k]->kind, opt.first_moments()[k]));
    file.tensors.push_back(to_checkpoint_tensor("optimizer.v/" + ps[k]->name, ps[k]->kind, opt.second_moments()[k]));
  }
  file.header["optimizer_steps"] = opt.steps();
}

template <typename S>
void restore_optimizer_state(Optimizer<S>& opt, const TNet<S>& model, const CheckpointFile& file,
                             const std::string& path) {
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : file.tensors) by_name[t.name] = &t;
  const auto& ps = model.params().all();
  for (std::size_t k = 0; k < ps.size(); ++k) {
    for (int which = 0; which < 2; ++which) {
      const std::string name = std::string(which ? "optimizer.v/" : "optimizer.m/") + ps[k]->name;
      auto it = by_name.find(name);
      if (it == by_name.end()) throw FormatError(path + ": missing optimizer tensor " + name);
      assign_checkpoint_tensor(*it->second, which ? opt.second_moments()[k] : opt.first_moments()[k], path);
    }
  }
  if (!file.header.contains("optimizer_steps")) throw FormatError(path + ": missing optimizer step count");
  opt.set_steps(file.header["optimizer_steps"].get<std::int64_t>());
}

}  // namespace tnet
