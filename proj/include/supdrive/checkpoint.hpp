#ifndef SUPDRIVE_CHECKPOINT_HPP_
#define SUPDRIVE_CHECKPOINT_HPP_

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "supdrive/common.hpp"
#include "supdrive/nn.hpp"

namespace supdrive {

inline constexpr std::uint32_t kCheckpointSchemaVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'S', 'U', 'P', 'D', 'C', 'K', 'P', 'T'};

// Binary tensor blob plus a JSON sidecar (<path>.json) holding the agent
// kind, config echoes and seed lineage.
struct Checkpoint {
  std::string kind;  // "driving", "search", "supervisor"
  std::uint32_t schema_version = kCheckpointSchemaVersion;
  std::map<std::string, Vec> tensors;
  nlohmann::json meta = nlohmann::json::object();

  const Vec& tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
    return it->second;
  }
};

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace detail {

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& s, std::size_t end) : s_(s), end_(end) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string r = s_.substr(pos_, n);
    pos_ += n;
    return r;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw CheckpointError("corrupt checkpoint: truncated data");
  }
  const std::string& s_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

inline std::filesystem::path sidecar_path(const std::filesystem::path& p) {
  return std::filesystem::path(p.string() + ".json");
}

inline std::string serialize_checkpoint(const Checkpoint& c) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<std::uint32_t>(out, c.schema_version);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put<std::uint64_t>(out, static_cast<std::uint64_t>(t.size()));
    out.append(reinterpret_cast<const char*>(t.data()), sizeof(double) * t.size());
  }
  detail::put<std::uint64_t>(out, fnv1a(out));
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& blob) {
  if (blob.size() < sizeof(kCheckpointMagic) + 16)
    throw CheckpointError("corrupt checkpoint: file too short");
  if (std::memcmp(blob.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw CheckpointError("corrupt checkpoint: bad magic");
  const std::size_t body = blob.size() - sizeof(std::uint64_t);
  detail::Reader r(blob, body);
  r.bytes(sizeof(kCheckpointMagic));
  Checkpoint c;
  c.schema_version = r.get<std::uint32_t>();
  if (c.schema_version != kCheckpointSchemaVersion)
    throw CheckpointError("checkpoint schema version " + std::to_string(c.schema_version) +
                          " is not supported (expected " +
                          std::to_string(kCheckpointSchemaVersion) + ")");
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto len = r.get<std::uint32_t>();
    std::string name = r.bytes(len);
    const auto count = r.get<std::uint64_t>();
    if (count > (body - r.pos()) / sizeof(double))
      throw CheckpointError("corrupt checkpoint: truncated tensor '" + name + "'");
    Vec t(static_cast<Eigen::Index>(count));
    const std::string raw = r.bytes(count * sizeof(double));
    std::memcpy(t.data(), raw.data(), raw.size());
    c.tensors.emplace(std::move(name), std::move(t));
  }
  if (r.pos() != body) throw CheckpointError("corrupt checkpoint: trailing bytes");
  std::uint64_t stored;
  std::memcpy(&stored, blob.data() + body, sizeof(stored));
  if (stored != fnv1a(blob.substr(0, body)))
    throw CheckpointError("corrupt checkpoint: checksum mismatch");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string blob = serialize_checkpoint(c);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
  }
  nlohmann::json side = c.meta;
  side["kind"] = c.kind;
  side["schema_version"] = c.schema_version;
  side["checksum_fnv1a"] = fnv1a(blob.substr(0, blob.size() - sizeof(std::uint64_t)));
  std::ofstream js(sidecar_path(path), std::ios::trunc);
  if (!js) throw IoError("cannot write '" + sidecar_path(path).string() + "'");
  js << side.dump(2) << "\n";
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Checkpoint c = deserialize_checkpoint(detail::read_file(path));
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(detail::read_file(sidecar_path(path)));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt checkpoint metadata: " + std::string(e.what()));
  } catch (const IoError&) {
    throw CheckpointError("checkpoint metadata missing: " + sidecar_path(path).string());
  }
  if (!side.contains("kind") || !side.contains("schema_version"))
    throw CheckpointError("checkpoint metadata lacks kind or schema_version");
  if (side.at("schema_version").get<std::uint32_t>() != c.schema_version)
    throw CheckpointError("checkpoint metadata schema version disagrees with blob");
  c.kind = side.at("kind").get<std::string>();
  c.meta = side;
  c.meta.erase("kind");
  c.meta.erase("schema_version");
  c.meta.erase("checksum_fnv1a");
  return c;
}

}  // namespace supdrive

#endif  // SUPDRIVE_CHECKPOINT_HPP_
