#pragma once

// Binary checkpoint container.
//
//   bytes 0..7   magic "STRATACK"
//   u32          format version (1)
//   u32 + bytes  model config as `key = value` text
//   u32          tensor count
//   per tensor:  u32 name length, name bytes, u32 rank, u64 dims[rank],
//                f64 payload
//
// All integers and floats are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "strata/field.hpp"

namespace strata {

inline constexpr char kCheckpointMagic[8] = {'S', 'T', 'R', 'A', 'T', 'A', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::vector<char>& out, T v) {
  const char* p = reinterpret_cast<const char*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<char>& bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint truncated");
  }
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> serialize_checkpoint(const RadianceField& field) {
  std::vector<char> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  const std::string cfg = kv::format(field.config().to_entries());
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out.insert(out.end(), cfg.begin(), cfg.end());
  const Parameters& p = field.parameters();
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.size()));
  for (std::size_t i = 0; i < p.size(); ++i) {
    const std::string& name = p.name(i);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p[i].rank()));
    for (std::size_t d : p[i].shape()) detail::put<std::uint64_t>(out, d);
    for (double v : p[i].data()) detail::put<double>(out, v);
  }
  return out;
}

/// Parses a checkpoint and validates every tensor against the shapes the
/// stored model config implies.
inline RadianceField deserialize_checkpoint(const std::vector<char>& bytes) {
  detail::Reader r(bytes);
  if (r.str(8) != std::string(kCheckpointMagic, 8)) throw CheckpointError("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto cfg_len = r.get<std::uint32_t>();
  ModelConfig config = ModelConfig::from_entries(kv::parse(r.str(cfg_len), "checkpoint header"));
  const auto count = r.get<std::uint32_t>();
  Parameters params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    std::string name = r.str(name_len);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw CheckpointError("tensor '" + name + "' has implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    std::vector<double> data(shape_size(shape));
    for (double& v : data) v = r.get<double>();
    params.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint payload");
  try {
    return RadianceField(std::move(config), std::move(params));
  } catch (const ShapeError& e) {
    throw CheckpointError(std::string("checkpoint does not match its model config: ") + e.what());
  }
}

inline void save_checkpoint(const RadianceField& field, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(field);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot write checkpoint: " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("failed writing checkpoint: " + path.string());
}

inline RadianceField load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("checkpoint not found: " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace strata
