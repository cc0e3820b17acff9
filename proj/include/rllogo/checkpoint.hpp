#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rllogo/numkit.hpp"

// Checkpoint container format, little-endian:
//   magic "RLLG" | u32 version | u32 tensor count
//   per tensor, ordered lexicographically by name:
//     u16 name length | name bytes | u8 rank | u32 dims[rank] | f32 payload
//   trailing u64: training rng state.
namespace rllogo::ckpt {

inline constexpr char kMagic[4] = {'R', 'L', 'L', 'G'};
inline constexpr std::uint32_t kVersion = 1;

enum class CheckpointError : int {
  bad_magic = 1,
  bad_version = 2,
  truncated = 3,
};

struct CheckpointIoError : std::runtime_error {
  CheckpointError code;
  CheckpointIoError(CheckpointError c, const std::string& msg)
      : std::runtime_error(msg), code(c) {}
};

// Tensor map plus the trailing rng state; the on-disk unit of checkpointing.
struct TensorFile {
  std::map<std::string, numkit::Tensor> tensors;  // map keeps names sorted
  std::uint64_t rng_state = 0;
};

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_le(out, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size())
      throw CheckpointIoError(CheckpointError::truncated,
                              "checkpoint: truncated file");
  }

  template <typename T>
  T get_le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += sizeof(T);
    return static_cast<T>(v);
  }

  float get_f32() {
    std::uint32_t bits = get_le<std::uint32_t>();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

inline std::string serialize(const TensorFile& file) {
  std::string out;
  out.append(kMagic, 4);
  detail::put_le(out, kVersion);
  detail::put_le(out, static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& [name, tensor] : file.tensors) {
    if (name.size() > 0xFFFF)
      throw std::invalid_argument("checkpoint: tensor name too long");
    detail::put_le(out, static_cast<std::uint16_t>(name.size()));
    out.append(name);
    detail::put_le(out, static_cast<std::uint8_t>(tensor.dims.size()));
    for (int d : tensor.dims) detail::put_le(out, static_cast<std::uint32_t>(d));
    for (float v : tensor.data) detail::put_f32(out, v);
  }
  detail::put_le(out, file.rng_state);
  return out;
}

inline TensorFile deserialize(const std::string& buf) {
  detail::Reader r{buf};
  std::string magic = r.get_bytes(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    throw CheckpointIoError(CheckpointError::bad_magic, "checkpoint: bad magic");
  std::uint32_t version = r.get_le<std::uint32_t>();
  if (version != kVersion)
    throw CheckpointIoError(CheckpointError::bad_version,
                            "checkpoint: unsupported version " + std::to_string(version));
  std::uint32_t count = r.get_le<std::uint32_t>();
  TensorFile file;
  for (std::uint32_t t = 0; t < count; ++t) {
    std::uint16_t name_len = r.get_le<std::uint16_t>();
    std::string name = r.get_bytes(name_len);
    std::uint8_t rank = r.get_le<std::uint8_t>();
    std::vector<int> dims(rank);
    std::int64_t numel = 1;
    for (auto& d : dims) {
      d = static_cast<int>(r.get_le<std::uint32_t>());
      numel *= d;
    }
    std::vector<float> data(static_cast<std::size_t>(numel));
    for (auto& v : data) v = r.get_f32();
    file.tensors.emplace(std::move(name),
                         numkit::Tensor(std::move(dims), std::move(data)));
  }
  file.rng_state = r.get_le<std::uint64_t>();
  if (r.pos != buf.size())
    throw CheckpointIoError(CheckpointError::truncated,
                            "checkpoint: trailing bytes (size mismatch)");
  return file;
}

inline void save_tensor_file(const TensorFile& file, const std::string& path) {
  std::string bytes = serialize(file);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline TensorFile load_tensor_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  return deserialize(buf);
}

// Strings ride in tensors as one byte per f32 element; exact for 0..255.
inline numkit::Tensor string_to_tensor(const std::string& s) {
  std::vector<float> data(s.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    data[i] = static_cast<float>(static_cast<unsigned char>(s[i]));
  return numkit::Tensor({std::max<int>(1, static_cast<int>(s.size()))},
                        s.empty() ? std::vector<float>{0.0f} : std::move(data));
}

inline std::string tensor_to_string(const numkit::Tensor& t) {
  std::string s;
  s.reserve(t.data.size());
  for (float v : t.data) s.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  if (s.size() == 1 && s[0] == '\0') return "";
  return s;
}

}  // namespace rllogo::ckpt
