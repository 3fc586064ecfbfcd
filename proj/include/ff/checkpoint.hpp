#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ff/error.hpp"
#include "ff/model.hpp"

namespace ff {

namespace detail_ckpt {

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

inline void put_f64(std::vector<uint8_t>& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

struct Reader {
  const std::vector<uint8_t>& bytes;
  size_t pos = 0;
  std::string path;

  void need(size_t n) const {
    if (pos + n > bytes.size()) throw TruncatedFileError("truncated file: " + path);
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + static_cast<size_t>(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[pos + static_cast<size_t>(i)]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    const uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
};

inline std::vector<uint8_t> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
}

inline void write_all(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open file for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write: " + path);
}

}  // namespace detail_ckpt

constexpr uint32_t kCheckpointVersion = 1;

// Layout: "FFCK", u32 version, u32 tensor count, then per tensor
// {u32 name length, UTF-8 name, u32 ndim, u64 dims..., f64 LE values...},
// then a length-prefixed UTF-8 JSON config echo.
inline void save_checkpoint(const Model& m, const std::string& path) {
  std::vector<uint8_t> out;
  out.insert(out.end(), {'F', 'F', 'C', 'K'});
  detail_ckpt::put_u32(out, kCheckpointVersion);
  detail_ckpt::put_u32(out, static_cast<uint32_t>(m.named.size()));
  for (const auto& [name, t] : m.named) {
    detail_ckpt::put_u32(out, static_cast<uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    detail_ckpt::put_u32(out, static_cast<uint32_t>(t.ndim()));
    for (size_t d : t.shape()) detail_ckpt::put_u64(out, d);
    for (size_t i = 0; i < t.size(); ++i) detail_ckpt::put_f64(out, t[i]);
  }
  const std::string cfg = m.cfg.to_json().dump();
  detail_ckpt::put_u32(out, static_cast<uint32_t>(cfg.size()));
  out.insert(out.end(), cfg.begin(), cfg.end());
  detail_ckpt::write_all(path, out);
}

// Validates magic, version, and every expected parameter name and shape
// (as derived from the embedded config) before any value is accepted.
inline Model load_checkpoint(const std::string& path) {
  auto bytes = detail_ckpt::read_all(path);
  detail_ckpt::Reader r{bytes, 0, path};
  r.need(4);
  if (std::memcmp(bytes.data(), "FFCK", 4) != 0)
    throw BadMagicError("not a checkpoint file (bad magic): " + path);
  r.pos = 4;
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw BadVersionError("unsupported checkpoint version " + std::to_string(version) + ": " +
                          path);
  const uint32_t count = r.u32();
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> values;
  };
  std::vector<Entry> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.str(r.u32());
    const uint32_t ndim = r.u32();
    size_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      e.shape.push_back(static_cast<size_t>(r.u64()));
      numel *= e.shape.back();
    }
    e.values.resize(numel);
    r.need(numel * 8);
    for (size_t v = 0; v < numel; ++v) e.values[v] = r.f64();
    entries.push_back(std::move(e));
  }
  const std::string cfg_json = r.str(r.u32());
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_json(nlohmann::json::parse(cfg_json));
  } catch (const nlohmann::json::exception&) {
    throw ShapeMismatchError("corrupt config echo in checkpoint: " + path);
  }

  Model m = Model::init(cfg, 0);
  if (entries.size() != m.named.size())
    throw ShapeMismatchError("checkpoint holds " + std::to_string(entries.size()) +
                             " tensors, model expects " + std::to_string(m.named.size()) + ": " +
                             path);
  for (size_t i = 0; i < entries.size(); ++i) {
    auto& [name, t] = m.named[i];
    const Entry& e = entries[i];
    if (e.name != name)
      throw ShapeMismatchError("unexpected parameter '" + e.name + "' (expected '" + name +
                               "'): " + path);
    if (e.shape != t.shape())
      throw ShapeMismatchError("shape mismatch for '" + name + "': file " + shape_str(e.shape) +
                               " vs model " + shape_str(t.shape()) + ": " + path);
    t.values() = e.values;
  }
  return m;
}

// Flat feature-tensor dump: "FFTN", u32 ndim, u64 dims..., f64 LE payload.
inline void save_feature_tensor(const Tensor& t, const std::string& path) {
  std::vector<uint8_t> out;
  out.insert(out.end(), {'F', 'F', 'T', 'N'});
  detail_ckpt::put_u32(out, static_cast<uint32_t>(t.ndim()));
  for (size_t d : t.shape()) detail_ckpt::put_u64(out, d);
  for (size_t i = 0; i < t.size(); ++i) detail_ckpt::put_f64(out, t[i]);
  detail_ckpt::write_all(path, out);
}

inline Tensor load_feature_tensor(const std::string& path) {
  auto bytes = detail_ckpt::read_all(path);
  detail_ckpt::Reader r{bytes, 0, path};
  r.need(4);
  if (std::memcmp(bytes.data(), "FFTN", 4) != 0)
    throw BadMagicError("not a feature tensor file (bad magic): " + path);
  r.pos = 4;
  const uint32_t ndim = r.u32();
  Shape shape;
  size_t numel = 1;
  for (uint32_t d = 0; d < ndim; ++d) {
    shape.push_back(static_cast<size_t>(r.u64()));
    numel *= shape.back();
  }
  std::vector<double> values(numel);
  r.need(numel * 8);
  for (size_t i = 0; i < numel; ++i) values[i] = r.f64();
  return Tensor::from(std::move(shape), std::move(values));
}

}  // namespace ff
