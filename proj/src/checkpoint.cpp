#include "curvewalk/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace curvewalk {

namespace {

constexpr char kMagic[4] = {'C', 'W', 'T', '1'};

template <typename T>
void write_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<unsigned char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

void write_f32_le(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  write_le<uint32_t>(os, bits);
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  CW_CHECK(is.good(), "checkpoint truncated");
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

float read_f32_le(std::istream& is) {
  uint32_t bits = read_le<uint32_t>(is);
  float v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  CW_CHECK(os.good(), "cannot open " << path << " for writing");
  os.write(kMagic, 4);
  write_le<uint32_t>(os, static_cast<uint32_t>(params.count()));
  for (const auto& [name, t] : params.items()) {
    CW_CHECK(name.size() <= 0xffff, "parameter name too long");
    write_le<uint16_t>(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<uint8_t>(os, static_cast<uint8_t>(t->rank()));
    for (int i = 0; i < t->rank(); ++i)
      write_le<uint32_t>(os, static_cast<uint32_t>(t->dim(i)));
    for (int64_t i = 0; i < t->size(); ++i)
      write_f32_le(os, static_cast<float>((*t)[i]));
  }
  CW_CHECK(os.good(), "write failed for " << path);
}

std::map<std::string, Tensor> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  CW_CHECK(is.good(), "cannot open checkpoint " << path);
  char magic[4];
  is.read(magic, 4);
  CW_CHECK(is.good() && std::memcmp(magic, kMagic, 4) == 0,
           "bad checkpoint magic in " << path);
  const uint32_t count = read_le<uint32_t>(is);
  std::map<std::string, Tensor> out;
  for (uint32_t k = 0; k < count; ++k) {
    const uint16_t name_len = read_le<uint16_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    CW_CHECK(is.good(), "checkpoint truncated");
    const uint8_t rank = read_le<uint8_t>(is);
    CW_CHECK(rank >= 1, "zero-rank tensor in checkpoint");
    std::vector<int> shape(rank);
    for (auto& d : shape) {
      const uint32_t ext = read_le<uint32_t>(is);
      CW_CHECK(ext > 0 && ext < (1u << 30), "bad extent in checkpoint");
      d = static_cast<int>(ext);
    }
    Tensor t(shape);
    for (int64_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<double>(read_f32_le(is));
    CW_CHECK(out.emplace(std::move(name), std::move(t)).second,
             "duplicate tensor name in checkpoint");
  }
  return out;
}

void load_checkpoint(const std::string& path, ParamStore& params) {
  auto stored = read_checkpoint(path);
  for (const auto& [name, t] : params.items()) {
    auto it = stored.find(name);
    CW_CHECK(it != stored.end(), "checkpoint missing parameter " << name);
    CW_CHECK(it->second.shape() == t->shape(),
             "checkpoint shape mismatch for " << name);
    *t = it->second;
  }
}

}  // namespace curvewalk
