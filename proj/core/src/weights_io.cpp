#include "mvsr/nn/weights_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <memory>

namespace mvsr::nn {
namespace {

using FilePtr = std::unique_ptr<FILE, int (*)(FILE*)>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode), &std::fclose);
  check(f != nullptr, "cannot open " + path);
  return f;
}

void put_u32(FILE* f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  check(std::fwrite(b, 1, 4, f) == 4, "weights: short write");
}

uint32_t get_u32(FILE* f, const std::string& path) {
  unsigned char b[4];
  check(std::fread(b, 1, 4, f) == 4, "weights: truncated file " + path);
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
         uint32_t(b[3]) << 24;
}

static_assert(sizeof(float) == 4);

}  // namespace

void save_weights(const std::string& path, const ParamStore& params) {
  FilePtr f = open_file(path, "wb");
  check(std::fwrite("CHSN", 1, 4, f.get()) == 4, "weights: short write");
  put_u32(f.get(), kWeightFormatVersion);
  for (const std::string& name : params.names()) {
    const Tensor& t = params.get(name);
    put_u32(f.get(), static_cast<uint32_t>(name.size()));
    check(std::fwrite(name.data(), 1, name.size(), f.get()) == name.size(),
          "weights: short write");
    put_u32(f.get(), static_cast<uint32_t>(t.rank()));
    for (int d : t.shape) put_u32(f.get(), static_cast<uint32_t>(d));
    for (float v : t.data) {
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(f.get(), bits);
    }
  }
}

ParamStore load_weights(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  char magic[4];
  check(std::fread(magic, 1, 4, f.get()) == 4 && std::memcmp(magic, "CHSN", 4) == 0,
        "weights: bad magic in " + path);
  uint32_t version = get_u32(f.get(), path);
  check(version == kWeightFormatVersion,
        "weights: unsupported version in " + path);
  ParamStore store;
  for (;;) {
    unsigned char probe;
    size_t got = std::fread(&probe, 1, 1, f.get());
    if (got == 0) break;
    check(std::fseek(f.get(), -1, SEEK_CUR) == 0, "weights: seek failed");
    uint32_t name_len = get_u32(f.get(), path);
    check(name_len > 0 && name_len < 4096, "weights: implausible name length");
    std::string name(name_len, '\0');
    check(std::fread(name.data(), 1, name_len, f.get()) == name_len,
          "weights: truncated file " + path);
    uint32_t rank = get_u32(f.get(), path);
    check(rank >= 1 && rank <= 8, "weights: implausible rank");
    std::vector<int> shape(rank);
    size_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      uint32_t d = get_u32(f.get(), path);
      check(d > 0 && d < (1u << 28), "weights: implausible dimension");
      shape[i] = static_cast<int>(d);
      numel *= d;
    }
    Tensor t(shape);
    for (size_t i = 0; i < numel; ++i) {
      uint32_t bits = get_u32(f.get(), path);
      std::memcpy(&t.data[i], &bits, 4);
    }
    store.add(name, std::move(t));
  }
  return store;
}

}  // namespace mvsr::nn
