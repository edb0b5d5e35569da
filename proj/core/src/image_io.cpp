#include "mvsr/image_io.hpp"

#include <cstdio>
#include <cstring>
#include <memory>

namespace mvsr {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_or_fail(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  check(f != nullptr, "cannot open file: " + path);
  return f;
}

// Reads one whitespace-delimited token, skipping comments ('#' to newline).
std::string next_token(std::FILE* f, const std::string& path) {
  std::string tok;
  int c;
  while ((c = std::fgetc(f)) != EOF) {
    if (c == '#') {
      while ((c = std::fgetc(f)) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  check(!tok.empty(), "unexpected end of header in " + path);
  return tok;
}

bool host_is_little_endian() {
  const uint16_t probe = 1;
  return *reinterpret_cast<const uint8_t*>(&probe) == 1;
}

void byteswap32(float* data, size_t n) {
  auto* bytes = reinterpret_cast<uint8_t*>(data);
  for (size_t i = 0; i < n; ++i) {
    std::swap(bytes[4 * i + 0], bytes[4 * i + 3]);
    std::swap(bytes[4 * i + 1], bytes[4 * i + 2]);
  }
}

}  // namespace

Image2D<float> read_pfm(const std::string& path) {
  auto f = open_or_fail(path, "rb");
  const std::string magic = next_token(f.get(), path);
  check(magic == "Pf", path + ": not a grayscale PFM (header " + magic + ")");
  const int w = std::stoi(next_token(f.get(), path));
  const int h = std::stoi(next_token(f.get(), path));
  const double scale = std::stod(next_token(f.get(), path));
  check(w > 0 && h > 0, path + ": bad PFM dimensions");

  Image2D<float> img(w, h);
  std::vector<float> row(static_cast<size_t>(w));
  // PFM rows are stored bottom-up.
  for (int y = h - 1; y >= 0; --y) {
    const size_t got = std::fread(row.data(), sizeof(float), row.size(), f.get());
    check(got == row.size(), path + ": truncated PFM payload");
    if ((scale < 0) != host_is_little_endian()) byteswap32(row.data(), row.size());
    std::memcpy(&img.at(0, y), row.data(), row.size() * sizeof(float));
  }
  return img;
}

void write_pfm(const std::string& path, const Image2D<float>& img) {
  auto f = open_or_fail(path, "wb");
  // Negative scale marks little-endian payload.
  const double scale = host_is_little_endian() ? -1.0 : 1.0;
  std::fprintf(f.get(), "Pf\n%d %d\n%.1f\n", img.width(), img.height(), scale);
  for (int y = img.height() - 1; y >= 0; --y) {
    const size_t put =
        std::fwrite(&img.at(0, y), sizeof(float), static_cast<size_t>(img.width()), f.get());
    check(put == static_cast<size_t>(img.width()), path + ": short write");
  }
}

Image2D<float> read_pgm(const std::string& path) {
  auto f = open_or_fail(path, "rb");
  const std::string magic = next_token(f.get(), path);
  check(magic == "P5", path + ": not a binary PGM (header " + magic + ")");
  const int w = std::stoi(next_token(f.get(), path));
  const int h = std::stoi(next_token(f.get(), path));
  const int maxval = std::stoi(next_token(f.get(), path));
  check(w > 0 && h > 0, path + ": bad PGM dimensions");
  check(maxval > 0 && maxval < 256, path + ": unsupported PGM maxval");

  std::vector<uint8_t> buf(static_cast<size_t>(w) * h);
  const size_t got = std::fread(buf.data(), 1, buf.size(), f.get());
  check(got == buf.size(), path + ": truncated PGM payload");
  Image2D<float> img(w, h);
  for (size_t i = 0; i < buf.size(); ++i)
    img.raw()[i] = static_cast<float>(buf[i]) / static_cast<float>(maxval);
  return img;
}

void write_pgm(const std::string& path, const Image2D<float>& img) {
  auto f = open_or_fail(path, "wb");
  std::fprintf(f.get(), "P5\n%d %d\n255\n", img.width(), img.height());
  std::vector<uint8_t> buf(img.size());
  for (size_t i = 0; i < img.size(); ++i) {
    float v = img.raw()[i];
    v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
    buf[i] = static_cast<uint8_t>(v * 255.0f + 0.5f);
  }
  const size_t put = std::fwrite(buf.data(), 1, buf.size(), f.get());
  check(put == buf.size(), path + ": short write");
}

void write_ppm(const std::string& path, const Image2D<std::array<float, 3>>& rgb) {
  auto f = open_or_fail(path, "wb");
  std::fprintf(f.get(), "P6\n%d %d\n255\n", rgb.width(), rgb.height());
  std::vector<uint8_t> buf(rgb.size() * 3);
  for (size_t i = 0; i < rgb.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      float v = rgb.raw()[i][c];
      v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
      buf[3 * i + c] = static_cast<uint8_t>(v * 255.0f + 0.5f);
    }
  }
  const size_t put = std::fwrite(buf.data(), 1, buf.size(), f.get());
  check(put == buf.size(), path + ": short write");
}

Image2D<float> read_image(const std::string& path) {
  if (path.size() >= 4) {
    const std::string ext = path.substr(path.size() - 4);
    if (ext == ".pfm") return read_pfm(path);
    if (ext == ".pgm") return read_pgm(path);
  }
  fail("unsupported image extension (expected .pfm or .pgm): " + path);
}

}  // namespace mvsr
