#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvsr {

/// Error thrown for invalid configurations, malformed files and shape
/// mismatches. Carries a human-readable message only.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void check(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

/// Reserved sentinel for invalid pixels in depth / disparity / point maps.
/// Operations must propagate it, never substitute a value.
inline constexpr double kInvalid = std::numeric_limits<double>::quiet_NaN();
inline constexpr float kInvalidF = std::numeric_limits<float>::quiet_NaN();

inline bool is_valid(double v) { return std::isfinite(v); }

/// Dense row-major H x W grid. (x, y) indexing with x along a row.
template <typename T>
class Image2D {
 public:
  Image2D() = default;
  Image2D(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<size_t>(width) * height, fill) {
    check(width > 0 && height > 0, "Image2D: non-positive dimensions");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& at(int x, int y) {
    assert(x >= 0 && x < width_ && y >= 0 && y < height_);
    return data_[static_cast<size_t>(y) * width_ + x];
  }
  const T& at(int x, int y) const {
    assert(x >= 0 && x < width_ && y >= 0 && y < height_);
    return data_[static_cast<size_t>(y) * width_ + x];
  }

  /// Reads with clamp-to-edge semantics.
  const T& at_clamped(int x, int y) const {
    x = x < 0 ? 0 : (x >= width_ ? width_ - 1 : x);
    y = y < 0 ? 0 : (y >= height_ ? height_ - 1 : y);
    return at(x, y);
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

  bool same_size(const Image2D& o) const {
    return width_ == o.width_ && height_ == o.height_;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using GrayImage = Image2D<double>;  // intensities in [0, 1]

}  // namespace mvsr
