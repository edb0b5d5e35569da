#pragma once

#include <array>
#include <string>

#include "mvsr/common.hpp"

namespace mvsr {

/// PFM, grayscale ("Pf"): header, dims, scale; negative scale = little-endian
/// payload; rows stored bottom-up. Round-trips finite f32 values bit-exactly.
Image2D<float> read_pfm(const std::string& path);
void write_pfm(const std::string& path, const Image2D<float>& img);

/// Binary PGM ("P5"), maxval 255, values mapped to [0, 1].
Image2D<float> read_pgm(const std::string& path);
void write_pgm(const std::string& path, const Image2D<float>& img);

/// Binary PPM ("P6") from per-pixel RGB triplets in [0, 1].
void write_ppm(const std::string& path,
               const Image2D<std::array<float, 3>>& rgb);

/// Dispatches on extension (.pfm / .pgm).
Image2D<float> read_image(const std::string& path);

}  // namespace mvsr
