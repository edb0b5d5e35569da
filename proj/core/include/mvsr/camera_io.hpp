#pragma once

#include <string>

#include "mvsr/geometry.hpp"

namespace mvsr {

/// One DTU-style camera text file: a 4x4 world-to-camera matrix, a 3x3 K
/// matrix and the scene's metric depth range.
struct CameraFile {
  Extrinsics extr;
  Intrinsics intr;
  double dmin = 0;
  double dmax = 0;
};

CameraFile read_camera_file(const std::string& path);

void write_camera_file(const std::string& path, const CameraFile& cam);

/// Attaches an image size, validates and re-orthonormalizes the rotation.
Camera make_camera(const CameraFile& file, int width, int height);

}  // namespace mvsr
