#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mvsr/common.hpp"

namespace mvsr {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Pinhole intrinsics in pixels. Pixel (x, y) corresponds to continuous image
/// coordinate (x + 0.5, y + 0.5); projection below returns continuous
/// coordinates, so resolution scaling is a pure rescale of fx, fy, cx, cy.
struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
};

/// World-to-camera rigid transform: X_cam = R * X_world + t.
struct Extrinsics {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
};

struct Camera {
  Intrinsics intr;
  Extrinsics extr;
  int width = 0;
  int height = 0;
};

/// Reference view plus one or more posed source views.
struct CameraRig {
  Camera reference;
  std::vector<Camera> sources;
};

/// Per-pixel metric depth in meters; kInvalid marks holes.
struct DepthMap {
  Image2D<double> values;
};

/// Per-pixel pseudo disparity d = scale_fb / D, in pixels. scale_fb is the
/// f*b product (reference focal length times rig baseline) the map was
/// built with, i.e. the conversion constant back to metric depth.
struct PseudoDisparityMap {
  Image2D<double> values;
  double scale_fb = 0.0;
};

/// Camera center in world coordinates (solves R*C + t = 0).
Vec3 camera_center(const Extrinsics& e);

/// Checks R^T R = I and det R = 1 within tol.
bool is_orthonormal(const Mat3& R, double tol = 1e-6);

/// Nearest rotation to R (polar decomposition via SVD). Calibration files
/// carry rounding error; loaders snap to a proper rotation after validating.
Mat3 orthonormalize(const Mat3& R);

void validate_camera(const Camera& cam);

/// Distance from the reference center to the closest source center.
/// Throws on an empty source list or a coincident (degenerate) pair.
double baseline_scale(const CameraRig& rig);

/// d = f*b / D per pixel. Non-positive or invalid depths become invalid.
PseudoDisparityMap to_pseudo_disparity(const DepthMap& depth, double f, double b);

/// D = scale_fb / d per pixel; inverse of to_pseudo_disparity.
DepthMap to_metric_depth(const PseudoDisparityMap& pd);

/// Rescales intrinsics and image size by s; extrinsics unchanged. s*width
/// and s*height must be integral.
Camera scale_camera(const Camera& cam, double s);

/// Projection of a camera-frame point to continuous image coordinates.
/// No validity checks; callers test z > 0 themselves.
Vec2 project_continuous(const Intrinsics& intr, const Vec3& X_cam);

/// Camera-frame point of pixel (x, y) at depth D (depth = camera-frame z).
Vec3 backproject_pixel(const Intrinsics& intr, double x, double y, double D);

struct WarpResult {
  double x = 0, y = 0;  // pixel coordinates in the source view
  bool valid = false;   // in front of the source camera and inside its frame
};

/// Back-projects reference pixel (x, y) at depth D, transforms into the
/// source view and projects. Validity covers the behind-camera and
/// out-of-frame cases; coordinates are returned either way.
WarpResult warp_pixel(const Camera& ref, const Camera& src, double x, double y,
                      double depth);

/// Camera-frame 3D point per pixel; invalid depth gives an invalid point.
Image2D<Vec3> depth_to_points(const DepthMap& depth, const Camera& cam);

/// Unit normals from Sobel gradients of a camera-frame point map, oriented
/// toward the camera (negative z). Borders replicate; any invalid point in
/// the 3x3 stencil, or a zero cross product, invalidates the pixel.
Image2D<Vec3> normals_from_points(const Image2D<Vec3>& points);

inline bool is_valid_point(const Vec3& p) {
  return std::isfinite(p.x()) && std::isfinite(p.y()) && std::isfinite(p.z());
}

inline Vec3 invalid_point() { return Vec3(kInvalid, kInvalid, kInvalid); }

}  // namespace mvsr
