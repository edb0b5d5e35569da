#include "mvsr/geometry.hpp"

#include <Eigen/SVD>

namespace mvsr {

Vec3 camera_center(const Extrinsics& e) { return -(e.R.transpose() * e.t); }

bool is_orthonormal(const Mat3& R, double tol) {
  const Mat3 gram = R.transpose() * R;
  if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(R.determinant() - 1.0) <= tol;
}

Mat3 orthonormalize(const Mat3& R) {
  Eigen::JacobiSVD<Mat3> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 U = svd.matrixU();
  const Mat3 V = svd.matrixV();
  if ((U * V.transpose()).determinant() < 0) U.col(2) = -U.col(2);
  return U * V.transpose();
}

void validate_camera(const Camera& cam) {
  check(cam.intr.fx > 0 && cam.intr.fy > 0, "camera: focal lengths must be positive");
  check(cam.width >= 8 && cam.height >= 8, "camera: image size must be at least 8x8");
  check(is_orthonormal(cam.extr.R), "camera: rotation is not orthonormal within 1e-6");
}

double baseline_scale(const CameraRig& rig) {
  check(!rig.sources.empty(), "rig: needs at least one source camera");
  const Vec3 c_ref = camera_center(rig.reference.extr);
  double best = std::numeric_limits<double>::infinity();
  for (const Camera& src : rig.sources)
    best = std::min(best, (camera_center(src.extr) - c_ref).norm());
  check(best > 0, "rig: reference and closest source centers coincide");
  return best;
}

PseudoDisparityMap to_pseudo_disparity(const DepthMap& depth, double f, double b) {
  check(f > 0, "to_pseudo_disparity: focal length must be positive");
  check(b > 0, "to_pseudo_disparity: baseline must be positive");
  PseudoDisparityMap pd;
  pd.scale_fb = f * b;
  pd.values = Image2D<double>(depth.values.width(), depth.values.height(), kInvalid);
  for (size_t i = 0; i < depth.values.size(); ++i) {
    const double D = depth.values.raw()[i];
    if (is_valid(D) && D > 0) pd.values.raw()[i] = pd.scale_fb / D;
  }
  return pd;
}

DepthMap to_metric_depth(const PseudoDisparityMap& pd) {
  check(pd.scale_fb > 0, "to_metric_depth: scale_fb must be positive");
  DepthMap depth;
  depth.values = Image2D<double>(pd.values.width(), pd.values.height(), kInvalid);
  for (size_t i = 0; i < pd.values.size(); ++i) {
    const double d = pd.values.raw()[i];
    if (is_valid(d) && d > 0) depth.values.raw()[i] = pd.scale_fb / d;
  }
  return depth;
}

Camera scale_camera(const Camera& cam, double s) {
  check(s > 0, "scale_camera: scale must be positive");
  const double w = cam.width * s;
  const double h = cam.height * s;
  check(std::abs(w - std::round(w)) < 1e-9 && std::abs(h - std::round(h)) < 1e-9,
        "scale_camera: scaled size is not integral");
  Camera out = cam;
  out.intr.fx *= s;
  out.intr.fy *= s;
  out.intr.cx *= s;
  out.intr.cy *= s;
  out.width = static_cast<int>(std::round(w));
  out.height = static_cast<int>(std::round(h));
  return out;
}

Vec2 project_continuous(const Intrinsics& intr, const Vec3& X_cam) {
  return Vec2(intr.fx * X_cam.x() / X_cam.z() + intr.cx,
              intr.fy * X_cam.y() / X_cam.z() + intr.cy);
}

Vec3 backproject_pixel(const Intrinsics& intr, double x, double y, double D) {
  const double u = x + 0.5;
  const double v = y + 0.5;
  return Vec3((u - intr.cx) / intr.fx * D, (v - intr.cy) / intr.fy * D, D);
}

WarpResult warp_pixel(const Camera& ref, const Camera& src, double x, double y,
                      double depth) {
  const Vec3 X_ref = backproject_pixel(ref.intr, x, y, depth);
  const Vec3 X_world = ref.extr.R.transpose() * (X_ref - ref.extr.t);
  const Vec3 X_src = src.extr.R * X_world + src.extr.t;
  WarpResult out;
  if (X_src.z() <= 0) return out;  // behind the source camera
  const Vec2 uv = project_continuous(src.intr, X_src);
  out.x = uv.x() - 0.5;
  out.y = uv.y() - 0.5;
  out.valid = out.x >= 0 && out.x < src.width && out.y >= 0 && out.y < src.height;
  return out;
}

Image2D<Vec3> depth_to_points(const DepthMap& depth, const Camera& cam) {
  Image2D<Vec3> points(depth.values.width(), depth.values.height(), invalid_point());
  for (int y = 0; y < points.height(); ++y) {
    for (int x = 0; x < points.width(); ++x) {
      const double D = depth.values.at(x, y);
      if (is_valid(D) && D > 0)
        points.at(x, y) = backproject_pixel(cam.intr, x, y, D);
    }
  }
  return points;
}

Image2D<Vec3> normals_from_points(const Image2D<Vec3>& points) {
  check(points.width() >= 3 && points.height() >= 3,
        "normals_from_points: map must be at least 3x3");
  // Sobel taps, (dx, dy, weight_x, weight_y).
  static constexpr int kOff[8][2] = {{-1, -1}, {0, -1}, {1, -1}, {-1, 0},
                                     {1, 0},   {-1, 1}, {0, 1},  {1, 1}};
  static constexpr double kWx[8] = {-1, 0, 1, -2, 2, -1, 0, 1};
  static constexpr double kWy[8] = {-1, -2, -1, 0, 0, 1, 2, 1};

  Image2D<Vec3> normals(points.width(), points.height(), invalid_point());
  for (int y = 0; y < points.height(); ++y) {
    for (int x = 0; x < points.width(); ++x) {
      Vec3 gx = Vec3::Zero(), gy = Vec3::Zero();
      bool ok = is_valid_point(points.at(x, y));
      for (int k = 0; ok && k < 8; ++k) {
        const Vec3& p = points.at_clamped(x + kOff[k][0], y + kOff[k][1]);
        if (!is_valid_point(p)) {
          ok = false;
          break;
        }
        gx += kWx[k] * p;
        gy += kWy[k] * p;
      }
      if (!ok) continue;
      Vec3 n = gx.cross(gy);
      const double len = n.norm();
      if (len <= 0) continue;  // flat stencil, direction undefined
      n /= len;
      if (n.z() > 0) n = -n;  // orient toward the camera
      normals.at(x, y) = n;
    }
  }
  return normals;
}

}  // namespace mvsr
