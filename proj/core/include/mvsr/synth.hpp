#pragma once

#include <string>
#include <vector>

#include "mvsr/geometry.hpp"
#include "mvsr/rng.hpp"

namespace mvsr {

enum class SurfaceKind { kPlane, kSphere, kWedge };
enum class TextureKind { kBandNoise, kChecker };

/// World frame coincides with the reference camera frame (x right, y down,
/// z forward), so the rig sits near the origin looking toward +z.
struct SceneSpec {
  SurfaceKind kind = SurfaceKind::kPlane;
  Vec3 anchor{0.0, 0.0, 2.0};   // plane point / sphere center / wedge ridge
  Vec3 normal{0.0, 0.0, -1.0};  // plane normal, toward the rig
  double radius = 0.5;          // sphere
  double wedge_slope = 0.4;     // dz per meter of |x - ridge_x|
  bool backdrop = false;
  double backdrop_z = 3.0;      // fronto-parallel plane behind the primary

  TextureKind texture = TextureKind::kBandNoise;
  uint64_t texture_seed = 1;
  double texture_scale = 0.12;  // checker cell edge / shortest wavelength, m
  Vec3 light{0.35, -0.45, -0.82};

  int width = 160;
  int height = 128;
  double fx = 300.0, fy = 300.0, cx = 80.0, cy = 64.0;

  int n_sources = 4;
  double baseline_min = 0.05;
  double baseline_max = 0.20;
  uint64_t rig_seed = 7;
};

struct RenderedView {
  Camera cam;
  GrayImage image;  // [0, 1]
  DepthMap depth;   // camera-frame z, kInvalid where no surface is hit
};

/// views[0] is the reference. dmin/dmax bound the reference GT depth range
/// with padding; they parameterize the full-sweep search range downstream.
struct RenderedScene {
  std::vector<RenderedView> views;
  double dmin = 0.0;
  double dmax = 0.0;
};

RenderedScene render(const SceneSpec& spec, int threads = 1);

CameraRig scene_rig(const RenderedScene& scene);

/// Draws scene parameters for dataset entry `index` under the master seed;
/// the mapping is pure, so datasets are reproducible file-for-file.
SceneSpec sample_scene_spec(uint64_t seed, int index);

struct DatasetSceneRef {
  std::string name;
  int reference = 0;
  std::vector<std::string> images;   // dataset-relative paths, view order
  std::vector<std::string> cameras;
  std::vector<std::string> depths;
};

struct DatasetIndex {
  uint64_t seed = 0;
  std::vector<DatasetSceneRef> scenes;
};

/// Renders `count` sampled scenes into dir/scene_NNN/ and writes
/// dir/manifest.json. Images as 8-bit PGM, depth as PFM, cameras in the
/// shared text format.
DatasetIndex make_dataset(const std::string& dir, uint64_t seed, int count,
                          int threads = 1);

DatasetIndex read_manifest(const std::string& dir);

struct LoadedScene {
  std::vector<Camera> cams;
  std::vector<GrayImage> images;
  std::vector<DepthMap> depths;
  int reference = 0;
  double dmin = 0.0;
  double dmax = 0.0;
};

LoadedScene load_scene(const std::string& dir, const DatasetSceneRef& ref);

}  // namespace mvsr
