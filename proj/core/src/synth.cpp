#include "mvsr/synth.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "mvsr/camera_io.hpp"
#include "mvsr/image_io.hpp"
#include "mvsr/parallel.hpp"

namespace mvsr {

namespace {

constexpr double kRayEps = 1e-6;

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 p{0, 0, 0};
  Vec3 n{0, 0, 0};
  bool ok = false;
};

void consider(Hit& best, double t, const Vec3& o, const Vec3& d, const Vec3& n) {
  if (!(t > kRayEps) || t >= best.t) return;
  best.t = t;
  best.p = o + t * d;
  best.n = n;
  best.ok = true;
}

void hit_plane(Hit& best, const Vec3& o, const Vec3& d, const Vec3& anchor,
               const Vec3& n) {
  const double denom = n.dot(d);
  if (std::abs(denom) < 1e-12) return;
  consider(best, n.dot(anchor - o) / denom, o, d, n);
}

void hit_sphere(Hit& best, const Vec3& o, const Vec3& d, const Vec3& c,
                double r) {
  const Vec3 oc = o - c;
  const double a = d.squaredNorm();
  const double b = oc.dot(d);
  const double disc = b * b - a * (oc.squaredNorm() - r * r);
  if (disc < 0) return;
  const double sq = std::sqrt(disc);
  for (double t : {(-b - sq) / a, (-b + sq) / a}) {
    if (!(t > kRayEps)) continue;
    const Vec3 p = o + t * d;
    consider(best, t, o, d, (p - c) / r);
    break;
  }
}

// Fold surface z = ridge_z + slope * |x - ridge_x|, uniform in y.
void hit_wedge(Hit& best, const Vec3& o, const Vec3& d, double ridge_x,
               double ridge_z, double slope) {
  for (double side : {-1.0, 1.0}) {
    const double s = side * slope;
    const double denom = d.z() - s * d.x();
    if (std::abs(denom) < 1e-12) continue;
    const double t = (ridge_z - o.z() + s * (o.x() - ridge_x)) / denom;
    if (!(t > kRayEps)) continue;
    const double x = o.x() + t * d.x();
    if (side * (x - ridge_x) < -1e-9) continue;
    Vec3 n(-s, 0.0, 1.0);
    n.normalize();
    if (n.dot(d) > 0) n = -n;
    consider(best, t, o, d, n);
  }
}

Hit cast_ray(const SceneSpec& spec, const Vec3& o, const Vec3& d) {
  Hit best;
  switch (spec.kind) {
    case SurfaceKind::kPlane:
      hit_plane(best, o, d, spec.anchor, spec.normal);
      break;
    case SurfaceKind::kSphere:
      hit_sphere(best, o, d, spec.anchor, spec.radius);
      break;
    case SurfaceKind::kWedge:
      hit_wedge(best, o, d, spec.anchor.x(), spec.anchor.z(), spec.wedge_slope);
      break;
  }
  if (spec.backdrop)
    hit_plane(best, o, d, Vec3(0, 0, spec.backdrop_z), Vec3(0, 0, -1));
  return best;
}

// Sum of seeded 3D sinusoids; wavelengths in [scale, 3 scale] meters keep the
// image-space texture band-limited at every pyramid level in use.
struct BandNoise {
  struct Wave {
    Vec3 k;
    double phase, amp;
  };
  std::vector<Wave> waves;

  static BandNoise make(uint64_t seed, double scale) {
    BandNoise bn;
    Rng rng(seed);
    const int count = 24;
    std::vector<double> raw(count);
    double total = 0;
    for (double& r : raw) {
      r = rng.uniform(0.5, 1.5);
      total += r;
    }
    bn.waves.resize(count);
    for (int i = 0; i < count; ++i) {
      Vec3 dir(rng.normal(), rng.normal(), rng.normal());
      if (dir.norm() < 1e-6) dir = Vec3(1, 0, 0);
      dir.normalize();
      const double wavelength = rng.uniform(scale, 3.0 * scale);
      bn.waves[i].k = dir * (2.0 * M_PI / wavelength);
      bn.waves[i].phase = rng.uniform(0.0, 2.0 * M_PI);
      bn.waves[i].amp = 0.42 * raw[i] / total;
    }
    return bn;
  }

  double eval(const Vec3& p) const {
    double v = 0.5;
    for (const Wave& w : waves) v += w.amp * std::sin(w.k.dot(p) + w.phase);
    return v;
  }
};

double checker_eval(const Vec3& p, double cell) {
  // Offset keeps axis-aligned surfaces off the parity boundaries.
  const Vec3 q = p + Vec3(0.0137, 0.0071, 0.0233);
  const long long parity = llround(std::floor(q.x() / cell)) +
                           llround(std::floor(q.y() / cell)) +
                           llround(std::floor(q.z() / cell));
  return (parity & 1) ? 0.3 : 0.8;
}

double shade(const SceneSpec& spec, const BandNoise& bn, const Hit& h,
             const Vec3& view_dir) {
  double tex = spec.texture == TextureKind::kChecker
                   ? checker_eval(h.p, spec.texture_scale)
                   : bn.eval(h.p);
  Vec3 n = h.n;
  if (n.dot(view_dir) > 0) n = -n;  // face the camera
  const Vec3 l = spec.light.normalized();
  const double lambert = 0.55 + 0.45 * std::max(0.0, n.dot(l));
  return std::clamp(tex * lambert, 0.0, 1.0);
}

Camera look_at_camera(const SceneSpec& spec, const Vec3& center,
                      const Vec3& target) {
  Camera cam;
  cam.width = spec.width;
  cam.height = spec.height;
  cam.intr = {spec.fx, spec.fy, spec.cx, spec.cy};
  Vec3 zc = (target - center).normalized();
  Vec3 xc = Vec3(0, 1, 0).cross(zc).normalized();
  Vec3 yc = zc.cross(xc);
  Mat3 R;
  R.row(0) = xc.transpose();
  R.row(1) = yc.transpose();
  R.row(2) = zc.transpose();
  cam.extr.R = R;
  cam.extr.t = -R * center;
  return cam;
}

Vec3 scene_target(const SceneSpec& spec) {
  if (spec.kind == SurfaceKind::kWedge)
    return Vec3(spec.anchor.x(), 0.0, spec.anchor.z());
  return spec.anchor;
}

void render_view(const SceneSpec& spec, const BandNoise& bn, RenderedView& view,
                 int threads) {
  const Camera& cam = view.cam;
  view.image = GrayImage(cam.width, cam.height, 0.0);
  view.depth.values = Image2D<double>(cam.width, cam.height, kInvalid);
  const Vec3 origin = camera_center(cam.extr);
  const Mat3 Rt = cam.extr.R.transpose();
  parallel_for(cam.height, threads, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        const Vec3 dir_cam((x + 0.5 - cam.intr.cx) / cam.intr.fx,
                           (y + 0.5 - cam.intr.cy) / cam.intr.fy, 1.0);
        const Vec3 d = Rt * dir_cam;  // z_cam of o + t d is exactly t
        const Hit h = cast_ray(spec, origin, d);
        if (!h.ok) continue;
        view.depth.values.at(x, y) = h.t;
        view.image.at(x, y) = shade(spec, bn, h, d);
      }
    }
  });
}

Image2D<float> to_f32(const Image2D<double>& in) {
  Image2D<float> out(in.width(), in.height());
  for (size_t i = 0; i < in.size(); ++i)
    out.raw()[i] = static_cast<float>(in.raw()[i]);
  return out;
}

Image2D<double> to_f64(const Image2D<float>& in) {
  Image2D<double> out(in.width(), in.height());
  for (size_t i = 0; i < in.size(); ++i)
    out.raw()[i] = static_cast<double>(in.raw()[i]);
  return out;
}

}  // namespace

RenderedScene render(const SceneSpec& spec, int threads) {
  check(spec.width > 0 && spec.height > 0 && spec.fx > 0 && spec.fy > 0,
        "render: bad camera spec");
  check(spec.n_sources >= 1, "render: need at least one source view");
  check(spec.baseline_min > 0 && spec.baseline_max >= spec.baseline_min,
        "render: bad baseline range");
  if (spec.kind == SurfaceKind::kSphere)
    check(spec.radius > 0, "render: non-positive sphere radius");

  RenderedScene scene;
  scene.views.resize(1 + spec.n_sources);
  scene.views[0].cam.width = spec.width;
  scene.views[0].cam.height = spec.height;
  scene.views[0].cam.intr = {spec.fx, spec.fy, spec.cx, spec.cy};

  Rng rig_rng(spec.rig_seed);
  const Vec3 target = scene_target(spec);
  for (int v = 0; v < spec.n_sources; ++v) {
    const double sign = (v % 2 == 0) ? 1.0 : -1.0;
    const double b = rig_rng.uniform(spec.baseline_min, spec.baseline_max);
    const Vec3 center(sign * b, rig_rng.uniform(-0.03, 0.03),
                      rig_rng.uniform(-0.03, 0.03));
    scene.views[v + 1].cam = look_at_camera(spec, center, target);
  }

  const BandNoise bn = spec.texture == TextureKind::kBandNoise
                           ? BandNoise::make(spec.texture_seed, spec.texture_scale)
                           : BandNoise{};
  for (auto& view : scene.views) render_view(spec, bn, view, threads);

  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (size_t i = 0; i < scene.views[0].depth.values.size(); ++i) {
    const double d = scene.views[0].depth.values.raw()[i];
    if (!is_valid(d)) continue;
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  check(std::isfinite(lo), "render: reference view hits no surface");
  scene.dmin = std::max(0.2, lo * 0.75);
  scene.dmax = hi * 1.3;
  return scene;
}

CameraRig scene_rig(const RenderedScene& scene) {
  check(!scene.views.empty(), "scene_rig: empty scene");
  CameraRig rig;
  rig.reference = scene.views[0].cam;
  for (size_t v = 1; v < scene.views.size(); ++v)
    rig.sources.push_back(scene.views[v].cam);
  return rig;
}

SceneSpec sample_scene_spec(uint64_t seed, int index) {
  Rng rng = Rng(seed).fork(static_cast<uint64_t>(index));
  SceneSpec spec;
  spec.kind = static_cast<SurfaceKind>(rng.uniform_index(3));
  const double f = rng.uniform(280.0, 320.0);
  spec.fx = spec.fy = f;
  spec.cx = spec.width / 2.0 + rng.uniform(-2.0, 2.0);
  spec.cy = spec.height / 2.0 + rng.uniform(-2.0, 2.0);

  switch (spec.kind) {
    case SurfaceKind::kPlane: {
      spec.anchor = Vec3(rng.uniform(-0.2, 0.2), rng.uniform(-0.15, 0.15),
                         rng.uniform(1.6, 2.6));
      const double tilt = rng.uniform(0.0, 35.0 * M_PI / 180.0);
      const double az = rng.uniform(0.0, 2.0 * M_PI);
      spec.normal = -Vec3(std::sin(tilt) * std::cos(az),
                          std::sin(tilt) * std::sin(az), std::cos(tilt));
      break;
    }
    case SurfaceKind::kSphere: {
      spec.anchor = Vec3(rng.uniform(-0.25, 0.25), rng.uniform(-0.2, 0.2),
                         rng.uniform(1.8, 2.4));
      spec.radius = rng.uniform(0.35, 0.7);
      spec.backdrop = rng.uniform() < 0.75;
      spec.backdrop_z = spec.anchor.z() + spec.radius + rng.uniform(0.4, 1.0);
      break;
    }
    case SurfaceKind::kWedge: {
      spec.anchor = Vec3(rng.uniform(-0.35, 0.35), 0.0, rng.uniform(1.7, 2.4));
      spec.wedge_slope = rng.uniform(0.25, 0.7);
      if (rng.uniform() < 0.5) spec.wedge_slope = -spec.wedge_slope;
      break;
    }
  }

  if (rng.uniform() < 0.25) {
    spec.texture = TextureKind::kChecker;
    spec.texture_scale = rng.uniform(0.08, 0.2);
  } else {
    spec.texture = TextureKind::kBandNoise;
    spec.texture_scale = rng.uniform(0.12, 0.25);
  }
  spec.texture_seed = rng.next_u64();
  spec.light = Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.6, -0.1), -0.8);
  spec.rig_seed = rng.next_u64();
  return spec;
}

DatasetIndex make_dataset(const std::string& dir, uint64_t seed, int count,
                          int threads) {
  namespace fs = std::filesystem;
  check(count >= 0, "make_dataset: negative count");
  fs::create_directories(dir);
  DatasetIndex index;
  index.seed = seed;
  for (int i = 0; i < count; ++i) {
    const SceneSpec spec = sample_scene_spec(seed, i);
    const RenderedScene scene = render(spec, threads);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%03d", i);
    fs::create_directories(fs::path(dir) / name);
    DatasetSceneRef ref;
    ref.name = name;
    ref.reference = 0;
    for (size_t v = 0; v < scene.views.size(); ++v) {
      char base[32];
      std::snprintf(base, sizeof(base), "%03d", static_cast<int>(v));
      const std::string rel_img = std::string(name) + "/im_" + base + ".pgm";
      const std::string rel_cam = std::string(name) + "/cam_" + base + ".txt";
      const std::string rel_dep = std::string(name) + "/depth_" + base + ".pfm";
      const RenderedView& view = scene.views[v];
      write_pgm((fs::path(dir) / rel_img).string(), to_f32(view.image));
      CameraFile cf;
      cf.extr = view.cam.extr;
      cf.intr = view.cam.intr;
      cf.dmin = scene.dmin;
      cf.dmax = scene.dmax;
      write_camera_file((fs::path(dir) / rel_cam).string(), cf);
      write_pfm((fs::path(dir) / rel_dep).string(), to_f32(view.depth.values));
      ref.images.push_back(rel_img);
      ref.cameras.push_back(rel_cam);
      ref.depths.push_back(rel_dep);
    }
    index.scenes.push_back(std::move(ref));
  }

  nlohmann::json j;
  j["schema_version"] = 1;
  j["seed"] = seed;
  j["scenes"] = nlohmann::json::array();
  for (const DatasetSceneRef& s : index.scenes) {
    nlohmann::json js;
    js["name"] = s.name;
    js["reference"] = s.reference;
    js["images"] = s.images;
    js["cameras"] = s.cameras;
    js["depths"] = s.depths;
    j["scenes"].push_back(js);
  }
  std::ofstream out(fs::path(dir) / "manifest.json");
  check(out.good(), "make_dataset: cannot write manifest");
  out << j.dump(2) << "\n";
  return index;
}

DatasetIndex read_manifest(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "manifest.json");
  check(in.good(), "read_manifest: missing " + dir + "/manifest.json");
  nlohmann::json j;
  in >> j;
  check(j.value("schema_version", 0) == 1,
        "read_manifest: unsupported schema_version");
  DatasetIndex index;
  index.seed = j.value("seed", 0ull);
  for (const auto& js : j.at("scenes")) {
    DatasetSceneRef s;
    s.name = js.at("name").get<std::string>();
    s.reference = js.value("reference", 0);
    s.images = js.at("images").get<std::vector<std::string>>();
    s.cameras = js.at("cameras").get<std::vector<std::string>>();
    s.depths = js.at("depths").get<std::vector<std::string>>();
    check(s.images.size() == s.cameras.size() &&
              s.images.size() == s.depths.size() && !s.images.empty(),
          "read_manifest: inconsistent view lists in " + s.name);
    check(s.reference >= 0 &&
              s.reference < static_cast<int>(s.images.size()),
          "read_manifest: reference index out of range in " + s.name);
    index.scenes.push_back(std::move(s));
  }
  return index;
}

LoadedScene load_scene(const std::string& dir, const DatasetSceneRef& ref) {
  namespace fs = std::filesystem;
  LoadedScene scene;
  scene.reference = ref.reference;
  for (size_t v = 0; v < ref.images.size(); ++v) {
    Image2D<float> img = read_image((fs::path(dir) / ref.images[v]).string());
    const CameraFile cf =
        read_camera_file((fs::path(dir) / ref.cameras[v]).string());
    scene.cams.push_back(make_camera(cf, img.width(), img.height()));
    scene.images.push_back(to_f64(img));
    Image2D<float> dep = read_pfm((fs::path(dir) / ref.depths[v]).string());
    DepthMap dm;
    dm.values = Image2D<double>(dep.width(), dep.height());
    for (size_t i = 0; i < dep.size(); ++i) {
      const float d = dep.raw()[i];
      dm.values.raw()[i] = std::isfinite(d) && d > 0 ? d : kInvalid;
    }
    scene.depths.push_back(std::move(dm));
    if (static_cast<int>(v) == ref.reference) {
      scene.dmin = cf.dmin;
      scene.dmax = cf.dmax;
    }
  }
  return scene;
}

}  // namespace mvsr
