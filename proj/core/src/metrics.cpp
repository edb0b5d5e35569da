#include "mvsr/metrics.hpp"

#include <cmath>
#include <sstream>

#include "json.hpp"

namespace mvsr {

namespace {

void check_dims(const DepthMap& pred, const DepthMap& gt) {
  check(pred.values.same_size(gt.values), "metrics: size mismatch");
}

long long count_valid(const DepthMap& gt) {
  long long n = 0;
  for (size_t i = 0; i < gt.values.size(); ++i)
    if (is_valid(gt.values.raw()[i])) ++n;
  return n;
}

}  // namespace

double pct_below(const DepthMap& pred, const DepthMap& gt, double x_mm) {
  check_dims(pred, gt);
  check(x_mm > 0, "pct_below: non-positive threshold");
  long long valid = 0, good = 0;
  for (size_t i = 0; i < gt.values.size(); ++i) {
    const double g = gt.values.raw()[i];
    if (!is_valid(g)) continue;
    ++valid;
    const double p = pred.values.raw()[i];
    if (is_valid(p) && std::abs(p - g) * 1000.0 < x_mm) ++good;
  }
  check(valid > 0, "pct_below: no valid GT pixel");
  return 100.0 * static_cast<double>(good) / static_cast<double>(valid);
}

double mae_at(const DepthMap& pred, const DepthMap& gt, double x_mm) {
  check_dims(pred, gt);
  check(x_mm > 0, "mae_at: non-positive threshold");
  double acc = 0.0;
  long long n = 0;
  for (size_t i = 0; i < gt.values.size(); ++i) {
    const double g = gt.values.raw()[i];
    const double p = pred.values.raw()[i];
    if (!is_valid(g) || !is_valid(p)) continue;
    const double err = std::abs(p - g) * 1000.0;
    if (err < x_mm) {
      acc += err;
      ++n;
    }
  }
  return n > 0 ? acc / static_cast<double>(n) : kInvalid;
}

double pct_below_pd(const DepthMap& pred, const DepthMap& gt, double scale_fb,
                    double x_pd) {
  check_dims(pred, gt);
  check(scale_fb > 0 && x_pd > 0, "pct_below_pd: bad parameters");
  long long valid = 0, good = 0;
  for (size_t i = 0; i < gt.values.size(); ++i) {
    const double g = gt.values.raw()[i];
    if (!is_valid(g) || g <= 0) continue;
    ++valid;
    const double p = pred.values.raw()[i];
    if (!is_valid(p) || p <= 0) continue;
    if (std::abs(scale_fb / p - scale_fb / g) < x_pd) ++good;
  }
  check(valid > 0, "pct_below_pd: no valid GT pixel");
  return 100.0 * static_cast<double>(good) / static_cast<double>(valid);
}

double normal_pct(const DepthMap& pred, const DepthMap& gt, const Camera& cam,
                  double deg, double dsp_gate, double scale_fb) {
  check_dims(pred, gt);
  check(deg > 0 && dsp_gate > 0 && scale_fb > 0, "normal_pct: bad parameters");
  check(pred.values.width() == cam.width && pred.values.height() == cam.height,
        "normal_pct: camera does not match maps");
  const Image2D<Vec3> np = normals_from_points(depth_to_points(pred, cam));
  const Image2D<Vec3> ng = normals_from_points(depth_to_points(gt, cam));
  long long gated = 0, good = 0;
  for (int y = 0; y < pred.values.height(); ++y) {
    for (int x = 0; x < pred.values.width(); ++x) {
      const double g = gt.values.at(x, y);
      const double p = pred.values.at(x, y);
      if (!is_valid(g) || g <= 0 || !is_valid(p) || p <= 0) continue;
      if (std::abs(scale_fb / p - scale_fb / g) >= dsp_gate) continue;
      if (!is_valid_point(np.at(x, y)) || !is_valid_point(ng.at(x, y)))
        continue;
      ++gated;
      const double dot =
          std::clamp(np.at(x, y).dot(ng.at(x, y)), -1.0, 1.0);
      if (std::acos(dot) * 180.0 / M_PI < deg) ++good;
    }
  }
  return gated > 0 ? 100.0 * static_cast<double>(good) /
                         static_cast<double>(gated)
                   : kInvalid;
}

DepthMap downsample_gt_nn(const DepthMap& gt, int factor) {
  check(factor >= 1, "downsample_gt_nn: bad factor");
  const int w = gt.values.width() / factor;
  const int h = gt.values.height() / factor;
  check(w > 0 && h > 0, "downsample_gt_nn: factor exceeds image");
  DepthMap out;
  out.values = Image2D<double>(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int sx = std::min(
          static_cast<int>(std::floor((x + 0.5) * factor)),
          gt.values.width() - 1);
      const int sy = std::min(
          static_cast<int>(std::floor((y + 0.5) * factor)),
          gt.values.height() - 1);
      out.values.at(x, y) = gt.values.at(sx, sy);
    }
  return out;
}

MetricReport evaluate(const DepthMap& pred, const DepthMap& gt,
                      const Camera& cam, double scale_fb) {
  MetricReport r;
  r.valid_pixel_count = count_valid(gt);
  for (double mm : {1.0, 2.0, 4.0, 8.0}) {
    r.pct_below_mm[mm] = pct_below(pred, gt, mm);
    r.mae_at_mm[mm] = mae_at(pred, gt, mm);
  }
  for (double deg : {10.0, 20.0, 30.0})
    r.normal_pct[{deg, 1.0}] = normal_pct(pred, gt, cam, deg, 1.0, scale_fb);
  return r;
}

namespace {

std::string fmt(double v) {
  if (!is_valid(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace

std::string report_text(const MetricReport& report) {
  std::ostringstream os;
  os << "valid pixels: " << report.valid_pixel_count << "\n";
  os << "threshold   pct<x        mae@x\n";
  for (const auto& [mm, pct] : report.pct_below_mm) {
    const auto it = report.mae_at_mm.find(mm);
    os << std::left;
    char line[96];
    std::snprintf(line, sizeof(line), "%6.1fmm  %8s  %10s\n", mm,
                  fmt(pct).c_str(),
                  it != report.mae_at_mm.end() ? fmt(it->second).c_str()
                                               : "n/a");
    os << line;
  }
  for (const auto& [key, pct] : report.normal_pct) {
    char line[96];
    std::snprintf(line, sizeof(line), "normal<%.0fdeg @%.1fpd  %8s\n",
                  key.first, key.second, fmt(pct).c_str());
    os << line;
  }
  return os.str();
}

std::string report_json(const MetricReport& report) {
  nlohmann::json j;
  j["valid_pixel_count"] = report.valid_pixel_count;
  for (const auto& [mm, pct] : report.pct_below_mm)
    j["pct_below_mm"][fmt(mm)] = is_valid(pct) ? nlohmann::json(pct)
                                               : nlohmann::json(nullptr);
  for (const auto& [mm, v] : report.mae_at_mm)
    j["mae_at_mm"][fmt(mm)] =
        is_valid(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
  for (const auto& [key, pct] : report.normal_pct) {
    const std::string k = fmt(key.first) + "deg@" + fmt(key.second) + "pd";
    j["normal_pct"][k] =
        is_valid(pct) ? nlohmann::json(pct) : nlohmann::json(nullptr);
  }
  return j.dump(2);
}

}  // namespace mvsr
