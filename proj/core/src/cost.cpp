#include "mvsr/cost.hpp"

#include <cmath>
#include <cstdio>

#include "mvsr/parallel.hpp"

namespace mvsr {

double correlation_cost(const float* f_ref, const float* f_warped, int channels) {
  check(channels > 0, "correlation: empty vectors");
  double acc = 0;
  for (int k = 0; k < channels; ++k)
    acc += double(f_ref[k]) * double(f_warped[k]);
  return -acc;
}

double view_weight(double c_v, double alpha, double delta) {
  check(alpha > 0, "view_weight: alpha must be positive");
  double u = delta - c_v;
  return 1.0 / (1.0 + std::exp(-alpha * u * u * u));
}

double aggregate(const std::vector<double>& view_costs, double alpha, double delta) {
  check(!view_costs.empty(), "aggregate: no valid views");
  double num = 0, den = 0;
  for (double c : view_costs) {
    double w = view_weight(c, alpha, delta);
    num += w * c;
    den += w;
  }
  return num / den;
}

void sample_feature_bilinear(const FeatureMap& fm, double x, double y,
                             double* out) {
  const int w = fm.width(), h = fm.height(), c = fm.channels();
  double xf = std::min(std::max(x, 0.0), double(w - 1));
  double yf = std::min(std::max(y, 0.0), double(h - 1));
  int x0 = std::min(static_cast<int>(std::floor(xf)), w > 1 ? w - 2 : 0);
  int y0 = std::min(static_cast<int>(std::floor(yf)), h > 1 ? h - 2 : 0);
  int x1 = std::min(x0 + 1, w - 1);
  int y1 = std::min(y0 + 1, h - 1);
  double fx = xf - x0, fy = yf - y0;
  double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx;
  double w10 = fy * (1 - fx), w11 = fy * fx;
  for (int k = 0; k < c; ++k)
    out[k] = w00 * fm.at(k, y0, x0) + w01 * fm.at(k, y0, x1) +
             w10 * fm.at(k, y1, x0) + w11 * fm.at(k, y1, x1);
}

namespace {

struct CellScratch {
  std::vector<double> f_ref, f_src, view_costs;
};

/// One cell: grid pixel (gx, gy) scaled into the level by (rx, ry),
/// hypothesis d in the level's pseudo-disparity units.
double eval_cell(const VolumeLevel& lvl, double rx, double ry, int gx, int gy,
                 double d, const CostParams& cp, CellScratch& s, bool* no_view) {
  *no_view = false;
  if (!(d > 0.0)) {
    *no_view = true;
    return kNoViewCost;
  }
  const double depth = lvl.scale_fb / d;
  const double px = (gx + 0.5) * rx - 0.5;
  const double py = (gy + 0.5) * ry - 0.5;
  const int c = lvl.ref_feat->channels();
  s.f_ref.resize(c);
  s.f_src.resize(c);
  sample_feature_bilinear(*lvl.ref_feat, px, py, s.f_ref.data());
  s.view_costs.clear();
  for (size_t v = 0; v < lvl.src_cams.size(); ++v) {
    WarpResult wr = warp_pixel(lvl.ref_cam, lvl.src_cams[v], px, py, depth);
    if (!wr.valid) continue;
    sample_feature_bilinear(*lvl.src_feats[v], wr.x, wr.y, s.f_src.data());
    double corr = 0;
    for (int k = 0; k < c; ++k) corr += s.f_ref[k] * s.f_src[k];
    s.view_costs.push_back(-corr);
  }
  if (s.view_costs.empty()) {
    *no_view = true;
    return kNoViewCost;
  }
  return aggregate(s.view_costs, cp.alpha, cp.delta);
}

void validate_level(const VolumeLevel& lvl) {
  check(lvl.ref_feat != nullptr, "cost: missing reference features");
  check(lvl.ref_feat->width() == lvl.ref_cam.width &&
            lvl.ref_feat->height() == lvl.ref_cam.height,
        "cost: reference features do not match camera resolution");
  check(!lvl.src_cams.empty() && lvl.src_cams.size() == lvl.src_feats.size(),
        "cost: source cameras and features disagree");
  for (size_t v = 0; v < lvl.src_cams.size(); ++v) {
    check(lvl.src_feats[v] != nullptr, "cost: missing source features");
    check(lvl.src_feats[v]->width() == lvl.src_cams[v].width &&
              lvl.src_feats[v]->height() == lvl.src_cams[v].height,
          "cost: source features do not match camera resolution");
    check(lvl.src_feats[v]->channels() == lvl.ref_feat->channels(),
          "cost: feature channel mismatch");
  }
  check(lvl.scale_fb > 0, "cost: non-positive pseudo-disparity scale");
}

void fill_jitter(CostVolume& vol, double step, Rng& rng) {
  vol.jitter.resize(vol.values.size());
  for (size_t i = 0; i < vol.jitter.size(); ++i)
    vol.jitter[i] = float(rng.uniform(-0.5, 0.5) * step);
}

void fill_cells(const VolumeLevel& lvl, double rx, double ry,
                const CostParams& cp, CostVolume& vol, int threads) {
  parallel_for(vol.height, threads, [&](int y0, int y1) {
    CellScratch s;
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < vol.width; ++x)
        for (int i = 0; i < vol.slices; ++i) {
          const size_t idx = vol.cell(x, y, i);
          bool no_view = false;
          double c = eval_cell(lvl, rx, ry, x, y, vol.hypothesis(x, y, i), cp, s,
                               &no_view);
          vol.values[idx] = float(c);
          vol.no_view[idx] = no_view ? 1 : 0;
        }
  });
}

}  // namespace

CostVolume build_full_volume(const VolumeLevel& lvl, double dmin_pd,
                             double dmax_pd, int n_slices, const CostParams& cp,
                             Rng& rng, int threads) {
  validate_level(lvl);
  check(dmax_pd > dmin_pd, "full volume: degenerate pseudo-disparity range");
  check(n_slices >= 2, "full volume: need at least 2 slices");
  CostVolume vol;
  vol.width = lvl.ref_cam.width;
  vol.height = lvl.ref_cam.height;
  vol.slices = n_slices;
  vol.d0 = dmin_pd;
  vol.step = (dmax_pd - dmin_pd) / (n_slices - 1);
  vol.scale_fb = lvl.scale_fb;
  vol.values.assign(static_cast<size_t>(vol.width) * vol.height * n_slices, 0.0f);
  vol.no_view.assign(vol.values.size(), 0);
  if (cp.jitter) fill_jitter(vol, vol.step, rng);
  fill_cells(lvl, 1.0, 1.0, cp, vol, threads);
  return vol;
}

CostVolume build_local_volume(const VolumeLevel& lvl, int grid_w, int grid_h,
                              const Image2D<double>& centers,
                              double fallback_center, int m, double step,
                              const CostParams& cp, Rng& rng, int threads) {
  validate_level(lvl);
  check(m >= 1, "local volume: m must be >= 1");
  check(step > 0, "local volume: non-positive step");
  check(centers.width() == grid_w && centers.height() == grid_h,
        "local volume: centers do not match grid");
  CostVolume vol;
  vol.width = grid_w;
  vol.height = grid_h;
  vol.slices = 2 * m + 1;
  vol.d0 = -m * step;
  vol.step = step;
  vol.scale_fb = lvl.scale_fb;
  vol.center = Image2D<double>(grid_w, grid_h, 0.0);
  vol.low_confidence.assign(static_cast<size_t>(grid_w) * grid_h, 0);
  for (int y = 0; y < grid_h; ++y)
    for (int x = 0; x < grid_w; ++x) {
      double c = centers.at(x, y);
      if (is_valid(c)) {
        vol.center.at(x, y) = c;
      } else {
        vol.center.at(x, y) = fallback_center;
        vol.low_confidence[static_cast<size_t>(y) * grid_w + x] = 1;
      }
    }
  vol.values.assign(static_cast<size_t>(grid_w) * grid_h * vol.slices, 0.0f);
  vol.no_view.assign(vol.values.size(), 0);
  if (cp.jitter) fill_jitter(vol, step, rng);
  const double rx = double(lvl.ref_cam.width) / grid_w;
  const double ry = double(lvl.ref_cam.height) / grid_h;
  fill_cells(lvl, rx, ry, cp, vol, threads);
  return vol;
}

CostVolumePyramid build_pyramid(const VolumeLevel& coarse_lvl,
                                const VolumeLevel* fine_lvl,
                                const PseudoDisparityMap& d_hat,
                                double fallback_center, int m,
                                const CostParams& cp, Rng& rng, int threads) {
  CostVolumePyramid pyr;
  const int w = d_hat.values.width(), h = d_hat.values.height();
  pyr.coarse = build_local_volume(coarse_lvl, w, h, d_hat.values,
                                  fallback_center, m, 1.0, cp, rng, threads);
  if (fine_lvl != nullptr) {
    check(fine_lvl->scale_fb > 0 && coarse_lvl.scale_fb > 0,
          "pyramid: bad pseudo-disparity scales");
    const double ratio = fine_lvl->scale_fb / coarse_lvl.scale_fb;
    PseudoDisparityMap wta = winner_take_all(pyr.coarse);
    Image2D<double> fine_centers(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        fine_centers.at(x, y) = wta.values.at(x, y) * ratio;
    pyr.fine = build_local_volume(*fine_lvl, w, h, fine_centers,
                                  fallback_center * ratio, m, 1.0, cp, rng,
                                  threads);
    pyr.fine_pd_ratio = ratio;
  }
  return pyr;
}

BracketSample locate_bracket(const CostVolume& vol, int x, int y, double d) {
  const int n = vol.slices;
  if (d <= vol.hypothesis(x, y, 0)) return {0, 0, 0.0};
  if (d >= vol.hypothesis(x, y, n - 1)) return {n - 1, n - 1, 0.0};
  double lo = vol.hypothesis(x, y, 0);
  for (int i = 0; i + 1 < n; ++i) {
    double hi = vol.hypothesis(x, y, i + 1);
    if (d <= hi) {
      double span = hi - lo;
      if (span <= 0) return {i, i, 0.0};
      return {i, i + 1, (d - lo) / span};
    }
    lo = hi;
  }
  return {n - 1, n - 1, 0.0};
}

double sample_cost(const CostVolume& vol, int x, int y, double d) {
  const BracketSample b = locate_bracket(vol, x, y, d);
  return (1.0 - b.t) * vol.cost(x, y, b.i0) + b.t * vol.cost(x, y, b.i1);
}

void cost_triplet(const CostVolumePyramid& pyr, int x, int y, double d,
                  double* out6, int* out_len) {
  for (int e = -1; e <= 1; ++e)
    out6[e + 1] = sample_cost(pyr.coarse, x, y, d + e);
  if (pyr.fine.has_value()) {
    const double df = d * pyr.fine_pd_ratio;
    for (int e = -1; e <= 1; ++e)
      out6[3 + e + 1] = sample_cost(*pyr.fine, x, y, df + e);
    *out_len = 6;
  } else {
    *out_len = 3;
  }
}

PseudoDisparityMap winner_take_all(const CostVolume& vol) {
  PseudoDisparityMap out;
  out.values = Image2D<double>(vol.width, vol.height, 0.0);
  out.scale_fb = vol.scale_fb;
  for (int y = 0; y < vol.height; ++y)
    for (int x = 0; x < vol.width; ++x) {
      const float* cells = vol.values.data() + vol.cell(x, y, 0);
      int best = 0;
      float best_cost = cells[0];
      for (int i = 1; i < vol.slices; ++i)
        if (cells[i] < best_cost) {
          best_cost = cells[i];
          best = i;
        }
      out.values.at(x, y) = vol.hypothesis(x, y, best);
    }
  return out;
}

void dump_volume(const CostVolume& vol, const std::string& path_base) {
  {
    FILE* f = std::fopen((path_base + ".f32").c_str(), "wb");
    check(f != nullptr, "dump_volume: cannot open " + path_base + ".f32");
    size_t n = vol.values.size();
    size_t wrote = std::fwrite(vol.values.data(), sizeof(float), n, f);
    std::fclose(f);
    check(wrote == n, "dump_volume: short write");
  }
  {
    FILE* f = std::fopen((path_base + ".txt").c_str(), "w");
    check(f != nullptr, "dump_volume: cannot open " + path_base + ".txt");
    std::fprintf(f, "H %d\nW %d\nN %d\nd0 %.17g\nstep %.17g\n", vol.height,
                 vol.width, vol.slices, vol.d0, vol.step);
    std::fclose(f);
  }
}

}  // namespace mvsr
