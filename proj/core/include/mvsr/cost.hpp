#pragma once

#include <optional>
#include <vector>

#include "mvsr/features.hpp"
#include "mvsr/geometry.hpp"
#include "mvsr/rng.hpp"

namespace mvsr {

/// Cost returned for a cell with no valid source view (worst possible for
/// unit-normalized features).
inline constexpr double kNoViewCost = 1.0;

/// Per-pixel stack of matching costs over depth hypotheses, in pseudo
/// disparity units of the level it was built at (scale_fb converts back to
/// metric). The hypothesis of slice i at pixel p is
///   d0 + center(p) + i*step + jitter(p, i)
/// where center is zero for full volumes (empty map) and the per-pixel
/// estimate for local volumes, and |jitter| <= step/2. Cells are stored
/// slice-innermost; costs are f32, computed with f64 accumulation.
struct CostVolume {
  int width = 0, height = 0, slices = 0;
  double d0 = 0.0;
  double step = 1.0;
  double scale_fb = 0.0;
  Image2D<double> center;            // empty, or per-pixel slice-stack center
  std::vector<float> jitter;         // empty, or H*W*N jitter values (pd px)
  std::vector<float> values;         // H*W*N costs
  std::vector<uint8_t> no_view;      // H*W*N, 1 = no valid view, cost forced +1
  std::vector<uint8_t> low_confidence;  // empty, or H*W per-pixel fallback flag

  size_t cell(int x, int y, int i) const {
    return (static_cast<size_t>(y) * width + x) * slices + i;
  }
  double hypothesis(int x, int y, int i) const {
    double h = d0 + i * step;
    if (!center.empty()) h += center.at(x, y);
    if (!jitter.empty()) h += jitter[cell(x, y, i)];
    return h;
  }
  float cost(int x, int y, int i) const { return values[cell(x, y, i)]; }
};

/// Coarse volume at the output grid plus an optional fine volume built from
/// higher-resolution features on the same grid. fine_pd_ratio converts a
/// coarse-level pseudo disparity into the fine level's units (the focal
/// length ratio).
struct CostVolumePyramid {
  CostVolume coarse;
  std::optional<CostVolume> fine;
  double fine_pd_ratio = 1.0;
};

struct CostParams {
  double alpha = 8.0;
  double delta = 0.0;
  bool jitter = true;
};

/// One resolution level of the rig with its feature maps; cameras are scaled
/// to the feature resolution. scale_fb is fx(ref at this level) * baseline.
struct VolumeLevel {
  Camera ref_cam;
  const FeatureMap* ref_feat = nullptr;
  std::vector<Camera> src_cams;
  std::vector<const FeatureMap*> src_feats;
  double scale_fb = 0.0;
};

/// c = -<f_ref, f_warped>.
double correlation_cost(const float* f_ref, const float* f_warped, int channels);

/// sigmoid(alpha * (delta - c_v)^3).
double view_weight(double c_v, double alpha, double delta);

/// Weighted mean of per-view costs; view_costs must be non-empty (callers
/// handle the zero-valid-view case with kNoViewCost).
double aggregate(const std::vector<double>& view_costs, double alpha, double delta);

/// Bilinear feature fetch at continuous pixel-index coordinates, replicate
/// border. out must hold channels() doubles.
void sample_feature_bilinear(const FeatureMap& fm, double x, double y, double* out);

/// Full sweep: n_slices uniform over [dmin_pd, dmax_pd] (slice spacing
/// (dmax-dmin)/(n-1)), per-cell jitter drawn sequentially from rng when
/// enabled (pixel row-major, then slice). Grid = ref camera dims.
CostVolume build_full_volume(const VolumeLevel& lvl, double dmin_pd,
                             double dmax_pd, int n_slices, const CostParams& cp,
                             Rng& rng, int threads);

/// Local sweep on an externally supplied grid: 2m+1 slices at the given step
/// centered per pixel on centers (in lvl's pd units). Invalid centers fall
/// back to fallback_center and set low_confidence. The grid may be coarser
/// than lvl's resolution; ref positions scale accordingly.
CostVolume build_local_volume(const VolumeLevel& lvl, int grid_w, int grid_h,
                              const Image2D<double>& centers,
                              double fallback_center, int m, double step,
                              const CostParams& cp, Rng& rng, int threads);

/// Coarse local volume around d_hat plus, when fine_lvl is given, a fine
/// volume centered on the coarse winner-take-all result converted into the
/// fine level's pseudo-disparity units.
CostVolumePyramid build_pyramid(const VolumeLevel& coarse_lvl,
                                const VolumeLevel* fine_lvl,
                                const PseudoDisparityMap& d_hat,
                                double fallback_center, int m,
                                const CostParams& cp, Rng& rng, int threads);

/// Piecewise-linear interpolation along the slice axis at the pixel's true
/// (jittered) slice positions; clamps to the end slices outside the range.
double sample_cost(const CostVolume& vol, int x, int y, double d);

/// Slice pair bracketing pseudo-disparity d at pixel (x, y) plus the blend
/// weight toward i1; clamps to the end slices (i0 == i1, t == 0) outside the
/// span. sample_cost interpolates exactly over this bracket.
struct BracketSample {
  int i0 = 0;
  int i1 = 0;
  double t = 0.0;
};
BracketSample locate_bracket(const CostVolume& vol, int x, int y, double d);

/// [c(d-1), c(d), c(d+1)] from the coarse volume, extended by the fine-volume
/// triplet (d converted to fine units, offsets applied in fine units).
void cost_triplet(const CostVolumePyramid& pyr, int x, int y, double d,
                  double* out6, int* out_len);

/// Lowest-cost slice per pixel; ties break to the lowest index.
PseudoDisparityMap winner_take_all(const CostVolume& vol);

/// Raw f32 dump with a text sidecar (H, W, N, d0, step) for debugging.
void dump_volume(const CostVolume& vol, const std::string& path_base);

}  // namespace mvsr
