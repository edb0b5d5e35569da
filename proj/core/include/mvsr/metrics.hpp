#pragma once

#include <map>
#include <string>
#include <utility>

#include "mvsr/geometry.hpp"

namespace mvsr {

/// Accuracy summary over one prediction/GT pair. Map keys are thresholds;
/// normal_pct keys are (degrees, pseudo-disparity gate). Entries that have
/// no qualifying pixel hold NaN (reported as n/a).
struct MetricReport {
  std::map<double, double> pct_below_mm;
  std::map<double, double> mae_at_mm;
  std::map<std::pair<double, double>, double> normal_pct;
  long long valid_pixel_count = 0;
};

/// 100 * |{valid p : |pred - gt| < x mm}| / |{valid p}|. Valid means the GT
/// is valid; an invalid prediction at a valid-GT pixel counts as a miss.
double pct_below(const DepthMap& pred, const DepthMap& gt, double x_mm);

/// Mean absolute error in mm over pixels with error below x_mm; NaN when no
/// pixel qualifies.
double mae_at(const DepthMap& pred, const DepthMap& gt, double x_mm);

/// Same counting rule as pct_below but thresholded in pseudo-disparity
/// units (d = scale_fb / D).
double pct_below_pd(const DepthMap& pred, const DepthMap& gt, double scale_fb,
                    double x_pd);

/// Among pixels whose pseudo-disparity error is below dsp_gate, the
/// percentage whose Sobel-normal is within deg degrees of the GT normal.
/// NaN when the gated set is empty. scale_fb converts depth to
/// pseudo-disparity for the gate.
double normal_pct(const DepthMap& pred, const DepthMap& gt, const Camera& cam,
                  double deg, double dsp_gate, double scale_fb);

/// Nearest-neighbor GT reduction by an integer factor (samples at the
/// subsampled pixel centers); the cross-resolution comparison convention.
DepthMap downsample_gt_nn(const DepthMap& gt, int factor);

/// Standard threshold battery: pct/mae at {1,2,4,8} mm, normals at
/// {10,20,30} degrees gated at 1 pseudo-disparity.
MetricReport evaluate(const DepthMap& pred, const DepthMap& gt,
                      const Camera& cam, double scale_fb);

std::string report_text(const MetricReport& report);
std::string report_json(const MetricReport& report);

}  // namespace mvsr
