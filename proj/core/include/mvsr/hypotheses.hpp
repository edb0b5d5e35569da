#pragma once

#include <cstdint>
#include <vector>

#include "mvsr/geometry.hpp"
#include "mvsr/rng.hpp"

namespace mvsr {

struct Offset {
  int dx = 0, dy = 0;
};

/// Fixed spatial sampling pattern shared by all pixels.
struct OffsetSet {
  std::vector<Offset> offsets;
  size_t size() const { return offsets.size(); }
};

/// Union of {-r, 0, r}^2 minus the center per dilation r (row-major order),
/// with the center appended once at the end. Dilations [1, 3] give the
/// default 17-entry set.
OffsetSet make_offsets(const std::vector<int>& dilations);

/// Per-pixel (d/dx, d/dy) of a pseudo-disparity map, in px per pixel.
struct DepthGradient {
  Image2D<double> dx, dy;
};

/// Central differences with replicate borders. An invalid neighbor degrades
/// to a one-sided difference; no valid neighbor pair gives zero.
DepthGradient depth_gradient(const PseudoDisparityMap& d_hat);

enum class Provenance : uint8_t { kInitial, kSpatial, kPrevious };

/// K pseudo-disparity candidates per pixel, candidate-innermost. Provenance
/// is uniform across pixels (one tag per candidate slot).
struct HypothesisSet {
  int width = 0, height = 0, k = 0;
  std::vector<double> values;
  std::vector<Provenance> provenance;
  std::vector<uint8_t> fallback;  // per pixel: center estimate was invalid
  double scale_fb = 0.0;

  size_t idx(int x, int y, int i) const {
    return (static_cast<size_t>(y) * width + x) * k + i;
  }
  double at(int x, int y, int i) const { return values[idx(x, y, i)]; }
};

/// Perturbed local candidates d_hat + j + u_j for j in {-m..m}, u_j drawn
/// U[-0.5, 0.5] sequentially (pixel row-major, candidate inner). Invalid
/// estimates reuse the most recent valid one in scan order and set the
/// fallback flag; draws happen regardless so the rng stream is data
/// independent.
HypothesisSet initial_set(const PseudoDisparityMap& d_hat, int m, Rng& rng);

/// First-order propagation: candidate from offset Dp reads p' = clamp(p + Dp)
/// and extrapolates d(p') - grad(p') . Dp. The center offset contributes the
/// pixel's own estimate (tagged kPrevious).
HypothesisSet propagate(const PseudoDisparityMap& d_hat,
                        const DepthGradient& grad, const OffsetSet& offsets);

}  // namespace mvsr
