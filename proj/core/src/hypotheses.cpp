#include "mvsr/hypotheses.hpp"

#include <algorithm>

namespace mvsr {

OffsetSet make_offsets(const std::vector<int>& dilations) {
  check(!dilations.empty(), "make_offsets: empty dilation list");
  for (size_t i = 0; i < dilations.size(); ++i) {
    check(dilations[i] > 0, "make_offsets: non-positive dilation");
    for (size_t j = i + 1; j < dilations.size(); ++j)
      check(dilations[i] != dilations[j], "make_offsets: repeated dilation");
  }
  OffsetSet set;
  for (int r : dilations)
    for (int dy : {-r, 0, r})
      for (int dx : {-r, 0, r}) {
        if (dx == 0 && dy == 0) continue;
        set.offsets.push_back({dx, dy});
      }
  set.offsets.push_back({0, 0});
  return set;
}

namespace {

double axis_gradient(const Image2D<double>& v, int x, int y, bool horizontal) {
  const int w = v.width(), h = v.height();
  int xl = x, yl = y, xr = x, yr = y;
  if (horizontal) {
    xl = std::max(x - 1, 0);
    xr = std::min(x + 1, w - 1);
  } else {
    yl = std::max(y - 1, 0);
    yr = std::min(y + 1, h - 1);
  }
  double vl = v.at(xl, yl), vr = v.at(xr, yr);
  if (!is_valid(vl)) {
    xl = x;
    yl = y;
    vl = v.at(x, y);
  }
  if (!is_valid(vr)) {
    xr = x;
    yr = y;
    vr = v.at(x, y);
  }
  int span = horizontal ? xr - xl : yr - yl;
  if (span == 0 || !is_valid(vl) || !is_valid(vr)) return 0.0;
  return (vr - vl) / span;
}

}  // namespace

DepthGradient depth_gradient(const PseudoDisparityMap& d_hat) {
  const Image2D<double>& v = d_hat.values;
  check(v.width() >= 3 && v.height() >= 3, "depth_gradient: map too small");
  DepthGradient g;
  g.dx = Image2D<double>(v.width(), v.height(), 0.0);
  g.dy = Image2D<double>(v.width(), v.height(), 0.0);
  for (int y = 0; y < v.height(); ++y)
    for (int x = 0; x < v.width(); ++x) {
      g.dx.at(x, y) = axis_gradient(v, x, y, true);
      g.dy.at(x, y) = axis_gradient(v, x, y, false);
    }
  return g;
}

HypothesisSet initial_set(const PseudoDisparityMap& d_hat, int m, Rng& rng) {
  check(m >= 1, "initial_set: m must be >= 1");
  const Image2D<double>& v = d_hat.values;
  HypothesisSet set;
  set.width = v.width();
  set.height = v.height();
  set.k = 2 * m + 1;
  set.scale_fb = d_hat.scale_fb;
  set.values.resize(static_cast<size_t>(set.width) * set.height * set.k);
  set.provenance.assign(set.k, Provenance::kInitial);
  set.fallback.assign(static_cast<size_t>(set.width) * set.height, 0);

  double first_valid = kInvalid;
  for (int y = 0; y < v.height() && !is_valid(first_valid); ++y)
    for (int x = 0; x < v.width(); ++x)
      if (is_valid(v.at(x, y))) {
        first_valid = v.at(x, y);
        break;
      }
  check(is_valid(first_valid), "initial_set: no valid estimate anywhere");

  double last_valid = first_valid;
  for (int y = 0; y < v.height(); ++y)
    for (int x = 0; x < v.width(); ++x) {
      double center = v.at(x, y);
      if (is_valid(center)) {
        last_valid = center;
      } else {
        center = last_valid;
        set.fallback[static_cast<size_t>(y) * set.width + x] = 1;
      }
      for (int j = -m; j <= m; ++j) {
        double u = rng.uniform(-0.5, 0.5);
        set.values[set.idx(x, y, j + m)] = center + j + u;
      }
    }
  return set;
}

HypothesisSet propagate(const PseudoDisparityMap& d_hat,
                        const DepthGradient& grad, const OffsetSet& offsets) {
  const Image2D<double>& v = d_hat.values;
  check(!offsets.offsets.empty(), "propagate: empty offset set");
  check(grad.dx.same_size(v) && grad.dy.same_size(v),
        "propagate: gradient does not match map");
  HypothesisSet set;
  set.width = v.width();
  set.height = v.height();
  set.k = static_cast<int>(offsets.size());
  set.scale_fb = d_hat.scale_fb;
  set.values.resize(static_cast<size_t>(set.width) * set.height * set.k);
  set.provenance.resize(set.k);
  for (int i = 0; i < set.k; ++i) {
    const Offset& o = offsets.offsets[i];
    set.provenance[i] = (o.dx == 0 && o.dy == 0) ? Provenance::kPrevious
                                                 : Provenance::kSpatial;
  }
  set.fallback.assign(static_cast<size_t>(set.width) * set.height, 0);

  for (int y = 0; y < v.height(); ++y)
    for (int x = 0; x < v.width(); ++x) {
      const double own = v.at(x, y);
      for (int i = 0; i < set.k; ++i) {
        const Offset& o = offsets.offsets[i];
        double cand;
        if (o.dx == 0 && o.dy == 0) {
          cand = own;
        } else {
          int sx = std::clamp(x + o.dx, 0, set.width - 1);
          int sy = std::clamp(y + o.dy, 0, set.height - 1);
          double src = v.at(sx, sy);
          if (is_valid(src)) {
            cand = src - grad.dx.at(sx, sy) * o.dx - grad.dy.at(sx, sy) * o.dy;
          } else {
            cand = own;
          }
        }
        if (!is_valid(cand)) {
          cand = 0.0;
          set.fallback[static_cast<size_t>(y) * set.width + x] = 1;
        }
        set.values[set.idx(x, y, i)] = cand;
      }
    }
  return set;
}

}  // namespace mvsr
