#include "mvsr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace mvsr {

namespace {

bool usable_gt(double g) { return is_valid(g) && g > 0.0; }

// Pixel admitted to the feature-matching loss, with the frozen cell choices.
struct FmPixel {
  int x = 0, y = 0;
  BracketSample bracket;
  int neg = -1;
};

std::vector<FmPixel> fm_pixels(const CostVolume& vol,
                               const PseudoDisparityMap& d_gt) {
  check(d_gt.values.width() == vol.width && d_gt.values.height() == vol.height,
        "loss_fm: GT size does not match volume grid");
  std::vector<FmPixel> out;
  out.reserve(static_cast<size_t>(vol.width) * vol.height);
  for (int y = 0; y < vol.height; ++y) {
    for (int x = 0; x < vol.width; ++x) {
      const double g = d_gt.values.at(x, y);
      if (!usable_gt(g)) continue;
      FmPixel p;
      p.x = x;
      p.y = y;
      p.bracket = locate_bracket(vol, x, y, g);
      if (vol.no_view[vol.cell(x, y, p.bracket.i0)] ||
          vol.no_view[vol.cell(x, y, p.bracket.i1)])
        continue;
      double best = 0.0;
      for (int i = 0; i < vol.slices; ++i) {
        if (vol.no_view[vol.cell(x, y, i)]) continue;
        if (std::abs(vol.hypothesis(x, y, i) - g) <= 1.0) continue;
        const double c = vol.cost(x, y, i);
        if (p.neg < 0 || c < best) {
          p.neg = i;
          best = c;
        }
      }
      if (p.neg < 0) continue;
      out.push_back(p);
    }
  }
  return out;
}

}  // namespace

double loss_cl(const nn::Tensor& scores, const HypothesisSet& hyps,
               const PseudoDisparityMap& d_gt, int* supervised) {
  check(scores.rank() == 3 && scores.dim(0) == hyps.k &&
            scores.dim(1) == hyps.height && scores.dim(2) == hyps.width,
        "loss_cl: score shape mismatch");
  check(d_gt.values.width() == hyps.width &&
            d_gt.values.height() == hyps.height,
        "loss_cl: GT size mismatch");
  const size_t plane = static_cast<size_t>(hyps.width) * hyps.height;
  double acc = 0.0;
  int count = 0;
  for (int y = 0; y < hyps.height; ++y) {
    for (int x = 0; x < hyps.width; ++x) {
      const double g = d_gt.values.at(x, y);
      if (!usable_gt(g)) continue;
      const size_t px = static_cast<size_t>(y) * hyps.width + x;
      double mx = scores.data[px];
      for (int i = 1; i < hyps.k; ++i)
        mx = std::max(mx, static_cast<double>(scores.data[i * plane + px]));
      double z_all = 0.0, z_pos = 0.0;
      for (int i = 0; i < hyps.k; ++i) {
        const double z = std::exp(scores.data[i * plane + px] - mx);
        z_all += z;
        if (std::abs(hyps.at(x, y, i) - g) <= 1.0) z_pos += z;
      }
      if (z_pos == 0.0) continue;
      acc += std::log(z_all) - std::log(z_pos);
      ++count;
    }
  }
  if (supervised) *supervised = count;
  if (count == 0) {
    std::fprintf(stderr, "warning: loss_cl has no supervisable pixel\n");
    return 0.0;
  }
  return acc / count;
}

template <typename T>
nn::Var loss_cl_tape(nn::TapeT<T>& tape, nn::Var scores,
                     const HypothesisSet& hyps, const PseudoDisparityMap& d_gt,
                     int* supervised) {
  const nn::TensorT<T>& sv = tape.val(scores);
  check(sv.rank() == 3 && sv.dim(0) == hyps.k && sv.dim(1) == hyps.height &&
            sv.dim(2) == hyps.width,
        "loss_cl: score shape mismatch");
  check(d_gt.values.width() == hyps.width &&
            d_gt.values.height() == hyps.height,
        "loss_cl: GT size mismatch");
  const size_t plane = static_cast<size_t>(hyps.width) * hyps.height;
  std::vector<uint8_t> all(plane * hyps.k, 1);
  std::vector<uint8_t> pos(plane * hyps.k, 0);
  std::vector<uint8_t> pixel(plane, 0);
  int count = 0;
  for (int y = 0; y < hyps.height; ++y) {
    for (int x = 0; x < hyps.width; ++x) {
      const double g = d_gt.values.at(x, y);
      if (!usable_gt(g)) continue;
      const size_t px = static_cast<size_t>(y) * hyps.width + x;
      bool any = false;
      for (int i = 0; i < hyps.k; ++i)
        if (std::abs(hyps.at(x, y, i) - g) <= 1.0) {
          pos[i * plane + px] = 1;
          any = true;
        }
      if (!any) continue;
      pixel[px] = 1;
      ++count;
    }
  }
  if (supervised) *supervised = count;
  if (count == 0) {
    std::fprintf(stderr, "warning: loss_cl has no supervisable pixel\n");
    return tape.constant(nn::TensorT<T>::scalar(T(0)));
  }
  nn::Var lse_all = tape.logsumexp0_masked(scores, all);
  nn::Var lse_pos = tape.logsumexp0_masked(scores, pos);
  return tape.mean_masked(tape.sub(lse_all, lse_pos), pixel);
}

double loss_fm(const CostVolume& vol, const PseudoDisparityMap& d_gt,
               double alpha_clip, double beta_clip, int* supervised) {
  check(alpha_clip < beta_clip, "loss_fm: need alpha_clip < beta_clip");
  const std::vector<FmPixel> px = fm_pixels(vol, d_gt);
  if (supervised) *supervised = static_cast<int>(px.size());
  if (px.empty()) {
    std::fprintf(stderr, "warning: loss_fm has no supervisable pixel\n");
    return 0.0;
  }
  double acc = 0.0;
  for (const FmPixel& p : px) {
    const double c_gt =
        (1.0 - p.bracket.t) * vol.cost(p.x, p.y, p.bracket.i0) +
        p.bracket.t * vol.cost(p.x, p.y, p.bracket.i1);
    const double c_neg =
        std::clamp(static_cast<double>(vol.cost(p.x, p.y, p.neg)), alpha_clip,
                   beta_clip);
    acc += c_gt - c_neg;
  }
  return acc / static_cast<double>(px.size());
}

namespace {

// Differentiable re-evaluation of one cell role (a fixed slice per entry)
// for all supervised entries at once. Gathers each source view at the warp
// of the entry's hypothesis and aggregates the per-view correlations with
// the sigmoid-cube weights. Entries are guaranteed >= 1 valid view.
template <typename T>
nn::Var cells_on_tape(nn::TapeT<T>& tape, const CostVolume& vol,
                      const VolumeLevel& lvl, nn::Var ref_gathered,
                      const std::vector<nn::Var>& src_feats,
                      const std::vector<FmPixel>& px,
                      const std::vector<double>& hyp, const CostParams& cp) {
  const int p = static_cast<int>(px.size());
  const int views = static_cast<int>(lvl.src_cams.size());
  const double rx = double(lvl.ref_cam.width) / vol.width;
  const double ry = double(lvl.ref_cam.height) / vol.height;
  std::vector<nn::Var> view_costs;
  view_costs.reserve(views);
  nn::TensorT<T> valid_mask = nn::TensorT<T>::zeros({views, p});
  std::vector<double> wx(p), wy(p);
  std::vector<uint8_t> ok(p);
  for (int v = 0; v < views; ++v) {
    for (int i = 0; i < p; ++i) {
      const double cx = (px[i].x + 0.5) * rx - 0.5;
      const double cy = (px[i].y + 0.5) * ry - 0.5;
      const double depth = lvl.scale_fb / hyp[i];
      const WarpResult wr =
          warp_pixel(lvl.ref_cam, lvl.src_cams[v], cx, cy, depth);
      ok[i] = wr.valid ? 1 : 0;
      wx[i] = wr.valid ? wr.x : 0.0;
      wy[i] = wr.valid ? wr.y : 0.0;
      if (wr.valid)
        valid_mask.data[static_cast<size_t>(v) * p + i] = T(1);
    }
    nn::Var sg = tape.gather_bilinear(src_feats[v], wx, wy, ok);
    // c_v = -<f_ref, f_src>
    view_costs.push_back(
        tape.affine(tape.sum0(tape.mul(ref_gathered, sg)), T(-1), T(0)));
  }
  nn::Var cc = tape.concat0(view_costs);  // {V, P}
  // w_v = sigmoid(alpha (delta - c)^3), invalid views masked out
  nn::Var u = tape.affine(cc, T(-1), T(cp.delta));
  nn::Var w = tape.sigmoid_(tape.affine(tape.cube(u), T(cp.alpha), T(0)));
  w = tape.mul_const(w, valid_mask);
  return tape.div(tape.sum0(tape.mul(w, cc)), tape.sum0(w));  // {1, P}
}

}  // namespace

template <typename T>
nn::Var loss_fm_tape(nn::TapeT<T>& tape, const CostVolume& vol,
                     const VolumeLevel& lvl, nn::Var ref_feat,
                     const std::vector<nn::Var>& src_feats,
                     const CostParams& cp, const PseudoDisparityMap& d_gt,
                     double alpha_clip, double beta_clip, int* supervised) {
  check(alpha_clip < beta_clip, "loss_fm: need alpha_clip < beta_clip");
  check(src_feats.size() == lvl.src_cams.size(),
        "loss_fm: source feature vars do not match cameras");
  const std::vector<FmPixel> px = fm_pixels(vol, d_gt);
  if (supervised) *supervised = static_cast<int>(px.size());
  if (px.empty()) {
    std::fprintf(stderr, "warning: loss_fm has no supervisable pixel\n");
    return tape.constant(nn::TensorT<T>::scalar(T(0)));
  }
  const int p = static_cast<int>(px.size());
  const double rx = double(lvl.ref_cam.width) / vol.width;
  const double ry = double(lvl.ref_cam.height) / vol.height;
  std::vector<double> refx(p), refy(p);
  std::vector<uint8_t> all_ok(p, 1);
  for (int i = 0; i < p; ++i) {
    refx[i] = (px[i].x + 0.5) * rx - 0.5;
    refy[i] = (px[i].y + 0.5) * ry - 0.5;
  }
  nn::Var ref_g = tape.gather_bilinear(ref_feat, refx, refy, all_ok);

  std::vector<double> h_lo(p), h_hi(p), h_neg(p);
  nn::TensorT<T> t_lo({1, p}), t_hi({1, p});
  for (int i = 0; i < p; ++i) {
    const FmPixel& q = px[i];
    h_lo[i] = vol.hypothesis(q.x, q.y, q.bracket.i0);
    h_hi[i] = vol.hypothesis(q.x, q.y, q.bracket.i1);
    h_neg[i] = vol.hypothesis(q.x, q.y, q.neg);
    t_lo.data[i] = T(1.0 - q.bracket.t);
    t_hi.data[i] = T(q.bracket.t);
  }
  nn::Var c_lo = cells_on_tape(tape, vol, lvl, ref_g, src_feats, px, h_lo, cp);
  nn::Var c_hi = cells_on_tape(tape, vol, lvl, ref_g, src_feats, px, h_hi, cp);
  nn::Var c_neg = cells_on_tape(tape, vol, lvl, ref_g, src_feats, px, h_neg, cp);
  nn::Var c_gt = tape.add(tape.mul_const(c_lo, t_lo), tape.mul_const(c_hi, t_hi));
  nn::Var pen = tape.clamp(c_neg, T(alpha_clip), T(beta_clip));
  std::vector<uint8_t> ones(p, 1);
  return tape.mean_masked(tape.sub(c_gt, pen), ones);
}

template <typename T>
nn::Var loss_expectation_tape(nn::TapeT<T>& tape, nn::Var scores,
                              const HypothesisSet& hyps,
                              const PseudoDisparityMap& d_gt, int* supervised) {
  const nn::TensorT<T>& sv = tape.val(scores);
  check(sv.rank() == 3 && sv.dim(0) == hyps.k && sv.dim(1) == hyps.height &&
            sv.dim(2) == hyps.width,
        "loss_expectation: score shape mismatch");
  const size_t plane = static_cast<size_t>(hyps.width) * hyps.height;
  nn::TensorT<T> cand({hyps.k, hyps.height, hyps.width});
  for (int i = 0; i < hyps.k; ++i)
    for (int y = 0; y < hyps.height; ++y)
      for (int x = 0; x < hyps.width; ++x)
        cand.data[i * plane + static_cast<size_t>(y) * hyps.width + x] =
            T(hyps.at(x, y, i));
  nn::TensorT<T> target = nn::TensorT<T>::zeros({1, hyps.height, hyps.width});
  std::vector<uint8_t> mask(plane, 0);
  int count = 0;
  for (int y = 0; y < hyps.height; ++y)
    for (int x = 0; x < hyps.width; ++x) {
      const double g = d_gt.values.at(x, y);
      if (!usable_gt(g)) continue;
      const size_t pxi = static_cast<size_t>(y) * hyps.width + x;
      target.data[pxi] = T(g);
      mask[pxi] = 1;
      ++count;
    }
  if (supervised) *supervised = count;
  if (count == 0) {
    std::fprintf(stderr, "warning: expectation loss has no supervisable pixel\n");
    return tape.constant(nn::TensorT<T>::scalar(T(0)));
  }
  nn::Var pred = tape.sum0(tape.mul_const(tape.softmax0(scores), cand));
  return tape.smooth_l1_masked(pred, target, mask, T(1));
}

template nn::Var loss_cl_tape<float>(nn::TapeT<float>&, nn::Var,
                                     const HypothesisSet&,
                                     const PseudoDisparityMap&, int*);
template nn::Var loss_cl_tape<double>(nn::TapeT<double>&, nn::Var,
                                      const HypothesisSet&,
                                      const PseudoDisparityMap&, int*);
template nn::Var loss_fm_tape<float>(nn::TapeT<float>&, const CostVolume&,
                                     const VolumeLevel&, nn::Var,
                                     const std::vector<nn::Var>&,
                                     const CostParams&,
                                     const PseudoDisparityMap&, double, double,
                                     int*);
template nn::Var loss_fm_tape<double>(nn::TapeT<double>&, const CostVolume&,
                                      const VolumeLevel&, nn::Var,
                                      const std::vector<nn::Var>&,
                                      const CostParams&,
                                      const PseudoDisparityMap&, double, double,
                                      int*);
template nn::Var loss_expectation_tape<float>(nn::TapeT<float>&, nn::Var,
                                              const HypothesisSet&,
                                              const PseudoDisparityMap&, int*);
template nn::Var loss_expectation_tape<double>(nn::TapeT<double>&, nn::Var,
                                               const HypothesisSet&,
                                               const PseudoDisparityMap&,
                                               int*);

}  // namespace mvsr
