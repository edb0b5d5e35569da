#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "mvsr/losses.hpp"
#include "mvsr/ranker.hpp"
#include "mvsr/synth.hpp"
#include "test_support.hpp"

using namespace mvsr;

namespace {

HypothesisSet grid_hyps(int w, int h, std::vector<double> per_cand_offsets,
                        double base) {
  HypothesisSet hyps;
  hyps.width = w;
  hyps.height = h;
  hyps.k = int(per_cand_offsets.size());
  hyps.scale_fb = 24.0;
  hyps.values.resize(size_t(w) * h * hyps.k);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int i = 0; i < hyps.k; ++i)
        hyps.values[hyps.idx(x, y, i)] = base + per_cand_offsets[i];
  return hyps;
}

PseudoDisparityMap const_map(int w, int h, double v) {
  PseudoDisparityMap m;
  m.values = Image2D<double>(w, h, v);
  m.scale_fb = 24.0;
  return m;
}

CostVolume bar_volume(std::vector<float> costs, double d0, double step) {
  CostVolume vol;
  vol.width = 1;
  vol.height = 1;
  vol.slices = int(costs.size());
  vol.d0 = d0;
  vol.step = step;
  vol.scale_fb = 24.0;
  vol.values = std::move(costs);
  vol.no_view.assign(vol.values.size(), 0);
  return vol;
}

}  // namespace

TEST_CASE("loss_cl is zero when every candidate is positive") {
  HypothesisSet hyps = grid_hyps(3, 2, {-0.5, 0.0, 0.5}, 6.0);
  PseudoDisparityMap gt = const_map(3, 2, 6.2);
  nn::Tensor scores = nn::Tensor::zeros({3, 2, 3});
  Rng rng(5);
  for (float& v : scores.data) v = float(rng.uniform(-2, 2));
  int n = 0;
  CHECK(std::abs(loss_cl(scores, hyps, gt, &n)) < 1e-12);
  CHECK(n == 6);
}

TEST_CASE("loss_cl equals log K for one positive among equal scores") {
  const int k = 5;
  HypothesisSet hyps = grid_hyps(2, 2, {0.0, 3.0, 6.0, 9.0, 12.0}, 4.0);
  PseudoDisparityMap gt = const_map(2, 2, 4.3);  // only candidate 0 is close
  nn::Tensor scores = nn::Tensor::full({k, 2, 2}, 0.7f);
  CHECK(loss_cl(scores, hyps, gt) ==
        doctest::Approx(std::log(double(k))).epsilon(1e-6));
}

TEST_CASE("loss_cl is invariant to per-pixel score shifts") {
  HypothesisSet hyps = grid_hyps(4, 3, {-2.0, 0.0, 2.0}, 8.0);
  PseudoDisparityMap gt = const_map(4, 3, 8.4);
  nn::Tensor scores = nn::Tensor::zeros({3, 3, 4});
  Rng rng(9);
  for (float& v : scores.data) v = float(rng.uniform(-1, 1));
  const double base = loss_cl(scores, hyps, gt);
  nn::Tensor shifted = scores;
  const size_t plane = 12;
  for (size_t px = 0; px < plane; ++px) {
    const float s = float(rng.uniform(-40, 40));
    for (int i = 0; i < 3; ++i) shifted.data[i * plane + px] += s;
  }
  CHECK(loss_cl(shifted, hyps, gt) == doctest::Approx(base).epsilon(1e-6));
}

TEST_CASE("loss_cl skips unusable pixels and counts the rest") {
  HypothesisSet hyps = grid_hyps(3, 1, {0.0, 5.0}, 4.0);
  PseudoDisparityMap gt = const_map(3, 1, 4.5);
  gt.values.at(1, 0) = kInvalid;
  gt.values.at(2, 0) = 20.0;  // no candidate within 1
  nn::Tensor scores = nn::Tensor::zeros({2, 1, 3});
  scores.at3(0, 0, 0) = 1.0f;
  scores.at3(1, 0, 0) = 0.0f;
  int n = 0;
  const double got = loss_cl(scores, hyps, gt, &n);
  CHECK(n == 1);
  // Single pixel, positive z = e^1 of z_all = e^1 + e^0.
  const double expect = std::log(std::exp(1.0) + 1.0) - 1.0;
  CHECK(got == doctest::Approx(expect).epsilon(1e-6));

  PseudoDisparityMap dead = const_map(3, 1, kInvalid);
  int zero = -1;
  CHECK(loss_cl(scores, hyps, dead, &zero) == 0.0);
  CHECK(zero == 0);
}

TEST_CASE("loss_cl_tape reproduces the scalar loss and reaches the scores") {
  HypothesisSet hyps = grid_hyps(5, 4, {-1.5, 0.0, 1.5}, 7.0);
  PseudoDisparityMap gt = const_map(5, 4, 7.3);
  gt.values.at(2, 2) = kInvalid;
  nn::Tensor scores = nn::Tensor::zeros({3, 4, 5});
  Rng rng(13);
  for (float& v : scores.data) v = float(rng.uniform(-1.5, 1.5));

  int n_scalar = 0;
  const double expect = loss_cl(scores, hyps, gt, &n_scalar);

  nn::TapeD tape;
  nn::Var s = tape.leaf(scores.cast<double>(), true);
  int n_tape = 0;
  nn::Var loss = loss_cl_tape(tape, s, hyps, gt, &n_tape);
  CHECK(n_tape == n_scalar);
  CHECK(tape.val(loss).data[0] == doctest::Approx(expect).epsilon(1e-9));
  tape.backward(loss);
  const nn::TensorD& g = tape.grad(s);
  REQUIRE(!g.data.empty());
  double mag = 0;
  for (double v : g.data) mag += std::abs(v);
  CHECK(mag > 1e-6);
  // Pixels without supervision contribute no gradient.
  CHECK(g.at3(0, 2, 2) == 0.0);
}

TEST_CASE("loss_fm picks the best far negative and clips it") {
  PseudoDisparityMap gt = const_map(1, 1, 3.0);
  // Slices at 2, 3, 4, 5, 6; negatives must be > 1 away from 3.
  CostVolume vol = bar_volume({0.9f, -1.0f, 0.5f, 1.3f, 0.7f}, 2.0, 1.0);
  int n = 0;
  CHECK(loss_fm(vol, gt, -2.0, 1.0, &n) == doctest::Approx(-1.7).epsilon(1e-9));
  CHECK(n == 1);

  // The negative cost exceeds the upper clip: -1 - clip(1.5) = -2.
  CostVolume hot = bar_volume({0.9f, -1.0f, 0.5f, 1.3f, 1.5f}, 2.0, 1.0);
  CHECK(loss_fm(hot, gt, -2.0, 1.0) == doctest::Approx(-2.0).epsilon(1e-9));

  // A lower clip of zero floors an easy negative at zero.
  CostVolume easy = bar_volume({0.9f, -1.0f, 0.5f, 1.3f, -0.2f}, 2.0, 1.0);
  CHECK(loss_fm(easy, gt, 0.0, 1.0) == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("loss_fm interpolates the ground-truth bracket") {
  PseudoDisparityMap gt = const_map(1, 1, 2.5);
  CostVolume vol = bar_volume({0.9f, -1.0f, 0.5f, 1.3f, 0.7f}, 2.0, 1.0);
  // c_gt = 0.5 * (0.9 - 1.0) = -0.05; negatives beyond 1 pd: slices at 4,5,6.
  const double expect = -0.05 - std::clamp(0.5, -2.0, 1.0);
  CHECK(loss_fm(vol, gt, -2.0, 1.0) == doctest::Approx(expect).epsilon(1e-7));
}

TEST_CASE("loss_fm skips pixels without usable bracket or negative") {
  PseudoDisparityMap gt = const_map(1, 1, 3.0);
  CostVolume vol = bar_volume({0.9f, -1.0f, 0.5f, 1.3f, 0.7f}, 2.0, 1.0);
  vol.no_view[1] = 1;  // bracket cell of gt=3.0
  int n = -1;
  CHECK(loss_fm(vol, gt, -2.0, 1.0, &n) == 0.0);
  CHECK(n == 0);

  // All slices within 1 pd of gt: nothing qualifies as a negative.
  CostVolume narrow = bar_volume({0.3f, 0.1f, 0.2f}, 2.5, 0.4);
  PseudoDisparityMap mid = const_map(1, 1, 2.9);
  int n2 = -1;
  CHECK(loss_fm(narrow, mid, -2.0, 1.0, &n2) == 0.0);
  CHECK(n2 == 0);

  CHECK_THROWS_AS(loss_fm(vol, gt, 1.0, 1.0), Error);
}

TEST_CASE("loss_fm_tape matches the frozen-volume scalar loss") {
  RenderedScene scene = render(testsup::quick_plane_spec());
  testsup::SceneLevel sl = testsup::scene_level(scene, 8);
  VolumeLevel lvl = sl.as_volume_level();
  PseudoDisparityMap gt = testsup::gt_pd_at(scene, 8);
  CostParams cp;
  Rng rng(77);
  // Pad the sweep so slices > 1 pd from the GT exist at every pixel.
  double glo = 1e30, ghi = -1e30;
  for (double v : gt.values.raw())
    if (is_valid(v)) {
      glo = std::min(glo, v);
      ghi = std::max(ghi, v);
    }
  CostVolume vol =
      build_full_volume(lvl, std::max(0.4, glo - 4.0), ghi + 4.0, 12, cp, rng, 1);

  int n_scalar = 0;
  const double expect = loss_fm(vol, gt, -2.0, 1.0, &n_scalar);
  REQUIRE(n_scalar > 50);

  nn::TapeD tape;
  nn::Var ref = tape.leaf(sl.ref_feat.values.cast<double>(), true);
  std::vector<nn::Var> srcs;
  for (const FeatureMap& f : sl.src_feats)
    srcs.push_back(tape.leaf(f.values.cast<double>(), true));
  int n_tape = 0;
  nn::Var loss =
      loss_fm_tape(tape, vol, lvl, ref, srcs, cp, gt, -2.0, 1.0, &n_tape);
  CHECK(n_tape == n_scalar);
  // The tape recomputes cells in f64 from the same features; the frozen
  // volume stores f32, so agreement is at float precision.
  CHECK(tape.val(loss).data[0] == doctest::Approx(expect).epsilon(5e-6));

  tape.backward(loss);
  REQUIRE(!tape.grad(ref).data.empty());
  double mag = 0;
  for (double v : tape.grad(ref).data) mag += std::abs(v);
  CHECK(mag > 1e-6);
}

TEST_CASE("loss_fm_tape leaves unrelated parameters untouched") {
  RenderedScene scene = render(testsup::quick_plane_spec());
  testsup::SceneLevel sl = testsup::scene_level(scene, 8);
  VolumeLevel lvl = sl.as_volume_level();
  PseudoDisparityMap gt = testsup::gt_pd_at(scene, 8);
  CostParams cp;
  Rng rng(78);
  double glo = 1e30, ghi = -1e30;
  for (double v : gt.values.raw())
    if (is_valid(v)) {
      glo = std::min(glo, v);
      ghi = std::max(ghi, v);
    }
  CostVolume vol =
      build_full_volume(lvl, std::max(0.4, glo - 4.0), ghi + 4.0, 12, cp, rng, 1);

  nn::TapeD tape;
  // Ranker-style weights live on the tape but feed nothing in this loss.
  nn::Var ranker_w = tape.leaf(nn::TensorD::full({4, 4}, 0.3), true);
  nn::Var ref = tape.leaf(sl.ref_feat.values.cast<double>(), true);
  std::vector<nn::Var> srcs;
  for (const FeatureMap& f : sl.src_feats)
    srcs.push_back(tape.leaf(f.values.cast<double>(), true));
  nn::Var loss = loss_fm_tape(tape, vol, lvl, ref, srcs, cp, gt, -2.0, 1.0);
  tape.backward(loss);
  CHECK(tape.grad(ranker_w).data.empty());
  CHECK(!tape.grad(ref).data.empty());
}

TEST_CASE("loss_expectation_tape is smooth-L1 on the softmax average") {
  HypothesisSet hyps = grid_hyps(1, 1, {0.0, 2.0}, 2.0);  // candidates 2, 4
  PseudoDisparityMap gt = const_map(1, 1, 3.2);
  nn::Tensor scores = nn::Tensor::zeros({2, 1, 1});
  scores.data = {0.0f, float(std::log(3.0))};
  nn::TapeD tape;
  nn::Var s = tape.leaf(scores.cast<double>(), true);
  int n = 0;
  nn::Var loss = loss_expectation_tape(tape, s, hyps, gt, &n);
  CHECK(n == 1);
  const double pred = 0.25 * 2.0 + 0.75 * 4.0;  // 3.5
  const double diff = pred - 3.2;
  CHECK(tape.val(loss).data[0] ==
        doctest::Approx(0.5 * diff * diff).epsilon(1e-6));
  tape.backward(loss);
  REQUIRE(!tape.grad(s).data.empty());
  double mag = 0;
  for (double v : tape.grad(s).data) mag += std::abs(v);
  CHECK(mag > 1e-8);
}

TEST_CASE("loss_expectation_tape ignores invalid ground truth") {
  HypothesisSet hyps = grid_hyps(2, 1, {-1.0, 1.0}, 5.0);
  PseudoDisparityMap gt = const_map(2, 1, 5.1);
  gt.values.at(1, 0) = kInvalid;
  nn::Tensor scores = nn::Tensor::zeros({2, 1, 2});
  nn::TapeD tape;
  nn::Var s = tape.leaf(scores.cast<double>(), true);
  int n = 0;
  loss_expectation_tape(tape, s, hyps, gt, &n);
  CHECK(n == 1);
}
