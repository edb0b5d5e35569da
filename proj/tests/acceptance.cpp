// Acceptance gate: ten end-to-end checks over the refinement engine, one
// printed line each. argv[1] must point at the mvsr CLI binary; the
// subprocess determinism check shells out to it. Exits nonzero if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "mvsr/config_json.hpp"
#include "mvsr/gradcheck.hpp"
#include "mvsr/losses.hpp"
#include "mvsr/metrics.hpp"
#include "mvsr/nn/weights_io.hpp"
#include "mvsr/pipeline.hpp"
#include "mvsr/train.hpp"

using namespace mvsr;
namespace fs = std::filesystem;

namespace {

double now_minus(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// Shared scratch space and the artifacts criteria hand to each other.

struct Context {
  fs::path root;           // temp tree, removed at exit
  std::string cli;         // path to the mvsr binary
  std::string train_dir;   // training split (written once)
  std::string eval_dir;    // held-out split
  double full_pct = -1;    // held-out refined pct of the fully trained model
  double full_wta = -1;
  double train_seconds = 0;
  int train_steps = 0;

  std::string sub(const std::string& name) const {
    fs::path p = root / name;
    fs::create_directories(p);
    return p.string();
  }
};

// Training recipe shared by the learning-lift and ablation criteria. The
// desk preset trimmed to fit three runs on one core: shallower sweep for
// the matching loss, smaller crops, two source views per step.
RefineConfig accept_train_config() {
  RefineConfig cfg = RefineConfig::desk_default();
  cfg.n_full = 48;
  return cfg;
}

TrainConfig accept_train_schedule() {
  TrainConfig t;
  t.steps = 1000;
  t.crop_width = 64;
  t.crop_height = 96;
  t.random_sources = 1;
  t.checkpoint_every = 0;
  return t;
}

constexpr int kTrainScenes = 14;
constexpr int kEvalScenes = 6;
constexpr uint64_t kTrainDataSeed = 101;
constexpr uint64_t kEvalDataSeed = 202;
constexpr uint64_t kTrainSeed = 7;

// ---------------------------------------------------------------------------
// Small pieces of scene plumbing, local so the checks stay self-contained.

struct Level {
  FeaturePyramid ref, srcs[8];
  VolumeLevel lvl;
};

RefineInputs scene_inputs(const RenderedScene& scene, bool with_gt) {
  RefineInputs in;
  in.rig = scene_rig(scene);
  in.ref_image = scene.views[0].image;
  for (size_t v = 1; v < scene.views.size(); ++v)
    in.src_images.push_back(scene.views[v].image);
  in.dmin = scene.dmin;
  in.dmax = scene.dmax;
  if (with_gt) in.oracle_gt = &scene.views[0].depth;
  return in;
}

// Handcrafted features + cameras scaled to 1/factor, the level every
// volume-facing check builds on.
std::shared_ptr<Level> make_level(const RenderedScene& scene, int factor) {
  auto out = std::make_shared<Level>();
  out->ref = extract_handcrafted(scene.views[0].image);
  out->lvl.ref_cam = scale_camera(scene.views[0].cam, 1.0 / factor);
  out->lvl.ref_feat = &out->ref.level(factor);
  const double b = baseline_scale(scene_rig(scene));
  for (size_t v = 1; v < scene.views.size(); ++v) {
    out->srcs[v - 1] = extract_handcrafted(scene.views[v].image);
    out->lvl.src_cams.push_back(scale_camera(scene.views[v].cam, 1.0 / factor));
    out->lvl.src_feats.push_back(&out->srcs[v - 1].level(factor));
  }
  out->lvl.scale_fb = out->lvl.ref_cam.intr.fx * b;
  return out;
}

double bilin_channel(const FeatureMap& fm, double x, double y, int c) {
  const int w = fm.values.dim(2), h = fm.values.dim(1);
  const double xc = std::clamp(x, 0.0, double(w - 1));
  const double yc = std::clamp(y, 0.0, double(h - 1));
  const int x0 = std::min(int(std::floor(xc)), w - 1);
  const int y0 = std::min(int(std::floor(yc)), h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = xc - x0, fy = yc - y0;
  auto at = [&](int xx, int yy) {
    return double(fm.values.data[(size_t(c) * h + yy) * w + xx]);
  };
  return (1 - fy) * ((1 - fx) * at(x0, y0) + fx * at(x1, y0)) +
         fy * ((1 - fx) * at(x0, y1) + fx * at(x1, y1));
}

// Independent recomputation of one volume cell: backproject the grid pixel
// at the hypothesis depth, project into each source, bilinear-sample,
// correlate, and mix with the sigmoid-cube view weights. Mirrors the stated
// construction, not the production code path.
double oracle_cell(const VolumeLevel& lvl, int gw, int gh, int x, int y,
                   double d, const CostParams& cp, bool* no_view) {
  *no_view = false;
  if (!(d > 0)) {
    *no_view = true;
    return kNoViewCost;
  }
  const Camera& rc = lvl.ref_cam;
  const double rx = double(rc.width) / gw, ry = double(rc.height) / gh;
  const double px = (x + 0.5) * rx - 0.5, py = (y + 0.5) * ry - 0.5;
  const double depth = lvl.scale_fb / d;

  const int ch = lvl.ref_feat->channels();
  std::vector<double> fr(static_cast<size_t>(ch));
  for (int c = 0; c < ch; ++c) fr[size_t(c)] = bilin_channel(*lvl.ref_feat, px, py, c);

  const Vec3 dir((px + 0.5 - rc.intr.cx) / rc.intr.fx,
                 (py + 0.5 - rc.intr.cy) / rc.intr.fy, 1.0);
  const Vec3 world =
      rc.extr.R.transpose() * (dir * depth - rc.extr.t);

  std::vector<double> per_view;
  for (size_t v = 0; v < lvl.src_cams.size(); ++v) {
    const Camera& sc = lvl.src_cams[v];
    const Vec3 q = sc.extr.R * world + sc.extr.t;
    if (!(q.z() > 0)) continue;
    const double u = sc.intr.fx * q.x() / q.z() + sc.intr.cx - 0.5;
    const double w = sc.intr.fy * q.y() / q.z() + sc.intr.cy - 0.5;
    if (!(u >= 0 && u < sc.width && w >= 0 && w < sc.height)) continue;
    double dot = 0;
    for (int c = 0; c < ch; ++c)
      dot += fr[size_t(c)] * bilin_channel(*lvl.src_feats[v], u, w, c);
    per_view.push_back(-dot);
  }
  if (per_view.empty()) {
    *no_view = true;
    return kNoViewCost;
  }
  double wsum = 0, csum = 0;
  for (double c : per_view) {
    const double t = cp.delta - c;
    const double wv = 1.0 / (1.0 + std::exp(-cp.alpha * t * t * t));
    wsum += wv;
    csum += wv * c;
  }
  return csum / wsum;
}

int argmin_slice(const CostVolume& vol, int x, int y) {
  int best = 0;
  for (int i = 1; i < vol.slices; ++i)
    if (vol.cost(x, y, i) < vol.cost(x, y, best)) best = i;
  return best;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f.good()) return "<unreadable:" + p.string() + ">";
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int run_cli(const Context& ctx, const std::string& args,
            const std::string& log_name) {
  const std::string cmd = "\"" + ctx.cli + "\" " + args + " > " +
                          (ctx.root / log_name).string() + " 2>&1";
  return std::system(cmd.c_str());
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness of every differentiable primitive and path.

Outcome crit_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<GradCheckCase> cases = run_gradcheck(3, 1e-4);
  const double secs = now_minus(t0);
  double worst = 0;
  std::string worst_name;
  int failed = 0;
  for (const GradCheckCase& c : cases) {
    if (!c.pass) ++failed;
    if (c.max_rel_err > worst) {
      worst = c.max_rel_err;
      worst_name = c.name;
    }
  }
  Outcome o;
  o.pass = failed == 0 && !cases.empty() && secs < 60.0;
  o.detail = fmt("%zu cases, max rel err %.2e (%s), %.1f s (budget 60)",
                 cases.size(), worst, worst_name.c_str(), secs);
  if (failed) o.detail += fmt("; %d over 1e-4", failed);
  return o;
}

// ---------------------------------------------------------------------------
// 2. First-order propagation is exact on affine pseudo-disparity fields.

Outcome crit_propagation() {
  const OffsetSet offsets = make_offsets({1, 3});
  Rng rng(41);
  double worst = 0;
  long long checked = 0;
  for (int trial = 0; trial < 5; ++trial) {
    const double a = rng.uniform(5.0, 40.0);
    const double bx = rng.uniform(-0.8, 0.8);
    const double cy = rng.uniform(-0.8, 0.8);
    PseudoDisparityMap map;
    map.scale_fb = 30.0;
    map.values = Image2D<double>(48, 36);
    for (int y = 0; y < 36; ++y)
      for (int x = 0; x < 48; ++x) map.values.at(x, y) = a + bx * x + cy * y;

    const DepthGradient grad = depth_gradient(map);
    const HypothesisSet hyps = propagate(map, grad, offsets);
    if (hyps.k != 17)
      return {false, fmt("expected 17 offsets, got %d", hyps.k)};
    const int margin = 4;  // keeps p + offset unclamped for dilation 3
    for (int y = margin; y < 36 - margin; ++y)
      for (int x = margin; x < 48 - margin; ++x)
        for (int i = 0; i < hyps.k; ++i) {
          const double err = std::abs(hyps.at(x, y, i) - map.values.at(x, y));
          worst = std::max(worst, err);
          ++checked;
        }
  }
  Outcome o;
  o.pass = worst < 1e-9;
  o.detail = fmt("%lld candidates over 5 affine fields, max err %.2e (tol 1e-9)",
                 checked, worst);
  return o;
}

// ---------------------------------------------------------------------------
// 3. Cost volume matches a cell-by-cell oracle; interpolation matches a
//    brute-force slice scan.

Outcome crit_cost_oracle() {
  const RenderedScene scene = render(sample_scene_spec(77, 0));
  auto lv = make_level(scene, 4);
  const double dmax_pd = lv->lvl.scale_fb / scene.dmin;
  const double dmin_pd = lv->lvl.scale_fb / scene.dmax;
  CostParams cp;
  Rng rng(9);
  const CostVolume vol =
      build_full_volume(lv->lvl, dmin_pd, dmax_pd, 24, cp, rng, 1);

  Rng pick(8);
  double worst_cell = 0;
  int flag_mismatch = 0;
  for (int n = 0; n < 1000; ++n) {
    const int x = int(pick.uniform_index(uint64_t(vol.width)));
    const int y = int(pick.uniform_index(uint64_t(vol.height)));
    const int i = int(pick.uniform_index(uint64_t(vol.slices)));
    bool nv = false;
    const double want = oracle_cell(lv->lvl, vol.width, vol.height, x, y,
                                    vol.hypothesis(x, y, i), cp, &nv);
    if (nv != (vol.no_view[vol.cell(x, y, i)] != 0)) ++flag_mismatch;
    worst_cell = std::max(worst_cell, std::abs(want - double(vol.cost(x, y, i))));
  }

  double worst_interp = 0;
  for (int n = 0; n < 1000; ++n) {
    const int x = int(pick.uniform_index(uint64_t(vol.width)));
    const int y = int(pick.uniform_index(uint64_t(vol.height)));
    const double d =
        vol.d0 + vol.step * (pick.uniform(-2.0, vol.slices + 1.0));
    std::vector<double> pos(size_t(vol.slices));
    for (int i = 0; i < vol.slices; ++i) pos[size_t(i)] = vol.hypothesis(x, y, i);
    double want;
    if (d <= pos.front())
      want = vol.cost(x, y, 0);
    else if (d >= pos.back())
      want = vol.cost(x, y, vol.slices - 1);
    else {
      want = vol.cost(x, y, vol.slices - 1);
      for (int i = 0; i + 1 < vol.slices; ++i)
        if (pos[size_t(i)] <= d && d <= pos[size_t(i) + 1]) {
          const double span = pos[size_t(i) + 1] - pos[size_t(i)];
          const double t = span > 0 ? (d - pos[size_t(i)]) / span : 0.0;
          want = (1 - t) * vol.cost(x, y, i) + t * vol.cost(x, y, i + 1);
          break;
        }
    }
    worst_interp = std::max(worst_interp, std::abs(want - sample_cost(vol, x, y, d)));
  }

  Outcome o;
  o.pass = worst_cell < 1e-6 && worst_interp < 1e-6 && flag_mismatch == 0;
  o.detail = fmt("1000 cells max err %.2e, 1000 queries max err %.2e, "
                 "%d flag mismatches (tol 1e-6)",
                 worst_cell, worst_interp, flag_mismatch);
  return o;
}

// ---------------------------------------------------------------------------
// 4. Scaling the scene geometry leaves the pseudo-disparity computation
//    untouched.

Outcome crit_scale_invariance() {
  const RenderedScene scene = render(sample_scene_spec(88, 2));
  CostParams cp;

  auto build = [&](double s, std::vector<double>& hyp_out,
                   std::vector<float>& cost_out, std::vector<int>& pick_out) {
    RenderedScene copy = scene;
    for (RenderedView& v : copy.views) v.cam.extr.t *= s;
    copy.dmin *= s;
    copy.dmax *= s;
    auto lv = make_level(copy, 4);
    const double dmax_pd = lv->lvl.scale_fb / copy.dmin;
    const double dmin_pd = lv->lvl.scale_fb / copy.dmax;
    Rng rng(5);
    const CostVolume vol =
        build_full_volume(lv->lvl, dmin_pd, dmax_pd, 32, cp, rng, 1);
    hyp_out.clear();
    cost_out = vol.values;
    for (int y = 0; y < vol.height; ++y)
      for (int x = 0; x < vol.width; ++x) {
        for (int i = 0; i < vol.slices; ++i)
          hyp_out.push_back(vol.hypothesis(x, y, i));
        pick_out.push_back(argmin_slice(vol, x, y));
      }
  };

  std::vector<double> h1;
  std::vector<float> c1;
  std::vector<int> p1;
  build(1.0, h1, c1, p1);

  Outcome o;
  o.pass = true;
  for (double s : {0.1, 10.0}) {
    std::vector<double> h2;
    std::vector<float> c2;
    std::vector<int> p2;
    build(s, h2, c2, p2);
    double worst_h = 0, worst_c = 0;
    for (size_t i = 0; i < h1.size(); ++i)
      worst_h = std::max(worst_h, std::abs(h1[i] - h2[i]));
    for (size_t i = 0; i < c1.size(); ++i)
      worst_c = std::max(worst_c, std::abs(double(c1[i]) - double(c2[i])));
    int flips = 0;
    for (size_t i = 0; i < p1.size(); ++i)
      if (p1[i] != p2[i]) ++flips;
    const bool ok = worst_h < 1e-6 && worst_c < 1e-6 && flips == 0;
    o.pass = o.pass && ok;
    o.detail += fmt("%sx%g: hyp %.1e cost %.1e flips %d", o.detail.empty() ? "" : "; ",
                    s, worst_h, worst_c, flips);
  }
  o.detail += " (tol 1e-6)";
  return o;
}

// ---------------------------------------------------------------------------
// 5. With oracle scores, one stage of four iterations from the full-sweep
//    winner reaches nearly every pixel.

Outcome crit_sampling_ceiling() {
  RefineConfig cfg;
  cfg.stages = {StageConfig{4, 2, 4, 4, true}};
  cfg.n_full = 128;
  cfg.oracle_scorer = true;
  cfg.handcrafted = true;
  nn::ParamStore params;

  Outcome o;
  o.pass = true;
  double worst_pct = 100, worst_secs = 0;
  for (int i = 0; i < 4; ++i) {
    const RenderedScene scene = render(sample_scene_spec(4242, i));
    RefineInputs in = scene_inputs(scene, true);
    const auto t0 = std::chrono::steady_clock::now();
    const RefineResult res = refine(in, params, cfg, 1);
    const double secs = now_minus(t0);
    const double pct = res.iter_stats.back().pct_below_1pd;
    worst_pct = std::min(worst_pct, pct);
    worst_secs = std::max(worst_secs, secs);
    if (!(pct >= 99.0 && secs < 10.0)) o.pass = false;
  }
  o.detail = fmt("4 scenes at 160x128: min %.2f%% within 1 pd-px (need 99), "
                 "max %.1f s (budget 10)",
                 worst_pct, worst_secs);
  return o;
}

// ---------------------------------------------------------------------------
// 6 + 7. Desk-scale training lifts the winner-take-all baseline, and the
// full model beats both ablations on the held-out split.

struct SplitScore {
  double wta = 0, refined = 0;
};

SplitScore eval_split(const std::string& data_dir, const nn::ParamStore& params,
                      const RefineConfig& cfg) {
  const DatasetIndex idx = read_manifest(data_dir);
  SplitScore sc;
  for (const DatasetSceneRef& ref : idx.scenes) {
    const LoadedScene scene = load_scene(data_dir, ref);
    RefineInputs in;
    in.rig.reference = scene.cams[size_t(scene.reference)];
    for (int v = 0; v < int(scene.cams.size()); ++v) {
      if (v == scene.reference) continue;
      in.rig.sources.push_back(scene.cams[size_t(v)]);
      in.src_images.push_back(scene.images[size_t(v)]);
    }
    in.ref_image = scene.images[size_t(scene.reference)];
    in.dmin = scene.dmin;
    in.dmax = scene.dmax;
    const DepthMap& gt = scene.depths[size_t(scene.reference)];
    in.oracle_gt = &gt;

    const RefineResult res = refine(in, params, cfg, 1);
    const int f = cfg.stages.back().base_factor;
    const DepthMap gt_f = downsample_gt_nn(gt, f);
    sc.refined += pct_below_pd(res.depth, gt_f, res.pd.scale_fb, 1.0);

    const DepthMap gt_w = downsample_gt_nn(gt, res.wta_factor);
    const double b = baseline_scale(in.rig);
    const double sfb_w = in.rig.reference.intr.fx / res.wta_factor * b;
    sc.wta += pct_below_pd(res.wta_depth, gt_w, sfb_w, 1.0);
  }
  sc.wta /= double(idx.scenes.size());
  sc.refined /= double(idx.scenes.size());
  return sc;
}

nn::ParamStore train_variant(Context& ctx, const std::string& tag,
                             bool expectation, bool drop_geom, double* secs) {
  RefineConfig cfg = accept_train_config();
  cfg.expectation = expectation;
  cfg.drop_geom = drop_geom;
  nn::ParamStore params;
  Rng rng(kTrainSeed);
  init_engine_params(params, cfg, rng);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult res =
      train_loop(ctx.train_dir, params, cfg, accept_train_schedule(),
                 ctx.sub("run_" + tag), kTrainSeed, 1);
  *secs = now_minus(t0);
  if (res.diverged || res.steps_done != accept_train_schedule().steps)
    std::fprintf(stderr, "training '%s' stopped early (%d steps%s)\n",
                 tag.c_str(), res.steps_done, res.diverged ? ", diverged" : "");
  return params;
}

Outcome crit_learning_lift(Context& ctx) {
  make_dataset(ctx.train_dir, kTrainDataSeed, kTrainScenes, 1);
  make_dataset(ctx.eval_dir, kEvalDataSeed, kEvalScenes, 1);

  double secs = 0;
  const nn::ParamStore params = train_variant(ctx, "full", false, false, &secs);
  ctx.train_seconds = secs;
  ctx.train_steps = accept_train_schedule().steps;

  RefineConfig cfg = accept_train_config();
  const SplitScore sc = eval_split(ctx.eval_dir, params, cfg);
  ctx.full_pct = sc.refined;
  ctx.full_wta = sc.wta;

  Outcome o;
  const double lift = sc.refined - sc.wta;
  o.pass = lift >= 15.0 && secs < 7200.0 && ctx.train_steps <= 10000;
  o.detail = fmt("%d steps in %.0f s (budget 7200); held-out refined %.2f%% vs "
                 "wta %.2f%% -> +%.2f pp (need +15)",
                 ctx.train_steps, secs, sc.refined, sc.wta, lift);
  return o;
}

Outcome crit_ablation_ordering(Context& ctx) {
  if (ctx.full_pct < 0)
    return {false, "skipped: the fully trained model is unavailable"};

  double secs_e = 0, secs_d = 0;
  const nn::ParamStore p_exp = train_variant(ctx, "expect", true, false, &secs_e);
  const nn::ParamStore p_drop = train_variant(ctx, "dropgeom", false, true, &secs_d);

  RefineConfig cfg_e = accept_train_config();
  cfg_e.expectation = true;
  RefineConfig cfg_d = accept_train_config();
  cfg_d.drop_geom = true;

  const double pct_e = eval_split(ctx.eval_dir, p_exp, cfg_e).refined;
  const double pct_d = eval_split(ctx.eval_dir, p_drop, cfg_d).refined;

  Outcome o;
  const double m_e = ctx.full_pct - pct_e;
  const double m_d = ctx.full_pct - pct_d;
  o.pass = m_e >= 3.0 && m_d >= 3.0;
  o.detail = fmt("full %.2f%% vs expectation %.2f%% (+%.2f pp) and "
                 "drop-geom %.2f%% (+%.2f pp), need +3 each",
                 ctx.full_pct, pct_e, m_e, pct_d, m_d);
  return o;
}

// ---------------------------------------------------------------------------
// 8. Closed-form identities of the two losses.

Outcome crit_loss_identities() {
  std::vector<std::string> fails;

  // Scores over a 3x2 grid, four candidates each.
  const int W = 3, H = 2, K = 4;
  HypothesisSet hyps;
  hyps.width = W;
  hyps.height = H;
  hyps.k = K;
  hyps.scale_fb = 24.0;
  hyps.values.assign(size_t(W * H * K), 0.0);
  PseudoDisparityMap gt;
  gt.scale_fb = 24.0;
  gt.values = Image2D<double>(W, H);
  Rng rng(6);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double g = rng.uniform(8.0, 20.0);
      gt.values.at(x, y) = g;
      for (int i = 0; i < K; ++i)
        hyps.values[hyps.idx(x, y, i)] = g + rng.uniform(-0.9, 0.9);
    }
  nn::Tensor scores({K, H, W});
  for (float& v : scores.data) v = float(rng.uniform(-2.0, 2.0));

  // All candidates positive: the loss vanishes.
  const double all_pos = loss_cl(scores, hyps, gt);
  if (!(std::abs(all_pos) < 1e-9))
    fails.push_back(fmt("all-positive: %.2e", all_pos));

  // One positive among K equal scores: exactly log K.
  HypothesisSet far = hyps;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int i = 1; i < K; ++i)
        far.values[far.idx(x, y, i)] = gt.values.at(x, y) + 5.0 + i;
  nn::Tensor flat({K, H, W});
  for (float& v : flat.data) v = 0.7f;
  const double logk = loss_cl(flat, far, gt);
  if (!(std::abs(logk - std::log(double(K))) < 1e-6))
    fails.push_back(fmt("log-K: %.6f vs %.6f", logk, std::log(double(K))));

  // Per-pixel score shifts cancel.
  nn::Tensor shifted = scores;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const float d = float(40.0 * ((x + y) % 2 ? 1 : -1));
      for (int i = 0; i < K; ++i)
        shifted.data[(size_t(i) * H + y) * W + x] += d;
    }
  const double base = loss_cl(scores, far, gt);
  const double moved = loss_cl(shifted, far, gt);
  if (!(std::abs(base - moved) < 1e-6))
    fails.push_back(fmt("shift: %.2e", std::abs(base - moved)));

  // The matching loss sees only the features: after a full learned rollout
  // its gradient misses every ranker parameter.
  {
    RefineConfig cfg;
    cfg.stages = {StageConfig{8, 4, 2, 2, true}};
    cfg.n_full = 24;
    cfg.match_net.widths = {4, 6, 8, 8};
    cfg.match_net.finest_output = 4;
    cfg.match_net.out_channels = {{8, 6}, {4, 6}};
    cfg.context_net.widths = {4, 6, 8, 8};
    cfg.context_net.finest_output = 8;
    cfg.context_net.out_channels = {{8, 4}};
    cfg.context_net.l2norm_outputs = false;
    RankerConfig r;
    r.c_ctx = 6;
    r.cost_len = 6;
    r.hidden = 6;
    r.app_channels = 4;
    cfg.stage_rankers = {r};

    nn::ParamStore params;
    Rng prng(5);
    init_engine_params(params, cfg, prng);
    const RenderedScene scene = render(sample_scene_spec(55, 1));
    RefineInputs in = scene_inputs(scene, false);

    nn::TapeD tape;
    VarDict<double> vars = bind_params<double>(tape, params, true);
    nn::Var ref_var;
    std::vector<nn::Var> src_vars;
    RolloutHooks<double> hooks;
    hooks.on_features = [&](int factor, nn::Var rf,
                            const std::vector<nn::Var>& sf) {
      if (factor == 8) {
        ref_var = rf;
        src_vars = sf;
      }
    };
    refine_on_tape<double>(tape, vars, in, cfg, 1, false, &hooks);

    const double b = baseline_scale(in.rig);
    VolumeLevel lvl;
    lvl.ref_cam = scale_camera(in.rig.reference, 1.0 / 8);
    FeatureMap ref_fm{nn::Tensor(), true};
    {
      const nn::TensorD& rv = tape.val(ref_var);
      ref_fm.values = nn::Tensor(rv.shape);
      for (size_t i = 0; i < rv.data.size(); ++i)
        ref_fm.values.data[i] = float(rv.data[i]);
    }
    std::vector<FeatureMap> src_fms;
    for (nn::Var v : src_vars) {
      const nn::TensorD& sv = tape.val(v);
      FeatureMap fm{nn::Tensor(sv.shape), true};
      for (size_t i = 0; i < sv.data.size(); ++i)
        fm.values.data[i] = float(sv.data[i]);
      src_fms.push_back(std::move(fm));
    }
    lvl.ref_feat = &ref_fm;
    for (const Camera& c : in.rig.sources)
      lvl.src_cams.push_back(scale_camera(c, 1.0 / 8));
    for (const FeatureMap& fm : src_fms) lvl.src_feats.push_back(&fm);
    lvl.scale_fb = lvl.ref_cam.intr.fx * b;

    const PseudoDisparityMap gt_pd = to_pseudo_disparity(
        downsample_gt_nn(scene.views[0].depth, 8), lvl.scale_fb, 1.0);
    double glo = 1e30, ghi = -1e30;
    for (double v : gt_pd.values.raw())
      if (is_valid(v)) {
        glo = std::min(glo, v);
        ghi = std::max(ghi, v);
      }
    CostParams cp;
    Rng vrng(3);
    const CostVolume vol = build_full_volume(
        lvl, std::max(0.4, glo - 4.0), ghi + 4.0, 12, cp, vrng, 1);
    int sup = 0;
    nn::Var fm_loss = loss_fm_tape<double>(tape, vol, lvl, ref_var, src_vars,
                                           cp, gt_pd, 0.0, 1.0, &sup);
    if (sup == 0) {
      fails.push_back("matching loss had no supervised pixels");
    } else {
      tape.backward(fm_loss);
      bool ranker_clean = true, match_reached = false;
      for (const std::string& name : params.names()) {
        const nn::TensorD& g = tape.grad(vars.at(name));
        const bool touched = [&] {
          for (double x : g.data)
            if (x != 0.0) return true;
          return false;
        }();
        if (name.rfind("s0.", 0) == 0 && touched) ranker_clean = false;
        if (name.rfind("match.", 0) == 0 && touched) match_reached = true;
      }
      if (!ranker_clean) fails.push_back("ranker params received gradient");
      if (!match_reached) fails.push_back("matching params got no gradient");
    }
  }

  Outcome o;
  o.pass = fails.empty();
  if (o.pass)
    o.detail = "all-positive 0, one-positive log K, shift invariant, "
               "matching-loss gradient skips the ranker";
  else
    for (const std::string& f : fails)
      o.detail += (o.detail.empty() ? "" : "; ") + f;
  return o;
}

// ---------------------------------------------------------------------------
// 9. The CLI is bit-deterministic for refine and train at --threads 1.

Outcome crit_determinism(Context& ctx) {
  const std::string data = ctx.sub("d9");
  make_dataset(data, 33, 1, 1);
  const std::string scene_name = read_manifest(data).scenes[0].name;

  RefineConfig cfg;
  cfg.stages = {StageConfig{8, 4, 2, 2, true}};
  cfg.n_full = 24;
  cfg.match_net.widths = {4, 6, 8, 8};
  cfg.match_net.finest_output = 4;
  cfg.match_net.out_channels = {{8, 6}, {4, 6}};
  cfg.context_net.widths = {4, 6, 8, 8};
  cfg.context_net.finest_output = 8;
  cfg.context_net.out_channels = {{8, 4}};
  cfg.context_net.l2norm_outputs = false;
  RankerConfig r;
  r.c_ctx = 6;
  r.cost_len = 6;
  r.hidden = 6;
  r.app_channels = 4;
  cfg.stage_rankers = {r};
  TrainConfig tc;
  tc.steps = 2;
  tc.crop_width = 48;
  tc.crop_height = 32;
  tc.random_sources = 1;
  tc.checkpoint_every = 0;
  save_run_config((ctx.root / "cfg9.json").string(), cfg, &tc);

  nn::ParamStore params;
  Rng rng(5);
  init_engine_params(params, cfg, rng);
  nn::save_weights((ctx.root / "w9.chsn").string(), params);

  std::vector<std::string> fails;
  const std::string common = "--data " + data + " --config " +
                             (ctx.root / "cfg9.json").string() +
                             " --threads 1";

  for (int run = 0; run < 2; ++run) {
    const std::string out = ctx.sub("r9_" + std::to_string(run));
    const int rc = run_cli(ctx,
                           "refine " + common + " --scene " + scene_name +
                               " --weights " + (ctx.root / "w9.chsn").string() +
                               " --seed 7 --out " + out,
                           "refine9_" + std::to_string(run) + ".log");
    if (rc != 0) fails.push_back(fmt("refine run %d exited %d", run, rc));
  }
  const std::string d0 = read_bytes(ctx.root / "r9_0" / "depth.pfm");
  const std::string d1 = read_bytes(ctx.root / "r9_1" / "depth.pfm");
  const std::string n0 = read_bytes(ctx.root / "r9_0" / "normals.ppm");
  const std::string n1 = read_bytes(ctx.root / "r9_1" / "normals.ppm");
  if (d0 != d1 || d0.empty()) fails.push_back("refine depth maps differ");
  if (n0 != n1) fails.push_back("refine normal maps differ");

  for (int run = 0; run < 2; ++run) {
    const std::string out = ctx.sub("t9_" + std::to_string(run));
    const int rc = run_cli(ctx,
                           "train " + common + " --out " + out +
                               " --seed 9 --log-every 0",
                           "train9_" + std::to_string(run) + ".log");
    if (rc != 0) fails.push_back(fmt("train run %d exited %d", run, rc));
  }
  const std::string w0 = read_bytes(ctx.root / "t9_0" / "weights.chsn");
  const std::string w1 = read_bytes(ctx.root / "t9_1" / "weights.chsn");
  if (w0 != w1 || w0.empty()) fails.push_back("trained weights differ");

  Outcome o;
  o.pass = fails.empty();
  if (o.pass)
    o.detail = fmt("refine outputs (%zu B) and trained weights (%zu B) "
                   "byte-identical across two runs",
                   d0.size() + n0.size(), w0.size());
  else
    for (const std::string& f : fails)
      o.detail += (o.detail.empty() ? "" : "; ") + f;
  return o;
}

// ---------------------------------------------------------------------------
// 10. Metric self-consistency and analytic normals.

Outcome crit_metrics() {
  Camera cam = {};
  cam.width = 64;
  cam.height = 48;
  cam.intr = {150.0, 150.0, 32.0, 24.0};
  cam.extr.R = Mat3::Identity();
  cam.extr.t = Vec3::Zero();

  const Vec3 n = Vec3(0.35, -0.2, -0.91).normalized();
  const Vec3 anchor(0, 0, 2);
  DepthMap plane;
  plane.values = Image2D<double>(cam.width, cam.height);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const Vec3 dir((x + 0.5 - cam.intr.cx) / cam.intr.fx,
                     (y + 0.5 - cam.intr.cy) / cam.intr.fy, 1.0);
      plane.values.at(x, y) = n.dot(anchor) / n.dot(dir);
    }

  std::vector<std::string> fails;
  const MetricReport rep = evaluate(plane, plane, cam, 24.0);
  for (const auto& [x, pct] : rep.pct_below_mm)
    if (pct != 100.0) fails.push_back(fmt("pct_below(%g mm) = %f", x, pct));
  for (const auto& [x, mae] : rep.mae_at_mm)
    if (mae != 0.0) fails.push_back(fmt("mae_at(%g mm) = %f", x, mae));
  for (const auto& [key, pct] : rep.normal_pct)
    if (pct != 100.0)
      fails.push_back(fmt("normal_pct(%g deg) = %f", key.first, pct));

  const Image2D<Vec3> normals = normals_from_points(depth_to_points(plane, cam));
  double worst_deg = 0;
  for (int y = 1; y < cam.height - 1; ++y)
    for (int x = 1; x < cam.width - 1; ++x) {
      if (!is_valid_point(normals.at(x, y))) {
        fails.push_back(fmt("invalid normal at %d,%d", x, y));
        continue;
      }
      const double c = std::abs(normals.at(x, y).dot(n));
      const double deg = std::acos(std::clamp(c, -1.0, 1.0)) * 180.0 / M_PI;
      worst_deg = std::max(worst_deg, deg);
    }
  if (!(worst_deg < 0.1))
    fails.push_back(fmt("tilted-plane normal off by %.4f deg", worst_deg));

  Outcome o;
  o.pass = fails.empty();
  if (o.pass)
    o.detail = fmt("self-eval 100/0/100 at every threshold; tilted-plane "
                   "normals within %.4f deg (tol 0.1)",
                   worst_deg);
  else
    for (size_t i = 0; i < fails.size() && i < 3; ++i)
      o.detail += (o.detail.empty() ? "" : "; ") + fails[i];
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: acceptance <path-to-mvsr-cli>\n");
    return 2;
  }

  Context ctx;
  ctx.cli = argv[1];
  ctx.root = fs::temp_directory_path() /
             ("mvsr_accept_" + std::to_string(uint64_t(
                                   std::chrono::steady_clock::now()
                                       .time_since_epoch()
                                       .count())));
  fs::create_directories(ctx.root);
  ctx.train_dir = ctx.sub("train_split");
  ctx.eval_dir = ctx.sub("eval_split");

  struct Item {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Item> items = {
      {"gradient correctness", [] { return crit_gradients(); }},
      {"propagation exactness", [] { return crit_propagation(); }},
      {"cost-volume oracle", [] { return crit_cost_oracle(); }},
      {"scale invariance", [] { return crit_scale_invariance(); }},
      {"sampling ceiling", [] { return crit_sampling_ceiling(); }},
      {"learning lift", [&] { return crit_learning_lift(ctx); }},
      {"ablation ordering", [&] { return crit_ablation_ordering(ctx); }},
      {"loss identities", [] { return crit_loss_identities(); }},
      {"determinism", [&] { return crit_determinism(ctx); }},
      {"metric consistency", [] { return crit_metrics(); }},
  };

  int passed = 0;
  for (size_t i = 0; i < items.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = items[i].run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    passed += o.pass ? 1 : 0;
    std::printf("[%2zu/10] %s  %-22s %s  (%.1f s)\n", i + 1,
                o.pass ? "PASS" : "FAIL", items[i].name, o.detail.c_str(),
                now_minus(t0));
    std::fflush(stdout);
  }

  std::printf("acceptance: %d/10 criteria passed\n", passed);
  std::error_code ec;
  fs::remove_all(ctx.root, ec);
  return passed == int(items.size()) ? 0 : 1;
}
