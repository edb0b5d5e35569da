#include "mvsr/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "mvsr/metrics.hpp"

namespace mvsr {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

nn::Tensor to_float_tensor(const nn::TensorT<float>& t) { return t; }

nn::Tensor to_float_tensor(const nn::TensorT<double>& t) {
  return t.template cast<float>();
}

// Per-level cameras and off-tape feature copies used by volume building.
struct LevelAssets {
  Camera ref_cam;
  std::vector<Camera> src_cams;
  FeatureMap ref_feat;
  std::vector<FeatureMap> src_feats;
  double scale_fb = 0;

  VolumeLevel volume_level() const {
    VolumeLevel lvl;
    lvl.ref_cam = ref_cam;
    lvl.ref_feat = &ref_feat;
    lvl.src_cams = src_cams;
    for (const FeatureMap& f : src_feats) lvl.src_feats.push_back(&f);
    lvl.scale_fb = scale_fb;
    return lvl;
  }
};

std::set<int> needed_levels(const RefineConfig& cfg) {
  std::set<int> levels;
  for (const StageConfig& s : cfg.stages) {
    levels.insert(s.base_factor);
    if (s.pyramid) levels.insert(s.fine_factor);
  }
  return levels;
}

double pct1pd(const PseudoDisparityMap& pred, const PseudoDisparityMap& gt) {
  long long valid = 0, good = 0;
  for (int y = 0; y < gt.values.height(); ++y)
    for (int x = 0; x < gt.values.width(); ++x) {
      const double g = gt.values.at(x, y);
      if (!is_valid(g)) continue;
      ++valid;
      if (std::abs(pred.values.at(x, y) - g) < 1.0) ++good;
    }
  return valid ? 100.0 * double(good) / double(valid) : kInvalid;
}

}  // namespace

RefineConfig RefineConfig::desk_default() {
  RefineConfig cfg;
  cfg.stages = {StageConfig{8, 4, 4, 4, true}, StageConfig{4, 2, 4, 4, true}};
  cfg.match_net = desk_match_config();
  cfg.context_net = desk_context_config();
  RankerConfig r0;
  r0.c_ctx = 16;
  r0.cost_len = 6;
  r0.hidden = 16;
  r0.app_channels = cfg.context_net.out_channels.at(8);
  RankerConfig r1 = r0;
  r1.c_ctx = 12;
  r1.app_channels = cfg.context_net.out_channels.at(4);
  cfg.stage_rankers = {r0, r1};
  return cfg;
}

RefineConfig RefineConfig::paper_default() {
  RefineConfig cfg;
  cfg.stages = {StageConfig{8, 4, 4, 4, true}, StageConfig{4, 2, 4, 4, true},
                StageConfig{4, 1, 4, 4, true}};
  cfg.match_net = paper_match_config();
  cfg.context_net = paper_context_config();
  RankerConfig r0;
  r0.c_ctx = 64;
  r0.cost_len = 6;
  r0.hidden = 64;
  r0.app_channels = cfg.context_net.out_channels.at(8);
  RankerConfig r1 = r0;
  r1.c_ctx = 48;
  r1.app_channels = cfg.context_net.out_channels.at(4);
  cfg.stage_rankers = {r0, r1, r1};
  return cfg;
}

void validate_config(const RefineConfig& cfg) {
  check(!cfg.stages.empty(), "config: no stages");
  check(cfg.n_full >= 2, "config: full sweep needs >= 2 slices");
  const bool learned_scoring = !cfg.oracle_scorer;
  if (learned_scoring)
    check(cfg.stage_rankers.size() == cfg.stages.size(),
          "config: stage_rankers must match stages");
  for (size_t s = 0; s < cfg.stages.size(); ++s) {
    const StageConfig& st = cfg.stages[s];
    check(st.base_factor >= 1 && st.fine_factor >= 1,
          "config: non-positive scale factor");
    check(st.m >= 1, "config: local half-range must be >= 1");
    check(st.iterations >= 0, "config: negative iteration count");
    if (st.pyramid) {
      check(st.fine_factor <= st.base_factor &&
                st.base_factor % st.fine_factor == 0,
            "config: fine scale must refine the base scale");
    }
    if (s > 0)
      check(cfg.stages[s - 1].base_factor % st.base_factor == 0,
            "config: stage resolutions must upsample by integer factors");
    if (learned_scoring) {
      const RankerConfig& r = cfg.stage_rankers[s];
      check(r.cost_len == (st.pyramid ? 6 : 3),
            "config: ranker cost_len disagrees with pyramid flag");
      check(r.app_channels == cfg.context_net.head_channels(st.base_factor),
            "config: context channels disagree with ranker input");
    }
  }
  if (!cfg.handcrafted && !cfg.oracle_scorer) {
    const std::vector<int> emitted = cfg.match_net.emitted_levels();
    for (int lvl : needed_levels(cfg))
      check(std::count(emitted.begin(), emitted.end(), lvl) == 1,
            "config: matching net does not emit level 1/" +
                std::to_string(lvl));
  }
}

void init_engine_params(nn::ParamStore& params, const RefineConfig& cfg,
                        Rng& rng) {
  validate_config(cfg);
  if (cfg.oracle_scorer) return;
  if (!cfg.handcrafted) init_unet_params(params, "match.", cfg.match_net, 1, rng);
  init_unet_params(params, "ctx.", cfg.context_net, 1, rng);
  for (size_t s = 0; s < cfg.stages.size(); ++s)
    init_stage_params(params, "s" + std::to_string(s) + ".",
                      cfg.stage_rankers[s], rng);
}

void validate_params(const nn::ParamStore& params, const RefineConfig& cfg) {
  validate_config(cfg);
  if (cfg.oracle_scorer) return;
  if (!cfg.handcrafted)
    check(params.has("match.enc1.a.w"), "params: matching net weights missing");
  check(params.has("ctx.enc1.a.w"), "params: context net weights missing");
  for (size_t s = 0; s < cfg.stages.size(); ++s) {
    const std::string p = "s" + std::to_string(s) + ".";
    check(params.has(p + "mlp.0.w") && params.has(p + "gruF.z.w") &&
              params.has(p + "ci.0.w"),
          "params: stage " + std::to_string(s) + " weights missing");
    const nn::Tensor& w0 = params.get(p + "mlp.0.w");
    check(w0.dim(1) == cfg.stage_rankers[s].feature_len(),
          "params: stage " + std::to_string(s) +
              " score input width disagrees with config");
    const nn::Tensor& ci = params.get(p + "ci.0.w");
    check(ci.dim(1) == cfg.stage_rankers[s].init_input_len(),
          "params: stage " + std::to_string(s) +
              " context init width disagrees with config");
  }
}

DepthMap nn_upsample(const DepthMap& depth, int factor) {
  check(factor >= 1, "nn_upsample: non-positive factor");
  if (factor == 1) return depth;
  const int w = depth.values.width(), h = depth.values.height();
  DepthMap out;
  out.values = Image2D<double>(w * factor, h * factor);
  for (int y = 0; y < h * factor; ++y)
    for (int x = 0; x < w * factor; ++x)
      out.values.at(x, y) = depth.values.at(x / factor, y / factor);
  return out;
}

template <typename T>
RefineResult refine_on_tape(nn::TapeT<T>& tape, const VarDict<T>& params,
                            const RefineInputs& in, const RefineConfig& cfg,
                            int threads, bool economize_tape,
                            RolloutHooks<T>* hooks) {
  validate_config(cfg);
  check(!(hooks && economize_tape),
        "refine: hooks require the full tape to be kept");
  check(!in.src_images.empty() &&
            in.src_images.size() == in.rig.sources.size(),
        "refine: source images do not match rig");
  check(in.ref_image.width() == in.rig.reference.width &&
            in.ref_image.height() == in.rig.reference.height,
        "refine: reference image size mismatch");
  check(in.dmin > 0 && in.dmax > in.dmin, "refine: bad depth range");
  if (cfg.oracle_scorer)
    check(in.oracle_gt != nullptr, "refine: oracle scorer needs GT");
  validate_camera(in.rig.reference);
  for (const Camera& c : in.rig.sources) validate_camera(c);

  const double b = baseline_scale(in.rig);
  const std::set<int> levels = needed_levels(cfg);
  for (int lvl : levels)
    check(in.ref_image.width() % lvl == 0 && in.ref_image.height() % lvl == 0,
          "refine: image dims not divisible by level 1/" + std::to_string(lvl));

  const bool learned_scoring = !cfg.oracle_scorer;
  const bool learned_match = !cfg.handcrafted && !cfg.oracle_scorer;

  // ---- feature extraction -------------------------------------------------
  std::map<int, LevelAssets> assets;
  for (int lvl : levels) {
    LevelAssets& a = assets[lvl];
    a.ref_cam = scale_camera(in.rig.reference, 1.0 / lvl);
    for (const Camera& c : in.rig.sources)
      a.src_cams.push_back(scale_camera(c, 1.0 / lvl));
    a.scale_fb = a.ref_cam.intr.fx * b;
  }

  const size_t entry_mark = tape.mark();
  std::map<int, nn::Var> appearance;  // per stage base level

  if (learned_match || learned_scoring) {
    check(in.ref_image.width() % 8 == 0 && in.ref_image.height() % 8 == 0,
          "refine: reference image dims not divisible by 8");
    for (const GrayImage& img : in.src_images)
      check(img.width() % 8 == 0 && img.height() % 8 == 0,
            "refine: source image dims not divisible by 8");
  }
  if (learned_match) {
    auto run_match = [&](const GrayImage& img) {
      nn::Var x = tape.constant(image_to_tensor(img).template cast<T>());
      return unet_forward(tape, params, "match.", cfg.match_net, x);
    };
    std::map<int, nn::Var> ref_out = run_match(in.ref_image);
    std::vector<std::map<int, nn::Var>> src_out;
    for (const GrayImage& img : in.src_images) src_out.push_back(run_match(img));
    for (int lvl : levels) {
      LevelAssets& a = assets[lvl];
      a.ref_feat.values = to_float_tensor(tape.val(ref_out.at(lvl)));
      a.ref_feat.unit_norm = cfg.match_net.l2norm_outputs;
      for (size_t v = 0; v < src_out.size(); ++v) {
        FeatureMap fm;
        fm.values = to_float_tensor(tape.val(src_out[v].at(lvl)));
        fm.unit_norm = cfg.match_net.l2norm_outputs;
        a.src_feats.push_back(std::move(fm));
      }
      if (hooks && hooks->on_features) {
        std::vector<nn::Var> srcs;
        for (auto& m : src_out) srcs.push_back(m.at(lvl));
        hooks->on_features(lvl, ref_out.at(lvl), srcs);
      }
    }
  } else {
    FeaturePyramid ref_pyr = extract_handcrafted(in.ref_image);
    std::vector<FeaturePyramid> src_pyrs;
    for (const GrayImage& img : in.src_images)
      src_pyrs.push_back(extract_handcrafted(img));
    for (int lvl : levels) {
      LevelAssets& a = assets[lvl];
      a.ref_feat = ref_pyr.level(lvl);
      for (const FeaturePyramid& p : src_pyrs)
        a.src_feats.push_back(p.level(lvl));
    }
  }

  if (learned_scoring) {
    nn::Var x = tape.constant(image_to_tensor(in.ref_image).template cast<T>());
    std::map<int, nn::Var> ctx_out =
        unet_forward(tape, params, "ctx.", cfg.context_net, x);
    for (const StageConfig& st : cfg.stages)
      appearance[st.base_factor] = ctx_out.at(st.base_factor);
  }

  size_t base_mark = tape.mark();
  if (economize_tape) {
    // Keep only the appearance maps; everything upstream is re-pushed as
    // constants so the tape stays flat across iterations.
    std::map<int, nn::TensorT<T>> app_vals;
    for (auto& [lvl, v] : appearance) app_vals[lvl] = tape.val(v);
    tape.rewind(entry_mark);
    appearance.clear();
    for (auto& [lvl, t] : app_vals)
      appearance[lvl] = tape.constant(std::move(t));
    base_mark = tape.mark();
  }
  auto compact = [&](nn::Var& v) {
    if (!economize_tape) return;
    nn::TensorT<T> val = tape.val(v);
    tape.rewind(base_mark);
    v = tape.constant(std::move(val));
  };

  RefineResult result;
  Rng rng(cfg.seed);
  Rng rng_jit = rng.fork(1);
  Rng rng_hyp = rng.fork(2);

  // ---- bootstrap: full sweep + WTA ---------------------------------------
  const int f0 = cfg.stages[0].base_factor;
  auto t0 = std::chrono::steady_clock::now();
  PseudoDisparityMap d_hat;
  {
    const LevelAssets& a = assets.at(f0);
    VolumeLevel lvl = a.volume_level();
    const double dmin_pd = a.scale_fb / in.dmax;
    const double dmax_pd = a.scale_fb / in.dmin;
    CostVolume full = build_full_volume(lvl, dmin_pd, dmax_pd, cfg.n_full,
                                        cfg.cost, rng_jit, threads);
    result.full_step_pd = full.step;
    d_hat = winner_take_all(full);
  }
  result.wta_seconds = seconds_since(t0);
  result.wta_depth = to_metric_depth(d_hat);
  result.wta_factor = f0;

  // ---- stages -------------------------------------------------------------
  for (size_t s = 0; s < cfg.stages.size(); ++s) {
    const StageConfig& st = cfg.stages[s];
    auto stage_t0 = std::chrono::steady_clock::now();
    const LevelAssets& base = assets.at(st.base_factor);

    if (s > 0) {
      const int ratio = cfg.stages[s - 1].base_factor / st.base_factor;
      DepthMap metric = to_metric_depth(d_hat);
      metric = nn_upsample(metric, ratio);
      d_hat = to_pseudo_disparity(metric, base.ref_cam.intr.fx, b);
    }

    PseudoDisparityMap gt_pd;
    const bool have_gt = in.oracle_gt != nullptr;
    if (have_gt) {
      DepthMap gt_level = downsample_gt_nn(*in.oracle_gt, st.base_factor);
      gt_pd = to_pseudo_disparity(gt_level, base.ref_cam.intr.fx, b);
    }

    if (st.iterations == 0) {
      StageSnapshot snap;
      snap.depth = to_metric_depth(d_hat);
      snap.pd = d_hat;
      snap.base_factor = st.base_factor;
      snap.seconds = seconds_since(stage_t0);
      result.stages.push_back(std::move(snap));
      continue;
    }

    VolumeLevel base_lvl = base.volume_level();
    VolumeLevel fine_lvl;
    const VolumeLevel* fine_ptr = nullptr;
    if (st.pyramid) {
      fine_lvl = assets.at(st.fine_factor).volume_level();
      fine_ptr = &fine_lvl;
    }
    const double fallback =
        0.5 * (base.scale_fb / in.dmax + base.scale_fb / in.dmin);

    // Entering a stage the estimate snaps to the local argmin; afterwards
    // only ranked selection moves it. The pyramid is then recentered there.
    CostVolumePyramid pyr = build_pyramid(base_lvl, fine_ptr, d_hat, fallback,
                                          st.m, cfg.cost, rng_jit, threads);
    d_hat = winner_take_all(pyr.coarse);
    pyr = build_pyramid(base_lvl, fine_ptr, d_hat, fallback, st.m, cfg.cost,
                        rng_jit, threads);

    const std::string prefix = "s" + std::to_string(s) + ".";
    RankerConfig rcfg = learned_scoring ? cfg.stage_rankers[s] : RankerConfig{};
    rcfg.drop_geom = rcfg.drop_geom || cfg.drop_geom;
    nn::Var ctx;
    if (learned_scoring) {
      DepthGradient grad0 = depth_gradient(d_hat);
      nn::Tensor est = estimate_input_maps(pyr, d_hat, grad0, rcfg.drop_geom);
      nn::Var est_var = tape.constant(est.template cast<T>());
      ctx = init_context(tape, params, prefix, rcfg, est_var,
                         appearance.at(st.base_factor));
      compact(ctx);
    }

    const OffsetSet offsets = make_offsets({1, 3});
    for (int t = 0; t < st.iterations; ++t) {
      const bool spatial = (t % 2) == 1;
      DepthGradient grad = depth_gradient(d_hat);
      HypothesisSet hyps = spatial ? propagate(d_hat, grad, offsets)
                                   : initial_set(d_hat, st.m, rng_hyp);

      nn::Tensor scores;
      if (cfg.oracle_scorer) {
        scores = nn::Tensor::zeros({hyps.k, hyps.height, hyps.width});
        const size_t plane = size_t(hyps.width) * hyps.height;
        for (int y = 0; y < hyps.height; ++y)
          for (int x = 0; x < hyps.width; ++x) {
            const double g = gt_pd.values.at(x, y);
            const double ref =
                is_valid(g) ? g : d_hat.values.at(x, y);
            const size_t px = size_t(y) * hyps.width + x;
            for (int i = 0; i < hyps.k; ++i)
              scores.data[i * plane + px] =
                  float(-std::abs(hyps.at(x, y, i) - ref));
          }
      } else {
        nn::Var score_var = score_all_candidates(tape, params, prefix, rcfg,
                                                 pyr, d_hat, grad, hyps, ctx);
        if (hooks && hooks->on_scores)
          hooks->on_scores(int(s), t, spatial, score_var, hyps, base.scale_fb);
        scores = to_float_tensor(tape.val(score_var));
      }

      d_hat = cfg.expectation ? expectation_refine(hyps, scores)
                              : select_best(hyps, scores);

      IterStat stat;
      stat.stage = int(s);
      stat.iter = t;
      stat.spatial = spatial;
      if (have_gt) stat.pct_below_1pd = pct1pd(d_hat, gt_pd);
      result.iter_stats.push_back(stat);

      const bool last = t + 1 == st.iterations;
      if (!last) {
        pyr = build_pyramid(base_lvl, fine_ptr, d_hat, fallback, st.m,
                            cfg.cost, rng_jit, threads);
        if (learned_scoring) {
          DepthGradient grad2 = depth_gradient(d_hat);
          nn::Tensor est = estimate_input_maps(pyr, d_hat, grad2,
                                               rcfg.drop_geom);
          nn::Var est_var = tape.constant(est.template cast<T>());
          ctx = update_context(tape, params, prefix, rcfg, ctx, est_var);
          compact(ctx);
        }
      }
    }

    StageSnapshot snap;
    snap.depth = to_metric_depth(d_hat);
    snap.pd = d_hat;
    snap.base_factor = st.base_factor;
    snap.seconds = seconds_since(stage_t0);
    result.stages.push_back(std::move(snap));
  }

  result.pd = d_hat;
  result.depth = to_metric_depth(d_hat);
  return result;
}

RefineResult refine(const RefineInputs& in, const nn::ParamStore& params,
                    const RefineConfig& cfg, int threads) {
  validate_params(params, cfg);
  nn::Tape tape;
  VarDict<float> vars = bind_params<float>(tape, params, false);
  return refine_on_tape<float>(tape, vars, in, cfg, threads, true, nullptr);
}

template RefineResult refine_on_tape<float>(nn::TapeT<float>&,
                                            const VarDict<float>&,
                                            const RefineInputs&,
                                            const RefineConfig&, int, bool,
                                            RolloutHooks<float>*);
template RefineResult refine_on_tape<double>(nn::TapeT<double>&,
                                             const VarDict<double>&,
                                             const RefineInputs&,
                                             const RefineConfig&, int, bool,
                                             RolloutHooks<double>*);

}  // namespace mvsr
