#include "mvsr/train.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

#include "mvsr/metrics.hpp"
#include "mvsr/nn/weights_io.hpp"

namespace mvsr {

namespace {

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

bool all_finite(const nn::Tensor& t) {
  for (float v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

TrainSample make_train_sample(const LoadedScene& scene, const TrainConfig& tcfg,
                              Rng& rng) {
  const int ref = scene.reference;
  const Camera& rc = scene.cams[static_cast<size_t>(ref)];
  const int cw = tcfg.crop_width, ch = tcfg.crop_height;
  check(cw > 0 && ch > 0 && cw <= rc.width && ch <= rc.height,
        "train: crop larger than the reference frame");

  TrainSample s;
  s.x0 = static_cast<int>(rng.uniform_index(uint64_t(rc.width - cw + 1)));
  s.y0 = static_cast<int>(rng.uniform_index(uint64_t(rc.height - ch + 1)));

  GrayImage img(cw, ch);
  DepthMap gt;
  gt.values = Image2D<double>(cw, ch);
  const GrayImage& full = scene.images[static_cast<size_t>(ref)];
  const DepthMap& full_gt = scene.depths[static_cast<size_t>(ref)];
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x) {
      img.at(x, y) = full.at(s.x0 + x, s.y0 + y);
      gt.values.at(x, y) = full_gt.values.at(s.x0 + x, s.y0 + y);
    }

  Camera cam = rc;
  cam.width = cw;
  cam.height = ch;
  cam.intr.cx -= s.x0;
  cam.intr.cy -= s.y0;

  // The closest source fixes the baseline scale; the rest of the subset is
  // drawn without replacement.
  const Vec3 c0 = camera_center(rc.extr);
  int closest = -1;
  double best = 0;
  std::vector<int> others;
  for (int v = 0; v < static_cast<int>(scene.cams.size()); ++v) {
    if (v == ref) continue;
    const double d = (camera_center(scene.cams[static_cast<size_t>(v)].extr) - c0).norm();
    if (closest < 0 || d < best) {
      if (closest >= 0) others.push_back(closest);
      closest = v;
      best = d;
    } else {
      others.push_back(v);
    }
  }
  check(closest >= 0, "train: scene has no source views");
  s.source_views.push_back(closest);
  std::sort(others.begin(), others.end());
  for (int k = 0; k < tcfg.random_sources && !others.empty(); ++k) {
    const size_t i = rng.uniform_index(others.size());
    s.source_views.push_back(others[i]);
    others.erase(others.begin() + static_cast<long>(i));
  }

  s.inputs.rig.reference = cam;
  for (int v : s.source_views) {
    s.inputs.rig.sources.push_back(scene.cams[static_cast<size_t>(v)]);
    s.inputs.src_images.push_back(scene.images[static_cast<size_t>(v)]);
  }
  s.inputs.ref_image = std::move(img);
  s.inputs.dmin = scene.dmin;
  s.inputs.dmax = scene.dmax;
  s.gt_crop = std::move(gt);
  return s;
}

TrainResult train_loop(const std::string& data_dir, nn::ParamStore& params,
                       const RefineConfig& refine_cfg, const TrainConfig& tcfg,
                       const std::string& out_dir, uint64_t seed, int threads,
                       const std::function<void(const TrainStepStats&)>& on_step) {
  const DatasetIndex index = read_manifest(data_dir);
  check(!index.scenes.empty(), "train: dataset is empty");
  validate_config(refine_cfg);
  validate_params(params, refine_cfg);
  check(!refine_cfg.oracle_scorer, "train: oracle scorer is not trainable");

  std::filesystem::create_directories(out_dir);
  save_run_config(out_dir + "/config.json", refine_cfg, &tcfg);
  std::ofstream log(out_dir + "/loss_log.csv");
  check(log.good(), "train: cannot write loss log in " + out_dir);
  log << "step,scene,loss_total,loss_fm,loss_cl,fm_pixels,cl_passes,"
         "grad_norm,seconds\n";

  nn::Adam opt(params, {tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.eps});
  const Rng master(seed);
  std::vector<std::optional<LoadedScene>> cache(index.scenes.size());

  TrainResult res;
  for (int step = 0; step < tcfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng = master.fork(0x57e9 + static_cast<uint64_t>(step));
    const int scene_i =
        static_cast<int>(rng.uniform_index(index.scenes.size()));
    auto& slot = cache[static_cast<size_t>(scene_i)];
    if (!slot)
      slot = load_scene(data_dir, index.scenes[static_cast<size_t>(scene_i)]);

    Rng rng_crop = rng.fork(1);
    TrainSample sample = make_train_sample(*slot, tcfg, rng_crop);

    RefineConfig cfg = refine_cfg;
    cfg.seed = rng.fork(2).next_u64();

    nn::Tape tape;
    VarDict<float> pvars = bind_params(tape, params, true);

    struct LevelCapture {
      nn::Var ref;
      std::vector<nn::Var> srcs;
    };
    std::map<int, LevelCapture> feats;
    std::vector<nn::Var> sel_terms;
    std::map<int, PseudoDisparityMap> gt_pd_by_stage;

    RolloutHooks<float> hooks;
    hooks.on_features = [&](int factor, nn::Var ref_feat,
                            const std::vector<nn::Var>& src_feats) {
      feats[factor] = LevelCapture{ref_feat, src_feats};
    };
    hooks.on_scores = [&](int stage, int, bool, nn::Var scores,
                          const HypothesisSet& hyps, double scale_fb) {
      auto it = gt_pd_by_stage.find(stage);
      if (it == gt_pd_by_stage.end()) {
        const int factor = cfg.stages[static_cast<size_t>(stage)].base_factor;
        DepthMap gt_l = downsample_gt_nn(sample.gt_crop, factor);
        it = gt_pd_by_stage
                 .emplace(stage, to_pseudo_disparity(gt_l, scale_fb, 1.0))
                 .first;
      }
      int sup = 0;
      nn::Var term =
          cfg.expectation
              ? loss_expectation_tape(tape, scores, hyps, it->second, &sup)
              : loss_cl_tape(tape, scores, hyps, it->second, &sup);
      if (sup > 0) sel_terms.push_back(term);
    };

    refine_on_tape<float>(tape, pvars, sample.inputs, cfg, threads,
                          /*economize_tape=*/false, &hooks);

    // Feature-matching supervision: a fresh full sweep per captured level,
    // re-evaluated differentiably at the cells the loss selects.
    const double b = baseline_scale(sample.inputs.rig);
    int finest = 0;
    for (const auto& [factor, cap] : feats)
      if (finest == 0 || factor < finest) finest = factor;
    Rng rng_vol = rng.fork(3);
    std::vector<nn::Var> fm_terms;
    int fm_pixels = 0;
    for (const auto& [factor, cap] : feats) {
      FeatureMap ref_fm{tape.val(cap.ref), cfg.match_net.l2norm_outputs};
      std::vector<FeatureMap> src_fms;
      for (nn::Var v : cap.srcs)
        src_fms.push_back({tape.val(v), cfg.match_net.l2norm_outputs});

      VolumeLevel lvl;
      lvl.ref_cam = scale_camera(sample.inputs.rig.reference, 1.0 / factor);
      for (const Camera& c : sample.inputs.rig.sources)
        lvl.src_cams.push_back(scale_camera(c, 1.0 / factor));
      lvl.ref_feat = &ref_fm;
      for (const FeatureMap& fm : src_fms) lvl.src_feats.push_back(&fm);
      lvl.scale_fb = lvl.ref_cam.intr.fx * b;

      const double dmax_pd = lvl.scale_fb / sample.inputs.dmin;
      const double dmin_pd = lvl.scale_fb / sample.inputs.dmax;
      CostVolume vol = build_full_volume(lvl, dmin_pd, dmax_pd, cfg.n_full,
                                         cfg.cost, rng_vol, threads);
      DepthMap gt_l = downsample_gt_nn(sample.gt_crop, factor);
      PseudoDisparityMap gt_pd = to_pseudo_disparity(gt_l, lvl.scale_fb, 1.0);

      const double beta =
          factor == finest ? tcfg.fm_beta_finest : tcfg.fm_beta;
      int sup = 0;
      nn::Var term = loss_fm_tape(tape, vol, lvl, cap.ref, cap.srcs, cfg.cost,
                                  gt_pd, tcfg.fm_alpha, beta, &sup);
      if (sup > 0) {
        fm_terms.push_back(term);
        fm_pixels += sup;
      }
    }

    TrainStepStats stats;
    stats.step = step;
    stats.scene_index = scene_i;
    stats.cl_passes = static_cast<int>(sel_terms.size());
    stats.fm_pixels = fm_pixels;

    std::optional<nn::Var> total;
    auto accumulate = [&](nn::Var v) {
      total = total ? tape.add(*total, v) : v;
    };
    if (!fm_terms.empty()) {
      nn::Var fm_sum = fm_terms[0];
      for (size_t i = 1; i < fm_terms.size(); ++i)
        fm_sum = tape.add(fm_sum, fm_terms[i]);
      stats.loss_fm = tape.val(fm_sum).data[0];
      accumulate(fm_sum);
    }
    if (!sel_terms.empty()) {
      nn::Var sel_sum = sel_terms[0];
      for (size_t i = 1; i < sel_terms.size(); ++i)
        sel_sum = tape.add(sel_sum, sel_terms[i]);
      nn::Var sel_mean =
          tape.affine(sel_sum, float(1.0 / double(sel_terms.size())), 0.0f);
      stats.loss_cl = tape.val(sel_mean).data[0];
      accumulate(sel_mean);
    }
    if (!total) {
      std::fprintf(stderr, "train: step %d had no supervisable signal\n", step);
      continue;
    }
    stats.loss_total = tape.val(*total).data[0];

    bool finite = std::isfinite(stats.loss_total);
    std::map<std::string, nn::Tensor> grads;
    if (finite) {
      tape.backward(*total);
      double norm2 = 0;
      for (const std::string& name : params.names()) {
        const nn::Tensor& g = tape.grad(pvars.at(name));
        if (g.data.empty()) continue;
        if (!all_finite(g)) {
          finite = false;
          break;
        }
        for (float v : g.data) norm2 += double(v) * double(v);
        grads[name] = g;
      }
      stats.grad_norm = std::sqrt(norm2);
    }
    if (!finite) {
      // Keep the last pre-divergence weights; a broken update would poison
      // every later checkpoint.
      std::fprintf(stderr,
                   "train: non-finite loss/gradient at step %d, stopping\n",
                   step);
      res.diverged = true;
      break;
    }

    opt.step(grads);
    res.steps_done = step + 1;
    res.final_loss = stats.loss_total;
    stats.seconds = elapsed_s(t0);

    log << stats.step << ',' << stats.scene_index << ',' << stats.loss_total
        << ',' << stats.loss_fm << ',' << stats.loss_cl << ','
        << stats.fm_pixels << ',' << stats.cl_passes << ',' << stats.grad_norm
        << ',' << stats.seconds << '\n';
    log.flush();
    if (on_step) on_step(stats);

    if (tcfg.checkpoint_every > 0 && (step + 1) % tcfg.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "/weights_%06d.chsn", step + 1);
      nn::save_weights(out_dir + name, params);
    }
  }

  nn::save_weights(out_dir + "/weights.chsn", params);
  return res;
}

}  // namespace mvsr
