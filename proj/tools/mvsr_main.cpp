#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "CLI11.hpp"
#include "mvsr/config_json.hpp"
#include "mvsr/gradcheck.hpp"
#include "mvsr/image_io.hpp"
#include "mvsr/metrics.hpp"
#include "mvsr/nn/weights_io.hpp"
#include "mvsr/pipeline.hpp"
#include "mvsr/train.hpp"

namespace {

using namespace mvsr;

int default_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

RefineInputs scene_inputs(const LoadedScene& s) {
  RefineInputs in;
  in.rig.reference = s.cams[static_cast<size_t>(s.reference)];
  for (int v = 0; v < static_cast<int>(s.cams.size()); ++v) {
    if (v == s.reference) continue;
    in.rig.sources.push_back(s.cams[static_cast<size_t>(v)]);
    in.src_images.push_back(s.images[static_cast<size_t>(v)]);
  }
  in.ref_image = s.images[static_cast<size_t>(s.reference)];
  in.dmin = s.dmin;
  in.dmax = s.dmax;
  return in;
}

struct ModeFlags {
  bool oracle = false;
  bool handcrafted = false;
  bool expectation = false;
  bool drop_geom = false;

  void add_to(CLI::App* cmd) {
    cmd->add_flag("--oracle", oracle,
                  "Score candidates by GT distance instead of the ranker");
    cmd->add_flag("--handcrafted", handcrafted,
                  "Fixed matching features instead of the learned extractor");
    cmd->add_flag("--expectation", expectation,
                  "Softmax-expectation selection (ablation)");
    cmd->add_flag("--drop-geom", drop_geom,
                  "Zero the second-order geometric features (ablation)");
  }
  void apply(RefineConfig& cfg) const {
    cfg.oracle_scorer |= oracle;
    cfg.handcrafted |= handcrafted;
    cfg.expectation |= expectation;
    cfg.drop_geom |= drop_geom;
  }
};

RefineConfig config_or_default(const std::string& path, TrainConfig* tc) {
  RefineConfig cfg = RefineConfig::desk_default();
  if (!path.empty()) load_run_config(path, &cfg, tc);
  return cfg;
}

void write_normal_ppm(const std::string& path, const DepthMap& depth,
                      const Camera& cam) {
  const Image2D<Vec3> normals = normals_from_points(depth_to_points(depth, cam));
  Image2D<std::array<float, 3>> rgb(normals.width(), normals.height());
  for (int y = 0; y < normals.height(); ++y)
    for (int x = 0; x < normals.width(); ++x) {
      const Vec3& n = normals.at(x, y);
      if (is_valid_point(n))
        rgb.at(x, y) = {float(0.5 * (n.x() + 1.0)), float(0.5 * (n.y() + 1.0)),
                        float(0.5 * (n.z() + 1.0))};
      else
        rgb.at(x, y) = {0.f, 0.f, 0.f};
    }
  write_ppm(path, rgb);
}

Image2D<float> to_f32(const Image2D<double>& in) {
  Image2D<float> out(in.width(), in.height());
  for (int y = 0; y < in.height(); ++y)
    for (int x = 0; x < in.width(); ++x) out.at(x, y) = float(in.at(x, y));
  return out;
}

const DatasetSceneRef& find_scene(const DatasetIndex& idx,
                                  const std::string& name) {
  for (const DatasetSceneRef& s : idx.scenes)
    if (s.name == name) return s;
  fail("no scene named '" + name + "' in the manifest");
}

struct SceneEval {
  std::string name;
  double wta_pct_1pd = 0;
  double refined_pct_1pd = 0;
  double seconds = 0;
  MetricReport report;
};

SceneEval eval_scene(const std::string& data_dir, const DatasetSceneRef& ref,
                     const nn::ParamStore& params, const RefineConfig& cfg,
                     int threads) {
  const LoadedScene scene = load_scene(data_dir, ref);
  RefineInputs in = scene_inputs(scene);
  const DepthMap& gt = scene.depths[static_cast<size_t>(scene.reference)];
  in.oracle_gt = &gt;

  const auto t0 = std::chrono::steady_clock::now();
  RefineResult res = refine(in, params, cfg, threads);
  SceneEval ev;
  ev.name = ref.name;
  ev.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  const int f = cfg.stages.back().base_factor;
  const DepthMap gt_f = downsample_gt_nn(gt, f);
  const Camera cam_f = scale_camera(in.rig.reference, 1.0 / f);
  ev.refined_pct_1pd = pct_below_pd(res.depth, gt_f, res.pd.scale_fb, 1.0);
  ev.report = evaluate(res.depth, gt_f, cam_f, res.pd.scale_fb);

  const DepthMap gt_w = downsample_gt_nn(gt, res.wta_factor);
  const double b = baseline_scale(in.rig);
  const double scale_fb_w = in.rig.reference.intr.fx / res.wta_factor * b;
  ev.wta_pct_1pd = pct_below_pd(res.wta_depth, gt_w, scale_fb_w, 1.0);
  return ev;
}

int cmd_synth(const std::string& out, int scenes, uint64_t seed, int threads) {
  const DatasetIndex idx = make_dataset(out, seed, scenes, threads);
  std::printf("wrote %zu scenes to %s (seed %llu)\n", idx.scenes.size(),
              out.c_str(), static_cast<unsigned long long>(seed));
  return 0;
}

int cmd_train(const std::string& data, const std::string& out,
              const std::string& config, const std::string& init_weights,
              int steps_override, const ModeFlags& modes, uint64_t seed,
              int threads, int log_every) {
  TrainConfig tc;
  RefineConfig cfg = config_or_default(config, &tc);
  modes.apply(cfg);
  check(!cfg.oracle_scorer, "train: the oracle scorer has no parameters");
  if (steps_override > 0) tc.steps = steps_override;

  nn::ParamStore params;
  if (!init_weights.empty()) {
    params = nn::load_weights(init_weights);
  } else {
    Rng rng(seed);
    init_engine_params(params, cfg, rng);
  }

  auto progress = [log_every](const TrainStepStats& s) {
    if (log_every > 0 && (s.step % log_every == 0))
      std::printf("step %5d  scene %2d  loss %.4f (fm %.4f, sel %.4f)  "
                  "|g| %.3e  %.2fs\n",
                  s.step, s.scene_index, s.loss_total, s.loss_fm, s.loss_cl,
                  s.grad_norm, s.seconds);
  };
  const TrainResult res =
      train_loop(data, params, cfg, tc, out, seed, threads, progress);
  std::printf("%s after %d steps, final loss %.4f; weights in %s\n",
              res.diverged ? "DIVERGED" : "done", res.steps_done,
              res.final_loss, out.c_str());
  return res.diverged ? 1 : 0;
}

int cmd_refine(const std::string& data, const std::string& scene_name,
               const std::string& weights, const std::string& config,
               const std::string& out, const std::string& trace,
               const ModeFlags& modes, uint64_t seed, int threads) {
  RefineConfig cfg = config_or_default(config, nullptr);
  modes.apply(cfg);
  cfg.seed = seed;
  check(modes.oracle || !weights.empty(),
        "refine: --weights is required unless --oracle is set");

  const DatasetIndex idx = read_manifest(data);
  const DatasetSceneRef& ref = find_scene(idx, scene_name);
  const LoadedScene scene = load_scene(data, ref);
  RefineInputs in = scene_inputs(scene);
  const DepthMap& gt = scene.depths[static_cast<size_t>(scene.reference)];
  in.oracle_gt = &gt;

  nn::ParamStore params;
  if (!weights.empty()) params = nn::load_weights(weights);

  const auto t0 = std::chrono::steady_clock::now();
  const RefineResult res = refine(in, params, cfg, threads);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  std::filesystem::create_directories(out);
  write_pfm(out + "/depth.pfm", to_f32(res.depth.values));
  const int f = cfg.stages.back().base_factor;
  write_normal_ppm(out + "/normals.ppm", res.depth,
                   scale_camera(in.rig.reference, 1.0 / f));

  if (!trace.empty()) {
    std::ofstream ts(trace);
    check(ts.good(), "refine: cannot write " + trace);
    ts << "stage,iter,spatial,pct_below_1pd\n";
    for (const IterStat& s : res.iter_stats)
      ts << s.stage << ',' << s.iter << ',' << (s.spatial ? 1 : 0) << ','
         << s.pct_below_1pd << '\n';
  }

  const DepthMap gt_f = downsample_gt_nn(gt, f);
  std::printf("scene %s: %.2fs total (wta %.2fs)\n", ref.name.c_str(), secs,
              res.wta_seconds);
  std::printf("  %%(<1 pd-px) = %.2f\n",
              pct_below_pd(res.depth, gt_f, res.pd.scale_fb, 1.0));
  std::printf("  wrote %s/depth.pfm, %s/normals.ppm\n", out.c_str(),
              out.c_str());
  return 0;
}

int cmd_eval(const std::string& data, const std::string& weights,
             const std::string& config, const std::string& json_out, int limit,
             const ModeFlags& modes, uint64_t seed, int threads) {
  RefineConfig cfg = config_or_default(config, nullptr);
  modes.apply(cfg);
  cfg.seed = seed;
  check(modes.oracle || !weights.empty(),
        "eval: --weights is required unless --oracle is set");

  nn::ParamStore params;
  if (!weights.empty()) params = nn::load_weights(weights);

  const DatasetIndex idx = read_manifest(data);
  size_t n = idx.scenes.size();
  if (limit > 0) n = std::min(n, static_cast<size_t>(limit));

  std::vector<SceneEval> evals;
  double sum_wta = 0, sum_ref = 0;
  for (size_t i = 0; i < n; ++i) {
    SceneEval ev = eval_scene(data, idx.scenes[i], params, cfg, threads);
    const double mae2 = ev.report.mae_at_mm.at(2.0);
    char mae_buf[16];
    if (std::isnan(mae2))
      std::snprintf(mae_buf, sizeof(mae_buf), "n/a");
    else
      std::snprintf(mae_buf, sizeof(mae_buf), "%.3f", mae2);
    std::printf("%-10s  wta %6.2f  refined %6.2f  (<1mm %6.2f, mae@2 %s mm)"
                "  %.2fs\n",
                ev.name.c_str(), ev.wta_pct_1pd, ev.refined_pct_1pd,
                ev.report.pct_below_mm.at(1.0), mae_buf, ev.seconds);
    sum_wta += ev.wta_pct_1pd;
    sum_ref += ev.refined_pct_1pd;
    evals.push_back(std::move(ev));
  }
  check(!evals.empty(), "eval: no scenes evaluated");
  std::printf("mean over %zu scenes: wta %.2f -> refined %.2f (%%<1 pd-px)\n",
              evals.size(), sum_wta / double(evals.size()),
              sum_ref / double(evals.size()));

  if (!json_out.empty()) {
    std::ofstream js(json_out);
    check(js.good(), "eval: cannot write " + json_out);
    js << "[\n";
    for (size_t i = 0; i < evals.size(); ++i) {
      js << "  {\"scene\": \"" << evals[i].name << "\", \"wta_pct_1pd\": "
         << evals[i].wta_pct_1pd << ", \"refined_pct_1pd\": "
         << evals[i].refined_pct_1pd << ", \"report\": "
         << report_json(evals[i].report) << "}";
      js << (i + 1 < evals.size() ? ",\n" : "\n");
    }
    js << "]\n";
    std::printf("wrote %s\n", json_out.c_str());
  }
  return 0;
}

int cmd_gradcheck(uint64_t seed, double tol) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<GradCheckCase> cases = run_gradcheck(seed, tol);
  for (const GradCheckCase& c : cases)
    std::printf("%-6s %-24s max_rel %.3e  (%d probes)\n",
                c.pass ? "PASS" : "FAIL", c.name.c_str(), c.max_rel_err,
                c.probes);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  const bool ok = all_pass(cases);
  std::printf("%zu cases in %.2fs: %s\n", cases.size(), secs,
              ok ? "all passed" : "FAILURES PRESENT");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view stereo depth refinement (pseudo-disparity "
               "hypothesis ranking)"};
  app.require_subcommand(1);

  uint64_t seed = 1;
  int threads = default_threads();
  app.add_option("--seed", seed, "Master seed")->capture_default_str();
  app.add_option("--threads", threads, "Worker threads")->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "Render a synthetic dataset");
  std::string synth_out = "data";
  int synth_scenes = 30;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--scenes", synth_scenes, "Scene count")
      ->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train the refinement networks");
  std::string train_data, train_out = "run", train_cfg, train_init;
  int train_steps = -1, log_every = 25;
  ModeFlags train_modes;
  train->add_option("--data", train_data, "Dataset directory")->required();
  train->add_option("--out", train_out, "Run directory (weights, logs)")
      ->capture_default_str();
  train->add_option("--config", train_cfg, "Run config JSON");
  train->add_option("--init", train_init, "Initial weights (resume)");
  train->add_option("--steps", train_steps, "Override step count");
  train->add_option("--log-every", log_every, "Progress print period")
      ->capture_default_str();
  train_modes.add_to(train);

  // refine
  auto* refine_cmd = app.add_subcommand("refine", "Refine one scene's depth");
  std::string rf_data, rf_scene, rf_weights, rf_cfg, rf_out = "refined",
              rf_trace;
  ModeFlags rf_modes;
  refine_cmd->add_option("--data", rf_data, "Dataset directory")->required();
  refine_cmd->add_option("--scene", rf_scene, "Scene name from the manifest")
      ->required();
  refine_cmd->add_option("--weights", rf_weights, "Trained weights (.chsn)");
  refine_cmd->add_option("--config", rf_cfg, "Run config JSON");
  refine_cmd->add_option("--out", rf_out, "Output directory")
      ->capture_default_str();
  refine_cmd->add_option("--trace", rf_trace, "Per-iteration stats CSV");
  rf_modes.add_to(refine_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate over a dataset");
  std::string ev_data, ev_weights, ev_cfg, ev_json;
  int ev_limit = 0;
  ModeFlags ev_modes;
  eval_cmd->add_option("--data", ev_data, "Dataset directory")->required();
  eval_cmd->add_option("--weights", ev_weights, "Trained weights (.chsn)");
  eval_cmd->add_option("--config", ev_cfg, "Run config JSON");
  eval_cmd->add_option("--json", ev_json, "Write per-scene results JSON");
  eval_cmd->add_option("--limit", ev_limit, "Evaluate only the first N scenes");
  ev_modes.add_to(eval_cmd);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck",
                                "Finite-difference check of every gradient");
  double gc_tol = 1e-4;
  gc->add_option("--tol", gc_tol, "Relative-error threshold")
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return cmd_synth(synth_out, synth_scenes, seed, threads);
    if (*train)
      return cmd_train(train_data, train_out, train_cfg, train_init,
                       train_steps, train_modes, seed, threads, log_every);
    if (*refine_cmd)
      return cmd_refine(rf_data, rf_scene, rf_weights, rf_cfg, rf_out, rf_trace,
                        rf_modes, seed, threads);
    if (*eval_cmd)
      return cmd_eval(ev_data, ev_weights, ev_cfg, ev_json, ev_limit, ev_modes,
                      seed, threads);
    if (*gc) return cmd_gradcheck(seed, gc_tol);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
