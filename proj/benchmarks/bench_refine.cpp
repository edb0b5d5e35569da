#include <benchmark/benchmark.h>

#include "mvsr/pipeline.hpp"

using namespace mvsr;

namespace {

// One fixed scene per binary run keeps iterations comparable.
const RenderedScene& bench_scene() {
  static const RenderedScene scene = render(sample_scene_spec(12, 0));
  return scene;
}

struct BenchLevel {
  FeaturePyramid ref;
  std::vector<FeaturePyramid> srcs;
  VolumeLevel lvl;
};

const BenchLevel& bench_level(int factor) {
  static std::map<int, BenchLevel> cache;
  auto it = cache.find(factor);
  if (it != cache.end()) return it->second;

  const RenderedScene& scene = bench_scene();
  BenchLevel& out = cache[factor];
  out.ref = extract_handcrafted(scene.views[0].image);
  out.srcs.resize(scene.views.size() - 1);
  out.lvl.ref_cam = scale_camera(scene.views[0].cam, 1.0 / factor);
  out.lvl.ref_feat = &out.ref.level(factor);
  const double b = baseline_scale(scene_rig(scene));
  for (size_t v = 1; v < scene.views.size(); ++v) {
    out.srcs[v - 1] = extract_handcrafted(scene.views[v].image);
    out.lvl.src_cams.push_back(scale_camera(scene.views[v].cam, 1.0 / factor));
    out.lvl.src_feats.push_back(&out.srcs[v - 1].level(factor));
  }
  out.lvl.scale_fb = out.lvl.ref_cam.intr.fx * b;
  return out;
}

RefineConfig small_learned_config() {
  RefineConfig cfg;
  cfg.stages = {StageConfig{8, 4, 4, 4, true}};
  cfg.n_full = 48;
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
  return cfg;
}

void BM_full_volume(benchmark::State& state) {
  const BenchLevel& bl = bench_level(4);
  const RenderedScene& scene = bench_scene();
  const double hi = bl.lvl.scale_fb / scene.dmin;
  const double lo = bl.lvl.scale_fb / scene.dmax;
  const int slices = int(state.range(0));
  CostParams cp;
  for (auto _ : state) {
    Rng rng(3);
    CostVolume vol = build_full_volume(bl.lvl, lo, hi, slices, cp, rng, 1);
    benchmark::DoNotOptimize(vol.values.data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(slices) *
                          bl.lvl.ref_cam.width * bl.lvl.ref_cam.height);
}

void BM_local_volume(benchmark::State& state) {
  const BenchLevel& bl = bench_level(4);
  const RenderedScene& scene = bench_scene();
  const double mid =
      0.5 * (bl.lvl.scale_fb / scene.dmin + bl.lvl.scale_fb / scene.dmax);
  const int w = bl.lvl.ref_cam.width, h = bl.lvl.ref_cam.height;
  Image2D<double> centers(w, h);
  for (double& v : centers.raw()) v = mid;
  CostParams cp;
  for (auto _ : state) {
    Rng rng(3);
    CostVolume vol =
        build_local_volume(bl.lvl, w, h, centers, mid, 4, 1.0, cp, rng, 1);
    benchmark::DoNotOptimize(vol.values.data());
  }
  state.SetItemsProcessed(state.iterations() * 9 * w * h);
}

void BM_propagate(benchmark::State& state) {
  PseudoDisparityMap map;
  map.scale_fb = 30;
  map.values = Image2D<double>(40, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 40; ++x)
      map.values.at(x, y) = 12.0 + 0.2 * x - 0.1 * y;
  const OffsetSet offsets = make_offsets({1, 3});
  for (auto _ : state) {
    DepthGradient grad = depth_gradient(map);
    HypothesisSet hyps = propagate(map, grad, offsets);
    benchmark::DoNotOptimize(hyps.values.data());
  }
  state.SetItemsProcessed(state.iterations() * 17 * 40 * 32);
}

void BM_initial_set(benchmark::State& state) {
  PseudoDisparityMap map;
  map.scale_fb = 30;
  map.values = Image2D<double>(40, 32);
  for (double& v : map.values.raw()) v = 12.0;
  for (auto _ : state) {
    Rng rng(3);
    HypothesisSet hyps = initial_set(map, 4, rng);
    benchmark::DoNotOptimize(hyps.values.data());
  }
  state.SetItemsProcessed(state.iterations() * 9 * 40 * 32);
}

void BM_matching_unet(benchmark::State& state) {
  RefineConfig cfg = small_learned_config();
  nn::ParamStore params;
  Rng rng(5);
  init_engine_params(params, cfg, rng);
  const GrayImage& img = bench_scene().views[0].image;
  for (auto _ : state) {
    FeaturePyramid pyr = extract_learned(img, params, "match.", cfg.match_net);
    benchmark::DoNotOptimize(pyr.levels.begin()->second.values.data.data());
  }
}

void BM_refine_oracle(benchmark::State& state) {
  const RenderedScene& scene = bench_scene();
  RefineInputs in;
  in.rig = scene_rig(scene);
  in.ref_image = scene.views[0].image;
  for (size_t v = 1; v < scene.views.size(); ++v)
    in.src_images.push_back(scene.views[v].image);
  in.dmin = scene.dmin;
  in.dmax = scene.dmax;
  in.oracle_gt = &scene.views[0].depth;

  RefineConfig cfg;
  cfg.stages = {StageConfig{4, 2, 4, 4, true}};
  cfg.n_full = 128;
  cfg.oracle_scorer = true;
  cfg.handcrafted = true;
  nn::ParamStore params;
  for (auto _ : state) {
    RefineResult res = refine(in, params, cfg, 1);
    benchmark::DoNotOptimize(res.pd.values.data());
  }
}

void BM_refine_learned(benchmark::State& state) {
  const RenderedScene& scene = bench_scene();
  RefineInputs in;
  in.rig = scene_rig(scene);
  in.ref_image = scene.views[0].image;
  for (size_t v = 1; v < scene.views.size(); ++v)
    in.src_images.push_back(scene.views[v].image);
  in.dmin = scene.dmin;
  in.dmax = scene.dmax;

  RefineConfig cfg = small_learned_config();
  nn::ParamStore params;
  Rng rng(5);
  init_engine_params(params, cfg, rng);
  for (auto _ : state) {
    RefineResult res = refine(in, params, cfg, 1);
    benchmark::DoNotOptimize(res.pd.values.data());
  }
}

}  // namespace

BENCHMARK(BM_full_volume)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_local_volume)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_propagate)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_initial_set)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_matching_unet)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_refine_oracle)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_refine_learned)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
