#pragma once

#include <functional>
#include <string>

#include "mvsr/config_json.hpp"
#include "mvsr/pipeline.hpp"
#include "mvsr/synth.hpp"

namespace mvsr {

/// One training example: cropped reference view (intrinsics shifted to match),
/// full-frame sources, GT depth over the crop. source_views indexes the
/// scene's view list (reference excluded).
struct TrainSample {
  RefineInputs inputs;
  DepthMap gt_crop;
  int x0 = 0, y0 = 0;
  std::vector<int> source_views;
};

/// Draws the crop origin and the source subset (closest source always kept,
/// random_sources more without replacement) from rng.
TrainSample make_train_sample(const LoadedScene& scene, const TrainConfig& tcfg,
                              Rng& rng);

struct TrainStepStats {
  int step = 0;
  int scene_index = 0;
  double loss_total = 0;
  double loss_fm = 0;
  double loss_cl = 0;  // selection loss (contrastive or expectation)
  int fm_pixels = 0;   // supervised pixels, summed over levels
  int cl_passes = 0;   // scoring passes that contributed
  double grad_norm = 0;
  double seconds = 0;
};

struct TrainResult {
  int steps_done = 0;
  bool diverged = false;
  double final_loss = 0;
};

/// Full training loop: per step one random scene, one sampled crop, a rollout
/// on the tape with loss hooks, one Adam update. Writes checkpoints
/// (weights_NNNNNN.chsn), final weights (weights.chsn), the effective config
/// (config.json), and a per-step loss CSV into out_dir. On a non-finite loss
/// the run stops and the last good weights are kept.
TrainResult train_loop(const std::string& data_dir, nn::ParamStore& params,
                       const RefineConfig& refine_cfg, const TrainConfig& tcfg,
                       const std::string& out_dir, uint64_t seed, int threads,
                       const std::function<void(const TrainStepStats&)>& on_step = {});

}  // namespace mvsr
