#pragma once

#include <functional>
#include <optional>

#include "mvsr/features.hpp"
#include "mvsr/losses.hpp"
#include "mvsr/ranker.hpp"
#include "mvsr/synth.hpp"

namespace mvsr {

/// One refinement stage: candidates are scored on a grid at 1/base_factor
/// resolution; with the pyramid enabled a second local volume samples
/// 1/fine_factor features on the same grid.
struct StageConfig {
  int base_factor = 8;
  int fine_factor = 4;
  int iterations = 4;  // alternating initial/spatial, starting with initial
  int m = 4;           // local half-range, slices = 2m+1
  bool pyramid = true;
};

struct RefineConfig {
  std::vector<StageConfig> stages;
  int n_full = 128;  // slices of the bootstrap full sweep
  uint64_t seed = 0;
  bool expectation = false;    // softmax-expectation selection ablation
  bool drop_geom = false;      // zero the second-order-error features
  bool handcrafted = false;    // fixed matching features instead of the U-Net
  bool oracle_scorer = false;  // score = -|d_i - d_gt|; needs oracle GT
  CostParams cost;
  UNetConfig match_net;
  UNetConfig context_net;
  std::vector<RankerConfig> stage_rankers;  // one per stage

  static RefineConfig desk_default();
  static RefineConfig paper_default();
};

/// Cameras at full resolution; images in view order matching the rig.
/// dmin/dmax bound the metric search range. oracle_gt (full resolution,
/// reference view) enables the oracle scorer and per-iteration error stats.
struct RefineInputs {
  CameraRig rig;
  GrayImage ref_image;
  std::vector<GrayImage> src_images;
  double dmin = 0;
  double dmax = 0;
  const DepthMap* oracle_gt = nullptr;
};

struct StageSnapshot {
  DepthMap depth;
  PseudoDisparityMap pd;
  int base_factor = 0;
  double seconds = 0;
};

struct IterStat {
  int stage = 0;
  int iter = 0;
  bool spatial = false;
  double pct_below_1pd = kInvalid;  // only when oracle GT is present
};

struct RefineResult {
  DepthMap depth;           // final, at the last stage's base resolution
  PseudoDisparityMap pd;
  DepthMap wta_depth;       // bootstrap output at the coarsest resolution
  int wta_factor = 0;
  double wta_seconds = 0;
  double full_step_pd = 0;  // actual slice spacing of the bootstrap sweep
  std::vector<StageSnapshot> stages;
  std::vector<IterStat> iter_stats;
};

void validate_config(const RefineConfig& cfg);

/// Registers every parameter the config needs (matching net, context net,
/// per-stage rankers) into one store.
void init_engine_params(nn::ParamStore& params, const RefineConfig& cfg,
                        Rng& rng);

/// Errors early if the store is missing or inconsistent with what the
/// config will request.
void validate_params(const nn::ParamStore& params, const RefineConfig& cfg);

DepthMap nn_upsample(const DepthMap& depth, int factor);

/// Training taps into the rollout through these callbacks; inference leaves
/// them empty. on_scores fires after every scoring pass with the tape-side
/// score map; frozen_tape disables the memory-bounding rewinds so the graph
/// survives for backward.
template <typename T>
struct RolloutHooks {
  std::function<void(int stage, int iter, bool spatial, nn::Var scores,
                     const HypothesisSet& hyps, double scale_fb)>
      on_scores;
  // Fired once per feature level in learned mode; carries the tape-side
  // feature maps (reference first) so losses can differentiate through them.
  std::function<void(int factor, nn::Var ref_feat,
                     const std::vector<nn::Var>& src_feats)>
      on_features;
};

template <typename T>
RefineResult refine_on_tape(nn::TapeT<T>& tape, const VarDict<T>& params,
                            const RefineInputs& in, const RefineConfig& cfg,
                            int threads, bool economize_tape,
                            RolloutHooks<T>* hooks);

/// Inference entry point: fresh float tape, parameters bound as constants.
RefineResult refine(const RefineInputs& in, const nn::ParamStore& params,
                    const RefineConfig& cfg, int threads = 1);

extern template RefineResult refine_on_tape<float>(
    nn::TapeT<float>&, const VarDict<float>&, const RefineInputs&,
    const RefineConfig&, int, bool, RolloutHooks<float>*);
extern template RefineResult refine_on_tape<double>(
    nn::TapeT<double>&, const VarDict<double>&, const RefineInputs&,
    const RefineConfig&, int, bool, RolloutHooks<double>*);

}  // namespace mvsr
