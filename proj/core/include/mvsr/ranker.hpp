#pragma once

#include <array>

#include "mvsr/cost.hpp"
#include "mvsr/hypotheses.hpp"

namespace mvsr {

/// Widths of one refinement stage's learned components. The hypothesis
/// feature fed to the score MLP is [cost_len | 8 | c_ctx] channels; the
/// context initializer sees [cost_len | 8 | app_channels].
struct RankerConfig {
  int c_ctx = 16;
  int cost_len = 6;
  int hidden = 24;
  int app_channels = 16;
  bool drop_geom = false;  // ablation: zero the second-order-error block

  int feature_len() const { return cost_len + 8 + c_ctx; }
  int init_input_len() const { return cost_len + 8 + app_channels; }
  int gru_input_len() const { return cost_len + 8; }
};

/// Registers score-MLP, context-init and dual-GRU parameters under prefix
/// (e.g. "s0."). Layer names: mlp.0..3, ci.0..1, gruF.{z,r,n}, gruH.{z,r,n}.
void init_stage_params(nn::ParamStore& params, const std::string& prefix,
                       const RankerConfig& cfg, Rng& rng);

/// tanh(d(p+Dp) - grad(p+Dp).Dp - d_i) over the one-ring, row-major offset
/// order (dy then dx, center skipped). Border neighbors clamp.
std::array<double, 8> second_order_error(const PseudoDisparityMap& d_hat,
                                         const DepthGradient& grad, int x,
                                         int y, double d_i);

/// Dense per-candidate input maps for the scorer: cost triplet channels then
/// the 8 second-order-error channels, for candidate slot cand_index of hyps.
/// With drop_geom the error block is zeroed (channel count is preserved so
/// parameter shapes stay comparable across ablations).
nn::Tensor candidate_input_maps(const CostVolumePyramid& pyr,
                                const PseudoDisparityMap& d_hat,
                                const DepthGradient& grad,
                                const HypothesisSet& hyps, int cand_index,
                                bool drop_geom);

/// Same channels evaluated at the current estimate itself (d_i = d_hat(p));
/// feeds context initialization and the GRU update.
nn::Tensor estimate_input_maps(const CostVolumePyramid& pyr,
                               const PseudoDisparityMap& d_hat,
                               const DepthGradient& grad, bool drop_geom);

/// Score MLP over one candidate's dense input: cand_input {cost_len+8, H, W}
/// concatenated with the context state {c_ctx, H, W}, through four 1x1
/// convolutions (ReLU between, linear last) to a {1, H, W} score map.
template <typename T>
nn::Var score_map(nn::TapeT<T>& tape, const VarDict<T>& params,
                  const std::string& prefix, const RankerConfig& cfg,
                  nn::Var cand_input, nn::Var ctx);

/// Scores all K candidates and stacks them into {K, H, W}.
template <typename T>
nn::Var score_all_candidates(nn::TapeT<T>& tape, const VarDict<T>& params,
                             const std::string& prefix, const RankerConfig& cfg,
                             const CostVolumePyramid& pyr,
                             const PseudoDisparityMap& d_hat,
                             const DepthGradient& grad,
                             const HypothesisSet& hyps, nn::Var ctx);

/// Single-feature convenience for tests: runs the MLP on one feature vector.
double score_single(const nn::ParamStore& params, const std::string& prefix,
                    const RankerConfig& cfg, const std::vector<double>& feature);

/// Per-pixel argmax of scores {K, H, W}; ties break to the lowest candidate
/// index. Result carries the hypothesis set's pseudo-disparity scale.
PseudoDisparityMap select_best(const HypothesisSet& hyps,
                               const nn::Tensor& scores);

/// Softmax-weighted average of candidates (ablation for argmax selection).
PseudoDisparityMap expectation_refine(const HypothesisSet& hyps,
                                      const nn::Tensor& scores);

/// Two 3x3 convolutions (ReLU between, tanh out) over [c(d), e(d), appearance]
/// producing the initial context state {c_ctx, H, W}.
template <typename T>
nn::Var init_context(nn::TapeT<T>& tape, const VarDict<T>& params,
                     const std::string& prefix, const RankerConfig& cfg,
                     nn::Var cost_e_input, nn::Var appearance);

/// Dual ConvGRU update: full-resolution GRU plus a half-resolution GRU
/// (area-down inputs, bilinear-up output), combined by addition.
template <typename T>
nn::Var update_context(nn::TapeT<T>& tape, const VarDict<T>& params,
                       const std::string& prefix, const RankerConfig& cfg,
                       nn::Var ctx, nn::Var cost_e_input);

extern template nn::Var score_map<float>(nn::TapeT<float>&, const VarDict<float>&,
                                         const std::string&, const RankerConfig&,
                                         nn::Var, nn::Var);
extern template nn::Var score_map<double>(nn::TapeT<double>&,
                                          const VarDict<double>&,
                                          const std::string&,
                                          const RankerConfig&, nn::Var, nn::Var);
extern template nn::Var score_all_candidates<float>(
    nn::TapeT<float>&, const VarDict<float>&, const std::string&,
    const RankerConfig&, const CostVolumePyramid&, const PseudoDisparityMap&,
    const DepthGradient&, const HypothesisSet&, nn::Var);
extern template nn::Var score_all_candidates<double>(
    nn::TapeT<double>&, const VarDict<double>&, const std::string&,
    const RankerConfig&, const CostVolumePyramid&, const PseudoDisparityMap&,
    const DepthGradient&, const HypothesisSet&, nn::Var);
extern template nn::Var init_context<float>(nn::TapeT<float>&,
                                            const VarDict<float>&,
                                            const std::string&,
                                            const RankerConfig&, nn::Var,
                                            nn::Var);
extern template nn::Var init_context<double>(nn::TapeT<double>&,
                                             const VarDict<double>&,
                                             const std::string&,
                                             const RankerConfig&, nn::Var,
                                             nn::Var);
extern template nn::Var update_context<float>(nn::TapeT<float>&,
                                              const VarDict<float>&,
                                              const std::string&,
                                              const RankerConfig&, nn::Var,
                                              nn::Var);
extern template nn::Var update_context<double>(nn::TapeT<double>&,
                                               const VarDict<double>&,
                                               const std::string&,
                                               const RankerConfig&, nn::Var,
                                               nn::Var);

}  // namespace mvsr
