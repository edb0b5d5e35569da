#pragma once

#include "mvsr/cost.hpp"
#include "mvsr/hypotheses.hpp"

namespace mvsr {

/// Contrastive selection loss over per-candidate scores {K, H, W}: per pixel
/// -log of the softmax mass on candidates within 1 pseudo-disparity of the
/// ground truth (inclusive), averaged over pixels with valid GT and at least
/// one positive. Returns 0 (with a warning) if nothing is supervisable.
/// d_gt must be in the same pseudo-disparity scale as the hypotheses.
double loss_cl(const nn::Tensor& scores, const HypothesisSet& hyps,
               const PseudoDisparityMap& d_gt, int* supervised = nullptr);

/// Tape version of loss_cl; gradients flow into the score map only.
template <typename T>
nn::Var loss_cl_tape(nn::TapeT<T>& tape, nn::Var scores,
                     const HypothesisSet& hyps, const PseudoDisparityMap& d_gt,
                     int* supervised = nullptr);

/// Feature-matching loss on a cost volume: per pixel c(d_gt) - clip(c(d-))
/// where d- is the lowest-cost slice at least 1 pseudo-disparity from the
/// ground truth. Pixels are skipped when the GT is invalid, when the cells
/// bracketing d_gt have no valid view, or when no slice qualifies as a
/// negative. Mean over the surviving pixels.
double loss_fm(const CostVolume& vol, const PseudoDisparityMap& d_gt,
               double alpha_clip, double beta_clip, int* supervised = nullptr);

/// Tape version of loss_fm: recomputes the bracketing cells and the chosen
/// negative cell differentiably from the level's feature maps, so gradients
/// reach only the matching features. Which cells participate (bracket and
/// argmin negative) is decided from the frozen volume. ref/src vars must hold
/// the feature maps the volume was built from, in the same view order.
template <typename T>
nn::Var loss_fm_tape(nn::TapeT<T>& tape, const CostVolume& vol,
                     const VolumeLevel& lvl, nn::Var ref_feat,
                     const std::vector<nn::Var>& src_feats,
                     const CostParams& cp, const PseudoDisparityMap& d_gt,
                     double alpha_clip, double beta_clip,
                     int* supervised = nullptr);

/// Smooth-L1 between the softmax-expected candidate and the ground truth;
/// training loss for the expectation-selection ablation.
template <typename T>
nn::Var loss_expectation_tape(nn::TapeT<T>& tape, nn::Var scores,
                              const HypothesisSet& hyps,
                              const PseudoDisparityMap& d_gt,
                              int* supervised = nullptr);

extern template nn::Var loss_cl_tape<float>(nn::TapeT<float>&, nn::Var,
                                            const HypothesisSet&,
                                            const PseudoDisparityMap&, int*);
extern template nn::Var loss_cl_tape<double>(nn::TapeT<double>&, nn::Var,
                                             const HypothesisSet&,
                                             const PseudoDisparityMap&, int*);
extern template nn::Var loss_fm_tape<float>(
    nn::TapeT<float>&, const CostVolume&, const VolumeLevel&, nn::Var,
    const std::vector<nn::Var>&, const CostParams&, const PseudoDisparityMap&,
    double, double, int*);
extern template nn::Var loss_fm_tape<double>(
    nn::TapeT<double>&, const CostVolume&, const VolumeLevel&, nn::Var,
    const std::vector<nn::Var>&, const CostParams&, const PseudoDisparityMap&,
    double, double, int*);
extern template nn::Var loss_expectation_tape<float>(nn::TapeT<float>&, nn::Var,
                                                     const HypothesisSet&,
                                                     const PseudoDisparityMap&,
                                                     int*);
extern template nn::Var loss_expectation_tape<double>(
    nn::TapeT<double>&, nn::Var, const HypothesisSet&,
    const PseudoDisparityMap&, int*);

}  // namespace mvsr
