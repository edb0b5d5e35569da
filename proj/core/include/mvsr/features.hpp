#pragma once

#include <array>
#include <map>
#include <string>

#include "mvsr/common.hpp"
#include "mvsr/rng.hpp"
#include "mvsr/nn/adam.hpp"
#include "mvsr/nn/tape.hpp"

namespace mvsr {

/// Per-pixel feature vectors, stored channels-first {C, H, W}.
struct FeatureMap {
  nn::Tensor values;
  bool unit_norm = false;

  int channels() const { return values.dim(0); }
  int height() const { return values.dim(1); }
  int width() const { return values.dim(2); }
  float at(int c, int y, int x) const { return values.at3(c, y, x); }
  const float* pixel_stride_base(int c) const {
    return values.data.data() + static_cast<size_t>(c) * height() * width();
  }
};

/// Features per resolution, keyed by downscale factor (1, 2, 4, 8).
struct FeaturePyramid {
  std::map<int, FeatureMap> levels;

  bool has(int factor) const { return levels.count(factor) != 0; }
  const FeatureMap& level(int factor) const {
    auto it = levels.find(factor);
    check(it != levels.end(),
          "feature pyramid: missing level 1/" + std::to_string(factor));
    return it->second;
  }
};

/// [locally mean-subtracted intensity, Sobel-x, Sobel-y] per level, unit
/// normalized; levels {1, 2, 4, 8} by repeated 2x area downsampling.
FeaturePyramid extract_handcrafted(const GrayImage& image);

/// Encoder-decoder shape shared by the matching and context extractors.
/// widths apply at downscale factors {1, 2, 4, 8}; the decoder walks back up
/// to finest_output. Emitted levels are every factor >= finest_output, each
/// through a 1x1 head of out_channels (trunk width when absent).
struct UNetConfig {
  std::array<int, 4> widths{16, 24, 32, 32};
  int finest_output = 1;
  std::map<int, int> out_channels;
  bool l2norm_outputs = true;

  int width_at(int factor) const;
  int head_channels(int factor) const;
  std::vector<int> emitted_levels() const;
};

UNetConfig desk_match_config();
UNetConfig paper_match_config();
/// Appearance trunk for the context stream; emits {1/8, 1/4}, not normalized.
UNetConfig desk_context_config();
UNetConfig paper_context_config();

/// Registers He-initialized parameters for one U-Net under the given prefix.
void init_unet_params(nn::ParamStore& params, const std::string& prefix,
                      const UNetConfig& cfg, int in_channels, Rng& rng);

/// Tape handles for a parameter set, shared by training (requires_grad) and
/// inference (constants). Tensors are cast to the tape's scalar type.
template <typename T>
struct VarDict {
  nn::TapeT<T>* tape = nullptr;
  std::map<std::string, nn::Var> vars;

  nn::Var at(const std::string& name) const {
    auto it = vars.find(name);
    check(it != vars.end(), "params: unbound name " + name);
    return it->second;
  }
};

template <typename T>
VarDict<T> bind_params(nn::TapeT<T>& tape, const nn::ParamStore& params,
                       bool requires_grad) {
  VarDict<T> d;
  d.tape = &tape;
  for (const std::string& name : params.names()) {
    nn::TensorT<T> t = params.get(name).template cast<T>();
    d.vars[name] = tape.leaf(std::move(t), requires_grad);
  }
  return d;
}

/// U-Net forward on the tape. image is a {C_in, H, W} var; H and W must be
/// divisible by 8. Returns per-level output vars keyed by downscale factor.
template <typename T>
std::map<int, nn::Var> unet_forward(nn::TapeT<T>& tape, const VarDict<T>& params,
                                    const std::string& prefix,
                                    const UNetConfig& cfg, nn::Var image);

/// Float-tape convenience wrapper producing plain feature maps.
FeaturePyramid extract_learned(const GrayImage& image,
                               const nn::ParamStore& params,
                               const std::string& prefix, const UNetConfig& cfg);

nn::Tensor image_to_tensor(const GrayImage& image);

extern template std::map<int, nn::Var> unet_forward<float>(
    nn::TapeT<float>&, const VarDict<float>&, const std::string&,
    const UNetConfig&, nn::Var);
extern template std::map<int, nn::Var> unet_forward<double>(
    nn::TapeT<double>&, const VarDict<double>&, const std::string&,
    const UNetConfig&, nn::Var);

}  // namespace mvsr
