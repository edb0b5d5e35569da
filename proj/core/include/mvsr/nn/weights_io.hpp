#pragma once

#include <string>

#include "mvsr/nn/adam.hpp"

namespace mvsr::nn {

/// Flat binary weight container. Layout, all little-endian:
///   magic "CHSN", version u32, then per tensor:
///   name_len u32, name bytes, rank u32, dims u32..., f32 data.
/// Tensors are written in ParamStore insertion order and loaded back in file
/// order, so a save/load round trip preserves iteration order.
inline constexpr uint32_t kWeightFormatVersion = 1;

void save_weights(const std::string& path, const ParamStore& params);
ParamStore load_weights(const std::string& path);

}  // namespace mvsr::nn
