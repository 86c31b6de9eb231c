#pragma once

#include <cstdint>
#include <vector>

#include "memdpc/core/tensor.hpp"

namespace memdpc::videodata {

inline constexpr double kFlowBound = 20.0;

/// Displacement field stored as an 8-bit 3-channel image; channel 2 is zero.
struct FlowFrame {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // [H][W][3]
};

/// Encodes one displacement value: clamp to [-20, 20], then
/// round_half_up((v + 20) / 40 * 255).
std::uint8_t encode_displacement(double v);

/// flow [H][W][2] (x and y displacements) -> FlowFrame. Throws
/// NonFiniteInput on NaN or infinity.
FlowFrame preprocess_flow(const Tensor& flow);

}  // namespace memdpc::videodata
