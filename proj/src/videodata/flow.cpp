#include "memdpc/videodata/flow.hpp"

#include <algorithm>
#include <cmath>

#include "memdpc/core/error.hpp"

namespace memdpc::videodata {

std::uint8_t encode_displacement(double v) {
  const double clamped = std::clamp(v, -kFlowBound, kFlowBound);
  const double scaled = (clamped + kFlowBound) / (2.0 * kFlowBound) * 255.0;
  return static_cast<std::uint8_t>(std::floor(scaled + 0.5));
}

FlowFrame preprocess_flow(const Tensor& flow) {
  if (flow.rank() != 3 || flow.dim(2) != 2) {
    fail(ErrorKind::ShapeMismatch, "flow must be [H][W][2], got " + shape_str(flow.shape()));
  }
  if (!flow.all_finite()) fail(ErrorKind::NonFiniteInput, "flow field contains NaN or Inf");
  FlowFrame out;
  out.height = static_cast<int>(flow.dim(0));
  out.width = static_cast<int>(flow.dim(1));
  out.pixels.assign(static_cast<std::size_t>(out.height) * out.width * 3, 0);
  for (std::int64_t p = 0; p < static_cast<std::int64_t>(out.height) * out.width; ++p) {
    out.pixels[p * 3 + 0] = encode_displacement(flow[p * 2 + 0]);
    out.pixels[p * 3 + 1] = encode_displacement(flow[p * 2 + 1]);
  }
  return out;
}

}  // namespace memdpc::videodata
