#pragma once

#include "memdpc/core/tensor.hpp"

namespace memdpc::backbone {

/// Encoder output z_i for one block: [C][H'][W'].
struct BlockFeature {
  Tensor values;
};

/// Aggregated context c_t: [C][H'][W'], same layout as BlockFeature.
struct ContextFeature {
  Tensor values;
};

}  // namespace memdpc::backbone
