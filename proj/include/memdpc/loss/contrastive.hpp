#pragma once

#include <cstdint>
#include <vector>

#include "memdpc/core/autograd.hpp"

namespace memdpc::loss {

/// Predicted and observed features per prediction step, each [B][C][H][W].
struct DensePairBatch {
  std::vector<ag::Var> predicted;
  std::vector<ag::Var> target;
};

struct LossReport {
  ag::Var loss;  // scalar node, differentiable when inputs are
  double value = 0.0;
  double top1_accuracy = 0.0;
  std::int64_t num_candidates = 0;
};

/// Dense InfoNCE. Both sides are flattened to rows ordered (batch, step,
/// h, w); every predicted row is scored against every target row and the
/// aligned row is the positive, all others (other clips, other steps, other
/// positions) are negatives. Mean cross-entropy over rows. Top-1 counts an
/// anchor as correct only if its positive strictly beats every negative.
LossReport dense_contrastive_loss(const DensePairBatch& batch, bool normalized = false);

/// Convenience overload for tensors laid out [B][S][C][H][W].
LossReport dense_contrastive_loss(const Tensor& predicted, const Tensor& target,
                                  bool normalized = false);

/// Term-by-term nested-loop evaluation of the same objective on
/// [B][S][C][H][W] tensors. Reference for small instances (<= 256 rows).
double contrastive_loss_oracle(const Tensor& predicted, const Tensor& target,
                               bool normalized = false);

/// Arithmetic mean of the forward and backward losses.
double combine_bidirectional(double forward_loss, double backward_loss);
ag::Var combine_bidirectional(const ag::Var& forward_loss, const ag::Var& backward_loss);

}  // namespace memdpc::loss
