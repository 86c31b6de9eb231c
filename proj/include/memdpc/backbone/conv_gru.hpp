#pragma once

#include <vector>

#include "memdpc/backbone/features.hpp"
#include "memdpc/core/ops.hpp"
#include "memdpc/core/params.hpp"
#include "memdpc/core/rng.hpp"

namespace memdpc::backbone {

/// One-layer convolutional GRU with 1x1 kernels: the same gate weights are
/// applied independently at every spatial position.
///
///   r = sigmoid(W_r [z, h] + b_r)
///   u = sigmoid(W_u [z, h] + b_u)
///   n = tanh(W_o [z, r * h] + b_o)
///   h' = (1 - u) * h + u * n
class ConvGru {
 public:
  ConvGru(int channels, Rng& rng);

  int channels() const { return channels_; }

  /// z, hidden [B][C][H][W]; a null hidden means the zero state.
  ag::Var step(const ag::Var& z, const ag::Var& hidden) const;
  /// Left fold of step() from the zero state. Throws EmptySequence for t = 0.
  ag::Var run(const std::vector<ag::Var>& z) const;
  /// Same as run() but starting from a given hidden state.
  ag::Var run_from(const std::vector<ag::Var>& z, ag::Var hidden) const;

  void parameters(const std::string& prefix, ParamList& out) const;

 private:
  int channels_;
  ag::Var reset_w_, reset_b_;
  ag::Var update_w_, update_b_;
  ag::Var out_w_, out_b_;
};

/// Single-sample wrappers over ConvGru (inference mode, no graph).
ContextFeature aggregate_step(const ConvGru& gru, const BlockFeature& z,
                              const ContextFeature* hidden);
ContextFeature aggregate_sequence(const ConvGru& gru, const std::vector<BlockFeature>& z);

}  // namespace memdpc::backbone
