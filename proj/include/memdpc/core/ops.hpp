#pragma once

#include <cstdint>
#include <vector>

#include "memdpc/core/autograd.hpp"
#include "memdpc/core/rng.hpp"

// Differentiable tensor operations. Layout convention for feature maps is
// channel-second: [N][C][...spatial].
namespace memdpc::ag {

struct ConvGeometry {
  int stride_t = 1, stride_h = 1, stride_w = 1;
  int pad_t = 0, pad_h = 0, pad_w = 0;
};

/// x [N][Ci][T][H][W], weight [Co][Ci][kt][kh][kw], bias [Co] or null.
Var conv3d(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& geom);

/// Shared per-position linear map: x [N][Ci][...], weight [Co][Ci], bias [Co] or null.
Var pointwise(const Var& x, const Var& weight, const Var& bias);

struct PoolGeometry {
  int kernel_t = 1, kernel_h = 1, kernel_w = 1;
  int stride_t = 1, stride_h = 1, stride_w = 1;
  int pad_t = 0, pad_h = 0, pad_w = 0;
};

Var max_pool3d(const Var& x, const PoolGeometry& geom);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
};

/// Per-channel normalization over every axis except 1. Training mode uses
/// batch statistics and updates `state`; inference mode uses `state`.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
               bool training, double momentum = 0.1, double eps = 1e-5);

/// While alive, hashes every branch decision taken by the piecewise-linear
/// ops on this thread (rectifier signs, pooling winners). Finite-difference
/// checks use it to discard samples that straddle a kink.
class BranchTrace {
 public:
  BranchTrace();
  ~BranchTrace();
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;
  std::uint64_t digest() const { return digest_; }
  void mix(std::uint64_t v) { digest_ = (digest_ ^ v) * 0x100000001b3ULL; }

 private:
  std::uint64_t digest_ = 0xcbf29ce484222325ULL;
  BranchTrace* previous_;
};

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var tanh(const Var& x);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);

Var mean_axis(const Var& x, int axis);
Var softmax(const Var& x, int axis);
Var concat(const std::vector<Var>& parts, int axis);
Var index_select(const Var& x, int axis, const std::vector<std::int64_t>& indices);
Var reshape(const Var& x, Shape shape);
Var permute(const Var& x, const std::vector<int>& order);

/// Rows of x [R][C] scaled to unit L2 norm; a zero row raises ZeroVector.
Var l2_normalize_rows(const Var& x);

/// prob [N][k][...], bank [k][C] -> [N][C][...]: sum_i prob_i * bank_i per position.
Var memory_read(const Var& prob, const Var& bank);

/// Mean softmax cross-entropy of logits [N][K] against integer labels.
Var cross_entropy(const Var& logits, const std::vector<int>& labels);

/// Inverted dropout; identity when !training or p == 0.
Var dropout(const Var& x, double p, Rng& rng, bool training);

/// Scalar sum_i x_i * w_i against a fixed weight tensor.
Var weighted_sum(const Var& x, const Tensor& weights);
Var mean_all(const Var& x);

}  // namespace memdpc::ag
