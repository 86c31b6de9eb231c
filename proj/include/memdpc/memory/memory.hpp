#pragma once

#include <span>
#include <vector>

#include "memdpc/backbone/conv_gru.hpp"
#include "memdpc/backbone/features.hpp"
#include "memdpc/core/ops.hpp"
#include "memdpc/core/params.hpp"
#include "memdpc/core/rng.hpp"

namespace memdpc::memory {

/// Learnable k x C matrix of compressed hypotheses.
class MemoryBank {
 public:
  /// Rows drawn i.i.d. from N(0, 1/C).
  MemoryBank(int slots, int channels, Rng& rng);
  explicit MemoryBank(Tensor rows);

  int slots() const { return static_cast<int>(rows_->shape()[0]); }
  int channels() const { return static_cast<int>(rows_->shape()[1]); }
  const ag::Var& rows() const { return rows_; }

  void parameters(const std::string& prefix, ParamList& out) const;

 private:
  ag::Var rows_;
};

/// Future-prediction function: pointwise C -> C_mid -> k with a rectifier
/// in between. Produces addressing logits.
class Predictor {
 public:
  Predictor(int channels, int hidden, int slots, Rng& rng);

  int slots() const { return static_cast<int>(out_w_->shape()[0]); }
  ag::Var logits(const ag::Var& context) const;

  void parameters(const std::string& prefix, ParamList& out) const;

 private:
  ag::Var hidden_w_, hidden_b_;
  ag::Var out_w_, out_b_;
};

/// Per-position distribution over memory slots: [k][H][W].
struct AddressingDistribution {
  Tensor p;
};

/// Predicted future feature map: [C][H][W].
struct PredictedFeature {
  Tensor values;
};

/// context [B][C][H][W] -> [B][k][H][W], softmax over k of logits / temperature.
ag::Var address(const ag::Var& context, const Predictor& phi, double temperature = 1.0);
/// prob [B][k][H][W] -> [B][C][H][W], convex combination of memory rows.
ag::Var expect_future(const ag::Var& prob, const MemoryBank& bank);

AddressingDistribution address(const backbone::ContextFeature& context, const Predictor& phi,
                               double temperature = 1.0);
PredictedFeature expect_future(const AddressingDistribution& p, const MemoryBank& bank);

/// Dot product over channels; with `normalized` both vectors are L2
/// normalized first (ZeroVector if either has zero norm).
double critic(std::span<const double> predicted, std::span<const double> observed, bool normalized);

struct PredictionModel {
  const backbone::ConvGru& aggregator;
  const Predictor& phi;
  const MemoryBank& bank;
  double temperature = 1.0;
};

/// Recursive prediction: aggregate z_1..z_t, then `steps` times address the
/// memory, read the expected feature and feed it back through the
/// aggregator. Each z is [B][C][H][W].
std::vector<ag::Var> predict_sequence(const std::vector<ag::Var>& z, int steps,
                                      const PredictionModel& model);

/// Same recursion, also returning the addressing distribution of each step.
struct PredictionTrace {
  std::vector<ag::Var> predicted;
  std::vector<ag::Var> addressing;
};
PredictionTrace predict_sequence_traced(const std::vector<ag::Var>& z, int steps,
                                        const PredictionModel& model);

struct DirectionalPairs {
  std::vector<ag::Var> predicted;
  std::vector<ag::Var> target;
};

struct BidirectionalPairs {
  DirectionalPairs forward;
  DirectionalPairs backward;
};

/// Forward: predict z_{N-s+1..N} from z_{1..N-s} with `forward_model`.
/// Backward: predict z_s..z_1 from z_N..z_{s+1} with `backward_model`
/// (block order reversed; frames inside a block keep natural time).
BidirectionalPairs bidirectional_predict(const std::vector<ag::Var>& z, int steps,
                                         const PredictionModel& forward_model,
                                         const PredictionModel& backward_model);

/// Forward pairs only (the single-direction training objective).
DirectionalPairs forward_pairs(const std::vector<ag::Var>& z, int steps,
                               const PredictionModel& model);

}  // namespace memdpc::memory
