#include "memdpc/memory/memory.hpp"

#include <cmath>

#include "memdpc/core/error.hpp"

namespace memdpc::memory {

MemoryBank::MemoryBank(int slots, int channels, Rng& rng) {
  if (slots < 1 || channels < 1) fail(ErrorKind::ConfigError, "memory bank needs k >= 1 and C >= 1");
  rows_ = ag::parameter(rng.normal_tensor({slots, channels}, 1.0 / std::sqrt(channels)));
}

MemoryBank::MemoryBank(Tensor rows) {
  if (rows.rank() != 2 || rows.dim(0) < 1) {
    fail(ErrorKind::ShapeMismatch, "memory bank must be [k][C] with k >= 1");
  }
  if (!rows.all_finite()) fail(ErrorKind::NonFiniteInput, "memory bank rows must be finite");
  rows_ = ag::parameter(std::move(rows));
}

void MemoryBank::parameters(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + "bank", rows_});
}

Predictor::Predictor(int channels, int hidden, int slots, Rng& rng) {
  hidden_w_ = ag::parameter(rng.normal_tensor({hidden, channels}, std::sqrt(2.0 / channels)));
  hidden_b_ = ag::parameter(Tensor({hidden}, 0.0));
  out_w_ = ag::parameter(rng.normal_tensor({slots, hidden}, std::sqrt(1.0 / hidden)));
  out_b_ = ag::parameter(Tensor({slots}, 0.0));
}

ag::Var Predictor::logits(const ag::Var& context) const {
  return ag::pointwise(ag::relu(ag::pointwise(context, hidden_w_, hidden_b_)), out_w_, out_b_);
}

void Predictor::parameters(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + "hidden.weight", hidden_w_});
  out.push_back({prefix + "hidden.bias", hidden_b_});
  out.push_back({prefix + "out.weight", out_w_});
  out.push_back({prefix + "out.bias", out_b_});
}

ag::Var address(const ag::Var& context, const Predictor& phi, double temperature) {
  ag::Var logits = phi.logits(context);
  if (!logits->value.all_finite()) fail(ErrorKind::NonFiniteLogits, "addressing logits are not finite");
  if (temperature != 1.0) logits = ag::scale(logits, 1.0 / temperature);
  return ag::softmax(logits, 1);
}

ag::Var expect_future(const ag::Var& prob, const MemoryBank& bank) {
  return ag::memory_read(prob, bank.rows());
}

AddressingDistribution address(const backbone::ContextFeature& context, const Predictor& phi,
                               double temperature) {
  ag::NoGradGuard guard;
  Shape s = context.values.shape();
  s.insert(s.begin(), 1);
  ag::Var p = address(ag::constant(context.values.reshaped(s)), phi, temperature);
  Shape ps = p->shape();
  ps.erase(ps.begin());
  return AddressingDistribution{p->value.reshaped(ps)};
}

PredictedFeature expect_future(const AddressingDistribution& p, const MemoryBank& bank) {
  ag::NoGradGuard guard;
  Shape s = p.p.shape();
  s.insert(s.begin(), 1);
  ag::Var z = expect_future(ag::constant(p.p.reshaped(s)), bank);
  Shape zs = z->shape();
  zs.erase(zs.begin());
  return PredictedFeature{z->value.reshaped(zs)};
}

double critic(std::span<const double> predicted, std::span<const double> observed, bool normalized) {
  if (predicted.size() != observed.size()) {
    fail(ErrorKind::DimensionMismatch, "critic vectors differ in length");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    dot += predicted[i] * observed[i];
    na += predicted[i] * predicted[i];
    nb += observed[i] * observed[i];
  }
  if (!normalized) return dot;
  if (na == 0.0 || nb == 0.0) fail(ErrorKind::ZeroVector, "normalized critic on a zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

PredictionTrace predict_sequence_traced(const std::vector<ag::Var>& z, int steps,
                                        const PredictionModel& model) {
  if (steps < 0) fail(ErrorKind::ConfigError, "prediction steps must be >= 0");
  PredictionTrace trace;
  if (steps == 0) return trace;
  ag::Var hidden = model.aggregator.run(z);
  for (int i = 0; i < steps; ++i) {
    if (i > 0) hidden = model.aggregator.step(trace.predicted.back(), hidden);
    ag::Var p = address(hidden, model.phi, model.temperature);
    trace.addressing.push_back(p);
    trace.predicted.push_back(expect_future(p, model.bank));
  }
  return trace;
}

std::vector<ag::Var> predict_sequence(const std::vector<ag::Var>& z, int steps,
                                      const PredictionModel& model) {
  return predict_sequence_traced(z, steps, model).predicted;
}

DirectionalPairs forward_pairs(const std::vector<ag::Var>& z, int steps,
                               const PredictionModel& model) {
  const int n = static_cast<int>(z.size());
  if (steps < 0) fail(ErrorKind::ConfigError, "prediction steps must be >= 0");
  if (steps >= n) {
    fail(ErrorKind::TooFewBlocks, "need more than " + std::to_string(steps) + " blocks, got " +
                                      std::to_string(n));
  }
  DirectionalPairs pairs;
  if (steps == 0) return pairs;
  std::vector<ag::Var> past(z.begin(), z.end() - steps);
  pairs.predicted = predict_sequence(past, steps, model);
  pairs.target.assign(z.end() - steps, z.end());
  return pairs;
}

BidirectionalPairs bidirectional_predict(const std::vector<ag::Var>& z, int steps,
                                         const PredictionModel& forward_model,
                                         const PredictionModel& backward_model) {
  BidirectionalPairs out;
  out.forward = forward_pairs(z, steps, forward_model);
  std::vector<ag::Var> reversed(z.rbegin(), z.rend());
  out.backward = forward_pairs(reversed, steps, backward_model);
  return out;
}

}  // namespace memdpc::memory
