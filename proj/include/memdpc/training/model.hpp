#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "memdpc/backbone/conv_gru.hpp"
#include "memdpc/backbone/encoder.hpp"
#include "memdpc/core/params.hpp"
#include "memdpc/memory/memory.hpp"
#include "memdpc/training/config.hpp"

namespace memdpc::training {

/// Encoder f, aggregator g (plus g_b when bidirectional), predictor phi and
/// memory bank M, initialised from a single seed.
class Model {
 public:
  Model(const ModelSpec& spec, std::uint64_t seed);
  // Parameters are shared handles; copying would alias them.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelSpec& spec() const { return spec_; }
  int channels() const { return spec_.backbone.feature_channels(); }

  memory::PredictionModel forward_model() const;
  memory::PredictionModel backward_model() const;

  /// Checkpoint names: encoder.*, aggregator.*, aggregator_backward.*, phi.*, memory.bank.
  ParamList parameters() const;
  BufferList buffers() const;

  /// blocks [B*N][3][L][H][W] (clip-major) -> N features of shape [B][C][H'][W'].
  std::vector<ag::Var> encode(const ag::Var& blocks, int batch, bool training) const;

 private:
  ModelSpec spec_;
  Rng init_rng_;

 public:
  backbone::Encoder encoder;
  backbone::ConvGru aggregator;
  std::optional<backbone::ConvGru> backward_aggregator;
  memory::Predictor phi;
  memory::MemoryBank memory;
};

struct PretextLoss {
  ag::Var loss;
  double value = 0.0;
  double top1 = 0.0;
  std::int64_t num_candidates = 0;
};

/// Dense predictive objective on an encoder batch: forward prediction of the
/// last `steps` blocks, averaged with the backward direction when the model
/// is bidirectional.
PretextLoss pretext_loss(const Model& model, const Tensor& blocks, int batch, int steps,
                         bool normalized, bool training);

/// Same objective from already-encoded block features.
PretextLoss pretext_loss(const Model& model, const std::vector<ag::Var>& z, int steps,
                         bool normalized);

/// Late fusion of two class-score vectors by arithmetic mean.
std::vector<double> fuse_two_stream(const std::vector<double>& logits_rgb,
                                    const std::vector<double>& logits_flow);

}  // namespace memdpc::training
