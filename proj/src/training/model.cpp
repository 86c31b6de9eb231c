#include "memdpc/training/model.hpp"

#include "memdpc/core/error.hpp"
#include "memdpc/core/ops.hpp"
#include "memdpc/loss/contrastive.hpp"

namespace memdpc::training {

namespace {
const ModelSpec& checked(const ModelSpec& spec) {
  spec.validate();
  return spec;
}
}  // namespace

Model::Model(const ModelSpec& spec, std::uint64_t seed)
    : spec_(checked(spec)),
      init_rng_(derive_seed(seed, 0x6d6f64656cULL)),
      encoder(spec_.backbone, init_rng_),
      aggregator(spec_.backbone.feature_channels(), init_rng_),
      backward_aggregator(spec_.bidirectional ? std::optional<backbone::ConvGru>(
                                                    std::in_place, spec_.backbone.feature_channels(),
                                                    init_rng_)
                                              : std::nullopt),
      phi(spec_.backbone.feature_channels(), spec_.hidden_width(), spec_.memory_k, init_rng_),
      memory(spec_.memory_k, spec_.backbone.feature_channels(), init_rng_) {}

memory::PredictionModel Model::forward_model() const {
  return memory::PredictionModel{aggregator, phi, memory, spec_.temperature};
}

memory::PredictionModel Model::backward_model() const {
  if (!backward_aggregator) fail(ErrorKind::ConfigError, "model has no backward aggregator");
  return memory::PredictionModel{*backward_aggregator, phi, memory, spec_.temperature};
}

ParamList Model::parameters() const {
  ParamList out;
  encoder.parameters("encoder.", out);
  aggregator.parameters("aggregator.", out);
  if (backward_aggregator) backward_aggregator->parameters("aggregator_backward.", out);
  phi.parameters("phi.", out);
  memory.parameters("memory.", out);
  return out;
}

BufferList Model::buffers() const {
  BufferList out;
  encoder.buffers("encoder.", out);
  return out;
}

std::vector<ag::Var> Model::encode(const ag::Var& blocks, int batch, bool training) const {
  const std::int64_t total = blocks->shape().at(0);
  if (batch < 1 || total % batch != 0) {
    fail(ErrorKind::ShapeMismatch, "encoder batch " + std::to_string(total) +
                                       " is not a multiple of " + std::to_string(batch));
  }
  const std::int64_t n = total / batch;
  ag::Var z = encoder.forward(blocks, training);
  const Shape fs = z->shape();
  z = ag::reshape(z, {batch, n, fs[1], fs[2], fs[3]});
  std::vector<ag::Var> out;
  for (std::int64_t i = 0; i < n; ++i) {
    out.push_back(ag::reshape(ag::index_select(z, 1, {i}), {batch, fs[1], fs[2], fs[3]}));
  }
  return out;
}

PretextLoss pretext_loss(const Model& model, const std::vector<ag::Var>& z, int steps,
                         bool normalized) {
  PretextLoss out;
  auto fwd = memory::forward_pairs(z, steps, model.forward_model());
  auto lf = loss::dense_contrastive_loss({fwd.predicted, fwd.target}, normalized);
  out.num_candidates = lf.num_candidates;
  if (!model.backward_aggregator) {
    out.loss = lf.loss;
    out.value = lf.value;
    out.top1 = lf.top1_accuracy;
    return out;
  }
  std::vector<ag::Var> reversed(z.rbegin(), z.rend());
  auto bwd = memory::forward_pairs(reversed, steps, model.backward_model());
  auto lb = loss::dense_contrastive_loss({bwd.predicted, bwd.target}, normalized);
  out.loss = loss::combine_bidirectional(lf.loss, lb.loss);
  out.value = out.loss->value.item();
  out.top1 = 0.5 * (lf.top1_accuracy + lb.top1_accuracy);
  return out;
}

PretextLoss pretext_loss(const Model& model, const Tensor& blocks, int batch, int steps,
                         bool normalized, bool training) {
  return pretext_loss(model, model.encode(ag::constant(blocks), batch, training), steps, normalized);
}

std::vector<double> fuse_two_stream(const std::vector<double>& logits_rgb,
                                    const std::vector<double>& logits_flow) {
  if (logits_rgb.size() != logits_flow.size()) {
    fail(ErrorKind::LengthMismatch, "cannot fuse " + std::to_string(logits_rgb.size()) + " and " +
                                        std::to_string(logits_flow.size()) + " class scores");
  }
  std::vector<double> out(logits_rgb.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (logits_rgb[i] + logits_flow[i]);
  return out;
}

}  // namespace memdpc::training
