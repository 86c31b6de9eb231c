#include "memdpc/backbone/conv_gru.hpp"

#include <cmath>

#include "memdpc/core/error.hpp"

namespace memdpc::backbone {

ConvGru::ConvGru(int channels, Rng& rng) : channels_(channels) {
  const double std = std::sqrt(1.0 / (2.0 * channels));
  auto w = [&] { return ag::parameter(rng.normal_tensor({channels, 2 * channels}, std)); };
  auto b = [&] { return ag::parameter(Tensor({channels}, 0.0)); };
  reset_w_ = w();
  reset_b_ = b();
  update_w_ = w();
  update_b_ = b();
  out_w_ = w();
  out_b_ = b();
}

ag::Var ConvGru::step(const ag::Var& z, const ag::Var& hidden) const {
  const auto& zs = z->shape();
  if (zs.size() < 2 || zs[1] != channels_) {
    fail(ErrorKind::ShapeMismatch, "aggregator expects " + std::to_string(channels_) +
                                       " channels, got " + shape_str(zs));
  }
  ag::Var h = hidden ? hidden : ag::constant(Tensor(zs));
  if (h->shape() != zs) {
    fail(ErrorKind::ShapeMismatch,
         "hidden state " + shape_str(h->shape()) + " does not match input " + shape_str(zs));
  }
  ag::Var zh = ag::concat({z, h}, 1);
  ag::Var r = ag::sigmoid(ag::pointwise(zh, reset_w_, reset_b_));
  ag::Var u = ag::sigmoid(ag::pointwise(zh, update_w_, update_b_));
  ag::Var n = ag::tanh(ag::pointwise(ag::concat({z, ag::mul(r, h)}, 1), out_w_, out_b_));
  return ag::add(h, ag::mul(u, ag::sub(n, h)));
}

ag::Var ConvGru::run(const std::vector<ag::Var>& z) const {
  if (z.empty()) fail(ErrorKind::EmptySequence, "aggregate_sequence needs at least one block");
  return run_from(z, nullptr);
}

ag::Var ConvGru::run_from(const std::vector<ag::Var>& z, ag::Var hidden) const {
  for (const auto& zi : z) hidden = step(zi, hidden);
  return hidden;
}

void ConvGru::parameters(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + "reset.weight", reset_w_});
  out.push_back({prefix + "reset.bias", reset_b_});
  out.push_back({prefix + "update.weight", update_w_});
  out.push_back({prefix + "update.bias", update_b_});
  out.push_back({prefix + "out.weight", out_w_});
  out.push_back({prefix + "out.bias", out_b_});
}

namespace {
ag::Var batch1(const Tensor& t) {
  Shape s = t.shape();
  s.insert(s.begin(), 1);
  return ag::constant(t.reshaped(s));
}
Tensor unbatch(const ag::Var& v) {
  Shape s = v->shape();
  s.erase(s.begin());
  return v->value.reshaped(s);
}
}  // namespace

ContextFeature aggregate_step(const ConvGru& gru, const BlockFeature& z,
                              const ContextFeature* hidden) {
  ag::NoGradGuard guard;
  ag::Var h = hidden ? batch1(hidden->values) : nullptr;
  if (hidden && hidden->values.shape() != z.values.shape()) {
    fail(ErrorKind::ShapeMismatch, "hidden state " + shape_str(hidden->values.shape()) +
                                       " does not match block feature " +
                                       shape_str(z.values.shape()));
  }
  return ContextFeature{unbatch(gru.step(batch1(z.values), h))};
}

ContextFeature aggregate_sequence(const ConvGru& gru, const std::vector<BlockFeature>& z) {
  if (z.empty()) fail(ErrorKind::EmptySequence, "aggregate_sequence needs at least one block");
  ag::NoGradGuard guard;
  std::vector<ag::Var> seq;
  for (const auto& zi : z) seq.push_back(batch1(zi.values));
  return ContextFeature{unbatch(gru.run(seq))};
}

}  // namespace memdpc::backbone
