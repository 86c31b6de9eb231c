#include "memdpc/backbone/encoder.hpp"

#include <cmath>

#include "memdpc/core/error.hpp"

namespace memdpc::backbone {

Encoder::ConvUnit Encoder::make_conv(int in_ch, int out_ch, int kt, int k, int st, int s,
                                     Rng& rng) const {
  ConvUnit u;
  const int fan_in = in_ch * kt * k * k;
  u.weight = ag::parameter(rng.normal_tensor({out_ch, in_ch, kt, k, k}, std::sqrt(2.0 / fan_in)));
  if (config_.batch_norm) {
    u.gamma = ag::parameter(Tensor({out_ch}, 1.0));
    u.beta = ag::parameter(Tensor({out_ch}, 0.0));
  } else {
    u.bias = ag::parameter(Tensor({out_ch}, 0.0));
  }
  u.geom.stride_t = st;
  u.geom.stride_h = u.geom.stride_w = s;
  u.geom.pad_t = kt / 2;
  u.geom.pad_h = u.geom.pad_w = k / 2;
  return u;
}

Encoder::Encoder(const BackboneConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  stem_ = make_conv(config_.input_channels, config_.stem_channels, 1, config_.stem_kernel, 1,
                    config_.stem_stride, rng);
  int in_ch = config_.stem_channels;
  for (const auto& spec : config_.stages) {
    std::vector<ResidualUnit> units;
    for (int u = 0; u < spec.depth; ++u) {
      const int st = u == 0 ? spec.temporal_stride : 1;
      const int s = u == 0 ? spec.spatial_stride : 1;
      ResidualUnit unit;
      unit.first = make_conv(in_ch, spec.channels, spec.temporal_kernel, 3, st, s, rng);
      unit.second = make_conv(spec.channels, spec.channels, spec.temporal_kernel, 3, 1, 1, rng);
      if (st != 1 || s != 1 || in_ch != spec.channels) {
        unit.has_projection = true;
        unit.projection = make_conv(in_ch, spec.channels, 1, 1, st, s, rng);
      }
      units.push_back(std::move(unit));
      in_ch = spec.channels;
    }
    stages_.push_back(std::move(units));
  }
}

ag::Var Encoder::apply(const ConvUnit& unit, const ag::Var& x, bool training) const {
  ag::Var y = ag::conv3d(x, unit.weight, unit.bias, unit.geom);
  if (config_.batch_norm) y = ag::batch_norm(y, unit.gamma, unit.beta, unit.stats, training);
  return y;
}

ag::Var Encoder::forward(const ag::Var& blocks, bool training) const {
  const auto& s = blocks->shape();
  if (s.size() != 5 || s[1] != config_.input_channels || s[2] != config_.block_len ||
      s[3] != config_.input_size || s[4] != config_.input_size) {
    fail(ErrorKind::ShapeMismatch,
         "encoder expects [N][" + std::to_string(config_.input_channels) + "][" +
             std::to_string(config_.block_len) + "][" + std::to_string(config_.input_size) + "][" +
             std::to_string(config_.input_size) + "], got " + shape_str(s));
  }
  ag::Var x = ag::relu(apply(stem_, blocks, training));
  if (config_.stem_pool) {
    ag::PoolGeometry pool;
    pool.kernel_h = pool.kernel_w = 3;
    pool.stride_h = pool.stride_w = 2;
    pool.pad_h = pool.pad_w = 1;
    x = ag::max_pool3d(x, pool);
  }
  for (const auto& stage : stages_) {
    for (const auto& unit : stage) {
      ag::Var h = ag::relu(apply(unit.first, x, training));
      h = apply(unit.second, h, training);
      ag::Var skip = unit.has_projection ? apply(unit.projection, x, training) : x;
      x = ag::relu(ag::add(h, skip));
    }
  }
  return ag::mean_axis(x, 2);
}

BlockFeature Encoder::encode_block(const Tensor& block) const {
  const auto& s = block.shape();
  if (s.size() != 4 || s[0] != config_.block_len || s[1] != config_.input_size ||
      s[2] != config_.input_size || s[3] != config_.input_channels) {
    fail(ErrorKind::ShapeMismatch, "encode_block expects [L][H][W][3] matching the config, got " +
                                       shape_str(s));
  }
  const std::int64_t L = s[0], H = s[1], W = s[2], C = s[3];
  Tensor x({1, C, L, H, W});
  for (std::int64_t l = 0; l < L; ++l)
    for (std::int64_t h = 0; h < H; ++h)
      for (std::int64_t w = 0; w < W; ++w)
        for (std::int64_t c = 0; c < C; ++c)
          x[((c * L + l) * H + h) * W + w] = block[((l * H + h) * W + w) * C + c];
  ag::NoGradGuard guard;
  ag::Var out = forward(ag::constant(std::move(x)), false);
  const auto& os = out->shape();
  return BlockFeature{out->value.reshaped({os[1], os[2], os[3]})};
}

void Encoder::conv_params(const std::string& name, const ConvUnit& unit, ParamList& out) {
  out.push_back({name + ".weight", unit.weight});
  if (unit.bias) out.push_back({name + ".bias", unit.bias});
  if (unit.gamma) {
    out.push_back({name + ".bn.gamma", unit.gamma});
    out.push_back({name + ".bn.beta", unit.beta});
  }
}

void Encoder::conv_buffers(const std::string& name, const ConvUnit& unit, BufferList& out) {
  if (!unit.gamma) return;
  const auto c = unit.weight->shape()[0];
  if (unit.stats.running_mean.size() != c) {
    unit.stats.running_mean = Tensor({c}, 0.0);
    unit.stats.running_var = Tensor({c}, 1.0);
  }
  out.push_back({name + ".bn.running_mean", &unit.stats.running_mean});
  out.push_back({name + ".bn.running_var", &unit.stats.running_var});
}

void Encoder::parameters(const std::string& prefix, ParamList& out) const {
  conv_params(prefix + "stem", stem_, out);
  for (std::size_t s = 0; s < stages_.size(); ++s)
    for (std::size_t u = 0; u < stages_[s].size(); ++u) {
      const std::string base = prefix + "stage" + std::to_string(s + 1) + "." + std::to_string(u);
      const auto& unit = stages_[s][u];
      conv_params(base + ".conv1", unit.first, out);
      conv_params(base + ".conv2", unit.second, out);
      if (unit.has_projection) conv_params(base + ".proj", unit.projection, out);
    }
}

void Encoder::buffers(const std::string& prefix, BufferList& out) const {
  conv_buffers(prefix + "stem", stem_, out);
  for (std::size_t s = 0; s < stages_.size(); ++s)
    for (std::size_t u = 0; u < stages_[s].size(); ++u) {
      const std::string base = prefix + "stage" + std::to_string(s + 1) + "." + std::to_string(u);
      auto& unit = stages_[s][u];
      conv_buffers(base + ".conv1", unit.first, out);
      conv_buffers(base + ".conv2", unit.second, out);
      if (unit.has_projection) conv_buffers(base + ".proj", unit.projection, out);
    }
}

}  // namespace memdpc::backbone
