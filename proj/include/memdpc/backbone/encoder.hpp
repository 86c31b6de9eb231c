#pragma once

#include <vector>

#include "memdpc/backbone/config.hpp"
#include "memdpc/backbone/features.hpp"
#include "memdpc/core/ops.hpp"
#include "memdpc/core/params.hpp"
#include "memdpc/core/rng.hpp"

namespace memdpc::backbone {

/// 2D+3D residual block encoder: stem conv, spatial max pool, residual
/// stages, then an average over whatever temporal extent remains.
class Encoder {
 public:
  Encoder(const BackboneConfig& config, Rng& rng);

  const BackboneConfig& config() const { return config_; }

  /// blocks [N][3][L][H][W] -> [N][C][H'][W'].
  ag::Var forward(const ag::Var& blocks, bool training) const;

  /// Single block in [L][H][W][3] layout, inference mode, no graph.
  BlockFeature encode_block(const Tensor& block) const;

  void parameters(const std::string& prefix, ParamList& out) const;
  /// Running statistics; mutable state even on a const encoder.
  void buffers(const std::string& prefix, BufferList& out) const;

 private:
  struct ConvUnit {
    ag::Var weight;
    ag::Var bias;   // only without batch norm
    ag::Var gamma;  // only with batch norm
    ag::Var beta;
    mutable ag::BatchNormState stats;
    ag::ConvGeometry geom;
  };
  struct ResidualUnit {
    ConvUnit first;
    ConvUnit second;
    bool has_projection = false;
    ConvUnit projection;
  };

  ConvUnit make_conv(int in_ch, int out_ch, int kt, int k, int st, int s, Rng& rng) const;
  ag::Var apply(const ConvUnit& unit, const ag::Var& x, bool training) const;
  static void conv_params(const std::string& name, const ConvUnit& unit, ParamList& out);
  static void conv_buffers(const std::string& name, const ConvUnit& unit, BufferList& out);

  BackboneConfig config_;
  ConvUnit stem_;
  std::vector<std::vector<ResidualUnit>> stages_;
};

}  // namespace memdpc::backbone
