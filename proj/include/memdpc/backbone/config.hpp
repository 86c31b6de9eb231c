#pragma once

#include <json.hpp>
#include <string>
#include <vector>

namespace memdpc::backbone {

enum class EncoderDepth { R18, R34, Tiny };

std::string to_string(EncoderDepth depth);
EncoderDepth parse_depth(const std::string& name);

/// One residual stage: `depth` basic units, all convolutions
/// temporal_kernel x 3 x 3; the first unit applies the strides.
struct StageSpec {
  int channels = 64;
  int depth = 2;
  int temporal_kernel = 1;
  int temporal_stride = 1;
  int spatial_stride = 1;

  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

struct BackboneConfig {
  EncoderDepth depth = EncoderDepth::Tiny;
  int input_size = 32;
  int block_len = 5;
  int input_channels = 3;
  int stem_channels = 16;
  int stem_kernel = 5;
  int stem_stride = 2;
  bool stem_pool = true;
  std::vector<StageSpec> stages;
  bool batch_norm = true;

  /// R18/R34 follow the 2D+3D ResNet stage table; Tiny is the desk-scale
  /// two-stage variant (16 channels, one unit per stage).
  static BackboneConfig make(EncoderDepth depth, int input_size = 0, int block_len = 5);

  /// Channel count of the encoder output, which is also the aggregator hidden size.
  int feature_channels() const { return stages.empty() ? stem_channels : stages.back().channels; }
  /// Spatial side of the encoder output for the configured input size.
  int feature_size() const;

  void validate() const;

  nlohmann::json to_json() const;
  static BackboneConfig from_json(const nlohmann::json& j);

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

}  // namespace memdpc::backbone
