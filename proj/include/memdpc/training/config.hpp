#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "memdpc/backbone/config.hpp"
#include "memdpc/videodata/augment.hpp"
#include "memdpc/videodata/dataset_index.hpp"

namespace memdpc::training {

/// Architecture of everything the pretext task trains.
struct ModelSpec {
  backbone::BackboneConfig backbone = backbone::BackboneConfig::make(backbone::EncoderDepth::Tiny);
  int memory_k = 64;
  int predictor_hidden = 0;  // 0 means the feature channel count
  bool bidirectional = false;
  double temperature = 1.0;

  int hidden_width() const {
    return predictor_hidden > 0 ? predictor_hidden : backbone.feature_channels();
  }
  void validate() const;
  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// How clips become block sequences.
struct DataSpec {
  int num_blocks = 8;
  int sampling_stride = 3;
  bool loop_pad = false;
  std::string frame_pattern = videodata::kDefaultFramePattern;
  videodata::AugmentPolicy augment;  // train-time policy; evaluation uses eval_view()

  videodata::PartitionOptions partition(int block_len, int start = 0) const;
  int window_frames(int block_len) const;
  nlohmann::json to_json() const;
  static DataSpec from_json(const nlohmann::json& j);
};

struct TrainConfig {
  videodata::Modality modality = videodata::Modality::Rgb;
  ModelSpec model;
  DataSpec data;
  int pred_steps = 3;
  int batch_size = 8;
  bool normalized_critic = false;
  double lr = 1e-3;
  double lr_decay_factor = 0.1;
  int plateau_patience = 3;
  double plateau_threshold = 1e-4;
  double weight_decay = 0.0;
  int max_steps = 2000;
  int val_every = 100;
  int val_batches = 2;
  int checkpoint_every = 500;
  std::uint64_t seed = 0;
  /// Record wall_ms as 0 so metrics files are byte-identical across reruns.
  bool deterministic = false;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

nlohmann::json policy_to_json(const videodata::AugmentPolicy& p);
videodata::AugmentPolicy policy_from_json(const nlohmann::json& j);

}  // namespace memdpc::training
