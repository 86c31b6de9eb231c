#include "memdpc/training/config.hpp"

#include "memdpc/core/error.hpp"

namespace memdpc::training {

using nlohmann::json;

void ModelSpec::validate() const {
  backbone.validate();
  if (memory_k < 1) fail(ErrorKind::ConfigError, "memory_k must be >= 1");
  if (!(temperature > 0)) fail(ErrorKind::ConfigError, "temperature must be positive");
  if (predictor_hidden < 0) fail(ErrorKind::ConfigError, "predictor_hidden must be >= 0");
}

json ModelSpec::to_json() const {
  return {{"backbone", backbone.to_json()},
          {"memory_k", memory_k},
          {"predictor_hidden", predictor_hidden},
          {"bidirectional", bidirectional},
          {"temperature", temperature}};
}

ModelSpec ModelSpec::from_json(const json& j) {
  try {
    ModelSpec m;
    m.backbone = backbone::BackboneConfig::from_json(j.at("backbone"));
    m.memory_k = j.at("memory_k").get<int>();
    m.predictor_hidden = j.at("predictor_hidden").get<int>();
    m.bidirectional = j.at("bidirectional").get<bool>();
    m.temperature = j.at("temperature").get<double>();
    return m;
  } catch (const json::exception& e) {
    fail(ErrorKind::CorruptArchive, std::string("malformed model spec: ") + e.what());
  }
}

videodata::PartitionOptions DataSpec::partition(int block_len, int start) const {
  return videodata::PartitionOptions{num_blocks, block_len, sampling_stride, start, loop_pad};
}

int DataSpec::window_frames(int block_len) const {
  return num_blocks * block_len * sampling_stride;
}

json policy_to_json(const videodata::AugmentPolicy& p) {
  json j = {{"crop_size", p.crop_size},         {"random_crop", p.random_crop},
            {"output_size", p.output_size},     {"flip_prob", p.flip_prob},
            {"brightness", p.brightness},       {"contrast", p.contrast},
            {"saturation", p.saturation},       {"greyscale_prob", p.greyscale_prob}};
  j["force_flip"] = p.force_flip ? json(*p.force_flip) : json(nullptr);
  return j;
}

videodata::AugmentPolicy policy_from_json(const json& j) {
  videodata::AugmentPolicy p;
  p.crop_size = j.at("crop_size").get<int>();
  p.random_crop = j.at("random_crop").get<bool>();
  p.output_size = j.at("output_size").get<int>();
  p.flip_prob = j.at("flip_prob").get<double>();
  p.brightness = j.at("brightness").get<double>();
  p.contrast = j.at("contrast").get<double>();
  p.saturation = j.at("saturation").get<double>();
  p.greyscale_prob = j.at("greyscale_prob").get<double>();
  if (!j.at("force_flip").is_null()) p.force_flip = j.at("force_flip").get<bool>();
  return p;
}

json DataSpec::to_json() const {
  return {{"num_blocks", num_blocks},
          {"sampling_stride", sampling_stride},
          {"loop_pad", loop_pad},
          {"frame_pattern", frame_pattern},
          {"augment", policy_to_json(augment)}};
}

DataSpec DataSpec::from_json(const json& j) {
  DataSpec d;
  d.num_blocks = j.at("num_blocks").get<int>();
  d.sampling_stride = j.at("sampling_stride").get<int>();
  d.loop_pad = j.at("loop_pad").get<bool>();
  d.frame_pattern = j.at("frame_pattern").get<std::string>();
  d.augment = policy_from_json(j.at("augment"));
  return d;
}

void TrainConfig::validate() const {
  model.validate();
  if (data.num_blocks < 1 || data.sampling_stride < 1) {
    fail(ErrorKind::ConfigError, "num_blocks and sampling_stride must be >= 1");
  }
  if (pred_steps < 1 || pred_steps >= data.num_blocks) {
    fail(ErrorKind::ConfigError, "pred_steps must satisfy 1 <= pred_steps < num_blocks (" +
                                     std::to_string(pred_steps) + " vs " +
                                     std::to_string(data.num_blocks) + ")");
  }
  if (batch_size < 2) fail(ErrorKind::ConfigError, "batch_size must be >= 2");
  if (lr < 0 || lr_decay_factor <= 0 || lr_decay_factor > 1 || weight_decay < 0) {
    fail(ErrorKind::ConfigError, "invalid learning-rate settings");
  }
  if (plateau_patience < 1 || max_steps < 0 || val_every < 1 || val_batches < 1 ||
      checkpoint_every < 1) {
    fail(ErrorKind::ConfigError, "invalid schedule settings");
  }
  const int out = data.augment.output_size > 0 ? data.augment.output_size
                  : data.augment.crop_size > 0 ? data.augment.crop_size
                                               : 0;
  if (out > 0 && out != model.backbone.input_size) {
    fail(ErrorKind::ConfigError, "augmented frame size " + std::to_string(out) +
                                     " differs from backbone input_size " +
                                     std::to_string(model.backbone.input_size));
  }
}

json TrainConfig::to_json() const {
  return {{"modality", videodata::to_string(modality)},
          {"model", model.to_json()},
          {"data", data.to_json()},
          {"pred_steps", pred_steps},
          {"batch_size", batch_size},
          {"normalized_critic", normalized_critic},
          {"lr", lr},
          {"lr_decay_factor", lr_decay_factor},
          {"plateau_patience", plateau_patience},
          {"plateau_threshold", plateau_threshold},
          {"weight_decay", weight_decay},
          {"max_steps", max_steps},
          {"val_every", val_every},
          {"val_batches", val_batches},
          {"checkpoint_every", checkpoint_every},
          {"seed", seed},
          {"deterministic", deterministic}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  try {
    TrainConfig c;
    c.modality = videodata::parse_modality(j.at("modality").get<std::string>());
    c.model = ModelSpec::from_json(j.at("model"));
    c.data = DataSpec::from_json(j.at("data"));
    c.pred_steps = j.at("pred_steps").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.normalized_critic = j.at("normalized_critic").get<bool>();
    c.lr = j.at("lr").get<double>();
    c.lr_decay_factor = j.at("lr_decay_factor").get<double>();
    c.plateau_patience = j.at("plateau_patience").get<int>();
    c.plateau_threshold = j.at("plateau_threshold").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.max_steps = j.at("max_steps").get<int>();
    c.val_every = j.at("val_every").get<int>();
    c.val_batches = j.at("val_batches").get<int>();
    c.checkpoint_every = j.at("checkpoint_every").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.deterministic = j.at("deterministic").get<bool>();
    return c;
  } catch (const json::exception& e) {
    fail(ErrorKind::CorruptArchive, std::string("malformed training config: ") + e.what());
  }
}

}  // namespace memdpc::training
