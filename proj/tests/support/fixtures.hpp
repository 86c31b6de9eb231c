#pragma once

#include <filesystem>

#include "memdpc/training/config.hpp"
#include "memdpc/videodata/synthetic.hpp"

namespace memdpc::testing {

/// 4 classes x `per_class` clips of `frames` frames at 32x32, packed only.
inline videodata::DatasetIndex small_dataset(const std::filesystem::path& dir, bool glitch = false,
                                             int per_class = 4, int frames = 40) {
  videodata::SyntheticSpec s;
  s.clips_per_class = per_class;
  s.clip_len = frames;
  s.write_png = false;
  s.glitch = glitch;
  s.train_fraction = 0.75;
  return videodata::gen_synthetic(s, dir);
}

/// Tiny backbone, k = 8, batch 4, stride 1: a few hundred ms per step.
inline training::TrainConfig small_config() {
  training::TrainConfig c;
  c.batch_size = 4;
  c.data.sampling_stride = 1;
  c.model.memory_k = 8;
  c.max_steps = 6;
  c.val_every = 3;
  c.val_batches = 1;
  c.checkpoint_every = 3;
  c.deterministic = true;
  return c;
}

}  // namespace memdpc::testing
