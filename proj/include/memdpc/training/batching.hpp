#pragma once

#include <cstdint>
#include <vector>

#include "memdpc/training/config.hpp"
#include "memdpc/videodata/clip.hpp"
#include "memdpc/videodata/dataset_index.hpp"

namespace memdpc::training {

/// One window request: which clip, first frame, augmentation seed.
struct WindowRequest {
  const videodata::Clip* clip = nullptr;
  int start = 0;
  std::uint64_t seed = 0;
};

/// Partitions, augments and stacks windows into an encoder batch
/// [B*N][3][L][H][W].
Tensor make_batch(const std::vector<WindowRequest>& windows, const DataSpec& data, int block_len,
                  const videodata::AugmentPolicy& policy);

/// Loads a split, rejecting clips shorter than one window. Throws
/// DataExhausted when nothing usable remains.
std::vector<videodata::LoadedClip> load_split(const videodata::DatasetIndex& index,
                                              videodata::Split split, videodata::Modality modality,
                                              const DataSpec& data, int block_len);

}  // namespace memdpc::training
