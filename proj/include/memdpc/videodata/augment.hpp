#pragma once

#include <cstdint>
#include <optional>

#include "memdpc/videodata/clip.hpp"

namespace memdpc::videodata {

/// Clip-wise spatial crop/flip and frame-wise photometric jitter.
/// The default-constructed policy is the identity.
struct AugmentPolicy {
  int crop_size = 0;          // 0 keeps the full frame
  bool random_crop = true;    // false: center crop
  int output_size = 0;        // bilinear resize after cropping; 0 keeps the crop size
  double flip_prob = 0.0;
  std::optional<bool> force_flip;
  double brightness = 0.0;    // multiplicative factor drawn from [1-b, 1+b]
  double contrast = 0.0;
  double saturation = 0.0;
  double greyscale_prob = 0.0;

  /// Deterministic evaluation view: center crop, no flip, no jitter.
  AugmentPolicy eval_view() const;
};

/// Pure function of (seq, policy, seed). Crop and flip are drawn once per
/// clip; jitter and greyscale once per frame. Throws InvalidPolicy when the
/// crop is larger than the frame.
VideoBlockSequence augment(const VideoBlockSequence& seq, const AugmentPolicy& policy,
                           std::uint64_t seed);

}  // namespace memdpc::videodata
