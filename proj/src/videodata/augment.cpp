#include "memdpc/videodata/augment.hpp"

#include <algorithm>
#include <cmath>

#include "memdpc/core/error.hpp"
#include "memdpc/core/rng.hpp"

namespace memdpc::videodata {

AugmentPolicy AugmentPolicy::eval_view() const {
  AugmentPolicy p;
  p.crop_size = crop_size;
  p.random_crop = false;
  p.output_size = output_size;
  return p;
}

namespace {

void bilinear_resize(const float* src, int sh, int sw, float* dst, int dh, int dw) {
  const double sy = static_cast<double>(sh) / dh, sx = static_cast<double>(sw) / dw;
  for (int y = 0; y < dh; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(sh - 1));
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, sh - 1);
    const double wy = fy - y0;
    for (int x = 0; x < dw; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(sw - 1));
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, sw - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - wy) * ((1 - wx) * src[(y0 * sw + x0) * 3 + c] + wx * src[(y0 * sw + x1) * 3 + c]) +
                         wy * ((1 - wx) * src[(y1 * sw + x0) * 3 + c] + wx * src[(y1 * sw + x1) * 3 + c]);
        dst[(y * dw + x) * 3 + c] = static_cast<float>(v);
      }
    }
  }
}

void jitter_frame(float* px, std::size_t n, double brightness, double contrast, double saturation,
                  bool grey) {
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    float* p = px + i * 3;
    for (int c = 0; c < 3; ++c) p[c] = static_cast<float>(std::clamp(p[c] * brightness, 0.0, 1.0));
    mean += 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
  }
  mean /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    float* p = px + i * 3;
    for (int c = 0; c < 3; ++c) {
      p[c] = static_cast<float>(std::clamp((p[c] - mean) * contrast + mean, 0.0, 1.0));
    }
    const double luma = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    for (int c = 0; c < 3; ++c) {
      const double v = grey ? luma : luma + (p[c] - luma) * saturation;
      p[c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
}

}  // namespace

VideoBlockSequence augment(const VideoBlockSequence& seq, const AugmentPolicy& policy,
                           std::uint64_t seed) {
  const int crop = policy.crop_size > 0 ? policy.crop_size : std::min(seq.height, seq.width);
  if (crop > seq.height || crop > seq.width) {
    fail(ErrorKind::InvalidPolicy, "crop " + std::to_string(crop) + " exceeds frame " +
                                       std::to_string(seq.height) + "x" + std::to_string(seq.width));
  }
  if (policy.output_size < 0 || policy.flip_prob < 0 || policy.flip_prob > 1 ||
      policy.greyscale_prob < 0 || policy.greyscale_prob > 1 || policy.brightness < 0 ||
      policy.contrast < 0 || policy.saturation < 0) {
    fail(ErrorKind::InvalidPolicy, "augmentation parameters out of range");
  }
  const int out_size = policy.output_size > 0 ? policy.output_size : crop;

  Rng clip_rng(derive_seed(seed, 0));
  int top = (seq.height - crop) / 2, left = (seq.width - crop) / 2;
  if (policy.random_crop && policy.crop_size > 0) {
    top = static_cast<int>(clip_rng.integer(0, seq.height - crop));
    left = static_cast<int>(clip_rng.integer(0, seq.width - crop));
  }
  const bool flip = policy.force_flip ? *policy.force_flip
                                      : (policy.flip_prob > 0 && clip_rng.bernoulli(policy.flip_prob));
  const bool jitter = policy.brightness > 0 || policy.contrast > 0 || policy.saturation > 0 ||
                      policy.greyscale_prob > 0;

  VideoBlockSequence out;
  out.num_blocks = seq.num_blocks;
  out.block_len = seq.block_len;
  out.height = out_size;
  out.width = out_size;
  out.source_id = seq.source_id;
  out.frame_offsets = seq.frame_offsets;
  out.pixels.resize(out.frame_size() * seq.num_blocks * seq.block_len);

  std::vector<float> cropped(static_cast<std::size_t>(crop) * crop * 3);
  int frame_no = 0;
  for (int b = 0; b < seq.num_blocks; ++b)
    for (int l = 0; l < seq.block_len; ++l, ++frame_no) {
      const float* src = seq.frame(b, l);
      for (int y = 0; y < crop; ++y)
        for (int x = 0; x < crop; ++x) {
          const int sx = flip ? left + crop - 1 - x : left + x;
          const float* p = src + ((top + y) * seq.width + sx) * 3;
          std::copy_n(p, 3, cropped.data() + (y * crop + x) * 3);
        }
      float* dst = out.frame(b, l);
      if (out_size == crop) {
        std::copy(cropped.begin(), cropped.end(), dst);
      } else {
        bilinear_resize(cropped.data(), crop, crop, dst, out_size, out_size);
      }
      if (jitter) {
        Rng frame_rng(derive_seed(seed, 1, static_cast<std::uint64_t>(frame_no)));
        const double br = frame_rng.uniform(1.0 - policy.brightness, 1.0 + policy.brightness);
        const double ct = frame_rng.uniform(1.0 - policy.contrast, 1.0 + policy.contrast);
        const double st = frame_rng.uniform(1.0 - policy.saturation, 1.0 + policy.saturation);
        const bool grey = frame_rng.bernoulli(policy.greyscale_prob);
        jitter_frame(dst, static_cast<std::size_t>(out_size) * out_size, br, ct, st, grey);
      }
    }
  return out;
}

}  // namespace memdpc::videodata
