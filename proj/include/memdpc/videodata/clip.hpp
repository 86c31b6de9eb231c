#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "memdpc/core/tensor.hpp"

namespace memdpc::videodata {

/// A decoded clip: `frames` images of height x width x channels bytes, HWC.
struct Clip {
  std::string id;
  int frames = 0;
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  std::size_t frame_bytes() const {
    return static_cast<std::size_t>(height) * width * channels;
  }
  const std::uint8_t* frame(int t) const { return pixels.data() + frame_bytes() * t; }
  std::uint8_t* frame(int t) { return pixels.data() + frame_bytes() * t; }
};

/// N blocks of L frames, pixel values in [0,1], layout [N][L][H][W][3].
struct VideoBlockSequence {
  int num_blocks = 0;
  int block_len = 0;
  int height = 0;
  int width = 0;
  std::vector<float> pixels;
  std::string source_id;
  std::vector<int> frame_offsets;  // source frame index of every (block, position)

  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width * 3; }
  float* frame(int block, int pos) {
    return pixels.data() + frame_size() * (static_cast<std::size_t>(block) * block_len + pos);
  }
  const float* frame(int block, int pos) const {
    return pixels.data() + frame_size() * (static_cast<std::size_t>(block) * block_len + pos);
  }
};

struct PartitionOptions {
  int num_blocks = 8;
  int block_len = 5;
  int stride = 3;
  int start = 0;
  /// Wrap frame indices modulo the clip length instead of rejecting short clips.
  bool loop_pad = false;
};

/// Frames needed by one window: num_blocks * block_len * stride.
int required_frames(const PartitionOptions& opt);

/// Block b, position l takes source frame start + (b * block_len + l) * stride.
/// Throws InsufficientFrames unless frames - start >= required_frames(opt)
/// (or loop_pad is set).
VideoBlockSequence partition_clip(const Clip& clip, const PartitionOptions& opt);

/// Stacks sequences into an encoder batch [B*N][3][L][H][W], clip-major.
Tensor to_encoder_input(const std::vector<VideoBlockSequence>& batch);

// Storage. A clip is a directory of numbered frame images, optionally with
// a packed binary array `clip.bin` holding all frames.

inline constexpr const char* kPackedClipName = "clip.bin";
inline constexpr const char* kDefaultFramePattern = "frame_%05d.png";

std::string format_frame_name(const std::string& pattern, int index);
void validate_frame_pattern(const std::string& pattern);

Clip read_png_frames(const std::filesystem::path& dir, const std::string& pattern);
Clip read_packed_clip(const std::filesystem::path& file);
/// Reads the packed array when present and `prefer_packed`, else PNG frames.
Clip load_clip(const std::filesystem::path& dir, const std::string& pattern,
               bool prefer_packed = true);

void write_png(const std::filesystem::path& file, const std::uint8_t* rgb, int height, int width);
std::vector<std::uint8_t> read_png(const std::filesystem::path& file, int& height, int& width);
void write_png_frames(const Clip& clip, const std::filesystem::path& dir,
                      const std::string& pattern);
void write_packed_clip(const Clip& clip, const std::filesystem::path& file);

}  // namespace memdpc::videodata
