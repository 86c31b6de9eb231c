#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "memdpc/videodata/clip.hpp"
#include "memdpc/videodata/dataset_index.hpp"

namespace memdpc::videodata {

enum class SpriteKind { Random, Square, Disk, Cross };

std::string to_string(SpriteKind k);
SpriteKind parse_sprite_kind(const std::string& s);

struct ClassMotion {
  double direction = 0.0;  // radians, image x axis to the right, y down
  double speed = 1.0;      // pixels per frame
  /// Random draws the sprite shape per clip, independent of the class.
  SpriteKind sprite = SpriteKind::Random;
};

/// Moving-sprite videos whose class is determined only by motion.
struct SyntheticSpec {
  int num_classes = 4;
  int clips_per_class = 50;
  int frame_size = 32;
  int clip_len = 60;
  /// Per-class motion; when empty, directions are evenly spaced and share `speed`.
  std::vector<ClassMotion> motion;
  double speed = 1.5;
  double noise_std = 0.02;
  double texture = 0.1;  // amplitude of the static background texture
  double colour_jitter = 1.0;  // 1: colours span the full palette, 0: fixed colours
  int texture_scale = 1;  // texture correlation length in pixels (1: per-pixel noise)
  int sprite_min = 5;     // sprite size range in pixels at frame_size 32
  int sprite_max = 8;
  int num_sprites = 1;    // all sprites of a clip share the class motion
  double sprite_texture = 0.0;  // amplitude of a texture carried by the sprite
  bool pan = false;       // background texture translates with the class motion
  std::uint64_t seed = 0;
  double train_fraction = 0.8;

  bool write_png = true;
  bool write_packed = true;
  bool write_flow = false;
  std::string frame_pattern = kDefaultFramePattern;

  /// Frame-order corruption: from a per-clip failure frame onward, the
  /// remaining frames are shuffled.
  bool glitch = false;
  double glitch_min = 0.3;  // failure frame range as a fraction of clip_len
  double glitch_max = 0.7;

  ClassMotion motion_for(int cls) const;
  void validate() const;
};

struct RenderedClip {
  Clip rgb;
  std::optional<Clip> flow;
  std::vector<std::array<double, 2>> centers;  // sprite center (x, y) per output frame
  std::optional<int> failure_frame;
};

/// Deterministic rendering of clip `index` of class `cls`.
RenderedClip render_clip(const SyntheticSpec& spec, int cls, int index);

/// Writes all clips plus `index.csv` under `out_dir` and returns the index.
/// Split is stratified: the first round(train_fraction * clips_per_class)
/// clips of each class are train, the rest test.
DatasetIndex gen_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

}  // namespace memdpc::videodata
