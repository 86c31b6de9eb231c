#include "memdpc/videodata/clip.hpp"

#include <png.h>

#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <regex>

#include "memdpc/core/error.hpp"

namespace memdpc::videodata {

namespace fs = std::filesystem;

int required_frames(const PartitionOptions& opt) {
  return opt.num_blocks * opt.block_len * opt.stride;
}

VideoBlockSequence partition_clip(const Clip& clip, const PartitionOptions& opt) {
  if (opt.num_blocks <= 0 || opt.block_len <= 0 || opt.stride <= 0 || opt.start < 0) {
    fail(ErrorKind::ConfigError, "partition sizes must be positive");
  }
  if (clip.channels != 3) fail(ErrorKind::ShapeMismatch, "clips must have 3 channels");
  const int need = required_frames(opt);
  if (!opt.loop_pad && clip.frames - opt.start < need) {
    fail(ErrorKind::InsufficientFrames,
         "clip '" + clip.id + "' has " + std::to_string(clip.frames - opt.start) +
             " frames from offset " + std::to_string(opt.start) + ", window needs " +
             std::to_string(need));
  }
  if (clip.frames <= 0) fail(ErrorKind::InsufficientFrames, "clip '" + clip.id + "' is empty");

  VideoBlockSequence seq;
  seq.num_blocks = opt.num_blocks;
  seq.block_len = opt.block_len;
  seq.height = clip.height;
  seq.width = clip.width;
  seq.source_id = clip.id;
  seq.pixels.resize(seq.frame_size() * opt.num_blocks * opt.block_len);
  const std::size_t fb = clip.frame_bytes();
  for (int b = 0; b < opt.num_blocks; ++b)
    for (int l = 0; l < opt.block_len; ++l) {
      int idx = opt.start + (b * opt.block_len + l) * opt.stride;
      if (opt.loop_pad) idx %= clip.frames;
      seq.frame_offsets.push_back(idx);
      const std::uint8_t* src = clip.frame(idx);
      float* dst = seq.frame(b, l);
      for (std::size_t i = 0; i < fb; ++i) dst[i] = static_cast<float>(src[i]) / 255.0f;
    }
  return seq;
}

Tensor to_encoder_input(const std::vector<VideoBlockSequence>& batch) {
  if (batch.empty()) fail(ErrorKind::DataExhausted, "empty batch");
  const auto& f = batch.front();
  const std::int64_t N = f.num_blocks, L = f.block_len, H = f.height, W = f.width;
  Tensor x({static_cast<std::int64_t>(batch.size()) * N, 3, L, H, W});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& seq = batch[b];
    if (seq.num_blocks != N || seq.block_len != L || seq.height != H || seq.width != W) {
      fail(ErrorKind::ShapeMismatch, "sequences in a batch must share N, L, H, W");
    }
    for (std::int64_t n = 0; n < N; ++n) {
      double* dst = x.ptr() + (static_cast<std::int64_t>(b) * N + n) * 3 * L * H * W;
      for (std::int64_t l = 0; l < L; ++l) {
        const float* src = seq.frame(static_cast<int>(n), static_cast<int>(l));
        for (std::int64_t p = 0; p < H * W; ++p)
          for (std::int64_t c = 0; c < 3; ++c) dst[(c * L + l) * H * W + p] = src[p * 3 + c];
      }
    }
  }
  return x;
}

void validate_frame_pattern(const std::string& pattern) {
  static const std::regex re(R"(^[^%]*%0?[0-9]*d[^%]*$)");
  if (!std::regex_match(pattern, re)) {
    fail(ErrorKind::ConfigError,
         "frame pattern '" + pattern + "' must contain exactly one integer field like %05d");
  }
}

std::string format_frame_name(const std::string& pattern, int index) {
  validate_frame_pattern(pattern);
  std::array<char, 512> buf{};
  std::snprintf(buf.data(), buf.size(), pattern.c_str(), index);
  return std::string(buf.data());
}

std::vector<std::uint8_t> read_png(const fs::path& file, int& height, int& width) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, file.c_str())) {
    fail(ErrorKind::IoError, "cannot read image " + file.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(ErrorKind::IoError, "cannot decode image " + file.string() + ": " + image.message);
  }
  height = static_cast<int>(image.height);
  width = static_cast<int>(image.width);
  return buffer;
}

void write_png(const fs::path& file, const std::uint8_t* rgb, int height, int width) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, file.c_str(), 0, rgb, 0, nullptr)) {
    fail(ErrorKind::IoError, "cannot write image " + file.string() + ": " + image.message);
  }
}

Clip read_png_frames(const fs::path& dir, const std::string& pattern) {
  Clip clip;
  clip.id = dir.filename().string();
  for (int t = 0;; ++t) {
    const fs::path file = dir / format_frame_name(pattern, t);
    if (!fs::exists(file)) break;
    int h = 0, w = 0;
    auto px = read_png(file, h, w);
    if (t == 0) {
      clip.height = h;
      clip.width = w;
    } else if (h != clip.height || w != clip.width) {
      fail(ErrorKind::IoError, "frame " + file.string() + " differs in size from frame 0");
    }
    clip.pixels.insert(clip.pixels.end(), px.begin(), px.end());
    clip.frames = t + 1;
  }
  if (clip.frames == 0) {
    fail(ErrorKind::IoError, "no frames matching '" + pattern + "' in " + dir.string());
  }
  return clip;
}

namespace {
constexpr std::array<char, 8> kClipMagic{'M', 'D', 'P', 'C', 'C', 'L', 'I', 'P'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<unsigned char, 4> b{static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                       static_cast<unsigned char>(v >> 16),
                                       static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
}  // namespace

void write_packed_clip(const Clip& clip, const fs::path& file) {
  std::ofstream os(file, std::ios::binary);
  if (!os) fail(ErrorKind::IoError, "cannot open " + file.string() + " for writing");
  os.write(kClipMagic.data(), kClipMagic.size());
  put_u32(os, 1);
  put_u32(os, static_cast<std::uint32_t>(clip.frames));
  put_u32(os, static_cast<std::uint32_t>(clip.height));
  put_u32(os, static_cast<std::uint32_t>(clip.width));
  put_u32(os, static_cast<std::uint32_t>(clip.channels));
  os.write(reinterpret_cast<const char*>(clip.pixels.data()),
           static_cast<std::streamsize>(clip.pixels.size()));
  if (!os) fail(ErrorKind::IoError, "write failed for " + file.string());
}

Clip read_packed_clip(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) fail(ErrorKind::IoError, "cannot open " + file.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kClipMagic) fail(ErrorKind::IoError, file.string() + " is not a packed clip");
  const auto version = get_u32(is);
  if (version != 1) fail(ErrorKind::IoError, "unsupported packed clip version in " + file.string());
  Clip clip;
  clip.id = file.parent_path().filename().string();
  clip.frames = static_cast<int>(get_u32(is));
  clip.height = static_cast<int>(get_u32(is));
  clip.width = static_cast<int>(get_u32(is));
  clip.channels = static_cast<int>(get_u32(is));
  if (!is || clip.channels != 3) fail(ErrorKind::IoError, "corrupt header in " + file.string());
  clip.pixels.resize(clip.frame_bytes() * clip.frames);
  is.read(reinterpret_cast<char*>(clip.pixels.data()), static_cast<std::streamsize>(clip.pixels.size()));
  if (!is) fail(ErrorKind::IoError, "truncated packed clip " + file.string());
  return clip;
}

Clip load_clip(const fs::path& dir, const std::string& pattern, bool prefer_packed) {
  const fs::path packed = dir / kPackedClipName;
  Clip clip = (prefer_packed && fs::exists(packed)) ? read_packed_clip(packed)
                                                     : read_png_frames(dir, pattern);
  clip.id = dir.filename().string();
  return clip;
}

void write_png_frames(const Clip& clip, const fs::path& dir, const std::string& pattern) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
  for (int t = 0; t < clip.frames; ++t) {
    write_png(dir / format_frame_name(pattern, t), clip.frame(t), clip.height, clip.width);
  }
}

}  // namespace memdpc::videodata
