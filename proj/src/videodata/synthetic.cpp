#include "memdpc/videodata/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>

#include "memdpc/core/error.hpp"
#include "memdpc/core/rng.hpp"
#include "memdpc/videodata/flow.hpp"

namespace memdpc::videodata {

namespace fs = std::filesystem;

std::string to_string(SpriteKind k) {
  switch (k) {
    case SpriteKind::Random: return "random";
    case SpriteKind::Square: return "square";
    case SpriteKind::Disk: return "disk";
    case SpriteKind::Cross: return "cross";
  }
  return "random";
}

SpriteKind parse_sprite_kind(const std::string& s) {
  if (s == "random") return SpriteKind::Random;
  if (s == "square") return SpriteKind::Square;
  if (s == "disk") return SpriteKind::Disk;
  if (s == "cross") return SpriteKind::Cross;
  fail(ErrorKind::ConfigError, "unknown sprite kind '" + s + "'");
}

ClassMotion SyntheticSpec::motion_for(int cls) const {
  if (!motion.empty()) return motion.at(static_cast<std::size_t>(cls));
  ClassMotion m;
  m.direction = 2.0 * std::numbers::pi * cls / num_classes;
  m.speed = speed;
  return m;
}

void SyntheticSpec::validate() const {
  if (num_classes < 1 || clips_per_class < 1 || frame_size < 4 || clip_len < 1) {
    fail(ErrorKind::ConfigError, "synthetic sizes must be positive (frame_size >= 4)");
  }
  if (!motion.empty() && static_cast<int>(motion.size()) != num_classes) {
    fail(ErrorKind::ConfigError, "motion table must have one entry per class");
  }
  if (!(colour_jitter >= 0 && colour_jitter <= 1)) fail(ErrorKind::ConfigError, "colour_jitter must be in [0, 1]");
  if (texture_scale < 1 || sprite_min < 1 || sprite_max < sprite_min || num_sprites < 1 || sprite_texture < 0) {
    fail(ErrorKind::ConfigError, "invalid sprite parameters");
  }
  if (noise_std < 0 || texture < 0 || train_fraction <= 0 || train_fraction > 1) {
    fail(ErrorKind::ConfigError, "invalid synthetic noise/split parameters");
  }
  if (glitch && !(0 < glitch_min && glitch_min <= glitch_max && glitch_max < 1)) {
    fail(ErrorKind::ConfigError, "glitch range must satisfy 0 < min <= max < 1");
  }
  validate_frame_pattern(frame_pattern);
}

namespace {

double wrap(double d, double period) {
  d = std::fmod(d, period);
  if (d < -period / 2) d += period;
  if (d >= period / 2) d -= period;
  return d;
}

// F x F toroidal texture: uniform noise on a coarse grid, bilinearly upsampled.
std::vector<double> make_texture(int F, int scale, double amplitude, Rng& rng) {
  const int n = std::max(1, F / scale);
  std::vector<double> coarse(static_cast<std::size_t>(n) * n);
  for (auto& v : coarse) v = rng.uniform(-amplitude, amplitude);
  if (n == F) return coarse;
  std::vector<double> out(static_cast<std::size_t>(F) * F);
  const double step = static_cast<double>(n) / F;
  for (int y = 0; y < F; ++y)
    for (int x = 0; x < F; ++x) {
      const double gx = x * step, gy = y * step;
      const int x0 = static_cast<int>(gx), y0 = static_cast<int>(gy);
      const double fx = gx - x0, fy = gy - y0;
      auto at = [&](int i, int j) { return coarse[static_cast<std::size_t>(j % n) * n + (i % n)]; };
      out[static_cast<std::size_t>(y) * F + x] =
          (1 - fy) * ((1 - fx) * at(x0, y0) + fx * at(x0 + 1, y0)) +
          fy * ((1 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1));
    }
  return out;
}

bool inside(SpriteKind kind, double dx, double dy, double size) {
  const double h = size / 2.0;
  switch (kind) {
    case SpriteKind::Square: return std::abs(dx) <= h && std::abs(dy) <= h;
    case SpriteKind::Disk: return dx * dx + dy * dy <= h * h;
    case SpriteKind::Cross:
      return (std::abs(dx) <= h && std::abs(dy) <= size / 6.0) ||
             (std::abs(dy) <= h && std::abs(dx) <= size / 6.0);
    case SpriteKind::Random: break;
  }
  return false;
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

RenderedClip render_clip(const SyntheticSpec& spec, int cls, int index) {
  const ClassMotion motion = spec.motion_for(cls);
  Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(cls), static_cast<std::uint64_t>(index)));
  const int F = spec.frame_size, T = spec.clip_len;

  // Appearance is drawn independently of the class.
  std::array<double, 3> bg{}, fg{};
  const double j = spec.colour_jitter;
  for (auto& c : bg) c = 0.25 + 0.15 * j * rng.uniform(-1.0, 1.0);
  for (auto& c : fg) c = 0.8 + 0.2 * j * rng.uniform(-1.0, 1.0);
  SpriteKind kind = motion.sprite;
  if (kind == SpriteKind::Random) kind = static_cast<SpriteKind>(rng.integer(1, 3));
  const double size = static_cast<double>(rng.integer(spec.sprite_min, spec.sprite_max)) * F / 32.0;
  const std::vector<double> texture = make_texture(F, spec.texture_scale, spec.texture, rng);
  std::vector<std::array<double, 2>> starts(static_cast<std::size_t>(spec.num_sprites));
  for (auto& s0 : starts) s0 = {rng.uniform(0.0, F), rng.uniform(0.0, F)};
  const double x0 = starts[0][0], y0 = starts[0][1];
  std::vector<double> sprite_tex;
  if (spec.sprite_texture > 0) {
    sprite_tex = make_texture(F, spec.texture_scale, spec.sprite_texture, rng);
  }
  const auto texel = [F](const std::vector<double>& tex, double dx, double dy) {
    const int ix = ((static_cast<int>(std::floor(dx)) % F) + F) % F;
    const int iy = ((static_cast<int>(std::floor(dy)) % F) + F) % F;
    return tex[static_cast<std::size_t>(iy) * F + ix];
  };
  const double vx = motion.speed * std::cos(motion.direction);
  const double vy = motion.speed * std::sin(motion.direction);

  RenderedClip out;
  std::vector<int> order(static_cast<std::size_t>(T));
  std::iota(order.begin(), order.end(), 0);
  if (spec.glitch) {
    const int lo = static_cast<int>(std::ceil(spec.glitch_min * T));
    const int hi = static_cast<int>(std::floor(spec.glitch_max * T));
    const int f = static_cast<int>(rng.integer(lo, std::max(lo, hi)));
    out.failure_frame = f;
    std::shuffle(order.begin() + f, order.end(), rng.engine());
  }

  out.rgb.id = "c" + std::to_string(cls) + "_" + std::to_string(index);
  out.rgb.frames = T;
  out.rgb.height = out.rgb.width = F;
  out.rgb.pixels.resize(out.rgb.frame_bytes() * T);
  auto center = [&](int t) {
    return std::array<double, 2>{std::fmod(x0 + vx * t + 1000.0 * F, F),
                                 std::fmod(y0 + vy * t + 1000.0 * F, F)};
  };
  // Offset of pixel (x, y) from the nearest sprite covering it, if any.
  const auto hit = [&](int t, int x, int y) -> std::optional<std::array<double, 2>> {
    for (const auto& s0 : starts) {
      const double cx = s0[0] + vx * t, cy = s0[1] + vy * t;
      const double dx = wrap(x + 0.5 - cx, F), dy = wrap(y + 0.5 - cy, F);
      if (inside(kind, dx, dy, size)) return std::array<double, 2>{dx, dy};
    }
    return std::nullopt;
  };
  for (int t = 0; t < T; ++t) {
    const auto c = center(order[t]);
    out.centers.push_back(c);
    std::uint8_t* px = out.rgb.frame(t);
    const double pan_x = spec.pan ? vx * order[t] : 0.0, pan_y = spec.pan ? vy * order[t] : 0.0;
    for (int y = 0; y < F; ++y)
      for (int x = 0; x < F; ++x) {
        const auto on = hit(order[t], x, y);
        for (int ch = 0; ch < 3; ++ch) {
          double v = on ? fg[ch] + (sprite_tex.empty() ? 0.0 : texel(sprite_tex, (*on)[0], (*on)[1]))
                        : bg[ch] + texel(texture, x - pan_x, y - pan_y);
          if (spec.noise_std > 0) v += rng.normal(0.0, spec.noise_std);
          px[(y * F + x) * 3 + ch] = quantize(v);
        }
      }
  }

  if (spec.write_flow) {
    Clip flow = out.rgb;
    for (int t = 0; t < T; ++t) {
      const int a = t + 1 < T ? t : t - 1;
      const auto ca = out.centers[a];
      const auto cb = out.centers[std::min(a + 1, T - 1)];
      const double dx = T > 1 ? wrap(cb[0] - ca[0], F) : 0.0;
      const double dy = T > 1 ? wrap(cb[1] - ca[1], F) : 0.0;
      Tensor field({F, F, 2});
      for (int y = 0; y < F; ++y)
        for (int x = 0; x < F; ++x) {
          const bool on = hit(order[t], x, y).has_value() || spec.pan;
          double fx = on ? dx : 0.0, fy = on ? dy : 0.0;
          if (spec.noise_std > 0) {
            fx += rng.normal(0.0, spec.noise_std * 10.0);
            fy += rng.normal(0.0, spec.noise_std * 10.0);
          }
          field[(y * F + x) * 2] = fx;
          field[(y * F + x) * 2 + 1] = fy;
        }
      const FlowFrame ff = preprocess_flow(field);
      std::copy(ff.pixels.begin(), ff.pixels.end(), flow.frame(t));
    }
    out.flow = std::move(flow);
  }
  return out;
}

DatasetIndex gen_synthetic(const SyntheticSpec& spec, const fs::path& out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::IoError, "cannot create " + out_dir.string() + ": " + ec.message());

  DatasetIndex index;
  index.num_classes = spec.num_classes;
  index.root = out_dir;
  const int n_train = std::clamp(
      static_cast<int>(std::lround(spec.train_fraction * spec.clips_per_class)), 0,
      spec.clips_per_class);
  auto store = [&](const Clip& clip, const std::string& modality, const std::string& name) {
    const fs::path rel = fs::path(modality) / name;
    const fs::path dir = out_dir / rel;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
    if (spec.write_png) write_png_frames(clip, dir, spec.frame_pattern);
    if (spec.write_packed || !spec.write_png) write_packed_clip(clip, dir / kPackedClipName);
    return rel.generic_string();
  };
  for (int cls = 0; cls < spec.num_classes; ++cls) {
    for (int i = 0; i < spec.clips_per_class; ++i) {
      const RenderedClip r = render_clip(spec, cls, i);
      const Split split = i < n_train ? Split::Train : Split::Test;
      const std::string name = r.rgb.id;
      IndexEntry e;
      e.label = cls;
      e.split = split;
      e.failure_frame = r.failure_frame;
      e.clip_path = store(r.rgb, "rgb", name);
      e.modality = Modality::Rgb;
      index.entries.push_back(e);
      if (r.flow) {
        e.clip_path = store(*r.flow, "flow", name);
        e.modality = Modality::Flow;
        index.entries.push_back(e);
      }
    }
  }
  write_index(index, out_dir / "index.csv");
  return index;
}

}  // namespace memdpc::videodata
