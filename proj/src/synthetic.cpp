#include "naref/synthetic.hpp"

#include "naref/error.hpp"
#include "naref/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace naref {

namespace {

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(std::uint64_t key, double x, double y, double cell) {
  const double gx = x / cell;
  const double gy = y / cell;
  const auto ix = static_cast<std::int64_t>(std::floor(gx));
  const auto iy = static_cast<std::int64_t>(std::floor(gy));
  const double tx = smooth(gx - static_cast<double>(ix));
  const double ty = smooth(gy - static_cast<double>(iy));
  auto lattice = [&](std::int64_t lx, std::int64_t ly) {
    return counter_uniform(key, static_cast<std::uint64_t>(lx) * 0x9E3779B1ULL ^
                                    static_cast<std::uint64_t>(ly) * 0x85EBCA77ULL) - 0.5;
  };
  const double a = lattice(ix, iy) + (lattice(ix + 1, iy) - lattice(ix, iy)) * tx;
  const double b = lattice(ix, iy + 1) + (lattice(ix + 1, iy + 1) - lattice(ix, iy + 1)) * tx;
  return a + (b - a) * ty;
}

}  // namespace

Image random_texture(int width, int height, std::uint64_t seed) {
  if (width < 1 || height < 1) throw Error(ErrorKind::InvalidArgument, "texture size must be positive");
  constexpr double kCells[] = {32.0, 12.0, 5.0, 2.0};
  constexpr double kAmps[] = {0.55, 0.35, 0.25, 0.15};
  // Per-channel mixing keeps the channels correlated, as in natural images.
  Rng rng(seed);
  double tint[3];
  for (double& t : tint) t = rng.uniform(-0.12, 0.12);
  std::vector<float> data(static_cast<std::size_t>(width) * height * 3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double shared = 0.0;
      double own[3] = {0.0, 0.0, 0.0};
      for (int o = 0; o < 4; ++o) {
        shared += kAmps[o] * value_noise(derive_seed(seed, {std::uint64_t(o), 7}), x, y, kCells[o]);
        for (int c = 0; c < 3; ++c) {
          own[c] += 0.35 * kAmps[o] *
                    value_noise(derive_seed(seed, {std::uint64_t(o), std::uint64_t(c)}), x, y, kCells[o]);
        }
      }
      const auto pixel = static_cast<std::size_t>(y) * width + x;
      const double grain = 0.06 * (counter_uniform(derive_seed(seed, {99}), pixel) - 0.5);
      for (int c = 0; c < 3; ++c) {
        const double v = 0.5 + tint[c] + shared + own[c] + grain;
        data[pixel * 3 + c] = static_cast<float>(std::clamp(v, 0.02, 0.98));
      }
    }
  return Image(width, height, std::move(data));
}

std::vector<Image> synthesize_scene(const SceneSpec& spec) {
  if (spec.frames < 1 || spec.width < 1 || spec.height < 1) {
    throw Error(ErrorKind::InvalidArgument, "scene dimensions must be positive");
  }
  struct Sprite {
    Image texture;
    double x, y, vx, vy;
  };
  auto make_world = [&](std::uint64_t seed) {
    const int ww = spec.width + std::abs(spec.pan_x) * spec.frames + 1;
    const int wh = spec.height + std::abs(spec.pan_y) * spec.frames + 1;
    return random_texture(ww, wh, seed).to_u8();
  };
  auto make_sprites = [&](std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Sprite> sprites;
    for (int i = 0; i < spec.objects; ++i) {
      const int sw = rng.uniform_int(std::max(8, spec.width / 8), std::max(9, spec.width / 4));
      const int sh = rng.uniform_int(std::max(8, spec.height / 8), std::max(9, spec.height / 4));
      Sprite s{random_texture(sw, sh, rng.next()).to_u8(), rng.uniform(0, spec.width - sw),
               rng.uniform(0, spec.height - sh), rng.uniform(2.0, 5.0) * (rng.coin() ? 1 : -1),
               rng.uniform(0.0, 3.0) * (rng.coin() ? 1 : -1)};
      sprites.push_back(std::move(s));
    }
    return sprites;
  };

  Image world = make_world(derive_seed(spec.seed, {1}));
  auto sprites = make_sprites(derive_seed(spec.seed, {2}));
  std::vector<Image> frames;
  frames.reserve(static_cast<std::size_t>(spec.frames));
  for (int f = 0; f < spec.frames; ++f) {
    if (spec.cut_at && f == *spec.cut_at) {
      world = make_world(derive_seed(spec.seed, {3}));
      sprites = make_sprites(derive_seed(spec.seed, {4}));
    }
    const int ox = spec.pan_x >= 0 ? spec.pan_x * f : std::abs(spec.pan_x) * (spec.frames - f);
    const int oy = spec.pan_y >= 0 ? spec.pan_y * f : std::abs(spec.pan_y) * (spec.frames - f);
    std::vector<std::uint8_t> px(static_cast<std::size_t>(spec.width) * spec.height * 3);
    const auto src = world.u8();
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x)
        for (int c = 0; c < 3; ++c)
          px[(static_cast<std::size_t>(y) * spec.width + x) * 3 + c] = src[world.index(x + ox, y + oy, c)];
    for (auto& s : sprites) {
      const int sx = static_cast<int>(std::lround(s.x));
      const int sy = static_cast<int>(std::lround(s.y));
      const auto tex = s.texture.u8();
      for (int y = 0; y < s.texture.height(); ++y)
        for (int x = 0; x < s.texture.width(); ++x) {
          const int fx = sx + x;
          const int fy = sy + y;
          if (fx < 0 || fy < 0 || fx >= spec.width || fy >= spec.height) continue;
          for (int c = 0; c < 3; ++c)
            px[(static_cast<std::size_t>(fy) * spec.width + fx) * 3 + c] = tex[s.texture.index(x, y, c)];
        }
      // Bounce off the frame borders.
      s.x += s.vx;
      s.y += s.vy;
      const double max_x = spec.width - s.texture.width();
      const double max_y = spec.height - s.texture.height();
      if (s.x < 0 || s.x > max_x) {
        s.vx = -s.vx;
        s.x = std::clamp(s.x, 0.0, std::max(0.0, max_x));
      }
      if (s.y < 0 || s.y > max_y) {
        s.vy = -s.vy;
        s.y = std::clamp(s.y, 0.0, std::max(0.0, max_y));
      }
    }
    frames.emplace_back(spec.width, spec.height, std::move(px));
  }
  return frames;
}

void write_frames(const std::vector<Image>& frames, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  char name[32];
  for (std::size_t i = 0; i < frames.size(); ++i) {
    std::snprintf(name, sizeof name, "frame_%04zu.png", i);
    save_image(frames[i], dir / name);
  }
}

std::vector<Image> read_frames(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorKind::NotFound, "frame directory not found: " + dir.string());
  }
  std::vector<std::filesystem::path> paths;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end());
  std::vector<Image> frames;
  frames.reserve(paths.size());
  for (const auto& p : paths) frames.push_back(load_image(p));
  return frames;
}

}  // namespace naref
