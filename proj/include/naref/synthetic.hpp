#pragma once

#include "naref/image.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace naref {

/// Colored multi-octave value noise (cells of 32, 12, 5 and 2 pixels plus a
/// per-pixel term). Deterministic in `seed`; samples stay inside [0.02, 0.98].
Image random_texture(int width, int height, std::uint64_t seed);

struct SceneSpec {
  std::string id = "scene";
  int width = 128;
  int height = 96;
  int frames = 48;
  std::uint64_t seed = 1;
  /// Background pan in pixels per frame.
  int pan_x = 1;
  int pan_y = 0;
  int objects = 3;
  /// Frame index at which the content switches to an unrelated background.
  std::optional<int> cut_at;
};

/// Panning textured background with textured rectangles moving at 2-5 px per
/// frame. Frames are returned as 8-bit sRGB images.
std::vector<Image> synthesize_scene(const SceneSpec& spec);

/// Writes frames as frame_0000.png, frame_0001.png, ... into `dir`.
void write_frames(const std::vector<Image>& frames, const std::filesystem::path& dir);
/// Loads every *.png in `dir` in lexicographic order.
std::vector<Image> read_frames(const std::filesystem::path& dir);

}  // namespace naref
