#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

namespace naref {

enum class SampleType { U8, F32 };
enum class ColorSpace { SRGB, LumaChroma };

/// Single-channel float plane, indexed (row, col) = (y, x).
using Plane = Eigen::ArrayXXf;

/// H x W x 3 raster, row-major interleaved. Samples are either 8-bit or
/// unit-interval floats; `sample()` always reads as unit float.
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int width, int height, std::vector<std::uint8_t> data,
        ColorSpace space = ColorSpace::SRGB);
  Image(int width, int height, std::vector<float> data,
        ColorSpace space = ColorSpace::SRGB);

  static Image zeros_u8(int width, int height, ColorSpace space = ColorSpace::SRGB);
  static Image zeros_f32(int width, int height, ColorSpace space = ColorSpace::SRGB);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return kChannels; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }
  std::size_t sample_count() const noexcept { return pixel_count() * kChannels; }
  bool empty() const noexcept { return pixel_count() == 0; }

  SampleType sample_type() const noexcept {
    return std::holds_alternative<std::vector<std::uint8_t>>(data_) ? SampleType::U8
                                                                    : SampleType::F32;
  }
  ColorSpace color_space() const noexcept { return space_; }
  void set_color_space(ColorSpace space) noexcept { space_ = space; }

  std::size_t index(int x, int y, int c) const noexcept {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
            static_cast<std::size_t>(x)) * kChannels + static_cast<std::size_t>(c);
  }

  float sample(std::size_t i) const noexcept;
  float at(int x, int y, int c) const noexcept { return sample(index(x, y, c)); }

  std::span<const std::uint8_t> u8() const;
  std::span<std::uint8_t> u8();
  std::span<const float> f32() const;
  std::span<float> f32();

  Image to_float() const;
  /// Quantizes with round(v * 255).
  Image to_u8() const;

  friend bool operator==(const Image& a, const Image& b);

 private:
  int width_ = 0;
  int height_ = 0;
  ColorSpace space_ = ColorSpace::SRGB;
  std::variant<std::vector<std::uint8_t>, std::vector<float>> data_;
};

std::uint8_t quantize_unit(float v) noexcept;

/// PNG decode: 8-bit RGB or RGBA (alpha dropped). Throws Error with
/// UnsupportedBitDepth / UnsupportedColorType / Io.
Image load_image(const std::filesystem::path& path);
/// Writes an 8-bit RGB PNG; float images are quantized by round(v * 255).
void save_image(const Image& img, const std::filesystem::path& path);
/// In-memory 8-bit RGB PNG.
std::vector<std::uint8_t> encode_png(const Image& img);
/// Writes an 8-bit grayscale PNG from a unit-range plane (value * 255).
void save_gray_png(const Plane& plane, const std::filesystem::path& path);
Plane load_gray_png(const std::filesystem::path& path);

/// BT.601 full range. The result keeps the input's sample type.
Image to_luma_chroma(const Image& img);
Image to_srgb(const Image& img);

Plane channel_plane(const Image& img, int channel);
/// Y plane of an sRGB image, or channel 0 of a LumaChroma image.
Plane luma_plane(const Image& img);
std::array<Plane, 3> to_planes(const Image& img);
/// Float image from three planes; values are clamped to [0, 1].
Image from_planes(const std::array<Plane, 3>& planes, ColorSpace space = ColorSpace::SRGB);

/// Mean squared difference over unit-float samples.
double mse(const Image& a, const Image& b);

/// Separable bilinear resampling with half-pixel centers. Returns F32.
Image resize_bilinear(const Image& img, int new_width, int new_height);
Plane resize_bilinear(const Plane& plane, int new_width, int new_height);

struct PatchGrid {
  int patch_size = 14;
  int grid_h = 0;
  int grid_w = 0;

  /// Largest grid of non-overlapping patches anchored at the top-left.
  static PatchGrid for_size(int width, int height, int patch_size = 14);
  static PatchGrid for_image(const Image& img, int patch_size = 14) {
    return for_size(img.width(), img.height(), patch_size);
  }
  int count() const noexcept { return grid_h * grid_w; }
};

struct PatchView {
  const Image* image = nullptr;
  int x0 = 0;
  int y0 = 0;
  int size = 0;

  float at(int x, int y, int c) const noexcept { return image->at(x0 + x, y0 + y, c); }
};

/// Patches in raster order; pixels right of / below the grid are dropped.
std::vector<PatchView> extract_patches(const Image& img, const PatchGrid& grid);

}  // namespace naref
