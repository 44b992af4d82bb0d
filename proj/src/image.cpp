#include "naref/image.hpp"

#include "naref/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace naref {

namespace {

void check_dims(int width, int height, std::size_t samples) {
  if (width < 0 || height < 0) {
    throw Error(ErrorKind::InvalidArgument, "negative image dimension");
  }
  const auto expected = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) *
                        Image::kChannels;
  if (samples != expected) {
    throw Error(ErrorKind::ShapeMismatch,
                "image data length " + std::to_string(samples) + " != " + std::to_string(expected));
  }
}

}  // namespace

std::uint8_t quantize_unit(float v) noexcept {
  const float clamped = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(clamped * 255.0f));
}

Image::Image(int width, int height, std::vector<std::uint8_t> data, ColorSpace space)
    : width_(width), height_(height), space_(space) {
  check_dims(width, height, data.size());
  data_ = std::move(data);
}

Image::Image(int width, int height, std::vector<float> data, ColorSpace space)
    : width_(width), height_(height), space_(space) {
  check_dims(width, height, data.size());
  for (float v : data) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw Error(ErrorKind::InvalidArgument, "float sample outside [0, 1]");
    }
  }
  data_ = std::move(data);
}

Image Image::zeros_u8(int width, int height, ColorSpace space) {
  return Image(width, height,
               std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height * kChannels, 0),
               space);
}

Image Image::zeros_f32(int width, int height, ColorSpace space) {
  return Image(width, height,
               std::vector<float>(static_cast<std::size_t>(width) * height * kChannels, 0.0f),
               space);
}

float Image::sample(std::size_t i) const noexcept {
  if (const auto* bytes = std::get_if<std::vector<std::uint8_t>>(&data_)) {
    return static_cast<float>((*bytes)[i]) / 255.0f;
  }
  return std::get<std::vector<float>>(data_)[i];
}

std::span<const std::uint8_t> Image::u8() const {
  if (const auto* bytes = std::get_if<std::vector<std::uint8_t>>(&data_)) return *bytes;
  throw Error(ErrorKind::InvalidArgument, "image does not hold 8-bit samples");
}

std::span<std::uint8_t> Image::u8() {
  if (auto* bytes = std::get_if<std::vector<std::uint8_t>>(&data_)) return *bytes;
  throw Error(ErrorKind::InvalidArgument, "image does not hold 8-bit samples");
}

std::span<const float> Image::f32() const {
  if (const auto* values = std::get_if<std::vector<float>>(&data_)) return *values;
  throw Error(ErrorKind::InvalidArgument, "image does not hold float samples");
}

std::span<float> Image::f32() {
  if (auto* values = std::get_if<std::vector<float>>(&data_)) return *values;
  throw Error(ErrorKind::InvalidArgument, "image does not hold float samples");
}

Image Image::to_float() const {
  if (sample_type() == SampleType::F32) return *this;
  std::vector<float> out(sample_count());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sample(i);
  return Image(width_, height_, std::move(out), space_);
}

Image Image::to_u8() const {
  if (sample_type() == SampleType::U8) return *this;
  const auto src = f32();
  std::vector<std::uint8_t> out(src.size());
  std::transform(src.begin(), src.end(), out.begin(), quantize_unit);
  return Image(width_, height_, std::move(out), space_);
}

bool operator==(const Image& a, const Image& b) {
  return a.width_ == b.width_ && a.height_ == b.height_ && a.space_ == b.space_ &&
         a.data_ == b.data_;
}

namespace {

// BT.601 full-range coefficients. `mid` is the chroma offset in the working
// domain: 128 for 8-bit samples, 0.5 for unit floats.
struct Yuv {
  double y, cb, cr;
};

Yuv rgb_to_yuv(double r, double g, double b, double mid) {
  return {0.299 * r + 0.587 * g + 0.114 * b,
          mid + (-0.168736 * r - 0.331264 * g + 0.5 * b),
          mid + (0.5 * r - 0.418688 * g - 0.081312 * b)};
}

Yuv yuv_to_rgb(double y, double cb, double cr, double mid) {
  const double u = cb - mid;
  const double v = cr - mid;
  return {y + 1.402 * v, y - 0.344136 * u - 0.714136 * v, y + 1.772 * u};
}

template <typename Convert>
Image convert_color(const Image& img, ColorSpace target, Convert convert) {
  if (img.sample_type() == SampleType::U8) {
    const auto src = img.u8();
    std::vector<std::uint8_t> out(src.size());
    for (std::size_t i = 0; i < src.size(); i += 3) {
      const Yuv t = convert(src[i], src[i + 1], src[i + 2], 128.0);
      out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(t.y, 0.0, 255.0)));
      out[i + 1] = static_cast<std::uint8_t>(std::lround(std::clamp(t.cb, 0.0, 255.0)));
      out[i + 2] = static_cast<std::uint8_t>(std::lround(std::clamp(t.cr, 0.0, 255.0)));
    }
    return Image(img.width(), img.height(), std::move(out), target);
  }
  const auto src = img.f32();
  std::vector<float> out(src.size());
  for (std::size_t i = 0; i < src.size(); i += 3) {
    const Yuv t = convert(src[i], src[i + 1], src[i + 2], 0.5);
    out[i] = static_cast<float>(std::clamp(t.y, 0.0, 1.0));
    out[i + 1] = static_cast<float>(std::clamp(t.cb, 0.0, 1.0));
    out[i + 2] = static_cast<float>(std::clamp(t.cr, 0.0, 1.0));
  }
  return Image(img.width(), img.height(), std::move(out), target);
}

}  // namespace

Image to_luma_chroma(const Image& img) {
  if (img.color_space() != ColorSpace::SRGB) {
    throw Error(ErrorKind::InvalidArgument, "to_luma_chroma expects an sRGB image");
  }
  return convert_color(img, ColorSpace::LumaChroma, rgb_to_yuv);
}

Image to_srgb(const Image& img) {
  if (img.color_space() != ColorSpace::LumaChroma) {
    throw Error(ErrorKind::InvalidArgument, "to_srgb expects a luma-chroma image");
  }
  return convert_color(img, ColorSpace::SRGB, yuv_to_rgb);
}

Plane channel_plane(const Image& img, int channel) {
  Plane p(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) p(y, x) = img.at(x, y, channel);
  return p;
}

Plane luma_plane(const Image& img) {
  if (img.color_space() == ColorSpace::LumaChroma) return channel_plane(img, 0);
  Plane p(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      p(y, x) = static_cast<float>(0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) +
                                   0.114 * img.at(x, y, 2));
    }
  }
  return p;
}

std::array<Plane, 3> to_planes(const Image& img) {
  return {channel_plane(img, 0), channel_plane(img, 1), channel_plane(img, 2)};
}

Image from_planes(const std::array<Plane, 3>& planes, ColorSpace space) {
  const auto h = static_cast<int>(planes[0].rows());
  const auto w = static_cast<int>(planes[0].cols());
  for (const auto& p : planes) {
    if (p.rows() != h || p.cols() != w) {
      throw Error(ErrorKind::ShapeMismatch, "plane dimensions differ");
    }
  }
  std::vector<float> out(static_cast<std::size_t>(w) * h * 3);
  std::size_t i = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = planes[c](y, x);
        out[i++] = std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f);
      }
  return Image(w, h, std::move(out), space);
}

double mse(const Image& a, const Image& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw Error(ErrorKind::ShapeMismatch, "mse: image dimensions differ");
  }
  const std::size_t n = a.sample_count();
  if (n == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a.sample(i)) - static_cast<double>(b.sample(i));
    acc += d * d;
  }
  return acc / static_cast<double>(n);
}

namespace {

struct Taps {
  std::vector<int> lo, hi;
  std::vector<float> t;
};

Taps bilinear_taps(int in, int out) {
  Taps taps;
  taps.lo.resize(out);
  taps.hi.resize(out);
  taps.t.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    taps.lo[i] = lo;
    taps.hi[i] = std::min(lo + 1, in - 1);
    taps.t[i] = static_cast<float>(src - lo);
  }
  return taps;
}

}  // namespace

Plane resize_bilinear(const Plane& plane, int new_width, int new_height) {
  if (new_width < 1 || new_height < 1) {
    throw Error(ErrorKind::InvalidArgument, "resize: zero target dimension");
  }
  const auto in_h = static_cast<int>(plane.rows());
  const auto in_w = static_cast<int>(plane.cols());
  const Taps tx = bilinear_taps(in_w, new_width);
  const Taps ty = bilinear_taps(in_h, new_height);
  Plane rows(in_h, new_width);
  for (int x = 0; x < new_width; ++x) {
    rows.col(x) = plane.col(tx.lo[x]) * (1.0f - tx.t[x]) + plane.col(tx.hi[x]) * tx.t[x];
  }
  Plane out(new_height, new_width);
  for (int y = 0; y < new_height; ++y) {
    out.row(y) = rows.row(ty.lo[y]) * (1.0f - ty.t[y]) + rows.row(ty.hi[y]) * ty.t[y];
  }
  return out;
}

Image resize_bilinear(const Image& img, int new_width, int new_height) {
  if (new_width < 1 || new_height < 1) {
    throw Error(ErrorKind::InvalidArgument, "resize: zero target dimension");
  }
  auto planes = to_planes(img);
  for (auto& p : planes) p = resize_bilinear(p, new_width, new_height);
  return from_planes(planes, img.color_space());
}

PatchGrid PatchGrid::for_size(int width, int height, int patch_size) {
  if (patch_size < 1 || patch_size > std::min(width, height)) {
    throw Error(ErrorKind::InvalidArgument,
                "patch size " + std::to_string(patch_size) + " does not fit a " +
                    std::to_string(width) + "x" + std::to_string(height) + " image");
  }
  return {patch_size, height / patch_size, width / patch_size};
}

std::vector<PatchView> extract_patches(const Image& img, const PatchGrid& grid) {
  if (grid.patch_size < 1 || grid.patch_size > std::min(img.width(), img.height())) {
    throw Error(ErrorKind::InvalidArgument, "patch size larger than image");
  }
  if (grid.grid_h * grid.patch_size > img.height() || grid.grid_w * grid.patch_size > img.width()) {
    throw Error(ErrorKind::ShapeMismatch, "patch grid exceeds image");
  }
  std::vector<PatchView> patches;
  patches.reserve(static_cast<std::size_t>(grid.count()));
  for (int gy = 0; gy < grid.grid_h; ++gy)
    for (int gx = 0; gx < grid.grid_w; ++gx)
      patches.push_back({&img, gx * grid.patch_size, gy * grid.patch_size, grid.patch_size});
  return patches;
}

}  // namespace naref
