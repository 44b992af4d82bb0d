#include "naref/error.hpp"
#include "naref/image.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <memory>
#include <string>

namespace naref {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return f;
}

struct DecodedPng {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

// Decodes an 8-bit PNG with one of the accepted color types. 16-bit depth and
// palette/gray images are rejected with distinct error kinds.
DecodedPng decode_png(const std::filesystem::path& path, bool want_gray) {
  FilePtr file = open_file(path, "rb");
  png_byte signature[8] = {};
  if (std::fread(signature, 1, 8, file.get()) != 8 || png_sig_cmp(signature, 0, 8) != 0) {
    throw Error(ErrorKind::Io, "not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorKind::Io, "libpng initialization failed");
  }
  DecodedPng out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorKind::Io, "corrupt PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  std::string failure;
  ErrorKind failure_kind = ErrorKind::Io;
  if (depth != 8) {
    failure_kind = ErrorKind::UnsupportedBitDepth;
    failure = "unsupported bit depth " + std::to_string(depth) + " in " + path.string();
  } else if (want_gray ? color != PNG_COLOR_TYPE_GRAY
                       : (color != PNG_COLOR_TYPE_RGB && color != PNG_COLOR_TYPE_RGBA)) {
    failure_kind = ErrorKind::UnsupportedColorType;
    failure = "unsupported color type " + std::to_string(color) + " in " + path.string();
  }
  if (!failure.empty()) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(failure_kind, failure);
  }
  if (png_get_interlace_type(png, info) != PNG_INTERLACE_NONE) png_set_interlace_handling(png);
  png_read_update_info(png, info);
  out.width = static_cast<int>(width);
  out.height = static_cast<int>(height);
  out.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.pixels.resize(stride * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = out.pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void png_append(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void png_no_flush(png_structp) {}

std::vector<std::uint8_t> encode_png_bytes(int width, int height, int channels, const std::vector<std::uint8_t>& pixels) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::Io, "libpng initialization failed");
  }
  std::vector<png_const_bytep> rows(static_cast<std::size_t>(height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::Io, "PNG encoding failed");
  }
  png_set_write_fn(png, &out, png_append, png_no_flush);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  for (int y = 0; y < height; ++y) rows[y] = pixels.data() + y * stride;
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void encode_png(const std::filesystem::path& path, int width, int height, int channels,
                const std::vector<std::uint8_t>& pixels) {
  const auto bytes = encode_png_bytes(width, height, channels, pixels);
  FilePtr file = open_file(path, "wb");
  if (std::fwrite(bytes.data(), 1, bytes.size(), file.get()) != bytes.size() || std::fflush(file.get()) != 0) {
    throw Error(ErrorKind::Io, "write failed: " + path.string());
  }
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  DecodedPng png = decode_png(path, false);
  if (png.channels == 3) return Image(png.width, png.height, std::move(png.pixels));
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(png.width) * png.height * 3);
  for (std::size_t p = 0, n = rgb.size() / 3; p < n; ++p)
    for (int c = 0; c < 3; ++c) rgb[p * 3 + c] = png.pixels[p * 4 + c];
  return Image(png.width, png.height, std::move(rgb));
}

void save_image(const Image& img, const std::filesystem::path& path) {
  const Image bytes = img.to_u8();
  const auto data = bytes.u8();
  encode_png(path, img.width(), img.height(), 3, {data.begin(), data.end()});
}

std::vector<std::uint8_t> encode_png(const Image& img) {
  const Image bytes = img.to_u8();
  const auto data = bytes.u8();
  return encode_png_bytes(img.width(), img.height(), 3, {data.begin(), data.end()});
}

void save_gray_png(const Plane& plane, const std::filesystem::path& path) {
  const auto h = static_cast<int>(plane.rows());
  const auto w = static_cast<int>(plane.cols());
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) px[static_cast<std::size_t>(y) * w + x] = quantize_unit(plane(y, x));
  encode_png(path, w, h, 1, px);
}

Plane load_gray_png(const std::filesystem::path& path) {
  const DecodedPng png = decode_png(path, true);
  Plane p(png.height, png.width);
  for (int y = 0; y < png.height; ++y)
    for (int x = 0; x < png.width; ++x)
      p(y, x) = static_cast<float>(png.pixels[static_cast<std::size_t>(y) * png.width + x]) / 255.0f;
  return p;
}

}  // namespace naref
