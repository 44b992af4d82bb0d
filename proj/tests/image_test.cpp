#include "naref/error.hpp"
#include "naref/image.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>
#include <png.h>

#include <cstdio>
#include <set>

namespace naref {
namespace {

using testing::ScratchDir;
using testing::textured_image;

void write_raw_png(const std::filesystem::path& path, int width, int height, int depth,
                   int color_type) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  ASSERT_NE(f, nullptr);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  png_init_io(png, f);
  png_set_IHDR(png, info, width, height, depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : color_type == PNG_COLOR_TYPE_RGBA ? 4 : 1;
  std::vector<png_byte> row(static_cast<std::size_t>(width) * channels * (depth / 8), 0);
  for (int y = 0; y < height; ++y) {
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = static_cast<png_byte>(10 * y + i);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

TEST(ImageCodec, KnownPixelsDecodeExactly) {
  ScratchDir dir("codec");
  const Image img(2, 2, std::vector<std::uint8_t>{1, 2, 3, 250, 251, 252, 0, 128, 255, 7, 8, 9});
  save_image(img, dir / "a.png");
  const Image back = load_image(dir / "a.png");
  EXPECT_EQ(back, img);
}

TEST(ImageCodec, SaveLoadIsIdempotent) {
  ScratchDir dir("codec");
  const Image img = textured_image(37, 23, 5);
  save_image(img, dir / "a.png");
  const Image once = load_image(dir / "a.png");
  save_image(once, dir / "b.png");
  EXPECT_EQ(load_image(dir / "b.png"), once);
  EXPECT_EQ(once, img);
}

TEST(ImageCodec, RgbaDropsAlpha) {
  ScratchDir dir("codec");
  write_raw_png(dir / "rgba.png", 3, 2, 8, PNG_COLOR_TYPE_RGBA);
  const Image img = load_image(dir / "rgba.png");
  ASSERT_EQ(img.width(), 3);
  // Row 0 bytes are 0..11 as RGBA quads; alpha is bytes 3, 7, 11.
  EXPECT_EQ(img.u8()[0], 0);
  EXPECT_EQ(img.u8()[3], 4);
  EXPECT_EQ(img.u8()[6], 8);
}

TEST(ImageCodec, SixteenBitRejected) {
  ScratchDir dir("codec");
  write_raw_png(dir / "deep.png", 4, 4, 16, PNG_COLOR_TYPE_RGB);
  try {
    load_image(dir / "deep.png");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnsupportedBitDepth);
  }
}

TEST(ImageCodec, GrayColorTypeRejected) {
  ScratchDir dir("codec");
  write_raw_png(dir / "gray.png", 4, 4, 8, PNG_COLOR_TYPE_GRAY);
  try {
    load_image(dir / "gray.png");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnsupportedColorType);
  }
}

TEST(ImageCodec, MissingFileIsIoError) {
  try {
    load_image("/nonexistent/none.png");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Io);
  }
}

TEST(ImageCodec, AllZeroRoundTrip) {
  ScratchDir dir("codec");
  save_image(Image::zeros_u8(4, 4), dir / "z.png");
  EXPECT_EQ(load_image(dir / "z.png"), Image::zeros_u8(4, 4));
}

TEST(ImageCodec, FloatQuantizedOnSave) {
  ScratchDir dir("codec");
  const Image f(1, 1, std::vector<float>{0.5f, 0.1f, 1.0f});
  save_image(f, dir / "f.png");
  const Image back = load_image(dir / "f.png");
  EXPECT_EQ(back.u8()[0], 128);  // round(127.5)
  EXPECT_EQ(back.u8()[1], 26);   // round(25.5)
  EXPECT_EQ(back.u8()[2], 255);
}

TEST(ImageCodec, UnwritablePathIsIoError) {
  try {
    save_image(Image::zeros_u8(2, 2), "/proc/naref-readonly/x.png");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Io);
  }
}

TEST(ImageType, FloatOutsideUnitRangeRejected) {
  EXPECT_THROW(Image(1, 1, std::vector<float>{0.0f, 1.5f, 0.0f}), Error);
  EXPECT_THROW(Image(2, 1, std::vector<float>{0.0f, 0.0f, 0.0f}), Error);
}

TEST(ImageType, U8FloatRoundTripWithinHalfStep) {
  const Image img = textured_image(16, 16, 9, false);
  const Image back = img.to_u8().to_float();
  for (std::size_t i = 0; i < img.sample_count(); ++i) {
    EXPECT_LE(std::abs(img.sample(i) - back.sample(i)), 1.0f / 510.0f + 1e-7f);
  }
}

TEST(LumaChroma, GrayAxisMapsToMidpoint) {
  for (int v : {0, 17, 128, 200, 255}) {
    const auto b = static_cast<std::uint8_t>(v);
    const Image gray(1, 1, std::vector<std::uint8_t>{b, b, b});
    const Image yc = to_luma_chroma(gray);
    EXPECT_EQ(yc.u8()[0], v);
    EXPECT_EQ(yc.u8()[1], 128);
    EXPECT_EQ(yc.u8()[2], 128);
  }
  const Image gray_f(1, 1, std::vector<float>{0.3f, 0.3f, 0.3f});
  const Image yc = to_luma_chroma(gray_f);
  EXPECT_NEAR(yc.f32()[0], 0.3f, 1e-6f);
  EXPECT_NEAR(yc.f32()[1], 0.5f, 1e-6f);
  EXPECT_NEAR(yc.f32()[2], 0.5f, 1e-6f);
}

TEST(LumaChroma, PureRedLuma) {
  const Image red(1, 1, std::vector<std::uint8_t>{255, 0, 0});
  // 0.299 * 255 = 76.245
  EXPECT_EQ(to_luma_chroma(red).u8()[0], 76);
  const Image red_f(1, 1, std::vector<float>{1.0f, 0.0f, 0.0f});
  EXPECT_NEAR(to_luma_chroma(red_f).f32()[0], 0.299f, 1e-6f);
}

TEST(LumaChroma, RoundTripWithinTwoLevels) {
  Rng rng(42);
  std::vector<std::uint8_t> px(64 * 64 * 3);
  for (auto& v : px) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  const Image img(64, 64, px);
  const Image back = to_srgb(to_luma_chroma(img));
  int worst = 0;
  for (std::size_t i = 0; i < px.size(); ++i) {
    worst = std::max(worst, std::abs(int(back.u8()[i]) - int(px[i])));
  }
  EXPECT_LE(worst, 2);
}

TEST(Patches, ExactTiling) {
  const Image img = Image::zeros_u8(28, 28);
  const auto grid = PatchGrid::for_image(img, 14);
  const auto patches = extract_patches(img, grid);
  ASSERT_EQ(patches.size(), 4u);
  EXPECT_EQ(patches[1].x0, 14);
  EXPECT_EQ(patches[2].y0, 14);
}

TEST(Patches, RemaindersDropped) {
  const Image img = Image::zeros_u8(30, 29);
  const auto grid = PatchGrid::for_image(img, 14);
  EXPECT_EQ(grid.grid_h, 2);
  EXPECT_EQ(grid.grid_w, 2);
  EXPECT_EQ(extract_patches(img, grid).size(), 4u);
}

TEST(Patches, TooLargeRejected) {
  const Image img = Image::zeros_u8(10, 10);
  EXPECT_THROW(PatchGrid::for_image(img, 14), Error);
  EXPECT_THROW(extract_patches(img, PatchGrid{14, 1, 1}), Error);
}

TEST(Patches, PartitionCoversCroppedImageOnce) {
  const Image img = Image::zeros_u8(47, 33);
  const auto grid = PatchGrid::for_image(img, 7);
  std::set<std::pair<int, int>> seen;
  std::size_t total = 0;
  for (const auto& p : extract_patches(img, grid)) {
    for (int y = 0; y < p.size; ++y)
      for (int x = 0; x < p.size; ++x) {
        seen.emplace(p.x0 + x, p.y0 + y);
        ++total;
      }
  }
  EXPECT_EQ(total, seen.size());
  EXPECT_EQ(seen.size(), static_cast<std::size_t>(6 * 7 * 4 * 7));
  for (const auto& [x, y] : seen) {
    EXPECT_LT(x, 42);
    EXPECT_LT(y, 28);
  }
}

TEST(Mse, Basics) {
  const Image zero = Image::zeros_f32(4, 4);
  EXPECT_EQ(mse(zero, zero), 0.0);
  std::vector<float> ones(4 * 4 * 3, 1.0f);
  EXPECT_EQ(mse(zero, Image(4, 4, ones)), 1.0);
  std::vector<float> half(4 * 4 * 3, 0.0f);
  for (std::size_t i = 0; i < half.size() / 2; ++i) half[i] = 0.5f;
  EXPECT_DOUBLE_EQ(mse(zero, Image(4, 4, half)), 0.125);
  EXPECT_THROW(mse(zero, Image::zeros_f32(4, 5)), Error);
}

TEST(Mse, SymmetricAndZeroIffEqual) {
  const Image a = textured_image(20, 20, 1);
  const Image b = textured_image(20, 20, 2);
  EXPECT_EQ(mse(a, b), mse(b, a));
  EXPECT_GT(mse(a, b), 0.0);
  EXPECT_EQ(mse(a, a), 0.0);
}

TEST(Resize, ConstantPreserved) {
  const Image c(3, 2, std::vector<float>(18, 0.25f));
  const Image r = resize_bilinear(c, 7, 5);
  for (float v : r.f32()) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(Resize, SameSizeIsIdentity) {
  const Image img = textured_image(19, 11, 4, false);
  EXPECT_EQ(resize_bilinear(img, 19, 11), img);
}

TEST(Resize, TwoToFourRow) {
  Plane p(1, 2);
  p << 0.0f, 1.0f;
  const Plane r = resize_bilinear(p, 4, 1);
  // Half-pixel centers: sources -0.25 (clamped), 0.25, 0.75, 1.25 (clamped).
  EXPECT_FLOAT_EQ(r(0, 0), 0.0f);
  EXPECT_FLOAT_EQ(r(0, 1), 0.25f);
  EXPECT_FLOAT_EQ(r(0, 2), 0.75f);
  EXPECT_FLOAT_EQ(r(0, 3), 1.0f);
  EXPECT_THROW(resize_bilinear(p, 0, 1), Error);
}

}  // namespace
}  // namespace naref
