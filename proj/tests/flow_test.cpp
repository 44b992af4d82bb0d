#include "naref/binary_io.hpp"
#include "naref/error.hpp"
#include "naref/flow.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace naref {
namespace {

using testing::ScratchDir;
using testing::textured_image;

Image crop(const Image& src, int x0, int y0, int w, int h) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out[(static_cast<std::size_t>(y) * w + x) * 3 + c] = src.u8()[src.index(x0 + x, y0 + y, c)];
  return Image(w, h, std::move(out));
}

// Fraction of interior pixels whose flow equals (du, dv) exactly.
double translation_hit_rate(int du, int dv, std::uint64_t seed) {
  const Image world = textured_image(192, 192, seed);
  const Image prev = crop(world, 32, 32, 128, 128);
  const Image curr = crop(world, 32 - du, 32 - dv, 128, 128);
  const FlowField f = estimate_flow(prev, curr);
  int hits = 0;
  int total = 0;
  for (int y = 16; y < 112; ++y)
    for (int x = 16; x < 112; ++x) {
      ++total;
      hits += (f.u(y, x) == du && f.v(y, x) == dv) ? 1 : 0;
    }
  return static_cast<double>(hits) / total;
}

TEST(Flow, IdenticalFramesGiveZeroFlow) {
  const Image img = textured_image(64, 48, 3);
  const FlowField f = estimate_flow(img, img);
  EXPECT_TRUE((f.u == 0).all());
  EXPECT_TRUE((f.v == 0).all());
  const Image flat = Image::zeros_u8(40, 40);
  const FlowField g = estimate_flow(flat, flat);
  EXPECT_TRUE((g.u == 0).all() && (g.v == 0).all());
}

TEST(Flow, RecoversPositiveHorizontalShift) { EXPECT_GE(translation_hit_rate(3, 0, 11), 0.95); }

TEST(Flow, RecoversMixedShift) { EXPECT_GE(translation_hit_rate(-5, 2, 12), 0.95); }

TEST(Flow, RecoversLargeShiftWithinRadius) { EXPECT_GE(translation_hit_rate(17, -9, 13), 0.95); }

TEST(Flow, SearchRadius) { EXPECT_EQ(max_search_radius({}), 38); }

TEST(Flow, Errors) {
  EXPECT_THROW(estimate_flow(Image::zeros_u8(40, 40), Image::zeros_u8(41, 40)), Error);
  EXPECT_THROW(estimate_flow(Image::zeros_u8(31, 40), Image::zeros_u8(31, 40)), Error);
}

TEST(Flow, JobsDoNotChangeResult) {
  const Image world = textured_image(160, 160, 21);
  const Image a = crop(world, 10, 10, 96, 80);
  const Image b = crop(world, 14, 8, 96, 80);
  FlowOptions many;
  many.jobs = 4;
  const FlowField f1 = estimate_flow(a, b);
  const FlowField f4 = estimate_flow(a, b, many);
  EXPECT_TRUE((f1.u == f4.u).all() && (f1.v == f4.v).all());
}

TEST(FlowMagnitude, Elementwise) {
  FlowField f;
  f.width = 3;
  f.height = 2;
  f.u = IntPlane::Zero(2, 3);
  f.v = IntPlane::Zero(2, 3);
  EXPECT_TRUE((flow_magnitude(f) == 0.0f).all());
  f.u.setConstant(3);
  f.v.setConstant(4);
  EXPECT_TRUE((flow_magnitude(f) == 5.0f).all());
  f.u << 1, -2, 0, 7, 0, -1;
  f.v << 1, 0, 0, -3, 5, -1;
  const Plane m = flow_magnitude(f);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 3; ++x)
      EXPECT_FLOAT_EQ(m(y, x), std::sqrt(float(f.u(y, x) * f.u(y, x) + f.v(y, x) * f.v(y, x))));
}

TEST(FlowDump, RoundTripAndMagic) {
  ScratchDir dir("flow");
  const Image world = textured_image(100, 100, 2);
  const FlowField f = estimate_flow(crop(world, 0, 0, 64, 64), crop(world, 2, 1, 64, 64));
  write_flow(f, dir / "f.nvfl");
  const FlowField g = read_flow(dir / "f.nvfl");
  EXPECT_EQ(g.width, 64);
  EXPECT_TRUE((f.u == g.u).all() && (f.v == g.v).all());
  const auto bytes = binio::read_file(dir / "f.nvfl");
  ASSERT_EQ(bytes.size(), 4u + 2 + 4 + 4 + 64 * 64 * 4);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "NVFL");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[6], 64);
}

TEST(Troi, TwoByTwoPicksLargest) {
  Plane mag(2, 2);
  mag << 0, 1, 2, 3;
  const TroiMask m = troi_from_flow(mag, 0.5);
  EXPECT_EQ(m.bits(0, 0), 0);
  EXPECT_EQ(m.bits(0, 1), 0);
  EXPECT_EQ(m.bits(1, 0), 1);
  EXPECT_EQ(m.bits(1, 1), 1);
  EXPECT_DOUBLE_EQ(m.coverage, 0.5);
}

TEST(Troi, TiesBrokenByRasterOrder) {
  const Plane mag = Plane::Constant(10, 10, 1.0f);
  const TroiMask m = troi_from_flow(mag, 0.5);
  EXPECT_EQ(m.pre_cleanup_count, 50u);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(m.bits(i / 10, i % 10), i < 50 ? 1 : 0) << i;
}

TEST(Troi, ExactPreCleanupCount) {
  Plane mag(10, 10);
  for (int i = 0; i < 100; ++i) mag(i / 10, i % 10) = static_cast<float>((i * 37) % 100);
  TroiOptions raw;
  raw.cleanup = false;
  const TroiMask m = troi_from_flow(mag, 0.85, raw);
  EXPECT_EQ(m.pre_cleanup_count, 85u);
  EXPECT_EQ(m.count(), 85u);
  EXPECT_EQ(troi_pixel_count(0.85, 100), 85u);
  EXPECT_EQ(troi_pixel_count(0.3, 10000), 3000u);
  EXPECT_EQ(troi_pixel_count(0.301, 1000), 301u);
  EXPECT_EQ(troi_pixel_count(0.3005, 1000), 301u);
}

TEST(Troi, CoverageRangeEnforced) {
  const Plane mag = Plane::Constant(4, 4, 1.0f);
  EXPECT_THROW(troi_from_flow(mag, 0.2), Error);
  EXPECT_THROW(troi_from_flow(mag, 0.9), Error);
  TroiOptions any;
  any.allow_any_coverage = true;
  EXPECT_NO_THROW(troi_from_flow(mag, 0.9, any));
  EXPECT_THROW(troi_from_flow(Plane(0, 0), 0.5), Error);
}

TEST(Troi, CleanupRemovesSpecks) {
  Plane mag = Plane::Zero(64, 64);
  mag.block(10, 10, 30, 30).setConstant(5.0f);
  mag(55, 55) = 9.0f;  // isolated speck, highest magnitude
  const double coverage = (900.0 + 1.0) / 4096.0;
  TroiOptions any;
  any.allow_any_coverage = true;
  const TroiMask m = troi_from_flow(mag, coverage, any);
  EXPECT_EQ(m.pre_cleanup_count, 901u);
  EXPECT_EQ(m.bits(55, 55), 0);
  EXPECT_EQ(m.count(), 900u);
}

TEST(Feather, UniformMasks) {
  const TroiMask ones = feather_mask(uniform_mask(20, 15, true));
  EXPECT_TRUE((ones.soft == 1.0f).all());
  const TroiMask zeros = feather_mask(uniform_mask(20, 15, false));
  EXPECT_TRUE((zeros.soft == 0.0f).all());
}

TEST(Feather, SinglePixelKernel) {
  TroiMask m = uniform_mask(31, 31, false);
  m.bits(15, 15) = 1;
  const TroiMask f = feather_mask(m, 2.0);
  // Oracle: normalized Gaussian over the radius-6 disk.
  double total = 0.0;
  for (int dy = -6; dy <= 6; ++dy)
    for (int dx = -6; dx <= 6; ++dx)
      if (dx * dx + dy * dy <= 36) total += std::exp(-(dx * dx + dy * dy) / 8.0);
  EXPECT_NEAR(f.soft(15, 15), 1.0 / total, 1e-6);
  EXPECT_NEAR(f.soft(15, 17), std::exp(-0.5) / total, 1e-6);
  Eigen::Index my, mx;
  f.soft.maxCoeff(&my, &mx);
  EXPECT_EQ(my, 15);
  EXPECT_EQ(mx, 15);
  for (int y = 0; y < 31; ++y)
    for (int x = 0; x < 31; ++x) {
      const int d2 = (x - 15) * (x - 15) + (y - 15) * (y - 15);
      if (d2 > 36) EXPECT_EQ(f.soft(y, x), 0.0f) << x << "," << y;
      else EXPECT_GT(f.soft(y, x), 0.0f);
    }
  EXPECT_TRUE((f.bits == m.bits).all());
}

TEST(Feather, SupportAndInteriorProperty) {
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    TroiMask m = uniform_mask(48, 40, false);
    const int x0 = rng.uniform_int(0, 30);
    const int y0 = rng.uniform_int(0, 20);
    m.bits.block(y0, x0, rng.uniform_int(5, 17), rng.uniform_int(5, 17)).setConstant(1);
    const TroiMask f = feather_mask(m, 2.0);
    const MaskBits support = dilate_disk(m.bits, 6.0);
    const MaskBits inverse = (m.bits == 0).cast<std::uint8_t>();
    const MaskBits not_interior = dilate_disk(inverse, 6.0);
    for (int y = 0; y < 40; ++y)
      for (int x = 0; x < 48; ++x) {
        if (!support(y, x)) EXPECT_EQ(f.soft(y, x), 0.0f);
        if (!not_interior(y, x)) EXPECT_EQ(f.soft(y, x), 1.0f);
        EXPECT_GE(f.soft(y, x), 0.0f);
        EXPECT_LE(f.soft(y, x), 1.0f);
      }
  }
}

}  // namespace
}  // namespace naref
