#include "naref/binary_io.hpp"
#include "naref/embed.hpp"
#include "naref/error.hpp"
#include "naref/rng.hpp"
#include "naref/synthetic.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

namespace naref {
namespace {

using testing::ScratchDir;
using testing::textured_image;

Image gray(int w, int h, std::uint8_t v) { return Image(w, h, std::vector<std::uint8_t>(w * h * 3, v)); }

TEST(PatchFeatures, ConstantPatch) {
  const Image img = gray(28, 14, 100);
  const PatchFeatures f = raw_patch_features(img, PatchGrid::for_image(img));
  ASSERT_EQ(f.values.rows(), 2);
  ASSERT_EQ(f.values.cols(), kFeatureDim);
  for (int r = 0; r < 2; ++r) {
    EXPECT_NEAR(f.values(r, 0), 100.0 / 255.0, 1e-6);
    EXPECT_NEAR(f.values(r, 1), 0.0, 1e-7);
    EXPECT_NEAR(f.values(r, 2), 0.0, 1e-6);
    EXPECT_EQ(f.values(r, 4), 0.0);
    EXPECT_EQ(f.values(r, 5), 0.0);
    for (int i = 6; i < 10; ++i) EXPECT_EQ(f.values(r, i), 0.0);
    // DC of the orthonormal 14x14 DCT is 14 * mean.
    EXPECT_NEAR(f.values(r, 10), 14.0 * 100.0 / 255.0, 1e-5);
    for (int i = 11; i < kFeatureDim; ++i) EXPECT_NEAR(f.values(r, i), 0.0, 1e-6);
  }
}

TEST(PatchFeatures, VerticalEdgeFavoursHorizontalGradient) {
  std::vector<std::uint8_t> px(14 * 14 * 3);
  for (int y = 0; y < 14; ++y)
    for (int x = 0; x < 14; ++x)
      for (int c = 0; c < 3; ++c) px[(y * 14 + x) * 3 + c] = x < 7 ? 20 : 220;
  const Image img(14, 14, std::move(px));
  const PatchFeatures f = raw_patch_features(img, PatchGrid::for_image(img));
  const double step = 200.0 / 255.0;
  // One column of 13 forward differences of size `step` out of 13x13.
  EXPECT_NEAR(f.values(0, 4), step * step / 13.0, 1e-6);
  EXPECT_EQ(f.values(0, 5), 0.0);
  EXPECT_EQ(f.values(0, 6), 13.0);  // all in the horizontal orientation bin
  EXPECT_GT(f.values(0, 11), 0.0);  // first horizontal AC coefficient
}

TEST(PatchFeatures, HistogramCountsGradientPixels) {
  const Image img = textured_image(56, 42, 12);
  const PatchFeatures f = raw_patch_features(img, PatchGrid::for_image(img));
  for (int r = 0; r < f.values.rows(); ++r) {
    const double sum = f.values.row(r).segment(6, 4).sum();
    EXPECT_LE(sum, 169.0);
    EXPECT_GT(sum, 150.0);
    for (int i = 10; i < kFeatureDim; ++i) EXPECT_GE(f.values(r, i), 0.0);
    EXPECT_TRUE(f.values.row(r).allFinite());
  }
}

TEST(PatchFeatures, DeterministicAndStandardized) {
  const Image img = textured_image(70, 56, 3);
  const PatchFeatures a = patch_features(img, PatchGrid::for_image(img));
  const PatchFeatures b = patch_features(img, PatchGrid::for_image(img));
  EXPECT_TRUE(a.values == b.values);
  // Over fresh textures the standardized channels are roughly zero-mean, unit-scale.
  Eigen::ArrayXd s = Eigen::ArrayXd::Zero(kFeatureDim);
  Eigen::ArrayXd s2 = Eigen::ArrayXd::Zero(kFeatureDim);
  double n = 0;
  for (int i = 0; i < 10; ++i) {
    const Image t = random_texture(128, 96, 900 + i).to_u8();
    const PatchFeatures f = patch_features(t, PatchGrid::for_image(t));
    for (int r = 0; r < f.values.rows(); ++r) {
      const Eigen::ArrayXd v = f.values.row(r).transpose();
      s += v;
      s2 += v * v;
      n += 1;
    }
  }
  const Eigen::ArrayXd m = s / n;
  const Eigen::ArrayXd sd = (s2 / n - m * m).sqrt();
  for (int i = 0; i < kFeatureDim; ++i) {
    EXPECT_LT(std::abs(m(i)), 1.0) << i;
    // Chroma means barely move on clean textures; colour distortions set their scale.
    if (i != 2 && i != 3) EXPECT_GT(sd(i), 0.1) << i;
    EXPECT_LT(sd(i), 3.0) << i;
  }
}

TEST(PatchFeatures, GridMismatch) {
  const Image img = gray(28, 28, 1);
  EXPECT_THROW(raw_patch_features(img, {14, 3, 1}), Error);
}

TEST(HeadForward, IdentityOnBasisVector) {
  EmbeddingHead<double> head(Eigen::MatrixXd::Identity(kFeatureDim, kFeatureDim), Eigen::VectorXd::Zero(kFeatureDim));
  PatchFeatures f{1, 1, RowMatrix<double>::Zero(1, kFeatureDim)};
  f.values(0, 7) = 1.0;
  const auto pe = head_forward(f, head);
  EXPECT_EQ(pe.rows(0, 7), 1.0);
  EXPECT_EQ(pe.rows.row(0).sum(), 1.0);
}

TEST(HeadForward, DegenerateGivesE1) {
  EmbeddingHead<float> head(Eigen::MatrixXf::Zero(kFeatureDim, 8), Eigen::VectorXf::Zero(8));
  PatchFeatures f{1, 2, RowMatrix<double>::Random(2, kFeatureDim)};
  const auto pe = head_forward(f, head);
  for (int r = 0; r < 2; ++r) {
    EXPECT_EQ(pe.rows(r, 0), 1.0f);
    EXPECT_EQ(pe.rows.row(r).squaredNorm(), 1.0f);
  }
}

TEST(HeadForward, UnitNormProperty) {
  Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const EmbeddingHead<double> h = init_head(kFeatureDim, 16, rng.next());
    EmbeddingHead<float> head = h.cast<float>();
    for (int j = 0; j < 16; ++j) head.b(j) = static_cast<float>(rng.normal());
    PatchFeatures f{1, 1, RowMatrix<double>(1, kFeatureDim)};
    for (int i = 0; i < kFeatureDim; ++i) f.values(0, i) = 3.0 * rng.normal();
    const auto pe = head_forward(f, head);
    ASSERT_NEAR(pe.rows.row(0).norm(), 1.0f, 1e-6f);
  }
}

TEST(HeadForward, DimensionMismatch) {
  EmbeddingHead<float> head(Eigen::MatrixXf::Zero(10, 8), Eigen::VectorXf::Zero(8));
  PatchFeatures f{1, 1, RowMatrix<double>::Zero(1, kFeatureDim)};
  EXPECT_THROW(head_forward(f, head), Error);
}

TEST(ImageEmbedding, PoolingRules) {
  PatchEmbeddings<double> pe{1, 1, true, RowMatrix<double>(1, 3)};
  pe.rows << 0.6, 0.8, 0.0;
  EXPECT_TRUE(image_embedding(pe).values.isApprox(Eigen::Vector3d(0.6, 0.8, 0.0)));
  pe = {1, 2, true, RowMatrix<double>(2, 3)};
  pe.rows << 0.0, 0.6, 0.8, 0.0, -0.6, -0.8;
  EXPECT_EQ(image_embedding(pe).values, Eigen::Vector3d(1, 0, 0));
  pe = {2, 2, true, RowMatrix<double>(4, 3)};
  pe.rows.rowwise() = Eigen::RowVector3d(0.0, 0.6, 0.8);
  EXPECT_TRUE(image_embedding(pe).values.isApprox(Eigen::Vector3d(0.0, 0.6, 0.8)));
  pe.rows.resize(0, 3);
  EXPECT_THROW(image_embedding(pe), Error);
}

TEST(EmbeddingHeadType, FrozenCopySurvivesUpdates) {
  EmbeddingHead<double> h = init_head(kFeatureDim, 8, 42);
  const Eigen::MatrixXd w0 = h.W;
  for (int i = 0; i < 10; ++i) h.W.array() += 0.1;
  EXPECT_TRUE(h.frozen_W() == w0);
  EXPECT_FALSE(h.W == w0);
  EXPECT_TRUE(h.frozen().W == w0);
}

TEST(Nveb, GridRoundTripBitExact) {
  ScratchDir dir("nveb");
  PatchEmbeddings<float> pe{2, 2, true, RowMatrix<float>::Random(4, 8)};
  pe.rows(1, 3) = -0.0f;
  pe.rows(2, 5) = 1e-38f;
  write_embeddings(pe, dir / "g.nveb");
  const auto back = read_patch_embeddings(dir / "g.nveb");
  EXPECT_EQ(back.grid_h, 2);
  EXPECT_EQ(back.grid_w, 2);
  EXPECT_TRUE(back.normalized);
  EXPECT_EQ(std::memcmp(back.rows.data(), pe.rows.data(), sizeof(float) * 32), 0);
  const auto bytes = binio::read_file(dir / "g.nveb");
  EXPECT_EQ(bytes.size(), 16u + 4u + 32u * 4u);
  EXPECT_EQ(bytes[6], 3);  // flags: unit-normalized | grid
}

TEST(Nveb, SingleEmbeddingRoundTrip) {
  ScratchDir dir("nveb");
  const Embedding<float> e{Eigen::VectorXf::LinSpaced(5, -1, 1), false};
  write_embeddings(e, dir / "e.nveb");
  const auto back = read_embedding(dir / "e.nveb");
  EXPECT_EQ(back.values, e.values);
  EXPECT_FALSE(back.normalized);
  EXPECT_THROW(read_patch_embeddings(dir / "e.nveb"), Error);
}

TEST(Nveb, Errors) {
  ScratchDir dir("nveb");
  binio::Writer bad_magic;
  bad_magic.magic("XXXX");
  bad_magic.u16(1);
  bad_magic.u16(0);
  bad_magic.u32(0);
  bad_magic.u32(0);
  bad_magic.save(dir / "magic.nveb");
  EXPECT_THROW(read_embedding_file(dir / "magic.nveb"), Error);

  binio::Writer bad_version;
  bad_version.magic("NVEB");
  bad_version.u16(2);
  bad_version.u16(0);
  bad_version.u32(0);
  bad_version.u32(0);
  bad_version.save(dir / "version.nveb");
  EXPECT_THROW(read_embedding_file(dir / "version.nveb"), Error);

  binio::Writer bad_grid;
  bad_grid.magic("NVEB");
  bad_grid.u16(1);
  bad_grid.u16(2);
  bad_grid.u32(3);
  bad_grid.u32(1);
  bad_grid.u16(2);
  bad_grid.u16(2);
  for (int i = 0; i < 3; ++i) bad_grid.f32(0.0f);
  bad_grid.save(dir / "grid.nveb");
  try {
    read_embedding_file(dir / "grid.nveb");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Format);
  }

  binio::Writer short_payload;
  short_payload.magic("NVEB");
  short_payload.u16(1);
  short_payload.u16(0);
  short_payload.u32(2);
  short_payload.u32(4);
  short_payload.f32(1.0f);
  short_payload.save(dir / "short.nveb");
  EXPECT_THROW(read_embedding_file(dir / "short.nveb"), Error);
}

}  // namespace
}  // namespace naref
