#include "naref/embed.hpp"

#include "naref/binary_io.hpp"
#include "naref/error.hpp"
#include "naref/rng.hpp"

#include <algorithm>
#include <numbers>

namespace naref {

namespace {

// Zigzag order over the top-left 4x4 corner of the coefficient block,
// written as (row, col) = (v, u).
constexpr std::array<std::pair<int, int>, 16> kZigzag = {{{0, 0}, {0, 1}, {1, 0}, {2, 0}, {1, 1}, {0, 2},
                                                          {0, 3}, {1, 2}, {2, 1}, {3, 0}, {4, 0}, {3, 1},
                                                          {2, 2}, {1, 3}, {0, 4}, {0, 5}}};

Eigen::MatrixXd dct_matrix(int n) {
  Eigen::MatrixXd c(n, n);
  for (int u = 0; u < n; ++u)
    for (int x = 0; x < n; ++x)
      c(u, x) = (u == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n)) * std::cos((2 * x + 1) * u * std::numbers::pi / (2.0 * n));
  return c;
}

}  // namespace

PatchFeatures raw_patch_features(const Image& img, const PatchGrid& grid) {
  const int p = grid.patch_size;
  if (p < 6 || grid.grid_h < 1 || grid.grid_w < 1 || grid.grid_w * p > img.width() || grid.grid_h * p > img.height()) {
    throw Error(ErrorKind::ShapeMismatch, "patch_features: grid does not fit the image");
  }
  const Image ycc = img.color_space() == ColorSpace::LumaChroma ? img.to_float() : to_luma_chroma(img.to_float());
  const Eigen::MatrixXd dct = dct_matrix(p);
  PatchFeatures out;
  out.grid_h = grid.grid_h;
  out.grid_w = grid.grid_w;
  out.values.resize(grid.count(), kFeatureDim);
  Eigen::MatrixXd luma(p, p);
  for (int gy = 0; gy < grid.grid_h; ++gy)
    for (int gx = 0; gx < grid.grid_w; ++gx) {
      const int x0 = gx * p;
      const int y0 = gy * p;
      double cb = 0.0;
      double cr = 0.0;
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x) {
          luma(y, x) = ycc.at(x0 + x, y0 + y, 0);
          cb += ycc.at(x0 + x, y0 + y, 1);
          cr += ycc.at(x0 + x, y0 + y, 2);
        }
      auto f = out.values.row(gy * grid.grid_w + gx);
      const double n = static_cast<double>(p) * p;
      const double mean = luma.mean();
      f(0) = mean;
      f(1) = std::sqrt((luma.array() - mean).square().mean());
      f(2) = cb / n - 0.5;
      f(3) = cr / n - 0.5;
      // Forward differences on the (p-1) x (p-1) corner.
      double ex = 0.0;
      double ey = 0.0;
      std::array<double, 4> bins{};
      for (int y = 0; y + 1 < p; ++y)
        for (int x = 0; x + 1 < p; ++x) {
          const double dx = luma(y, x + 1) - luma(y, x);
          const double dy = luma(y + 1, x) - luma(y, x);
          ex += dx * dx;
          ey += dy * dy;
          if (dx == 0.0 && dy == 0.0) continue;
          double theta = std::atan2(dy, dx);
          if (theta < 0) theta += std::numbers::pi;
          const int bin = std::min(3, static_cast<int>(theta / (std::numbers::pi / 4)));
          bins[static_cast<std::size_t>(bin)] += 1.0;
        }
      const double m = static_cast<double>(p - 1) * (p - 1);
      f(4) = ex / m;
      f(5) = ey / m;
      for (int i = 0; i < 4; ++i) f(6 + i) = bins[static_cast<std::size_t>(i)];
      const Eigen::MatrixXd coeff = dct * luma * dct.transpose();
      for (int i = 0; i < 16; ++i) f(10 + i) = std::abs(coeff(kZigzag[i].first, kZigzag[i].second));
    }
  return out;
}

PatchFeatures patch_features(const Image& img, const PatchGrid& grid) {
  PatchFeatures f = raw_patch_features(img, grid);
  // Gradient energies span orders of magnitude between clean and noisy patches.
  for (int i = 4; i < 6; ++i) f.values.col(i) = (f.values.col(i).array() + 1e-5).log();
  const FeatureScaling& s = feature_scaling();
  for (int i = 0; i < kFeatureDim; ++i) f.values.col(i) = (f.values.col(i).array() - s.mean[i]) / s.scale[i];
  return f;
}

EmbeddingHead<double> init_head(int feature_dim, int dim, std::uint64_t seed) {
  if (feature_dim < 1 || dim < 1) throw Error(ErrorKind::InvalidArgument, "init_head: dimensions must be positive");
  Rng rng(seed);
  Eigen::MatrixXd W(feature_dim, dim);
  const double sd = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  for (int j = 0; j < dim; ++j)
    for (int i = 0; i < feature_dim; ++i) W(i, j) = sd * rng.normal();
  return EmbeddingHead<double>(std::move(W), Eigen::VectorXd::Zero(dim));
}

template <typename Scalar>
PatchEmbeddings<Scalar> head_forward(const PatchFeatures& feat, const EmbeddingHead<Scalar>& head) {
  if (feat.values.cols() != head.feature_dim() || head.b.size() != head.dim()) {
    throw Error(ErrorKind::ShapeMismatch, "head_forward: feature dimension " + std::to_string(feat.values.cols()) +
                                              " does not match head input " + std::to_string(head.feature_dim()));
  }
  PatchEmbeddings<Scalar> pe;
  pe.grid_h = feat.grid_h;
  pe.grid_w = feat.grid_w;
  pe.rows = feat.values.template cast<Scalar>() * head.W;
  pe.rows.rowwise() += head.b.transpose();
  for (Eigen::Index r = 0; r < pe.rows.rows(); ++r) pe.rows.row(r) = normalize_or_e1(pe.rows.row(r).transpose()).transpose();
  return pe;
}

template <typename Scalar>
Embedding<Scalar> image_embedding(const PatchEmbeddings<Scalar>& pe) {
  if (pe.rows.rows() == 0) throw Error(ErrorKind::InvalidArgument, "image_embedding: no patches");
  return {normalize_or_e1(pe.rows.colwise().mean().transpose()), true};
}

template PatchEmbeddings<float> head_forward(const PatchFeatures&, const EmbeddingHead<float>&);
template PatchEmbeddings<double> head_forward(const PatchFeatures&, const EmbeddingHead<double>&);
template Embedding<float> image_embedding(const PatchEmbeddings<float>&);
template Embedding<double> image_embedding(const PatchEmbeddings<double>&);

PatchEmbeddings<float> embed_patches(const Image& img, const EmbeddingHead<float>& head, int patch_size) {
  return head_forward(patch_features(img, PatchGrid::for_image(img, patch_size)), head);
}

Embedding<float> embed_image(const Image& img, const EmbeddingHead<float>& head, int patch_size) {
  return image_embedding(embed_patches(img, head, patch_size));
}

void write_embedding_file(const EmbeddingFile& file, const std::filesystem::path& path) {
  const auto count = static_cast<std::uint64_t>(file.rows.rows());
  if (file.grid && static_cast<std::uint64_t>(file.grid->first) * file.grid->second != count) {
    throw Error(ErrorKind::InvalidArgument, "write_embeddings: grid does not match row count");
  }
  binio::Writer w;
  w.magic("NVEB");
  w.u16(1);
  w.u16(static_cast<std::uint16_t>((file.normalized ? 1 : 0) | (file.grid ? 2 : 0)));
  w.u32(static_cast<std::uint32_t>(count));
  w.u32(static_cast<std::uint32_t>(file.rows.cols()));
  if (file.grid) {
    w.u16(static_cast<std::uint16_t>(file.grid->first));
    w.u16(static_cast<std::uint16_t>(file.grid->second));
  }
  for (Eigen::Index i = 0; i < file.rows.size(); ++i) w.f32(file.rows.data()[i]);
  w.save(path);
}

EmbeddingFile read_embedding_file(const std::filesystem::path& path) {
  auto r = binio::Reader::from_file(path);
  if (r.remaining() < 16 || r.magic() != "NVEB") throw Error(ErrorKind::Format, path.string() + ": bad magic, not an NVEB file");
  const auto version = r.u16();
  if (version != 1) throw Error(ErrorKind::Format, path.string() + ": unsupported NVEB version " + std::to_string(version));
  const auto flags = r.u16();
  const auto count = r.u32();
  const auto dim = r.u32();
  EmbeddingFile f;
  f.normalized = (flags & 1) != 0;
  if (flags & 2) {
    const int gh = r.u16();
    const int gw = r.u16();
    if (static_cast<std::uint64_t>(gh) * gw != count) {
      throw Error(ErrorKind::Format, path.string() + ": grid " + std::to_string(gh) + "x" + std::to_string(gw) +
                                         " inconsistent with count " + std::to_string(count));
    }
    f.grid = std::make_pair(gh, gw);
  }
  if (r.remaining() != static_cast<std::uint64_t>(count) * dim * 4) {
    throw Error(ErrorKind::Format, path.string() + ": payload size inconsistent with count x dim");
  }
  f.rows.resize(count, dim);
  for (Eigen::Index i = 0; i < f.rows.size(); ++i) f.rows.data()[i] = r.f32();
  return f;
}

void write_embeddings(const PatchEmbeddings<float>& pe, const std::filesystem::path& path) {
  write_embedding_file({pe.normalized, std::make_pair(pe.grid_h, pe.grid_w), pe.rows}, path);
}

void write_embeddings(const Embedding<float>& e, const std::filesystem::path& path) {
  write_embedding_file({e.normalized, std::nullopt, e.values.transpose()}, path);
}

PatchEmbeddings<float> read_patch_embeddings(const std::filesystem::path& path) {
  EmbeddingFile f = read_embedding_file(path);
  if (!f.grid) throw Error(ErrorKind::Format, path.string() + ": no patch grid in file");
  return {f.grid->first, f.grid->second, f.normalized, std::move(f.rows)};
}

Embedding<float> read_embedding(const std::filesystem::path& path) {
  EmbeddingFile f = read_embedding_file(path);
  if (f.rows.rows() != 1) throw Error(ErrorKind::Format, path.string() + ": expected a single embedding");
  return {f.rows.row(0).transpose(), f.normalized};
}

// Channel means and standard deviations over 60 synthetic textures and three
// random catalog distortions of each (240 images of 128x96, 14 px patches).
// Channels 4 and 5 are taken after the log compression in patch_features.
const FeatureScaling& feature_scaling() {
  static const FeatureScaling s = {
      {0.511236, 0.0869976, -0.00509821, 0.00220953, -6.44712, -6.41619, 45.4742, 45.6765, 36.448,
       34.516, 7.1573, 0.493077, 0.481563, 0.223539, 0.258199, 0.225898, 0.117138, 0.158378, 0.163629,
       0.127691, 0.0881852, 0.107277, 0.123269, 0.0979416, 0.0838805, 0.058629},
      {0.1478, 0.0359186, 0.0521247, 0.0621099, 1.19554, 1.16878, 13.6685, 15.0318, 11.5507, 11.6689,
       2.0692, 0.39227, 0.396514, 0.184118, 0.212341, 0.189196, 0.106096, 0.13419, 0.13645, 0.112921,
       0.0764765, 0.097625, 0.107321, 0.0906134, 0.0764203, 0.0551361}};
  return s;
}

}  // namespace naref
