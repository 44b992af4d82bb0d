#pragma once

#include "naref/image.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>

namespace naref {

inline constexpr int kFeatureDim = 26;
inline constexpr int kDefaultEmbeddingDim = 64;
inline constexpr double kDegenerateNorm = 1e-12;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// One row per patch (raster order), kFeatureDim columns.
struct PatchFeatures {
  int grid_h = 0;
  int grid_w = 0;
  RowMatrix<double> values;

  int count() const noexcept { return grid_h * grid_w; }
};

/// Unstandardized features: luma mean/std, Cb/Cr means (centered), gradient
/// energy along x and y, 4-bin orientation counts, 16 zigzag DCT magnitudes.
PatchFeatures raw_patch_features(const Image& img, const PatchGrid& grid);
/// raw_patch_features standardized per channel by the frozen constants.
PatchFeatures patch_features(const Image& img, const PatchGrid& grid);

struct FeatureScaling {
  std::array<double, kFeatureDim> mean;
  std::array<double, kFeatureDim> scale;
};
const FeatureScaling& feature_scaling();

/// Linear projection head y = W^T x + b. The frozen copy is taken at
/// construction and cannot be changed afterwards.
template <typename Scalar>
class EmbeddingHead {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  EmbeddingHead() = default;
  EmbeddingHead(Matrix W, Vector<Scalar> b) : W(std::move(W)), b(std::move(b)), frozen_W_(this->W), frozen_b_(this->b) {}

  Matrix W;  // F x D
  Vector<Scalar> b;

  int feature_dim() const noexcept { return static_cast<int>(W.rows()); }
  int dim() const noexcept { return static_cast<int>(W.cols()); }
  const Matrix& frozen_W() const noexcept { return frozen_W_; }
  const Vector<Scalar>& frozen_b() const noexcept { return frozen_b_; }

  /// A head whose trainable weights are `W, b` but whose frozen copy is
  /// taken from `frozen` (used when resuming from a checkpoint).
  static EmbeddingHead with_frozen(Matrix W, Vector<Scalar> b, Matrix frozen_W, Vector<Scalar> frozen_b) {
    EmbeddingHead h(std::move(frozen_W), std::move(frozen_b));
    h.W = std::move(W);
    h.b = std::move(b);
    return h;
  }

  /// The frozen snapshot as a head of its own.
  EmbeddingHead frozen() const { return EmbeddingHead(frozen_W_, frozen_b_); }

  template <typename Other>
  EmbeddingHead<Other> cast() const {
    return EmbeddingHead<Other>::with_frozen(W.template cast<Other>(), b.template cast<Other>(),
                                             frozen_W_.template cast<Other>(), frozen_b_.template cast<Other>());
  }

 private:
  Matrix frozen_W_;
  Vector<Scalar> frozen_b_;
};

/// Gaussian init, std 1/sqrt(F), zero bias.
EmbeddingHead<double> init_head(int feature_dim, int dim, std::uint64_t seed);

template <typename Scalar>
struct PatchEmbeddings {
  int grid_h = 0;
  int grid_w = 0;
  bool normalized = true;
  RowMatrix<Scalar> rows;  // count x C

  int count() const noexcept { return static_cast<int>(rows.rows()); }
  int dim() const noexcept { return static_cast<int>(rows.cols()); }
};

template <typename Scalar>
struct Embedding {
  Vector<Scalar> values;
  bool normalized = true;
};

/// Unit vector along v, or e1 when ||v|| < 1e-12.
template <typename Derived>
Vector<typename Derived::Scalar> normalize_or_e1(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Scalar n = v.norm();
  if (!(n >= Scalar(kDegenerateNorm))) {
    Vector<Scalar> e = Vector<Scalar>::Zero(v.size());
    if (v.size() > 0) e(0) = Scalar(1);
    return e;
  }
  return v / n;
}

template <typename Scalar>
PatchEmbeddings<Scalar> head_forward(const PatchFeatures& feat, const EmbeddingHead<Scalar>& head);

template <typename Scalar>
Embedding<Scalar> image_embedding(const PatchEmbeddings<Scalar>& pe);

/// Features, head and pooling in one step.
PatchEmbeddings<float> embed_patches(const Image& img, const EmbeddingHead<float>& head, int patch_size = 14);
Embedding<float> embed_image(const Image& img, const EmbeddingHead<float>& head, int patch_size = 14);

template <typename Scalar>
Scalar cosine_similarity(const Vector<Scalar>& a, const Vector<Scalar>& b) {
  const Scalar na = a.norm();
  const Scalar nb = b.norm();
  if (na < Scalar(kDegenerateNorm) || nb < Scalar(kDegenerateNorm)) return Scalar(0);
  return a.dot(b) / (na * nb);
}

// --- NVEB interchange ---------------------------------------------------------

struct EmbeddingFile {
  bool normalized = true;
  std::optional<std::pair<int, int>> grid;  // (grid_h, grid_w)
  RowMatrix<float> rows;
};

void write_embedding_file(const EmbeddingFile& file, const std::filesystem::path& path);
EmbeddingFile read_embedding_file(const std::filesystem::path& path);

void write_embeddings(const PatchEmbeddings<float>& pe, const std::filesystem::path& path);
void write_embeddings(const Embedding<float>& e, const std::filesystem::path& path);
/// Requires the grid flag.
PatchEmbeddings<float> read_patch_embeddings(const std::filesystem::path& path);
/// Requires count == 1.
Embedding<float> read_embedding(const std::filesystem::path& path);

}  // namespace naref
