#pragma once

#include "naref/embed.hpp"
#include "naref/image.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <vector>

namespace naref {

enum class ReferenceKind { Aligned, NonAligned };

const char* to_string(ReferenceKind kind) noexcept;
/// "aligned" / "non_aligned"; throws InvalidArgument otherwise.
ReferenceKind parse_reference_kind(const std::string& s);

struct QualityScore {
  double value = 0.0;  // cosine similarity, higher is better
  ReferenceKind reference_kind = ReferenceKind::Aligned;
};

/// Norm tolerance used to reject non-normalized inputs.
inline constexpr double kUnitTolerance = 1e-4;

template <typename Scalar>
QualityScore quality_score(const Embedding<Scalar>& ref, const Embedding<Scalar>& test,
                           ReferenceKind kind = ReferenceKind::Aligned);

struct TwoAfcDecision {
  int choice = 0;
  bool tie = false;
  double score0 = 0.0;
  double score1 = 0.0;
};

/// Picks the candidate scoring higher against `ref`; exact ties go to 0.
template <typename Scalar>
TwoAfcDecision two_afc_decide(const Embedding<Scalar>& ref, const Embedding<Scalar>& d0, const Embedding<Scalar>& d1);

/// Per-grid half of a heatmap.
struct MismatchDirection {
  int grid_h = 0;
  int grid_w = 0;
  Eigen::VectorXd best_similarity;  // raster order
  Eigen::VectorXi match;            // index into the other grid
  std::vector<bool> reciprocal;
  Eigen::VectorXd mismatch;         // 1 - per-direction normalized similarity
  Eigen::VectorXd penalized;        // after beta, before global normalization
  Eigen::ArrayXXd values;           // final, grid_h x grid_w, in [0, 1]
};

struct MismatchHeatmap {
  double beta = 1.5;
  /// Reference patches matched into the processed image (on the reference grid).
  MismatchDirection reference;
  /// Processed patches matched into the reference (on the processed grid).
  MismatchDirection processed;
};

struct HeatmapOptions {
  double beta = 1.5;
  double eps = 1e-8;
};

/// Dense nearest-neighbour patch matching. `ref` and `processed` must share
/// the channel dimension; grid shapes may differ.
template <typename Scalar>
MismatchHeatmap patch_mismatch_heatmap(const PatchEmbeddings<Scalar>& ref, const PatchEmbeddings<Scalar>& processed,
                                       const HeatmapOptions& opts = {});

/// values as an image plane, each cell repeated `scale` times per axis.
Plane heatmap_plane(const MismatchDirection& dir, int scale = 1);
void save_heatmap_png(const MismatchDirection& dir, const std::filesystem::path& path, int scale = 1);
/// Columns: direction,row,col,best_similarity,match,reciprocal,value
void save_heatmap_csv(const MismatchHeatmap& map, const std::filesystem::path& path);

}  // namespace naref
