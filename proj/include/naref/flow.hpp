#pragma once

#include "naref/image.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>

namespace naref {

using IntPlane = Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic>;
using MaskBits = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Integer displacement per pixel: curr(x, y) ~ prev(x - u, y - v).
struct FlowField {
  int width = 0;
  int height = 0;
  IntPlane u;
  IntPlane v;
};

struct FlowOptions {
  int levels = 3;
  int block = 8;
  int coarse_radius = 8;
  int refine_radius = 2;
  unsigned jobs = 1;
};

/// Largest |u| or |v| the matcher can report for the given options.
int max_search_radius(const FlowOptions& opts);

/// Pyramidal block matching on luma with SAD cost. Ties go to the smaller
/// displacement magnitude, then to raster order (dy, then dx). A 3x3 median
/// filter is applied to each component at the end.
FlowField estimate_flow(const Image& prev, const Image& curr, const FlowOptions& opts = {});

Plane flow_magnitude(const FlowField& flow);

struct TroiOptions {
  bool cleanup = true;
  int min_component = 16;
  /// Permit coverages outside [0.30, 0.85].
  bool allow_any_coverage = false;
};

struct TroiMask {
  int width = 0;
  int height = 0;
  MaskBits bits;  // (y, x), 0 or 1
  double requested_coverage = 0.0;
  double coverage = 0.0;
  std::size_t pre_cleanup_count = 0;
  /// Feathered weights in [0, 1]; empty until feather_mask runs.
  Plane soft;
  double feather_sigma = 0.0;

  bool has_soft() const noexcept { return soft.size() > 0; }
  std::size_t count() const { return static_cast<std::size_t>((bits != 0).count()); }
};

/// Number of pixels the percentile cut keeps: ceil(coverage * n).
std::size_t troi_pixel_count(double coverage, std::size_t n);

/// Keeps the highest-magnitude pixels (ties by ascending raster index), then
/// applies a 3x3 closing and drops 8-connected components smaller than
/// `min_component`. Cleanup is skipped on frames with fewer than
/// min_component^2 pixels.
TroiMask troi_from_flow(const Plane& magnitude, double coverage, const TroiOptions& opts = {});

/// Mask covering every pixel (or none); used where a full-frame blend is wanted.
TroiMask uniform_mask(int width, int height, bool on);

/// Radially truncated (3 sigma) Gaussian blur of the binary mask with
/// replicated borders. Windows that are fully inside / outside the mask give
/// exactly 1 / 0.
TroiMask feather_mask(TroiMask mask, double sigma = 2.0);

/// Pixels within Euclidean distance `radius` of a set bit.
MaskBits dilate_disk(const MaskBits& bits, double radius);

/// Binary flow dump ("NVFL", version 1).
void write_flow(const FlowField& flow, const std::filesystem::path& path);
FlowField read_flow(const std::filesystem::path& path);

/// 0/255 grayscale PNG of the hard mask.
void save_mask_png(const TroiMask& mask, const std::filesystem::path& path);

}  // namespace naref
