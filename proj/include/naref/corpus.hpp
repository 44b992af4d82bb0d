#pragma once

#include "naref/distort.hpp"
#include "naref/flow.hpp"
#include "naref/image.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace naref {

inline constexpr int kManifestVersion = 1;

enum class OrderSource { Construction, Supervision };

std::string to_string(OrderSource s);

struct TripletRecord {
  std::string id;
  std::string scene_id;
  int target_index = 0;
  int reference_index = 0;
  int k = 1;
  DistortionSpec pos;
  DistortionSpec neg;
  double troi_coverage = 0.5;
  std::uint64_t mask_seed = 0;
  OrderSource order_source = OrderSource::Construction;
  /// 0 = first distorted (pos) preferred, 1 = second.
  std::optional<int> label;

  friend bool operator==(const TripletRecord&, const TripletRecord&) = default;
};

struct BuildOptions {
  int per_target = 3;
  std::uint64_t seed = 0;
  int max_k = 15;
  int max_attempts = 20;
  double scene_threshold = 30.0 / 255.0;
  /// TROI coverage is drawn uniformly from [coverage_min, coverage_max].
  double coverage_min = 0.30;
  double coverage_max = 0.85;
  /// Targets are 1, 1 + stride, ... (frame 0 has no predecessor for flow).
  int target_stride = 1;
  unsigned jobs = 1;
};

struct ManifestHeader {
  int version = kManifestVersion;
  std::uint64_t seed = 0;
  int per_target = 3;
  double scene_threshold = 30.0 / 255.0;
  int target_stride = 1;
  /// scene id -> frame directory (may be empty for in-memory scenes).
  std::map<std::string, std::string> scenes;

  friend bool operator==(const ManifestHeader&, const ManifestHeader&) = default;
};

struct Manifest {
  ManifestHeader header;
  std::vector<TripletRecord> records;
  /// Targets for which no admissible reference was found.
  std::size_t skipped = 0;

  friend bool operator==(const Manifest& a, const Manifest& b) {
    return a.header == b.header && a.records == b.records;
  }
};

/// Mean absolute difference of the luma planes (unit range).
double mean_abs_luma_diff(const Image& a, const Image& b);

/// True when any consecutive pair between i and j differs by more than
/// `threshold` in mean absolute luma.
bool scene_change_guard(const std::vector<Image>& frames, int i, int j, double threshold = 30.0 / 255.0);

Manifest build_triplets(const std::vector<Image>& frames, const std::string& scene_id,
                        const BuildOptions& opts = {});

/// Concatenates manifests built for different scenes. Headers must agree on
/// everything except the scene map.
Manifest merge_manifests(const std::vector<Manifest>& parts);

// --- materialization --------------------------------------------------------

struct MaterializeOptions {
  /// false = distort the whole frame (TROI ablation).
  bool use_troi = true;
  double feather_sigma = 2.0;
  FlowOptions flow;
};

struct TripletImages {
  Image reference;
  Image target;
  Image pos;
  Image neg;
};

/// TROI mask for target frame i, from the flow between frames i-1 and i.
TroiMask target_mask(const std::vector<Image>& frames, int target, double coverage,
                     const MaterializeOptions& opts = {});

TripletImages materialize(const std::vector<Image>& frames, const TripletRecord& rec,
                          const MaterializeOptions& opts = {});

/// Materializes every record of one scene, computing each target mask once.
std::vector<TripletImages> materialize_scene(const std::vector<Image>& frames,
                                             const std::vector<TripletRecord>& records,
                                             const MaterializeOptions& opts = {});

// --- in-repo full-reference scorers -------------------------------------------

/// Single-scale SSIM on luma: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, L = 1, averaged over the valid region.
double ssim(const Image& ref, const Image& test);

/// Gradient magnitude similarity deviation on luma (Prewitt, c = 0.0026).
double gmsd(const Image& ref, const Image& test);

enum class Orientation { LowerBetter, HigherBetter };

std::string to_string(Orientation o);
Orientation orientation_from_string(const std::string& s);

struct ScoreRow {
  std::string triplet_id;
  std::string role;  // "pos" or "neg"
  std::string scorer;
  double score = 0.0;
  Orientation orientation = Orientation::LowerBetter;

  friend bool operator==(const ScoreRow&, const ScoreRow&) = default;
};

using ScoreTable = std::vector<ScoreRow>;

/// Scores pos and neg against the aligned target with ssim and gmsd.
ScoreTable score_triplets(const std::vector<TripletRecord>& records, const std::vector<TripletImages>& images);

void write_score_table(const ScoreTable& table, const std::filesystem::path& path);
ScoreTable read_score_table(const std::filesystem::path& path);

struct FilterOptions {
  std::string scorer_a = "ssim";
  std::string scorer_b = "gmsd";
  double tau_a = 0.005;
  double tau_b = 0.005;
};

struct FilterReport {
  std::size_t input = 0;
  std::size_t kept = 0;
  std::size_t dropped_ambiguous = 0;
  std::size_t dropped_disagreement = 0;
  std::size_t relabeled = 0;
};

/// Drops triplets whose gap is below tau for either scorer, then those the two
/// scorers order differently; survivors get pos = consensus better image.
Manifest supervision_filter(const Manifest& man, const ScoreTable& scores, const FilterOptions& opts = {},
                            FilterReport* report = nullptr);

/// Header line plus one JSON object per record.
std::string manifest_to_jsonl(const Manifest& man);
void write_manifest(const Manifest& man, const std::filesystem::path& path);
/// Relative scene directories are taken relative to the manifest file.
Manifest read_manifest(const std::filesystem::path& path, bool resolve_files = false);

/// Frames of every scene listed in the header, keyed by scene id.
std::map<std::string, std::vector<Image>> load_scenes(const Manifest& man);

}  // namespace naref
