#pragma once

#include "naref/config.hpp"
#include "naref/corpus.hpp"
#include "naref/evalkit.hpp"
#include "naref/synthetic.hpp"
#include "naref/train.hpp"

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace naref {

using SceneFrames = std::map<std::string, std::vector<Image>>;

/// Scene ids are "scene00", "scene01", ...; the last `heldout` are held out.
std::vector<SceneSpec> scene_specs(const RunConfig& cfg);
std::set<std::string> heldout_scene_ids(const RunConfig& cfg);
SceneFrames synthesize_scenes(const RunConfig& cfg);

/// build_triplets over every scene, merged in scene id order.
Manifest build_corpus(const SceneFrames& scenes, const BuildOptions& opts);

/// Materializes each scene's records and scores pos and neg with ssim and gmsd.
ScoreTable score_corpus(const Manifest& man, const SceneFrames& scenes, const MaterializeOptions& opts);

struct DataSplit {
  std::vector<TripletRecord> train;
  /// Held-out records whose level gap is at least `min_level_gap`.
  std::vector<TripletRecord> test;
};

DataSplit split_heldout(const Manifest& man, const std::set<std::string>& heldout, int min_level_gap);

struct PipelineResult {
  Manifest built;
  ScoreTable scores;
  FilterReport filter;
  Manifest filtered;
  DataSplit split;
  TrainResult training;
  /// Final head on the held-out split, with the per-epoch aligned accuracy
  /// and its trailing-window summary.
  EvalReport report;
  /// Non-aligned accuracy per epoch.
  std::vector<double> per_epoch_non_aligned;
};

/// Synthesize, build, score, filter, train and evaluate. When `out_dir` is
/// non-empty every artifact is written there, starting with config.toml.
PipelineResult run_pipeline(const RunConfig& cfg, const std::filesystem::path& out_dir = {});

}  // namespace naref
