#pragma once

#include "naref/corpus.hpp"
#include "naref/score.hpp"
#include "naref/train.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace naref {

struct SceneAccuracy {
  std::size_t samples = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
};

struct AccuracyResult {
  double accuracy = 0.0;
  std::size_t samples = 0;
  std::size_t correct = 0;
  std::size_t ties = 0;
  std::map<std::string, SceneAccuracy> per_scene;
};

/// Ties are scored through their recorded choice. `scenes` may be empty
/// (everything lands in scene "").
AccuracyResult two_afc_accuracy(const std::vector<TwoAfcDecision>& decisions, const std::vector<int>& labels,
                                const std::vector<std::string>& scenes = {});

double plcc(const std::vector<double>& x, const std::vector<double>& y);
/// 1-based ranks; tied values share the mean of their positions.
std::vector<double> average_ranks(const std::vector<double>& x);
double srcc(const std::vector<double>& x, const std::vector<double>& y);

/// Fraction of positions where the two decision sequences choose differently.
double flip_rate(const std::vector<int>& aligned, const std::vector<int>& non_aligned);
double flip_rate(const std::vector<TwoAfcDecision>& aligned, const std::vector<TwoAfcDecision>& non_aligned);

struct WindowSummary {
  double mean = 0.0;
  double std = 0.0;  // population
  int window = 0;
};

WindowSummary epoch_window_summary(const std::vector<double>& per_epoch, int window = 10);

/// Scores oriented so that higher is better (lower-is-better scores negated).
std::vector<double> oriented(const std::vector<double>& scores, Orientation o);

// --- item score tables ----------------------------------------------------------

/// CSV with header `item_id,<name>`; returns id -> value.
std::map<std::string, double> read_item_csv(const std::filesystem::path& path, const std::string& value_column);
std::map<std::string, double> read_dmos(const std::filesystem::path& path);

struct JoinedScores {
  std::vector<std::string> ids;
  std::vector<double> scores;
  std::vector<double> dmos;
};

/// Inner join on item id, in id order.
JoinedScores join_scores(const std::map<std::string, double>& scores, const std::map<std::string, double>& dmos);

// --- embedding-based evaluation -------------------------------------------------

/// Effective 2AFC label: the stored label, else 0 (pos is the milder distortion).
int effective_label(const TripletRecord& rec);

/// 2AFC decisions of `head` over `data`. The aligned reference is the clean
/// target frame, the non-aligned one the neighbouring reference frame.
std::vector<TwoAfcDecision> decide_triplets(const std::vector<TrainingTriplet>& data, const EmbeddingHead<float>& head,
                                            ReferenceKind kind, unsigned jobs = 1);

struct EvalReport {
  std::string model_id;
  std::string manifest_id;
  ReferenceKind reference_kind = ReferenceKind::Aligned;
  AccuracyResult accuracy;
  std::optional<AccuracyResult> non_aligned;
  std::optional<double> flip_rate;
  std::optional<double> plcc;
  std::optional<double> srcc;
  std::optional<WindowSummary> epoch_window;
  std::vector<double> per_epoch_accuracy;
};

/// Aligned and non-aligned accuracy plus flip rate for one head.
EvalReport evaluate_head(const std::vector<TrainingTriplet>& data, const std::vector<int>& labels,
                         const EmbeddingHead<float>& head, unsigned jobs = 1);

std::string report_json(const EvalReport& report);
std::string report_table(const EvalReport& report);

}  // namespace naref
