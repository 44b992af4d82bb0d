#pragma once

#include "naref/corpus.hpp"
#include "naref/embed.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace naref {

struct TrainerConfig {
  double margin1 = 0.3;
  double margin2 = 0.1;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda_kl = 0.05;
  double t_start = 0.01;
  double t_end = 1.0;
  int epochs = 80;
  int batch_size = 16;
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  int embedding_dim = kDefaultEmbeddingDim;
  int patch_size = 14;
  /// Checkpoints kept in memory / on disk (the last N epochs).
  int checkpoint_ring = 10;
  /// max(0, d(a,n) - d(a,p) + m) as printed, instead of the standard order.
  bool printed_operand_order = false;
  unsigned jobs = 1;

  /// Defaults with the learning rate raised to 1e-3 for small runs.
  static TrainerConfig toy();
  /// Throws InvalidArgument when a field is out of range.
  void validate() const;
};

struct LossBreakdown {
  double triplet1 = 0.0;
  double triplet2 = 0.0;
  double kl = 0.0;
  double total = 0.0;
  double temperature = 0.0;
};

// --- loss terms -----------------------------------------------------------------

/// 1 - cos(a, b). Zero vectors are a contract violation.
template <typename Scalar>
Scalar cosine_distance(const Vector<Scalar>& a, const Vector<Scalar>& b);

template <typename Scalar>
Scalar cosine_distance(const Embedding<Scalar>& a, const Embedding<Scalar>& b) {
  return cosine_distance(a.values, b.values);
}

/// max(0, d(a,p) - d(a,n) + m); the printed order swaps the two distances.
template <typename Scalar>
Scalar triplet_margin_loss(const Vector<Scalar>& a, const Vector<Scalar>& p, const Vector<Scalar>& n, Scalar margin,
                           bool printed_order = false) {
  const Scalar dp = cosine_distance(a, p);
  const Scalar dn = cosine_distance(a, n);
  const Scalar gap = printed_order ? dn - dp : dp - dn;
  return std::max(Scalar(0), gap + margin);
}

/// KL(softmax(e / T) || softmax(e_frozen / T)), natural log.
template <typename Scalar>
Scalar kl_regularizer(const Vector<Scalar>& e, const Vector<Scalar>& e_frozen, Scalar temperature);

double temperature_schedule(int epoch, int total_epochs, double t_start, double t_end);

// --- training data --------------------------------------------------------------

/// Patch features of the four images of one triplet.
struct TrainingTriplet {
  std::string id;
  std::string scene_id;
  PatchFeatures target;
  PatchFeatures reference;
  PatchFeatures pos;
  PatchFeatures neg;
};

/// Materializes and featurizes every record. `scenes` maps scene id to frames.
std::vector<TrainingTriplet> prepare_triplets(const std::vector<TripletRecord>& records,
                                              const std::map<std::string, std::vector<Image>>& scenes,
                                              const MaterializeOptions& mopts = {}, int patch_size = 14,
                                              unsigned jobs = 1);

struct Gradients {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;

  static Gradients zeros_like(const EmbeddingHead<double>& head);
  Gradients& operator+=(const Gradients& o);
};

/// Batch loss for `epoch`. Coin flips are keyed by (seed, record id, epoch).
/// When `grad` is non-null it receives d total / d (W, b).
LossBreakdown total_loss(const std::vector<const TrainingTriplet*>& batch, const EmbeddingHead<double>& head,
                         const TrainerConfig& cfg, int epoch, Gradients* grad = nullptr);

struct AdamState {
  Eigen::MatrixXd m_W, v_W;
  Eigen::VectorXd m_b, v_b;
};

struct TrainerState {
  EmbeddingHead<double> head;
  AdamState moments;
  std::int64_t step = 0;
  int epoch = 0;

  static TrainerState initial(const TrainerConfig& cfg, int feature_dim = kFeatureDim);
};

/// Decoupled weight decay then the bias-corrected moment update.
void adamw_update(TrainerState& state, const Gradients& g, const TrainerConfig& cfg);

/// One optimizer step on `batch`. Throws NonFinite naming the offending record.
LossBreakdown train_step(TrainerState& state, const std::vector<const TrainingTriplet*>& batch,
                         const TrainerConfig& cfg, int epoch);

struct Checkpoint {
  int epoch = 0;
  std::int64_t step = 0;
  EmbeddingHead<double> head;
  AdamState moments;
};

struct LossLogRow {
  std::int64_t step = 0;
  int epoch = 0;
  LossBreakdown loss;
};

struct TrainResult {
  TrainerState final_state;
  /// The last `checkpoint_ring` epochs, oldest first.
  std::vector<Checkpoint> ring;
  int epochs_run = 0;
  std::vector<LossLogRow> log;
};

struct TrainOutput {
  /// Written to when non-empty: epoch_NNNN.nvck (ring-limited) and loss.csv.
  std::filesystem::path dir;
  std::function<void(const Checkpoint&)> on_epoch;
};

TrainResult train_loop(const std::vector<TrainingTriplet>& data, const TrainerConfig& cfg, const TrainOutput& out = {});

void write_loss_log(const std::vector<LossLogRow>& log, const std::filesystem::path& path);

void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// --- gradient verification ------------------------------------------------------

struct GradientCheckOptions {
  int batches = 10;
  int params_per_batch = 24;
  int records_per_batch = 4;
  int patches_per_image = 4;
  double h = 1e-4;
  /// Flat parameter indices (W column-major, then b) always checked.
  std::vector<int> probe;
  /// Applied to the analytic gradient before comparison (mutation testing).
  std::function<void(Gradients&)> mutate;
};

/// Max relative error |a - n| / (|a| + |n|) between analytic and central
/// finite-difference gradients over random batches, skipping hinge kinks.
double check_gradients(const TrainerConfig& cfg, std::uint64_t seed, const GradientCheckOptions& opts = {});

}  // namespace naref
