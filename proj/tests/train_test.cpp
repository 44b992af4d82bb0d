#include "naref/binary_io.hpp"
#include "naref/corpus.hpp"
#include "naref/error.hpp"
#include "naref/rng.hpp"
#include "naref/synthetic.hpp"
#include "naref/train.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>

namespace naref {
namespace {

using testing::ScratchDir;

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Small real corpus shared by the loop tests.
const std::vector<TrainingTriplet>& toy_data() {
  static const std::vector<TrainingTriplet> data = [] {
    SceneSpec spec;
    spec.id = "toy";
    spec.frames = 16;
    spec.seed = 11;
    const auto frames = synthesize_scene(spec);
    BuildOptions bo;
    bo.per_target = 2;
    bo.seed = 3;
    bo.max_k = 3;
    bo.target_stride = 4;
    const Manifest m = build_triplets(frames, "toy", bo);
    MaterializeOptions mo;
    mo.use_troi = false;
    return prepare_triplets(m.records, {{"toy", frames}}, mo);
  }();
  return data;
}

std::vector<const TrainingTriplet*> pointers(const std::vector<TrainingTriplet>& data) {
  std::vector<const TrainingTriplet*> out;
  for (const auto& t : data) out.push_back(&t);
  return out;
}

PatchFeatures random_features(Rng& rng, int patches) {
  PatchFeatures f{1, patches, RowMatrix<double>(patches, kFeatureDim)};
  for (Eigen::Index i = 0; i < f.values.size(); ++i) f.values.data()[i] = rng.normal();
  return f;
}

TEST(CosineDistance, Cases) {
  EXPECT_NEAR(cosine_distance<double>(vec({1, 2}), vec({2, 4})), 0.0, 1e-15);
  EXPECT_NEAR(cosine_distance<double>(vec({1, 0}), vec({0, 3})), 1.0, 1e-15);
  EXPECT_NEAR(cosine_distance<double>(vec({1, 0}), vec({-2, 0})), 2.0, 1e-15);
  EXPECT_THROW(cosine_distance<double>(vec({0, 0}), vec({1, 0})), Error);
  EXPECT_THROW(cosine_distance<double>(vec({1}), vec({1, 0})), Error);
}

TEST(TripletMarginLoss, Cases) {
  const Eigen::VectorXd a = vec({1, 0});
  EXPECT_NEAR(triplet_margin_loss<double>(a, a, a, 0.3), 0.3, 1e-15);
  EXPECT_EQ(triplet_margin_loss<double>(a, a, vec({0, 1}), 0.3), 0.0);
  EXPECT_NEAR(triplet_margin_loss<double>(a, vec({0, 1}), a, 0.3), 1.3, 1e-15);
  // The printed order swaps the roles.
  EXPECT_NEAR(triplet_margin_loss<double>(a, a, vec({0, 1}), 0.3, true), 1.3, 1e-15);
}

TEST(TripletMarginLoss, SanityProperties) {
  Rng rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    Eigen::VectorXd a(6), p(6), n(6);
    for (int i = 0; i < 6; ++i) {
      a(i) = rng.normal();
      p(i) = rng.normal();
      n(i) = rng.normal();
    }
    const double m = rng.uniform(0.0, 0.5);
    const double l = triplet_margin_loss<double>(a, p, n, m);
    EXPECT_GE(l, 0.0);
    if (cosine_distance<double>(a, p) + m <= cosine_distance<double>(a, n)) EXPECT_EQ(l, 0.0);
    EXPECT_NEAR(triplet_margin_loss<double>(a, p, p, m), m, 1e-15);
  }
}

TEST(KlRegularizer, Cases) {
  const Eigen::VectorXd e = vec({0.3, -1.2, 0.5});
  EXPECT_NEAR(kl_regularizer<double>(e, e, 0.01), 0.0, 1e-12);
  EXPECT_NEAR(kl_regularizer<double>(e, (e.array() + 4.0).matrix(), 0.5), 0.0, 1e-9);
  const double p1 = std::exp(1.0) / (std::exp(1.0) + 1.0);
  EXPECT_NEAR(kl_regularizer<double>(vec({1, 0}), vec({0, 1}), 1.0), 2.0 * p1 - 1.0, 1e-12);
  EXPECT_NEAR(kl_regularizer<double>(vec({1, 0}), vec({0, 1}), 1.0), 0.46212, 1e-5);
  EXPECT_THROW(kl_regularizer<double>(e, e, 0.0), Error);
  EXPECT_THROW(kl_regularizer<double>(e, vec({1, 2}), 1.0), Error);
}

TEST(KlRegularizer, ZeroIffShift) {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::VectorXd e(5), d(5);
    for (int i = 0; i < 5; ++i) {
      e(i) = rng.normal();
      d(i) = rng.normal();
    }
    const double shift = rng.uniform(-3.0, 3.0);
    EXPECT_LT(kl_regularizer<double>(e, (e.array() + shift).matrix(), 1.0), 1e-9);
    EXPECT_GT(kl_regularizer<double>(e, e + 0.1 * d, 1.0), 1e-9);
    // Extreme temperatures stay finite.
    EXPECT_TRUE(std::isfinite(kl_regularizer<double>(e, d, 1e-3)));
  }
}

TEST(TemperatureSchedule, Endpoints) {
  EXPECT_EQ(temperature_schedule(0, 80, 0.01, 1.0), 0.01);
  EXPECT_EQ(temperature_schedule(79, 80, 0.01, 1.0), 1.0);
  EXPECT_NEAR(temperature_schedule(40, 81, 0.01, 1.0), 0.505, 1e-15);
  EXPECT_EQ(temperature_schedule(0, 1, 0.01, 1.0), 1.0);
  EXPECT_THROW(temperature_schedule(80, 80, 0.01, 1.0), Error);
}

TEST(TrainerConfigTest, Validation) {
  TrainerConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(TrainerConfig::toy().learning_rate, 1e-3);
  c.epochs = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.t_start = 2.0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.margin2 = -0.1;
  EXPECT_THROW(c.validate(), Error);
}

TEST(TotalLoss, IdenticalEmbeddingsGiveMarginSum) {
  Rng rng(1);
  const PatchFeatures f = random_features(rng, 4);
  std::vector<TrainingTriplet> data;
  for (int i = 0; i < 3; ++i) data.push_back({"r" + std::to_string(i), "s", f, f, f, f});
  const TrainerConfig cfg;
  const auto head = init_head(kFeatureDim, 16, 5);
  const LossBreakdown l = total_loss(pointers(data), head, cfg, 0);
  EXPECT_NEAR(l.triplet1, 0.3, 1e-12);
  EXPECT_NEAR(l.triplet2, 0.1, 1e-12);
  EXPECT_EQ(l.kl, 0.0);
  EXPECT_NEAR(l.total, 0.4, 1e-12);
  EXPECT_EQ(l.temperature, 0.01);
}

TEST(TotalLoss, InactiveHingesAtFrozenHeadGiveZero) {
  // Head maps feature 0 to axis 0 and feature 1 to axis 1.
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(kFeatureDim, 4);
  W(0, 0) = 1.0;
  W(1, 1) = 1.0;
  const EmbeddingHead<double> head(W, Eigen::VectorXd::Zero(4));
  PatchFeatures x{1, 1, RowMatrix<double>::Zero(1, kFeatureDim)};
  PatchFeatures y = x;
  x.values(0, 0) = 1.0;
  y.values(0, 1) = 1.0;
  // Target = reference = x; the positive is x too, so only the 0.1-margin
  // triplet with positive-as-negative could fire. Remove it via lambda2.
  std::vector<TrainingTriplet> data = {{"a", "s", x, x, x, y}, {"b", "s", x, x, x, y}};
  TrainerConfig cfg;
  cfg.lambda2 = 0.0;
  const LossBreakdown l = total_loss(pointers(data), head, cfg, 3);
  EXPECT_EQ(l.triplet1, 0.0);
  EXPECT_EQ(l.kl, 0.0);
  EXPECT_EQ(l.total, 0.0);
}

TEST(TotalLoss, RecomposesFromTheThreeTerms) {
  // With target = reference the anchor coin is irrelevant; the negative coin
  // of the second triplet is resolved by matching one of the two outcomes.
  Rng rng(23);
  TrainerConfig cfg;
  cfg.epochs = 10;
  EmbeddingHead<double> head = init_head(kFeatureDim, 12, 9);
  for (Eigen::Index i = 0; i < head.W.size(); ++i) head.W.data()[i] += 0.2 * rng.normal();
  std::vector<TrainingTriplet> data;
  for (int i = 0; i < 6; ++i) {
    const PatchFeatures t = random_features(rng, 4);
    data.push_back({"r" + std::to_string(i), "s", t, t, random_features(rng, 4), random_features(rng, 4)});
  }
  const int epoch = 4;
  const double T = temperature_schedule(epoch, cfg.epochs, cfg.t_start, cfg.t_end);
  const auto emb = [&](const PatchFeatures& f, const EmbeddingHead<double>& h) {
    return image_embedding(head_forward(f, h)).values;
  };
  double t1 = 0, t2 = 0, kl = 0;
  for (const auto& r : data) {
    const Eigen::VectorXd zi = emb(r.target, head);
    const Eigen::VectorXd zp = emb(r.pos, head);
    const Eigen::VectorXd zn = emb(r.neg, head);
    t1 += triplet_margin_loss<double>(zi, zp, zn, cfg.margin1);
    const LossBreakdown single = total_loss({&r}, head, cfg, epoch);
    const double a = triplet_margin_loss<double>(zi, zi, zp, cfg.margin2);
    const double b = triplet_margin_loss<double>(zi, zi, zn, cfg.margin2);
    EXPECT_TRUE(std::abs(single.triplet2 - a) < 1e-12 || std::abs(single.triplet2 - b) < 1e-12);
    t2 += single.triplet2;
    kl += kl_regularizer<double>(zi, emb(r.target, head.frozen()), T);
  }
  const double n = static_cast<double>(data.size());
  const LossBreakdown l = total_loss(pointers(data), head, cfg, epoch);
  EXPECT_NEAR(l.triplet1, t1 / n, 1e-12);
  EXPECT_NEAR(l.triplet2, t2 / n, 1e-12);
  EXPECT_NEAR(l.kl, kl / n, 1e-12);
  EXPECT_GT(l.kl, 0.0);
  EXPECT_NEAR(l.total, l.triplet1 + l.triplet2 + 0.05 * l.kl, 1e-12);
  EXPECT_EQ(l.temperature, T);
}

TEST(TotalLoss, CoinsIgnoreBatchComposition) {
  const auto& data = toy_data();
  TrainerConfig cfg;
  const auto head = init_head(kFeatureDim, 16, 1);
  const LossBreakdown whole = total_loss(pointers(data), head, cfg, 2);
  double sum = 0;
  for (const auto& t : data) sum += total_loss({&t}, head, cfg, 2).total;
  EXPECT_NEAR(whole.total, sum / static_cast<double>(data.size()), 1e-12);
}

TEST(Optimizer, ZeroGradientOnlyDecays) {
  TrainerConfig cfg;
  TrainerState s = TrainerState::initial(cfg);
  s.head.b.setConstant(0.5);
  const Eigen::MatrixXd w0 = s.head.W;
  adamw_update(s, Gradients::zeros_like(s.head), cfg);
  const double shrink = 1.0 - cfg.learning_rate * cfg.weight_decay;
  EXPECT_TRUE(s.head.W == (w0 * shrink).eval());
  EXPECT_EQ(s.head.b(0), 0.5 * shrink);
  EXPECT_EQ(s.step, 1);
}

TEST(Optimizer, FirstStepMovesBySignedLearningRate) {
  TrainerConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.learning_rate = 1e-3;
  TrainerState s = TrainerState::initial(cfg, 3);
  s.head.W.setZero();
  Gradients g = Gradients::zeros_like(s.head);
  g.W(0, 0) = 2.0;
  g.W(1, 2) = -0.01;
  adamw_update(s, g, cfg);
  // Bias correction makes the first step lr * g / (|g| + eps).
  EXPECT_NEAR(s.head.W(0, 0), -1e-3, 1e-11);
  EXPECT_NEAR(s.head.W(1, 2), 1e-3, 1e-9);
  EXPECT_EQ(s.head.W(2, 2), 0.0);
}

TEST(TrainStep, RepeatedStepDescends) {
  const auto& data = toy_data();
  TrainerConfig cfg = TrainerConfig::toy();
  TrainerState s = TrainerState::initial(cfg);
  const auto batch = pointers(data);
  std::vector<double> losses;
  for (int i = 0; i < 50; ++i) losses.push_back(train_step(s, batch, cfg, 0).total);
  for (int i = 1; i < 50; ++i) EXPECT_LE(losses[i], losses[i - 1] + 1e-12) << "step " << i;
  EXPECT_LT(losses.back(), losses.front());
}

TEST(TrainStep, NonFiniteNamesRecord) {
  Rng rng(2);
  std::vector<TrainingTriplet> data = {{"ok", "s", random_features(rng, 2), random_features(rng, 2),
                                        random_features(rng, 2), random_features(rng, 2)}};
  data.push_back(data.front());
  data.back().id = "bad-7";
  data.back().pos.values(0, 3) = std::numeric_limits<double>::quiet_NaN();
  TrainerConfig cfg;
  TrainerState s = TrainerState::initial(cfg);
  try {
    train_step(s, pointers(data), cfg, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFinite);
    EXPECT_NE(std::string(e.what()).find("bad-7"), std::string::npos);
  }
}

TEST(TrainLoop, RingAndFiles) {
  ScratchDir dir("train");
  TrainerConfig cfg = TrainerConfig::toy();
  cfg.epochs = 12;
  cfg.batch_size = 4;
  int seen = 0;
  const TrainResult r = train_loop(toy_data(), cfg, {dir.path(), [&](const Checkpoint&) { ++seen; }});
  EXPECT_EQ(seen, 12);
  EXPECT_EQ(r.epochs_run, 12);
  ASSERT_EQ(r.ring.size(), 10u);
  EXPECT_EQ(r.ring.front().epoch, 2);
  EXPECT_EQ(r.ring.back().epoch, 11);
  EXPECT_FALSE(std::filesystem::exists(dir / "epoch_0001.nvck"));
  EXPECT_TRUE(std::filesystem::exists(dir / "epoch_0002.nvck"));
  EXPECT_TRUE(std::filesystem::exists(dir / "epoch_0011.nvck"));
  const std::size_t per_epoch = (toy_data().size() + 3) / 4;
  EXPECT_EQ(r.log.size(), 12 * per_epoch);
  EXPECT_EQ(r.final_state.step, static_cast<std::int64_t>(12 * per_epoch));
  for (std::size_t i = 1; i < r.log.size(); ++i) EXPECT_GT(r.log[i].step, r.log[i - 1].step);
  EXPECT_EQ(r.log.back().loss.temperature, 1.0);

  std::ifstream log(dir / "loss.csv");
  std::string header;
  std::getline(log, header);
  EXPECT_EQ(header, "step,epoch,triplet1,triplet2,kl,total,temperature");
  std::size_t lines = 0;
  for (std::string line; std::getline(log, line);) ++lines;
  EXPECT_EQ(lines, r.log.size());

  const Checkpoint back = read_checkpoint(dir / "epoch_0011.nvck");
  EXPECT_EQ(back.epoch, 11);
  EXPECT_EQ(back.step, r.final_state.step);
  EXPECT_TRUE(back.head.W.isApprox(r.final_state.head.W, 1e-6));
  EXPECT_TRUE(back.head.frozen_W() == r.final_state.head.frozen_W().cast<float>().cast<double>());
  EXPECT_TRUE(back.moments.v_W.isApprox(r.final_state.moments.v_W, 1e-6));
}

TEST(TrainLoop, DeterministicAcrossRunsAndJobs) {
  TrainerConfig cfg = TrainerConfig::toy();
  cfg.epochs = 3;
  cfg.batch_size = 5;
  const TrainResult a = train_loop(toy_data(), cfg);
  const TrainResult b = train_loop(toy_data(), cfg);
  cfg.jobs = 3;
  const TrainResult c = train_loop(toy_data(), cfg);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].loss.total, b.log[i].loss.total);
    EXPECT_EQ(a.log[i].loss.total, c.log[i].loss.total);
  }
  EXPECT_TRUE(a.final_state.head.W == b.final_state.head.W);
  EXPECT_TRUE(a.final_state.head.W == c.final_state.head.W);
  cfg.seed = 99;
  const TrainResult d = train_loop(toy_data(), cfg);
  EXPECT_FALSE(a.final_state.head.W == d.final_state.head.W);
}

TEST(TrainLoop, Errors) {
  TrainerConfig cfg;
  cfg.epochs = 0;
  try {
    train_loop(toy_data(), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("epochs must be"), std::string::npos);
  }
  EXPECT_THROW(train_loop({}, TrainerConfig{}), Error);
}

TEST(Checkpoint, RejectsBadFiles) {
  ScratchDir dir("ckpt");
  binio::Writer w;
  w.magic("NVEB");
  w.u16(1);
  w.save(dir / "a.nvck");
  EXPECT_THROW(read_checkpoint(dir / "a.nvck"), Error);
  TrainerConfig cfg;
  cfg.embedding_dim = 4;
  const TrainerState s = TrainerState::initial(cfg);
  write_checkpoint({0, 0, s.head, s.moments}, dir / "b.nvck");
  auto bytes = binio::read_file(dir / "b.nvck");
  bytes.pop_back();
  std::ofstream(dir / "c.nvck", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  EXPECT_THROW(read_checkpoint(dir / "c.nvck"), Error);
  EXPECT_NO_THROW(read_checkpoint(dir / "b.nvck"));
}

TEST(GradientCheck, DefaultConfigPasses) {
  const double err = check_gradients(TrainerConfig{}, 1);
  EXPECT_LE(err, 1e-4);
}

TEST(GradientCheck, PrintedOrderAndNoKl) {
  TrainerConfig cfg;
  cfg.lambda_kl = 0.0;
  EXPECT_LE(check_gradients(cfg, 2), 1e-4);
  cfg = {};
  cfg.printed_operand_order = true;
  EXPECT_LE(check_gradients(cfg, 3), 1e-4);
}

TEST(GradientCheck, DetectsCorruptedEntry) {
  GradientCheckOptions opts;
  opts.probe = {5};
  opts.mutate = [](Gradients& g) { g.W.data()[5] *= 1.01; };
  EXPECT_GT(check_gradients(TrainerConfig{}, 4, opts), 1e-3);
}

}  // namespace
}  // namespace naref
