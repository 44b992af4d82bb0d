#include "naref/train.hpp"

#include "naref/binary_io.hpp"
#include "naref/error.hpp"
#include "naref/parallel.hpp"
#include "naref/rng.hpp"

#include <array>
#include <cstdio>
#include <deque>
#include <fstream>

namespace naref {

namespace {

// Pooled image embedding with everything needed for the backward pass.
struct ImageForward {
  RowMatrix<double> u;          // unit patch vectors
  Eigen::VectorXd row_norm;     // 0 marks a degenerate row
  Eigen::VectorXd mean;
  double mean_norm = 0.0;       // 0 marks a degenerate mean
  Eigen::VectorXd z;
};

ImageForward forward_image(const PatchFeatures& f, const Eigen::MatrixXd& W, const Eigen::VectorXd& b) {
  ImageForward out;
  RowMatrix<double> y = f.values * W;
  y.rowwise() += b.transpose();
  out.u.resize(y.rows(), y.cols());
  out.row_norm.resize(y.rows());
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double n = y.row(r).norm();
    out.row_norm(r) = n >= kDegenerateNorm ? n : 0.0;
    out.u.row(r) = normalize_or_e1(y.row(r).transpose()).transpose();
  }
  out.mean = out.u.colwise().mean().transpose();
  const double mn = out.mean.norm();
  out.mean_norm = mn >= kDegenerateNorm ? mn : 0.0;
  out.z = normalize_or_e1(out.mean);
  return out;
}

void backward_image(const PatchFeatures& f, const ImageForward& fw, const Eigen::VectorXd& g_z, Gradients& g) {
  if (fw.mean_norm == 0.0 || g_z.isZero(0.0)) return;
  const Eigen::VectorXd g_mean = (g_z - fw.z * fw.z.dot(g_z)) / fw.mean_norm;
  const double inv_p = 1.0 / static_cast<double>(fw.u.rows());
  RowMatrix<double> g_y(fw.u.rows(), fw.u.cols());
  for (Eigen::Index r = 0; r < fw.u.rows(); ++r) {
    if (fw.row_norm(r) == 0.0) {
      g_y.row(r).setZero();
      continue;
    }
    const Eigen::RowVectorXd u = fw.u.row(r);
    const Eigen::RowVectorXd gu = g_mean.transpose() * inv_p;
    g_y.row(r) = (gu - u * u.dot(gu)) / fw.row_norm(r);
  }
  g.W.noalias() += f.values.transpose() * g_y;
  g.b += g_y.colwise().sum().transpose();
}

// d(1 - cos(a, b)) / da
Eigen::VectorXd cosine_distance_grad(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm();
  const double nb = b.norm();
  const double c = a.dot(b) / (na * nb);
  return -(b / (na * nb) - c * a / (na * na));
}

std::vector<double> log_softmax(const Eigen::VectorXd& logits) {
  const double mx = logits.maxCoeff();
  double s = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) s += std::exp(logits(i) - mx);
  const double lse = mx + std::log(s);
  std::vector<double> out(static_cast<std::size_t>(logits.size()));
  for (Eigen::Index i = 0; i < logits.size(); ++i) out[static_cast<std::size_t>(i)] = logits(i) - lse;
  return out;
}

struct Coins {
  bool anchor_is_target;  // triplet 1
  bool negative_is_pos;   // triplet 2
};

Coins record_coins(const TrainerConfig& cfg, const std::string& id, int epoch) {
  Rng rng(derive_seed(cfg.seed, {fnv1a64(id), static_cast<std::uint64_t>(epoch)}));
  const bool a = rng.coin();
  const bool b = rng.coin();
  return {a, b};
}

struct RecordResult {
  double t1 = 0.0;
  double t2 = 0.0;
  double kl = 0.0;
  double gap1 = 0.0;  // hinge argument minus margin
  double gap2 = 0.0;
};

// Loss terms of one record; accumulates unscaled per-record gradients
// (weights and batch mean are applied by `scale_*`).
RecordResult record_loss(const TrainingTriplet& t, const EmbeddingHead<double>& head, const TrainerConfig& cfg,
                         int epoch, double temperature, double scale1, double scale2, double scale_kl,
                         Gradients* grad) {
  const ImageForward ft = forward_image(t.target, head.W, head.b);
  const ImageForward fr = forward_image(t.reference, head.W, head.b);
  const ImageForward fp = forward_image(t.pos, head.W, head.b);
  const ImageForward fn = forward_image(t.neg, head.W, head.b);
  const Coins coins = record_coins(cfg, t.id, epoch);
  const int dim = head.dim();
  // Gradient slots: 0 target, 1 reference, 2 pos, 3 neg.
  std::array<Eigen::VectorXd, 4> gz;
  for (auto& g : gz) g = Eigen::VectorXd::Zero(dim);
  const std::array<const ImageForward*, 4> fw = {&ft, &fr, &fp, &fn};

  RecordResult res;
  auto hinge = [&](int a, int p, int n, double margin, double scale, double& loss, double& gap) {
    const double dp = cosine_distance(fw[a]->z, fw[p]->z);
    const double dn = cosine_distance(fw[a]->z, fw[n]->z);
    gap = cfg.printed_operand_order ? dn - dp : dp - dn;
    loss = std::max(0.0, gap + margin);
    if (loss <= 0.0 || !grad || scale == 0.0) return;
    const double sp = cfg.printed_operand_order ? -scale : scale;  // sign of d(a,p)
    const double sn = -sp;
    gz[a] += sp * cosine_distance_grad(fw[a]->z, fw[p]->z) + sn * cosine_distance_grad(fw[a]->z, fw[n]->z);
    gz[p] += sp * cosine_distance_grad(fw[p]->z, fw[a]->z);
    gz[n] += sn * cosine_distance_grad(fw[n]->z, fw[a]->z);
  };
  hinge(coins.anchor_is_target ? 0 : 1, 2, 3, cfg.margin1, scale1, res.t1, res.gap1);
  hinge(1, 0, coins.negative_is_pos ? 2 : 3, cfg.margin2, scale2, res.t2, res.gap2);

  if (cfg.lambda_kl != 0.0 || !grad) {
    const ImageForward frozen = forward_image(t.target, head.frozen_W(), head.frozen_b());
    const auto lp = log_softmax(ft.z / temperature);
    const auto lq = log_softmax(frozen.z / temperature);
    double kl = 0.0;
    for (int i = 0; i < dim; ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
    res.kl = std::max(0.0, kl);
    if (grad && scale_kl != 0.0) {
      for (int i = 0; i < dim; ++i) {
        const double p = std::exp(lp[i]);
        gz[0](i) += scale_kl * p * ((lp[i] - lq[i]) - kl) / temperature;
      }
    }
  }
  if (grad) {
    const std::array<const PatchFeatures*, 4> feats = {&t.target, &t.reference, &t.pos, &t.neg};
    for (int i = 0; i < 4; ++i) backward_image(*feats[i], *fw[i], gz[i], *grad);
  }
  return res;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

TrainerConfig TrainerConfig::toy() {
  TrainerConfig c;
  c.learning_rate = 1e-3;
  return c;
}

void TrainerConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidArgument, msg); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (margin1 < 0 || margin2 < 0) fail("margins must be >= 0");
  if (lambda1 < 0 || lambda2 < 0 || lambda_kl < 0) fail("loss weights must be >= 0");
  if (!(t_start > 0) || t_start > t_end) fail("temperatures must satisfy 0 < t_start <= t_end");
  if (!(learning_rate > 0)) fail("learning_rate must be > 0");
  if (embedding_dim < 1) fail("embedding_dim must be >= 1");
  if (checkpoint_ring < 1) fail("checkpoint_ring must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && eps > 0 && weight_decay >= 0)) {
    fail("optimizer constants out of range");
  }
}

template <typename Scalar>
Scalar cosine_distance(const Vector<Scalar>& a, const Vector<Scalar>& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::ShapeMismatch, "cosine_distance: dimension mismatch");
  const Scalar na = a.norm();
  const Scalar nb = b.norm();
  if (na == Scalar(0) || nb == Scalar(0)) throw Error(ErrorKind::InvalidArgument, "cosine_distance: zero vector");
  const Scalar c = std::clamp(a.dot(b) / (na * nb), Scalar(-1), Scalar(1));
  return Scalar(1) - c;
}

template <typename Scalar>
Scalar kl_regularizer(const Vector<Scalar>& e, const Vector<Scalar>& e_frozen, Scalar temperature) {
  if (!(temperature > Scalar(0))) throw Error(ErrorKind::InvalidArgument, "kl_regularizer: temperature must be > 0");
  if (e.size() != e_frozen.size()) throw Error(ErrorKind::ShapeMismatch, "kl_regularizer: dimension mismatch");
  const auto lp = log_softmax(e.template cast<double>() / static_cast<double>(temperature));
  const auto lq = log_softmax(e_frozen.template cast<double>() / static_cast<double>(temperature));
  double kl = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
  return static_cast<Scalar>(std::max(0.0, kl));
}

template float cosine_distance(const Vector<float>&, const Vector<float>&);
template double cosine_distance(const Vector<double>&, const Vector<double>&);
template float kl_regularizer(const Vector<float>&, const Vector<float>&, float);
template double kl_regularizer(const Vector<double>&, const Vector<double>&, double);

double temperature_schedule(int epoch, int total_epochs, double t_start, double t_end) {
  if (total_epochs < 1 || epoch < 0 || epoch >= total_epochs) {
    throw Error(ErrorKind::InvalidArgument, "temperature_schedule: epoch out of range");
  }
  if (total_epochs == 1) return t_end;
  if (epoch == total_epochs - 1) return t_end;
  return t_start + (t_end - t_start) * epoch / static_cast<double>(total_epochs - 1);
}

std::vector<TrainingTriplet> prepare_triplets(const std::vector<TripletRecord>& records,
                                              const std::map<std::string, std::vector<Image>>& scenes,
                                              const MaterializeOptions& mopts, int patch_size, unsigned jobs) {
  std::map<std::string, std::vector<std::size_t>> by_scene;
  for (std::size_t i = 0; i < records.size(); ++i) by_scene[records[i].scene_id].push_back(i);
  std::vector<TrainingTriplet> out(records.size());
  for (const auto& [scene, idx] : by_scene) {
    const auto it = scenes.find(scene);
    if (it == scenes.end()) throw Error(ErrorKind::NotFound, "no frames for scene '" + scene + "'");
    std::vector<TripletRecord> subset;
    for (std::size_t i : idx) subset.push_back(records[i]);
    const auto images = materialize_scene(it->second, subset, mopts);
    const PatchGrid grid = PatchGrid::for_image(it->second.front(), patch_size);
    parallel_for(idx.size(), jobs, [&](std::size_t j) {
      TrainingTriplet& t = out[idx[j]];
      t.id = subset[j].id;
      t.scene_id = scene;
      t.target = patch_features(images[j].target, grid);
      t.reference = patch_features(images[j].reference, grid);
      t.pos = patch_features(images[j].pos, grid);
      t.neg = patch_features(images[j].neg, grid);
    });
  }
  return out;
}

Gradients Gradients::zeros_like(const EmbeddingHead<double>& head) {
  return {Eigen::MatrixXd::Zero(head.W.rows(), head.W.cols()), Eigen::VectorXd::Zero(head.b.size())};
}

Gradients& Gradients::operator+=(const Gradients& o) {
  W += o.W;
  b += o.b;
  return *this;
}

LossBreakdown total_loss(const std::vector<const TrainingTriplet*>& batch, const EmbeddingHead<double>& head,
                         const TrainerConfig& cfg, int epoch, Gradients* grad) {
  if (batch.empty()) throw Error(ErrorKind::InvalidArgument, "total_loss: empty batch");
  LossBreakdown out;
  out.temperature = temperature_schedule(epoch, cfg.epochs, cfg.t_start, cfg.t_end);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<RecordResult> results(batch.size());
  std::vector<Gradients> grads(grad ? batch.size() : 0);
  parallel_for(batch.size(), cfg.jobs, [&](std::size_t i) {
    if (!batch[i]) throw Error(ErrorKind::InvalidArgument, "total_loss: unresolved record");
    Gradients* g = nullptr;
    if (grad) {
      grads[i] = Gradients::zeros_like(head);
      g = &grads[i];
    }
    results[i] = record_loss(*batch[i], head, cfg, epoch, out.temperature, cfg.lambda1 * inv_b,
                             cfg.lambda2 * inv_b, cfg.lambda_kl * inv_b, g);
  });
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& r = results[i];
    if (!std::isfinite(r.t1) || !std::isfinite(r.t2) || !std::isfinite(r.kl) ||
        (grad && (!grads[i].W.allFinite() || !grads[i].b.allFinite()))) {
      throw Error(ErrorKind::NonFinite, "non-finite loss or gradient at record " + batch[i]->id);
    }
    out.triplet1 += r.t1;
    out.triplet2 += r.t2;
    out.kl += r.kl;
  }
  out.triplet1 *= inv_b;
  out.triplet2 *= inv_b;
  out.kl *= inv_b;
  out.total = cfg.lambda1 * out.triplet1 + cfg.lambda2 * out.triplet2 + cfg.lambda_kl * out.kl;
  if (grad) {
    *grad = Gradients::zeros_like(head);
    for (const auto& g : grads) *grad += g;
  }
  return out;
}

TrainerState TrainerState::initial(const TrainerConfig& cfg, int feature_dim) {
  TrainerState s;
  s.head = init_head(feature_dim, cfg.embedding_dim, derive_seed(cfg.seed, {0x4EAD}));
  s.moments = {Eigen::MatrixXd::Zero(feature_dim, cfg.embedding_dim), Eigen::MatrixXd::Zero(feature_dim, cfg.embedding_dim),
               Eigen::VectorXd::Zero(cfg.embedding_dim), Eigen::VectorXd::Zero(cfg.embedding_dim)};
  return s;
}

void adamw_update(TrainerState& state, const Gradients& g, const TrainerConfig& cfg) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  auto update = [&](auto& param, auto& m, auto& v, const auto& grad) {
    param *= 1.0 - cfg.learning_rate * cfg.weight_decay;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
    param.array() -= cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
  };
  update(state.head.W, state.moments.m_W, state.moments.v_W, g.W);
  update(state.head.b, state.moments.m_b, state.moments.v_b, g.b);
}

LossBreakdown train_step(TrainerState& state, const std::vector<const TrainingTriplet*>& batch,
                         const TrainerConfig& cfg, int epoch) {
  Gradients g;
  const LossBreakdown loss = total_loss(batch, state.head, cfg, epoch, &g);
  adamw_update(state, g, cfg);
  return loss;
}

TrainResult train_loop(const std::vector<TrainingTriplet>& data, const TrainerConfig& cfg, const TrainOutput& out) {
  cfg.validate();
  if (data.empty()) throw Error(ErrorKind::InvalidArgument, "train_loop: no training triplets");
  const int feature_dim = static_cast<int>(data.front().target.values.cols());
  TrainResult result;
  result.final_state = TrainerState::initial(cfg, feature_dim);
  TrainerState& state = result.final_state;
  if (!out.dir.empty()) std::filesystem::create_directories(out.dir);
  std::deque<int> on_disk;
  std::vector<std::size_t> order(data.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, {0x5EED, static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<const TrainingTriplet*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) batch.push_back(&data[order[i]]);
      const LossBreakdown loss = train_step(state, batch, cfg, epoch);
      result.log.push_back({state.step, epoch, loss});
    }
    state.epoch = epoch + 1;
    Checkpoint ck{epoch, state.step, state.head, state.moments};
    if (!out.dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.nvck", epoch);
      write_checkpoint(ck, out.dir / name);
      on_disk.push_back(epoch);
      while (static_cast<int>(on_disk.size()) > cfg.checkpoint_ring) {
        std::snprintf(name, sizeof name, "epoch_%04d.nvck", on_disk.front());
        std::filesystem::remove(out.dir / name);
        on_disk.pop_front();
      }
      write_loss_log(result.log, out.dir / "loss.csv");
    }
    if (out.on_epoch) out.on_epoch(ck);
    result.ring.push_back(std::move(ck));
    if (static_cast<int>(result.ring.size()) > cfg.checkpoint_ring) result.ring.erase(result.ring.begin());
    result.epochs_run = epoch + 1;
  }
  return result;
}

void write_loss_log(const std::vector<LossLogRow>& log, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorKind::Io, "cannot write " + path.string());
  f << "step,epoch,triplet1,triplet2,kl,total,temperature\n";
  for (const auto& r : log)
    f << r.step << ',' << r.epoch << ',' << fmt(r.loss.triplet1) << ',' << fmt(r.loss.triplet2) << ','
      << fmt(r.loss.kl) << ',' << fmt(r.loss.total) << ',' << fmt(r.loss.temperature) << '\n';
  if (!f) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto& h = ck.head;
  binio::Writer w;
  w.magic("NVCK");
  w.u16(1);
  w.u32(static_cast<std::uint32_t>(h.feature_dim()));
  w.u32(static_cast<std::uint32_t>(h.dim()));
  auto matrix = [&](const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) w.f32(static_cast<float>(m(r, c)));
  };
  auto vector = [&](const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) w.f32(static_cast<float>(v(i)));
  };
  matrix(h.W);
  vector(h.b);
  matrix(ck.moments.m_W);
  matrix(ck.moments.v_W);
  vector(ck.moments.m_b);
  vector(ck.moments.v_b);
  w.u32(static_cast<std::uint32_t>(ck.epoch));
  w.u64(static_cast<std::uint64_t>(ck.step));
  matrix(h.frozen_W());
  vector(h.frozen_b());
  w.save(path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  auto r = binio::Reader::from_file(path);
  if (r.remaining() < 14 || r.magic() != "NVCK") throw Error(ErrorKind::Format, path.string() + ": not an NVCK checkpoint");
  if (r.u16() != 1) throw Error(ErrorKind::Format, path.string() + ": unsupported checkpoint version");
  const int f = static_cast<int>(r.u32());
  const int d = static_cast<int>(r.u32());
  Checkpoint ck;
  // W, m_W, v_W, frozen W and b, m_b, v_b, frozen b as f32, plus epoch and step
  const std::uint64_t expect = 4ull * (4ull * f * d + 4ull * d) + 12;
  if (r.remaining() != expect) throw Error(ErrorKind::Format, path.string() + ": checkpoint size does not match F x D");
  auto matrix = [&] {
    Eigen::MatrixXd m(f, d);
    for (int i = 0; i < f; ++i)
      for (int j = 0; j < d; ++j) m(i, j) = r.f32();
    return m;
  };
  auto vector = [&] {
    Eigen::VectorXd v(d);
    for (int i = 0; i < d; ++i) v(i) = r.f32();
    return v;
  };
  Eigen::MatrixXd W = matrix();
  Eigen::VectorXd b = vector();
  ck.moments.m_W = matrix();
  ck.moments.v_W = matrix();
  ck.moments.m_b = vector();
  ck.moments.v_b = vector();
  ck.epoch = static_cast<int>(r.u32());
  ck.step = static_cast<std::int64_t>(r.u64());
  Eigen::MatrixXd fW = matrix();
  Eigen::VectorXd fb = vector();
  ck.head = EmbeddingHead<double>::with_frozen(std::move(W), std::move(b), std::move(fW), std::move(fb));
  return ck;
}

double check_gradients(const TrainerConfig& cfg_in, std::uint64_t seed, const GradientCheckOptions& opts) {
  TrainerConfig cfg = cfg_in;
  cfg.jobs = 1;
  Rng rng(seed);
  const int F = kFeatureDim;
  const int D = cfg.embedding_dim;
  const int n_params = F * D + D;
  auto random_features = [&] {
    PatchFeatures pf{1, opts.patches_per_image, RowMatrix<double>(opts.patches_per_image, F)};
    for (Eigen::Index i = 0; i < pf.values.size(); ++i) pf.values.data()[i] = rng.normal();
    return pf;
  };
  double worst = 0.0;
  int batches_done = 0;
  for (int attempt = 0; batches_done < opts.batches && attempt < opts.batches * 20; ++attempt) {
    EmbeddingHead<double> head = init_head(F, D, rng.next());
    for (Eigen::Index i = 0; i < head.W.size(); ++i) head.W.data()[i] += 0.1 * rng.normal();
    for (int i = 0; i < D; ++i) head.b(i) = 0.1 * rng.normal();
    std::vector<TrainingTriplet> data;
    for (int r = 0; r < opts.records_per_batch; ++r) {
      data.push_back({"g" + std::to_string(attempt) + "-" + std::to_string(r), "g", random_features(),
                      random_features(), random_features(), random_features()});
    }
    std::vector<const TrainingTriplet*> batch;
    for (const auto& t : data) batch.push_back(&t);
    const int epoch = rng.uniform_int(0, cfg.epochs - 1);
    const double temperature = temperature_schedule(epoch, cfg.epochs, cfg.t_start, cfg.t_end);

    bool kink = false;
    for (const auto& t : data) {
      const RecordResult rr = record_loss(t, head, cfg, epoch, temperature, 0, 0, 0, nullptr);
      if (std::abs(rr.gap1 + cfg.margin1) < 1e-3 || std::abs(rr.gap2 + cfg.margin2) < 1e-3) kink = true;
    }
    if (kink) continue;

    Gradients g;
    total_loss(batch, head, cfg, epoch, &g);
    if (opts.mutate) opts.mutate(g);
    std::vector<int> params = opts.probe;
    for (int k = 0; k < opts.params_per_batch; ++k) params.push_back(rng.uniform_int(0, n_params - 1));
    for (int k : params) {
      double& theta = k < F * D ? head.W.data()[k] : head.b(k - F * D);
      const double analytic = k < F * D ? g.W.data()[k] : g.b(k - F * D);
      const double saved = theta;
      theta = saved + opts.h;
      const double up = total_loss(batch, head, cfg, epoch).total;
      theta = saved - opts.h;
      const double down = total_loss(batch, head, cfg, epoch).total;
      theta = saved;
      const double numeric = (up - down) / (2.0 * opts.h);
      const double denom = std::abs(analytic) + std::abs(numeric);
      if (denom > 1e-8) worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
    ++batches_done;
  }
  if (batches_done < opts.batches) throw Error(ErrorKind::InvalidArgument, "check_gradients: too many batches near hinge kinks");
  return worst;
}

}  // namespace naref
