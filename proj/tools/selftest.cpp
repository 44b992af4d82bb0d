#include "selftest.hpp"

#include "naref/corpus.hpp"
#include "naref/distort.hpp"
#include "naref/error.hpp"
#include "naref/evalkit.hpp"
#include "naref/flow.hpp"
#include "naref/pipeline.hpp"
#include "naref/rng.hpp"
#include "naref/score.hpp"
#include "naref/studysrv.hpp"
#include "naref/synthetic.hpp"
#include "naref/train.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

namespace naref::selftest {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// --- loss analytics ---------------------------------------------------------

PatchFeatures random_features(Rng& rng, int patches) {
  PatchFeatures f{1, patches, RowMatrix<double>(patches, kFeatureDim)};
  for (Eigen::Index i = 0; i < f.values.size(); ++i) f.values.data()[i] = rng.normal();
  return f;
}

bool loss_analytics(std::string& detail) {
  bool ok = true;
  const Eigen::VectorXd e1 = vec({1, 0}), e2 = vec({0, 1});
  for (double m : {0.3, 0.1}) {
    ok &= triplet_margin_loss<double>(e1, e1, e1, m) == m;
    ok &= triplet_margin_loss<double>(e1, e1, e2, m) == 0.0;
  }
  const Eigen::VectorXd e = vec({0.3, -1.2, 0.5, 2.0});
  const double kl_shift = kl_regularizer<double>(e, (e.array() + 3.5).matrix(), 1.0);
  const double kl_case = kl_regularizer<double>(e1, e2, 1.0);
  ok &= kl_shift < 1e-12;
  ok &= std::abs(kl_case - 0.46212) <= 1e-4;

  // Target equal to reference makes the anchor coin irrelevant; the second
  // triplet's negative is one of two candidates, checked as such.
  Rng rng(23);
  TrainerConfig cfg;
  cfg.epochs = 10;
  EmbeddingHead<double> head = init_head(kFeatureDim, 12, 9);
  for (Eigen::Index i = 0; i < head.W.size(); ++i) head.W.data()[i] += 0.2 * rng.normal();
  std::vector<TrainingTriplet> data;
  for (int i = 0; i < 8; ++i) {
    const PatchFeatures t = random_features(rng, 4);
    data.push_back({"r" + std::to_string(i), "s", t, t, random_features(rng, 4), random_features(rng, 4)});
  }
  const int epoch = 3;
  const double T = temperature_schedule(epoch, cfg.epochs, cfg.t_start, cfg.t_end);
  auto emb = [](const PatchFeatures& f, const EmbeddingHead<double>& h) {
    return image_embedding(head_forward(f, h)).values;
  };
  double t1 = 0, t2 = 0, kl = 0;
  bool coins_ok = true;
  std::vector<const TrainingTriplet*> batch;
  for (const auto& r : data) {
    batch.push_back(&r);
    const Eigen::VectorXd zi = emb(r.target, head), zp = emb(r.pos, head), zn = emb(r.neg, head);
    t1 += triplet_margin_loss<double>(zi, zp, zn, cfg.margin1);
    const double single = total_loss({&r}, head, cfg, epoch).triplet2;
    const double a = triplet_margin_loss<double>(zi, zi, zp, cfg.margin2);
    const double b = triplet_margin_loss<double>(zi, zi, zn, cfg.margin2);
    coins_ok &= std::abs(single - a) < 1e-12 || std::abs(single - b) < 1e-12;
    t2 += single;
    kl += kl_regularizer<double>(zi, emb(r.target, head.frozen()), T);
  }
  const double n = static_cast<double>(data.size());
  const LossBreakdown l = total_loss(batch, head, cfg, epoch);
  const double recomposed = cfg.lambda1 * t1 / n + cfg.lambda2 * t2 / n + cfg.lambda_kl * kl / n;
  const double err = std::max({std::abs(l.total - recomposed), std::abs(l.triplet1 - t1 / n),
                               std::abs(l.kl - kl / n),
                               std::abs(l.total - (cfg.lambda1 * l.triplet1 + cfg.lambda2 * l.triplet2 +
                                                   cfg.lambda_kl * l.kl))});
  ok &= coins_ok && err <= 1e-12;
  detail = "kl(e1,e2,T=1)=" + fmt("%.6f", kl_case) + " kl(shift)=" + fmt("%.1e", kl_shift) +
           " decomposition err=" + fmt("%.1e", err);
  return ok;
}

// --- gradients ----------------------------------------------------------------

bool gradient_fidelity(std::string& detail) {
  GradientCheckOptions opts;
  opts.batches = 10;
  opts.params_per_batch = 24;
  const double clean = check_gradients(TrainerConfig{}, 1, opts);
  GradientCheckOptions bad = opts;
  bad.probe = {5};
  bad.mutate = [](Gradients& g) { g.W.data()[5] *= 1.01; };
  const double mutated = check_gradients(TrainerConfig{}, 1, bad);
  detail = std::to_string(opts.batches * opts.params_per_batch) + " params, max rel err " + fmt("%.2e", clean) +
           ", x1.01 mutation " + fmt("%.2e", mutated);
  return clean <= 1e-4 && mutated > 1e-3;
}

// --- flow and TROI ------------------------------------------------------------

Image crop(const Image& src, int x0, int y0, int w, int h) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out[(static_cast<std::size_t>(y) * w + x) * 3 + c] = src.u8()[src.index(x0 + x, y0 + y, c)];
  return Image(w, h, std::move(out));
}

double translation_hit_rate(int du, int dv, std::uint64_t seed) {
  const Image world = random_texture(192, 192, seed).to_u8();
  const Image prev = crop(world, 32, 32, 128, 128);
  const Image curr = crop(world, 32 - du, 32 - dv, 128, 128);
  const FlowField f = estimate_flow(prev, curr);
  int hits = 0, total = 0;
  for (int y = 16; y < 112; ++y)
    for (int x = 16; x < 112; ++x) {
      ++total;
      hits += (f.u(y, x) == du && f.v(y, x) == dv) ? 1 : 0;
    }
  return static_cast<double>(hits) / total;
}

bool flow_troi(std::string& detail) {
  bool ok = true;
  const Image img = random_texture(96, 64, 3).to_u8();
  const FlowField z = estimate_flow(img, img);
  ok &= (z.u == 0).all() && (z.v == 0).all();

  double worst_hit = 1.0;
  const int shifts[][2] = {{3, 0}, {-5, 2}, {0, -4}, {17, -9}};
  std::uint64_t seed = 11;
  for (const auto& s : shifts) worst_hit = std::min(worst_hit, translation_hit_rate(s[0], s[1], seed++));
  ok &= worst_hit >= 0.95;

  // Flow magnitudes between frames of a few synthetic scenes.
  std::vector<Plane> sources;
  for (std::uint64_t s = 1; s <= 4; ++s) {
    SceneSpec spec;
    spec.frames = 4;
    spec.seed = s;
    spec.pan_x = static_cast<int>(s % 3);
    spec.pan_y = s % 2 == 0 ? 1 : 0;
    const auto frames = synthesize_scene(spec);
    sources.push_back(flow_magnitude(estimate_flow(frames[1], frames[2])));
  }
  bool counts_ok = true;
  double worst_cov = 0.0;
  for (const Plane& mag : sources) {
    const std::size_t n = static_cast<std::size_t>(mag.size());
    if (n < 10000) return false;
    for (int pct : {30, 50, 85}) {
      const double c = pct / 100.0;
      TroiOptions raw;
      raw.cleanup = false;
      const TroiMask pre = troi_from_flow(mag, c, raw);
      const std::size_t expect = (static_cast<std::size_t>(pct) * n + 99) / 100;
      counts_ok &= pre.pre_cleanup_count == expect && pre.count() == expect;
      const TroiMask post = troi_from_flow(mag, c);
      const double cov = static_cast<double>(post.count()) / static_cast<double>(n);
      worst_cov = std::max(worst_cov, std::abs(cov - c));
    }
  }
  ok &= counts_ok && worst_cov <= 0.02;
  detail = "translation hit rate min " + fmt("%.4f", worst_hit) + ", exact counts " + (counts_ok ? "yes" : "no") +
           ", max post-cleanup coverage error " + fmt("%.4f", worst_cov);
  return ok;
}

// --- distortions --------------------------------------------------------------

bool distortion_locality(std::string& detail) {
  const Image img = random_texture(256, 256, 31).to_u8();
  TroiMask mask = uniform_mask(256, 256, false);
  mask.bits.leftCols(128).setConstant(1);
  mask = feather_mask(mask, 2.0);
  const MaskBits support = dilate_disk(mask.bits, 6.0);
  int strict = 0;
  int local_failures = 0;
  std::string monotone_failures;
  for (const auto& e : catalog_list()) {
    double prev = -1.0;
    bool increasing = true;
    for (int l = 1; l <= kDistortionLevels; ++l) {
      const Image out = apply_masked(img, {e.type_id, l, 2024, {}}, mask);
      bool local = true;
      for (int y = 0; y < 256 && local; ++y)
        for (int x = 0; x < 256 && local; ++x)
          if (!support(y, x))
            for (int c = 0; c < 3; ++c) local &= out.u8()[out.index(x, y, c)] == img.u8()[img.index(x, y, c)];
      local_failures += local ? 0 : 1;
      const double err = mse(img, out);
      if (err < prev) monotone_failures += " " + e.type_id;
      if (err <= prev) increasing = false;
      prev = err;
    }
    strict += increasing ? 1 : 0;
  }
  detail = std::to_string(catalog_list().size()) + " types, locality failures " + std::to_string(local_failures) +
           ", strictly increasing " + std::to_string(strict) +
           (monotone_failures.empty() ? "" : ", decreasing:" + monotone_failures);
  return catalog_list().size() == 34 && local_failures == 0 && monotone_failures.empty() && strict >= 30;
}

// --- supervision filter -------------------------------------------------------

bool filter_soundness(std::string& detail) {
  Rng rng(123);
  Manifest m;
  ScoreTable t;
  std::map<std::string, std::array<double, 4>> raw;  // A pos, A neg (higher better), B pos, B neg (lower better)
  for (int i = 0; i < 100; ++i) {
    TripletRecord r;
    r.id = "t" + std::to_string(i);
    r.scene_id = "s";
    r.target_index = 5;
    r.reference_index = 6;
    r.pos = {"blur_gaussian", 1, 0, {}};
    r.neg = {"blur_gaussian", 4, 0, {}};
    m.records.push_back(r);
    std::array<double, 4> s{};
    for (double& v : s) v = rng.uniform() < 0.2 ? 0.5 + rng.uniform(-0.004, 0.004) : rng.uniform();
    if (rng.uniform() < 0.15) s[1] = s[0] + rng.uniform(-0.005, 0.005);
    if (i % 17 == 0) s[3] = s[2];
    raw[r.id] = s;
    t.push_back({r.id, "pos", "A", s[0], Orientation::HigherBetter});
    t.push_back({r.id, "neg", "A", s[1], Orientation::HigherBetter});
    t.push_back({r.id, "pos", "B", s[2], Orientation::LowerBetter});
    t.push_back({r.id, "neg", "B", s[3], Orientation::LowerBetter});
  }
  FilterOptions opts;
  opts.scorer_a = "A";
  opts.scorer_b = "B";
  const Manifest out = supervision_filter(m, t, opts);

  // Rule 1: both gaps at least tau. Rule 2: both scorers prefer the same image,
  // which becomes pos.
  Manifest expect;
  expect.header = m.header;
  for (const auto& r : m.records) {
    const auto& s = raw[r.id];
    const double a_neg_better = s[1] - s[0];
    const double b_neg_better = s[2] - s[3];
    if (std::fabs(a_neg_better) < 0.005 || std::fabs(b_neg_better) < 0.005) continue;
    if ((a_neg_better > 0) != (b_neg_better > 0)) continue;
    TripletRecord k = r;
    if (a_neg_better > 0) std::swap(k.pos, k.neg);
    k.order_source = OrderSource::Supervision;
    expect.records.push_back(k);
  }
  detail = "kept " + std::to_string(out.records.size()) + " of 100, oracle " + std::to_string(expect.records.size());
  return out == expect;
}

// --- correlations ---------------------------------------------------------------

double oracle_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> oracle_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (x[j] < x[i]) ++less;
      if (j != i && x[j] == x[i]) ++equal;
    }
    r[i] = 1.0 + less + equal / 2.0;
  }
  return r;
}

bool correlation_oracles(std::string& detail) {
  Rng rng(99);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = rng.uniform_int(3, 40);
    std::vector<double> x(n), y(n);
    for (int i = 0; i < n; ++i) {
      x[i] = rng.normal();
      y[i] = 0.5 * x[i] + rng.normal();
      // coarse values produce ties
      if (trial % 3 == 0) {
        x[i] = std::round(x[i] * 2.0);
        y[i] = std::round(y[i] * 2.0);
      }
    }
    if (std::adjacent_find(x.begin(), x.end(), std::not_equal_to<>()) == x.end()) x[0] += 1.0;
    if (std::adjacent_find(y.begin(), y.end(), std::not_equal_to<>()) == y.end()) y[0] += 1.0;
    worst = std::max(worst, std::abs(plcc(x, y) - oracle_pearson(x, y)));
    worst = std::max(worst, std::abs(srcc(x, y) - oracle_pearson(oracle_ranks(x), oracle_ranks(y))));
  }
  const double p = plcc({1, 2, 3, 4}, {1, 3, 2, 4});
  const double s = srcc({1, 2, 3, 4}, {1, 3, 2, 4});
  detail = "max deviation " + fmt("%.1e", worst) + ", plcc " + fmt("%.12f", p) + ", srcc " + fmt("%.12f", s);
  return worst <= 1e-12 && std::abs(p - 0.8) <= 1e-12 && std::abs(s - 0.8) <= 1e-12;
}

// --- heatmap ------------------------------------------------------------------

PatchEmbeddings<double> random_grid(Rng& rng, int gh, int gw, int dim) {
  PatchEmbeddings<double> pe{gh, gw, true, RowMatrix<double>(gh * gw, dim)};
  for (int r = 0; r < gh * gw; ++r) {
    for (int c = 0; c < dim; ++c) pe.rows(r, c) = rng.normal();
    pe.rows.row(r).normalize();
  }
  return pe;
}

struct OracleDirection {
  std::vector<double> best;
  std::vector<int> match;
  std::vector<bool> reciprocal;
  std::vector<double> value;
};

std::pair<OracleDirection, OracleDirection> oracle_heatmap(const PatchEmbeddings<double>& A,
                                                           const PatchEmbeddings<double>& B, double beta,
                                                           double eps) {
  const int na = A.count(), nb = B.count();
  std::vector<std::vector<double>> s(na, std::vector<double>(nb));
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < nb; ++j) {
      double dot = 0, ni = 0, nj = 0;
      for (int c = 0; c < A.dim(); ++c) {
        dot += A.rows(i, c) * B.rows(j, c);
        ni += A.rows(i, c) * A.rows(i, c);
        nj += B.rows(j, c) * B.rows(j, c);
      }
      s[i][j] = dot / std::sqrt(ni * nj);
    }
  OracleDirection ra, pb;
  for (int i = 0; i < na; ++i) {
    int arg = 0;
    for (int j = 0; j < nb; ++j)
      if (s[i][j] > s[i][arg]) arg = j;
    ra.match.push_back(arg);
    ra.best.push_back(s[i][arg]);
  }
  for (int j = 0; j < nb; ++j) {
    int arg = 0;
    for (int i = 0; i < na; ++i)
      if (s[i][j] > s[arg][j]) arg = i;
    pb.match.push_back(arg);
    pb.best.push_back(s[arg][j]);
  }
  for (int i = 0; i < na; ++i) ra.reciprocal.push_back(pb.match[ra.match[i]] == i);
  for (int j = 0; j < nb; ++j) pb.reciprocal.push_back(ra.match[pb.match[j]] == j);
  std::vector<double> pooled;
  for (OracleDirection* d : {&ra, &pb}) {
    const double lo = *std::min_element(d->best.begin(), d->best.end());
    const double hi = *std::max_element(d->best.begin(), d->best.end());
    for (std::size_t k = 0; k < d->best.size(); ++k) {
      double m = hi - lo <= eps ? 0.0 : 1.0 - (d->best[k] - lo) / (hi - lo);
      if (!d->reciprocal[k]) m *= beta;
      d->value.push_back(m);
      pooled.push_back(m);
    }
  }
  const double lo = *std::min_element(pooled.begin(), pooled.end());
  const double hi = *std::max_element(pooled.begin(), pooled.end());
  for (OracleDirection* d : {&ra, &pb})
    for (double& v : d->value) v = hi - lo <= eps ? 0.0 : (v - lo) / (hi - lo + eps);
  return {ra, pb};
}

bool heatmap_oracle(std::string& detail) {
  Rng rng(3);
  bool structure_ok = true;
  double worst = 0.0;
  int pairs = 0;
  for (int gh = 1; gh <= 4; ++gh)
    for (int gw = 1; gw <= 4; ++gw)
      for (int bh = 1; bh <= 4; ++bh)
        for (int bw = 1; bw <= 4; ++bw) {
          ++pairs;
          const auto a = random_grid(rng, gh, gw, 6);
          auto b = random_grid(rng, bh, bw, 6);
          if (pairs % 5 == 0 && b.count() > 1) b.rows.row(b.count() - 1) = b.rows.row(0);
          const auto h = patch_mismatch_heatmap(a, b);
          const auto [ra, pb] = oracle_heatmap(a, b, 1.5, 1e-8);
          for (int k = 0; k < a.count(); ++k) {
            structure_ok &= h.reference.match(k) == ra.match[k] && h.reference.reciprocal[k] == ra.reciprocal[k];
            worst = std::max(worst, std::abs(h.reference.values(k / gw, k % gw) - ra.value[k]));
          }
          for (int k = 0; k < b.count(); ++k) {
            structure_ok &= h.processed.match(k) == pb.match[k] && h.processed.reciprocal[k] == pb.reciprocal[k];
            worst = std::max(worst, std::abs(h.processed.values(k / bw, k % bw) - pb.value[k]));
          }
        }

  bool zeros = true;
  for (int g = 1; g <= 5; ++g) {
    const auto a = random_grid(rng, g, g + 1, 8);
    const auto h = patch_mismatch_heatmap(a, a);
    zeros &= (h.reference.values == 0.0).all() && (h.processed.values == 0.0).all();
  }

  auto a = random_grid(rng, 3, 3, 12);
  auto b = a;
  const Eigen::MatrixXd span = a.rows.transpose();
  const Eigen::MatrixXd q = span.householderQr().householderQ();
  b.rows.row(4) = q.col(11).transpose();
  const auto h = patch_mismatch_heatmap(a, b);
  const double peak = h.processed.values(1, 1);
  const bool peak_ok = std::abs(peak - 1.0) <= 1e-7 && h.processed.values.maxCoeff() == peak;

  detail = std::to_string(pairs) + " grid-shape pairs, max value deviation " + fmt("%.1e", worst) +
           ", identical-input zeros " + (zeros ? "yes" : "no") + ", orthogonal peak " + fmt("%.9f", peak);
  return structure_ok && worst <= 1e-12 && zeros && peak_ok;
}

// --- end to end -----------------------------------------------------------------

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string drop_jobs_line(const std::string& text) {
  std::istringstream in(text);
  std::string line, out;
  while (std::getline(in, line))
    if (line.rfind("jobs = ", 0) != 0) out += line + "\n";
  return out;
}

// Relative paths of every regular file under `root`, sorted.
std::vector<std::string> tree(const std::filesystem::path& root) {
  std::vector<std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(std::filesystem::relative(e.path(), root).string());
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

std::vector<Check> oracle_checks() {
  return {
      {"loss analytics", 1.0, loss_analytics},
      {"gradient fidelity", 30.0, gradient_fidelity},
      {"flow and TROI", 60.0, flow_troi},
      {"distortion locality and severity", 300.0, distortion_locality},
      {"supervision filter soundness", 1.0, filter_soundness},
      {"correlation oracles", 5.0, correlation_oracles},
      {"patch heatmap oracle", 5.0, heatmap_oracle},
  };
}

std::vector<Check> pipeline_checks(const std::filesystem::path& scratch, unsigned replay_jobs) {
  const auto first = scratch / "run";
  const auto second = scratch / "replay";
  auto gate_passed_run = std::make_shared<bool>(false);

  Check gate{"end-to-end toy training gate", 600.0, [=](std::string& detail) {
               RunConfig cfg = RunConfig::toy();
               cfg.resolve();
               std::filesystem::remove_all(first);
               const PipelineResult r = run_pipeline(cfg, first);
               *gate_passed_run = true;
               const double aligned = r.report.accuracy.accuracy;
               const double non_aligned = r.report.non_aligned->accuracy;
               const auto& w = *r.report.epoch_window;
               detail = std::to_string(r.built.records.size()) + " triplets from " +
                        std::to_string(cfg.scenes.count) + " scenes, " + std::to_string(r.filter.kept) +
                        " kept, train " + std::to_string(r.split.train.size()) + ", held-out " +
                        std::to_string(r.split.test.size()) + "; aligned " + fmt("%.4f", aligned) +
                        ", non-aligned " + fmt("%.4f", non_aligned) + ", gap " +
                        fmt("%.4f", aligned - non_aligned) + ", last " + std::to_string(w.window) + " epochs " +
                        fmt("%.4f", w.mean) + " +/- " + fmt("%.4f", w.std);
               return r.built.records.size() >= 600 && cfg.scenes.count >= 3 && aligned >= 0.75 &&
                      non_aligned >= 0.75 && aligned - non_aligned <= 0.05 && w.window == 10;
             }};

  Check replay{"determinism replay", 600.0, [=](std::string& detail) {
                 if (!*gate_passed_run) {
                   detail = "no first run to replay";
                   return false;
                 }
                 const RunConfig cfg =
                     load_run_config(first / "config.toml", {"run.jobs=" + std::to_string(replay_jobs)});
                 std::filesystem::remove_all(second);
                 run_pipeline(cfg, second);
                 const auto a = tree(first), b = tree(second);
                 if (a != b) {
                   detail = "file lists differ";
                   return false;
                 }
                 std::size_t differing = 0;
                 std::string first_diff;
                 for (const auto& f : a) {
                   std::string x = read_bytes(first / f), y = read_bytes(second / f);
                   if (f == "config.toml") {
                     x = drop_jobs_line(x);
                     y = drop_jobs_line(y);
                   }
                   if (x != y) {
                     ++differing;
                     if (first_diff.empty()) first_diff = f;
                   }
                 }
                 detail = std::to_string(a.size()) + " files compared, jobs 1 vs " + std::to_string(replay_jobs) +
                          ", differing " + std::to_string(differing) +
                          (first_diff.empty() ? "" : " (first: " + first_diff + ")");
                 return differing == 0;
               }};
  return {gate, replay};
}

std::vector<Check> study_checks(const std::filesystem::path& scratch) {
  Check round_trip{"study round-trip", 60.0, [=](std::string& detail) {
                     SceneSpec spec;
                     spec.id = "study";
                     spec.frames = 16;
                     spec.seed = 4;
                     std::map<std::string, std::vector<Image>> scenes{{"study", synthesize_scene(spec)}};
                     BuildOptions bo;
                     bo.per_target = 2;
                     bo.max_k = 3;
                     bo.seed = 9;
                     Manifest man = build_triplets(scenes["study"], "study", bo);
                     if (man.records.size() < 20) throw Error(ErrorKind::InvalidArgument, "too few triplets");
                     man.records.resize(20);
                     std::filesystem::create_directories(scratch);
                     const auto log = scratch / "votes.jsonl";
                     std::filesystem::remove(log);

                     const std::vector<std::string> raters{"r0", "r1", "r2", "r3", "r4"};
                     auto study = std::make_unique<Study>(man, scenes, log);
                     const auto ids = study->triplet_ids();
                     // First ten: four votes for 0, one for 1. Last ten: 3-2 split.
                     bool canonical_ok = true;
                     std::int64_t ts = 1000;
                     for (std::size_t t = 0; t < ids.size(); ++t) {
                       for (std::size_t r = 0; r < raters.size(); ++r) {
                         if (t == 10 && r == 3) {
                           // restart mid-study
                           study.reset();
                           study = std::make_unique<Study>(man, scenes, log);
                         }
                         const int canonical = t < 10 ? (r < 4 ? 0 : 1) : (r < 3 ? 0 : 1);
                         // The rater clicks a screen side; map it back through the permutation.
                         const nlohmann::json d = study->describe(ids[t], raters[r]);
                         const bool swapped = d["permutation"] == "swap";
                         const int side = swapped ? 1 - canonical : canonical;
                         const int back = swapped ? 1 - side : side;
                         canonical_ok &= back == canonical && swapped == presentation_swapped(raters[r], ids[t]);
                         study->record_vote({ids[t], raters[r], back, ts++, false, {}, {}});
                       }
                     }
                     const Aggregation before = study->aggregate();
                     study.reset();
                     Study reopened(man, scenes, log);
                     const Aggregation after = reopened.aggregate();
                     bool replay_same = before.labeled == after.labeled && before.excluded == after.excluded &&
                                        before.tallies.size() == after.tallies.size();
                     for (std::size_t i = 0; replay_same && i < before.tallies.size(); ++i)
                       replay_same = before.tallies[i].label == after.tallies[i].label &&
                                     before.tallies[i].count0 == after.tallies[i].count0;

                     const auto out = scratch / "labels.jsonl";
                     reopened.export_labels(out);
                     const Manifest labeled = read_manifest(out);
                     std::vector<TwoAfcDecision> scripted;
                     std::vector<int> labels;
                     for (const auto& r : labeled.records) {
                       scripted.push_back({0, false, 0.0, 0.0});
                       labels.push_back(effective_label(r));
                     }
                     const AccuracyResult acc = two_afc_accuracy(scripted, labels);
                     detail = "labeled " + std::to_string(after.labeled) + ", excluded " +
                              std::to_string(after.excluded) + ", exported " +
                              std::to_string(labeled.records.size()) + ", scripted accuracy " +
                              fmt("%.3f", acc.accuracy) + ", restart replay " + (replay_same ? "identical" : "differs");
                     return after.labeled == 10 && after.excluded == 10 && labeled.records.size() == 10 &&
                            acc.accuracy == 1.0 && replay_same && canonical_ok;
                   }};
  return {round_trip};
}

CheckResult run_check(const Check& check) {
  CheckResult r;
  r.name = check.name;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    r.pass = check.run(r.detail);
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("error: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (r.seconds > check.budget) {
    r.pass = false;
    r.detail += " [over budget of " + fmt("%.0f", check.budget) + "s]";
  }
  return r;
}

std::string format_result(const CheckResult& r) {
  return std::string(r.pass ? "PASS " : "FAIL ") + r.name + " (" + fmt("%.1f", r.seconds) + "s): " + r.detail;
}

}  // namespace naref::selftest
