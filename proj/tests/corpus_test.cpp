#include "naref/corpus.hpp"
#include "naref/error.hpp"
#include "naref/rng.hpp"
#include "naref/synthetic.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>

namespace naref {
namespace {

using testing::ScratchDir;
using testing::textured_image;

Image negative(const Image& img) {
  std::vector<std::uint8_t> out(img.u8().begin(), img.u8().end());
  for (auto& v : out) v = static_cast<std::uint8_t>(255 - v);
  return Image(img.width(), img.height(), std::move(out));
}

Image constant(int w, int h, std::uint8_t v) { return Image(w, h, std::vector<std::uint8_t>(w * h * 3, v)); }

std::vector<Image> static_scene(int n) { return std::vector<Image>(n, textured_image(48, 40, 5)); }

std::vector<Image> scene_with_cut(int cut) {
  SceneSpec spec;
  spec.width = 64;
  spec.height = 48;
  spec.frames = 40;
  spec.seed = 3;
  spec.cut_at = cut;
  return synthesize_scene(spec);
}

// --- oracles ------------------------------------------------------------------

double luma_at(const Image& img, int x, int y) {
  return 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
}

// Per-window SSIM evaluated directly from the definition.
double ssim_oracle(const Image& a, const Image& b) {
  double g[11];
  double total = 0.0;
  for (int i = 0; i < 11; ++i) total += g[i] = std::exp(-(i - 5.0) * (i - 5.0) / 4.5);
  double sum = 0.0;
  int count = 0;
  for (int y0 = 0; y0 + 11 <= a.height(); ++y0)
    for (int x0 = 0; x0 + 11 <= a.width(); ++x0) {
      double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
      for (int dy = 0; dy < 11; ++dy)
        for (int dx = 0; dx < 11; ++dx) {
          const double w = g[dy] * g[dx] / (total * total);
          const double p = luma_at(a, x0 + dx, y0 + dy);
          const double q = luma_at(b, x0 + dx, y0 + dy);
          mx += w * p;
          my += w * q;
          xx += w * p * p;
          yy += w * q * q;
          xy += w * p * q;
        }
      const double c1 = 1e-4, c2 = 9e-4;
      sum += (2 * mx * my + c1) * (2 * (xy - mx * my) + c2) /
             ((mx * mx + my * my + c1) * (xx - mx * mx + yy - my * my + c2));
      ++count;
    }
  return sum / count;
}

double gmsd_oracle(const Image& a, const Image& b) {
  const int w = a.width();
  const int h = a.height();
  auto grad = [&](const Image& img, int x, int y) {
    auto L = [&](int xx, int yy) { return luma_at(img, std::clamp(xx, 0, w - 1), std::clamp(yy, 0, h - 1)); };
    const double gx = (L(x - 1, y - 1) + L(x - 1, y) + L(x - 1, y + 1) - L(x + 1, y - 1) - L(x + 1, y) - L(x + 1, y + 1)) / 3;
    const double gy = (L(x - 1, y - 1) + L(x, y - 1) + L(x + 1, y - 1) - L(x - 1, y + 1) - L(x, y + 1) - L(x + 1, y + 1)) / 3;
    return std::hypot(gx, gy);
  };
  std::vector<double> map;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double g1 = grad(a, x, y);
      const double g2 = grad(b, x, y);
      map.push_back((2 * g1 * g2 + 0.0026) / (g1 * g1 + g2 * g2 + 0.0026));
    }
  double mean = 0;
  for (double v : map) mean += v;
  mean /= map.size();
  double var = 0;
  for (double v : map) var += (v - mean) * (v - mean);
  return std::sqrt(var / map.size());
}

// --- scene change guard -------------------------------------------------------

TEST(SceneGuard, IdenticalFramesPass) {
  const auto frames = static_scene(6);
  EXPECT_FALSE(scene_change_guard(frames, 0, 5));
  EXPECT_FALSE(scene_change_guard(frames, 5, 0));
}

TEST(SceneGuard, NegativeMidSpanBlocks) {
  auto frames = static_scene(9);
  frames[4] = negative(frames[4]);
  EXPECT_GT(mean_abs_luma_diff(frames[3], frames[4]), 30.0 / 255.0);
  EXPECT_TRUE(scene_change_guard(frames, 1, 7));
  EXPECT_FALSE(scene_change_guard(frames, 0, 3));
  EXPECT_FALSE(scene_change_guard(frames, 1, 7, 1.0));
}

TEST(SceneGuard, OutOfRange) {
  const auto frames = static_scene(4);
  EXPECT_THROW(scene_change_guard(frames, 0, 4), Error);
  EXPECT_THROW(scene_change_guard(frames, -1, 2), Error);
}

// --- triplet construction -----------------------------------------------------

TEST(BuildTriplets, DeterministicAndJobIndependent) {
  const auto frames = static_scene(40);
  BuildOptions opts;
  opts.seed = 17;
  const Manifest a = build_triplets(frames, "s", opts);
  const Manifest b = build_triplets(frames, "s", opts);
  opts.jobs = 3;
  const Manifest c = build_triplets(frames, "s", opts);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
  EXPECT_EQ(a.records.size(), 39u * 3u);
  EXPECT_EQ(a.skipped, 0u);
  opts.seed = 18;
  EXPECT_FALSE(build_triplets(frames, "s", opts) == a);
}

TEST(BuildTriplets, DistanceAndOrderLaws) {
  const auto frames = static_scene(30);
  BuildOptions opts;
  opts.seed = 4;
  const Manifest m = build_triplets(frames, "scene", opts);
  std::map<int, int> k_hist;
  for (const auto& r : m.records) {
    EXPECT_EQ(std::abs(r.reference_index - r.target_index), r.k);
    EXPECT_GE(r.k, 1);
    EXPECT_LE(r.k, 15);
    EXPECT_LT(r.pos.level, r.neg.level);
    EXPECT_EQ(r.pos.type_id, r.neg.type_id);
    EXPECT_GE(r.troi_coverage, 0.30);
    EXPECT_LT(r.troi_coverage, 0.85);
    EXPECT_EQ(r.order_source, OrderSource::Construction);
    EXPECT_FALSE(r.label.has_value());
    ++k_hist[r.k];
  }
  EXPECT_EQ(k_hist.size(), 15u);
}

TEST(BuildTriplets, BoundaryClampsToPositiveDirection) {
  const auto frames = static_scene(40);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    BuildOptions opts;
    opts.seed = seed;
    for (const auto& r : build_triplets(frames, "b", opts).records) {
      if (r.target_index == 3 && r.k > 3) EXPECT_EQ(r.reference_index, 3 + r.k);
      if (r.target_index == 36 && r.k > 3) EXPECT_EQ(r.reference_index, 36 - r.k);
      EXPECT_GE(r.reference_index, 0);
      EXPECT_LT(r.reference_index, 40);
    }
  }
}

TEST(BuildTriplets, NoReferenceAcrossSceneCut) {
  const auto frames = scene_with_cut(20);
  for (int t = 0; t < 39; ++t) EXPECT_EQ(mean_abs_luma_diff(frames[t], frames[t + 1]) > 30.0 / 255.0, t == 19) << t;
  BuildOptions opts;
  opts.seed = 9;
  opts.per_target = 6;
  const Manifest m = build_triplets(frames, "cut", opts);
  int seen18 = 0;
  for (const auto& r : m.records) {
    EXPECT_EQ(r.target_index < 20, r.reference_index < 20) << r.id;
    if (r.target_index == 18) {
      ++seen18;
      EXPECT_LE(r.reference_index, 19);
    }
  }
  EXPECT_GT(seen18, 0);
}

TEST(BuildTriplets, SkipsWhenNoReferenceIsAdmissible) {
  // Every consecutive pair is a cut, so every draw is blocked.
  std::vector<Image> frames;
  const Image a = textured_image(40, 32, 1);
  for (int i = 0; i < 16; ++i) frames.push_back(i % 2 ? negative(a) : a);
  const Manifest m = build_triplets(frames, "x", {});
  EXPECT_TRUE(m.records.empty());
  EXPECT_EQ(m.skipped, 15u * 3u);
}

TEST(BuildTriplets, Errors) {
  EXPECT_THROW(build_triplets(static_scene(15), "x", {}), Error);
}

TEST(Materialize, DistortionStaysInsideMask) {
  SceneSpec spec;
  spec.width = 96;
  spec.height = 64;
  spec.frames = 20;
  spec.seed = 8;
  const auto frames = synthesize_scene(spec);
  BuildOptions opts;
  opts.seed = 2;
  opts.target_stride = 6;
  const Manifest m = build_triplets(frames, "m", opts);
  const auto images = materialize_scene(frames, m.records);
  ASSERT_EQ(images.size(), m.records.size());
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    const TroiMask mask = target_mask(frames, r.target_index, r.troi_coverage);
    const MaskBits support = dilate_disk(mask.bits, 6.0);
    EXPECT_EQ(images[i].reference, frames[r.reference_index]);
    EXPECT_EQ(images[i].target, frames[r.target_index]);
    const TripletImages single = materialize(frames, r);
    EXPECT_EQ(single.pos, images[i].pos);
    EXPECT_EQ(single.neg, images[i].neg);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 96; ++x)
        if (!support(y, x))
          for (int c = 0; c < 3; ++c) ASSERT_EQ(images[i].pos.at(x, y, c), images[i].target.at(x, y, c));
  }
}

// --- scorers ------------------------------------------------------------------

TEST(Ssim, IdenticalIsOne) {
  const Image img = textured_image(40, 32, 2);
  EXPECT_NEAR(ssim(img, img), 1.0, 1e-9);
}

TEST(Ssim, MatchesDirectOracle) {
  const Image a = textured_image(36, 33, 3);
  const Image b = apply_distortion(a, {"gaussian-color", 4, 1});
  EXPECT_NEAR(ssim(a, b), ssim_oracle(a, b), 1e-5);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-6);
}

TEST(Ssim, NegativeIsDissimilar) {
  const Image a = textured_image(48, 48, 4);
  const double v = ssim(a, negative(a));
  EXPECT_NEAR(v, ssim_oracle(a, negative(a)), 1e-5);
  EXPECT_LT(v, 0.5);
  std::cout << "ssim(texture, negative) = " << v << "\n";
}

TEST(Ssim, ConstantOffsetClosedForm) {
  const Image a = constant(32, 32, 128);
  const Image b = constant(32, 32, 129);
  const double mx = 128.0 / 255.0;
  const double my = 129.0 / 255.0;
  const double expected = (2 * mx * my + 1e-4) / (mx * mx + my * my + 1e-4);
  EXPECT_NEAR(ssim(a, b), expected, 1e-5);
  EXPECT_NEAR(ssim(a, b), 1.0, 1e-3);
}

TEST(Ssim, Errors) {
  EXPECT_THROW(ssim(constant(32, 32, 0), constant(33, 32, 0)), Error);
  EXPECT_THROW(ssim(constant(10, 32, 0), constant(10, 32, 0)), Error);
}

TEST(Gmsd, IdenticalIsZeroAndOracle) {
  const Image a = textured_image(40, 36, 6);
  EXPECT_EQ(gmsd(a, a), 0.0);
  const Image b = apply_distortion(a, {"gaussian-blur", 3});
  EXPECT_GT(gmsd(a, b), 0.0);
  EXPECT_NEAR(gmsd(a, b), gmsd_oracle(a, b), 1e-6);
}

TEST(Gmsd, BlurSeverity) {
  const Image a = textured_image(64, 64, 7);
  EXPECT_GT(gmsd(a, apply_distortion(a, {"gaussian-blur", 5})), gmsd(a, apply_distortion(a, {"gaussian-blur", 1})));
  EXPECT_THROW(gmsd(a, constant(10, 10, 0)), Error);
}

// --- supervision filter -------------------------------------------------------

Manifest ids_manifest(int n) {
  Manifest m;
  for (int i = 0; i < n; ++i) {
    TripletRecord r;
    r.id = "t" + std::to_string(i);
    r.scene_id = "s";
    r.target_index = 20;
    r.reference_index = 21;
    r.k = 1;
    r.pos = {"brighten", 1, 0, {}};
    r.neg = {"brighten", 3, 0, {}};
    m.records.push_back(r);
  }
  return m;
}

void add_scores(ScoreTable& t, const std::string& id, double a_pos, double a_neg, double b_pos, double b_neg) {
  // scorer a is higher-better, b lower-better
  t.push_back({id, "pos", "A", a_pos, Orientation::HigherBetter});
  t.push_back({id, "neg", "A", a_neg, Orientation::HigherBetter});
  t.push_back({id, "pos", "B", b_pos, Orientation::LowerBetter});
  t.push_back({id, "neg", "B", b_neg, Orientation::LowerBetter});
}

FilterOptions ab() {
  FilterOptions o;
  o.scorer_a = "A";
  o.scorer_b = "B";
  return o;
}

TEST(SupervisionFilter, AmbiguousAndDisagreement) {
  const Manifest m = ids_manifest(4);
  ScoreTable t;
  add_scores(t, "t0", 0.900, 0.899, 0.1, 0.3);  // A gap 0.001
  add_scores(t, "t1", 0.9, 0.8, 0.3, 0.1);      // A says pos, B says neg
  add_scores(t, "t2", 0.9, 0.8, 0.1, 0.3);      // agree, pos better
  add_scores(t, "t3", 0.7, 0.8, 0.3, 0.1);      // agree, neg better
  FilterReport rep;
  const Manifest out = supervision_filter(m, t, ab(), &rep);
  EXPECT_EQ(rep.input, 4u);
  EXPECT_EQ(rep.dropped_ambiguous, 1u);
  EXPECT_EQ(rep.dropped_disagreement, 1u);
  EXPECT_EQ(rep.kept, 2u);
  EXPECT_EQ(rep.relabeled, 1u);
  ASSERT_EQ(out.records.size(), 2u);
  EXPECT_EQ(out.records[0].id, "t2");
  EXPECT_EQ(out.records[0].pos.level, 1);
  EXPECT_EQ(out.records[1].id, "t3");
  EXPECT_EQ(out.records[1].pos.level, 3);
  EXPECT_EQ(out.records[1].neg.level, 1);
  for (const auto& r : out.records) EXPECT_EQ(r.order_source, OrderSource::Supervision);
}

TEST(SupervisionFilter, MatchesBruteForceOracle) {
  Rng rng(123);
  const Manifest m = ids_manifest(100);
  ScoreTable t;
  std::map<std::string, std::array<double, 4>> raw;
  for (const auto& r : m.records) {
    std::array<double, 4> s{};
    for (double& v : s) v = rng.uniform() < 0.2 ? 0.5 + rng.uniform(-0.004, 0.004) : rng.uniform();
    // Pull some pairs within tau.
    if (rng.uniform() < 0.15) s[1] = s[0] + rng.uniform(-0.005, 0.005);
    raw[r.id] = s;
    add_scores(t, r.id, s[0], s[1], s[2], s[3]);
  }
  const Manifest out = supervision_filter(m, t, ab());
  std::vector<std::string> expect;
  for (const auto& r : m.records) {
    const auto& s = raw[r.id];
    const double da = -s[0] + s[1];  // lower-better gap pos - neg
    const double db = s[2] - s[3];
    if (std::fabs(da) < 0.005 || std::fabs(db) < 0.005) continue;
    if ((da < 0) != (db < 0)) continue;
    expect.push_back(r.id);
  }
  ASSERT_EQ(out.records.size(), expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) {
    EXPECT_EQ(out.records[i].id, expect[i]);
    // Soundness: pos is better under both scorers after relabeling.
    const auto& s = raw[expect[i]];
    const bool swapped = out.records[i].pos.level == 3;
    const double a_pos = swapped ? s[1] : s[0];
    const double a_neg = swapped ? s[0] : s[1];
    const double b_pos = swapped ? s[3] : s[2];
    const double b_neg = swapped ? s[2] : s[3];
    EXPECT_GE(a_pos - a_neg, 0.005);
    EXPECT_GE(b_neg - b_pos, 0.005);
  }
}

TEST(SupervisionFilter, Errors) {
  const Manifest m = ids_manifest(2);
  ScoreTable t;
  add_scores(t, "t0", 0.9, 0.5, 0.1, 0.3);
  EXPECT_THROW(supervision_filter(m, t, ab()), Error);  // t1 missing
  add_scores(t, "t1", 0.9, 0.5, 0.1, 0.3);
  FilterOptions unknown = ab();
  unknown.scorer_b = "C";
  EXPECT_THROW(supervision_filter(m, t, unknown), Error);
  EXPECT_NO_THROW(supervision_filter(m, t, ab()));
}

// --- files --------------------------------------------------------------------

TEST(ManifestIo, EmptyIsHeaderOnly) {
  ScratchDir dir("man");
  Manifest m;
  m.header.seed = 5;
  write_manifest(m, dir / "m.jsonl");
  std::ifstream in(dir / "m.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 1);
  EXPECT_EQ(read_manifest(dir / "m.jsonl"), m);
}

TEST(ManifestIo, RoundTrip) {
  ScratchDir dir("man");
  BuildOptions opts;
  opts.seed = 0xFFFFFFFFFFFFFFF1ULL;
  opts.per_target = 3;
  opts.target_stride = 100;
  Manifest m = build_triplets(static_scene(16), "rt", opts);
  ASSERT_EQ(m.records.size(), 3u);
  m.records[1].label = 1;
  m.records[2].order_source = OrderSource::Supervision;
  m.records[2].pos.params = {0.25};
  m.header.scenes["rt"] = "/some/dir";
  write_manifest(m, dir / "m.jsonl");
  EXPECT_EQ(read_manifest(dir / "m.jsonl"), m);
  EXPECT_THROW(read_manifest(dir / "m.jsonl", true), Error);
}

TEST(ManifestIo, TruncatedLineNamesLine) {
  ScratchDir dir("man");
  BuildOptions opts;
  opts.target_stride = 100;
  write_manifest(build_triplets(static_scene(16), "tr", opts), dir / "m.jsonl");
  std::ifstream in(dir / "m.jsonl");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  text.resize(text.size() - 20);
  std::ofstream(dir / "bad.jsonl") << text;
  try {
    read_manifest(dir / "bad.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Parse);
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
}

TEST(ScoreTableIo, RoundTrip) {
  ScratchDir dir("scores");
  ScoreTable t;
  add_scores(t, "a", 0.1, 1.0 / 3.0, 1e-9, 123.456);
  write_score_table(t, dir / "s.csv");
  EXPECT_EQ(read_score_table(dir / "s.csv"), t);
  std::ifstream in(dir / "s.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "triplet_id,role,scorer,score,orientation");
  std::ofstream(dir / "bad.csv") << "triplet_id,role,scorer,score,orientation\na,pos,A,x,lower_better\n";
  EXPECT_THROW(read_score_table(dir / "bad.csv"), Error);
}

}  // namespace
}  // namespace naref
