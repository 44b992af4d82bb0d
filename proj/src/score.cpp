#include "naref/score.hpp"

#include "naref/error.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace naref {

namespace {

template <typename Scalar>
void require_unit(const Embedding<Scalar>& e, const char* what) {
  const double n = static_cast<double>(e.values.norm());
  if (e.values.size() == 0 || std::abs(n - 1.0) > kUnitTolerance) {
    throw Error(ErrorKind::InvalidArgument, std::string(what) + ": embedding is not unit-normalized");
  }
}

RowMatrix<double> unit_rows(const RowMatrix<double>& m) {
  RowMatrix<double> out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.row(r) = normalize_or_e1(m.row(r).transpose()).transpose();
  return out;
}

// Min-max normalizes `best` within one direction and inverts it.
Eigen::VectorXd invert_normalized(const Eigen::VectorXd& best, double eps) {
  const double lo = best.minCoeff();
  const double hi = best.maxCoeff();
  if (hi - lo <= eps) return Eigen::VectorXd::Zero(best.size());
  return (1.0 - ((best.array() - lo) / (hi - lo))).matrix();
}

}  // namespace

const char* to_string(ReferenceKind kind) noexcept {
  return kind == ReferenceKind::Aligned ? "aligned" : "non_aligned";
}

ReferenceKind parse_reference_kind(const std::string& s) {
  if (s == "aligned") return ReferenceKind::Aligned;
  if (s == "non_aligned" || s == "non-aligned") return ReferenceKind::NonAligned;
  throw Error(ErrorKind::InvalidArgument, "unknown reference kind '" + s + "'");
}

template <typename Scalar>
QualityScore quality_score(const Embedding<Scalar>& ref, const Embedding<Scalar>& test, ReferenceKind kind) {
  require_unit(ref, "quality_score");
  require_unit(test, "quality_score");
  if (ref.values.size() != test.values.size()) {
    throw Error(ErrorKind::ShapeMismatch, "quality_score: dimension mismatch");
  }
  const double v = ref.values.template cast<double>().dot(test.values.template cast<double>());
  return {std::clamp(v, -1.0, 1.0), kind};
}

template <typename Scalar>
TwoAfcDecision two_afc_decide(const Embedding<Scalar>& ref, const Embedding<Scalar>& d0, const Embedding<Scalar>& d1) {
  TwoAfcDecision d;
  d.score0 = quality_score(ref, d0).value;
  d.score1 = quality_score(ref, d1).value;
  d.tie = d.score0 == d.score1;
  d.choice = d.score1 > d.score0 ? 1 : 0;
  return d;
}

template <typename Scalar>
MismatchHeatmap patch_mismatch_heatmap(const PatchEmbeddings<Scalar>& ref, const PatchEmbeddings<Scalar>& processed,
                                       const HeatmapOptions& opts) {
  if (ref.count() == 0 || processed.count() == 0) throw Error(ErrorKind::InvalidArgument, "heatmap: empty patch grid");
  if (ref.dim() != processed.dim()) throw Error(ErrorKind::ShapeMismatch, "heatmap: channel dimension mismatch");
  if (ref.grid_h * ref.grid_w != ref.count() || processed.grid_h * processed.grid_w != processed.count()) {
    throw Error(ErrorKind::ShapeMismatch, "heatmap: grid shape does not match patch count");
  }
  if (!(opts.beta > 1.0)) throw Error(ErrorKind::InvalidArgument, "heatmap: beta must be > 1");

  const RowMatrix<double> a = unit_rows(ref.rows.template cast<double>());
  const RowMatrix<double> b = unit_rows(processed.rows.template cast<double>());
  const Eigen::MatrixXd S = a * b.transpose();

  MismatchHeatmap out;
  out.beta = opts.beta;
  auto& R = out.reference;
  auto& P = out.processed;
  R.grid_h = ref.grid_h;
  R.grid_w = ref.grid_w;
  P.grid_h = processed.grid_h;
  P.grid_w = processed.grid_w;
  const Eigen::Index na = S.rows();
  const Eigen::Index nb = S.cols();
  R.best_similarity.resize(na);
  R.match.resize(na);
  P.best_similarity.resize(nb);
  P.match.resize(nb);
  // Strict comparisons keep the lowest index on ties.
  for (Eigen::Index i = 0; i < na; ++i) {
    Eigen::Index arg = 0;
    for (Eigen::Index j = 1; j < nb; ++j)
      if (S(i, j) > S(i, arg)) arg = j;
    R.match(i) = static_cast<int>(arg);
    R.best_similarity(i) = S(i, arg);
  }
  for (Eigen::Index j = 0; j < nb; ++j) {
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < na; ++i)
      if (S(i, j) > S(arg, j)) arg = i;
    P.match(j) = static_cast<int>(arg);
    P.best_similarity(j) = S(arg, j);
  }
  R.reciprocal.resize(static_cast<std::size_t>(na));
  P.reciprocal.resize(static_cast<std::size_t>(nb));
  for (Eigen::Index i = 0; i < na; ++i) R.reciprocal[static_cast<std::size_t>(i)] = P.match(R.match(i)) == i;
  for (Eigen::Index j = 0; j < nb; ++j) P.reciprocal[static_cast<std::size_t>(j)] = R.match(P.match(j)) == j;

  for (MismatchDirection* d : {&R, &P}) {
    d->mismatch = invert_normalized(d->best_similarity, opts.eps);
    d->penalized = d->mismatch;
    for (Eigen::Index k = 0; k < d->penalized.size(); ++k)
      if (!d->reciprocal[static_cast<std::size_t>(k)]) d->penalized(k) *= opts.beta;
  }

  const double lo = std::min(R.penalized.minCoeff(), P.penalized.minCoeff());
  const double hi = std::max(R.penalized.maxCoeff(), P.penalized.maxCoeff());
  for (MismatchDirection* d : {&R, &P}) {
    d->values = Eigen::ArrayXXd::Zero(d->grid_h, d->grid_w);
    if (hi - lo <= opts.eps) continue;
    for (int y = 0; y < d->grid_h; ++y)
      for (int x = 0; x < d->grid_w; ++x) {
        const double v = (d->penalized(y * d->grid_w + x) - lo) / (hi - lo + opts.eps);
        d->values(y, x) = std::clamp(v, 0.0, 1.0);
      }
  }
  return out;
}

template QualityScore quality_score(const Embedding<float>&, const Embedding<float>&, ReferenceKind);
template QualityScore quality_score(const Embedding<double>&, const Embedding<double>&, ReferenceKind);
template TwoAfcDecision two_afc_decide(const Embedding<float>&, const Embedding<float>&, const Embedding<float>&);
template TwoAfcDecision two_afc_decide(const Embedding<double>&, const Embedding<double>&, const Embedding<double>&);
template MismatchHeatmap patch_mismatch_heatmap(const PatchEmbeddings<float>&, const PatchEmbeddings<float>&,
                                                const HeatmapOptions&);
template MismatchHeatmap patch_mismatch_heatmap(const PatchEmbeddings<double>&, const PatchEmbeddings<double>&,
                                                const HeatmapOptions&);

Plane heatmap_plane(const MismatchDirection& dir, int scale) {
  if (scale < 1) throw Error(ErrorKind::InvalidArgument, "heatmap scale must be >= 1");
  Plane p(dir.grid_h * scale, dir.grid_w * scale);
  for (int y = 0; y < p.rows(); ++y)
    for (int x = 0; x < p.cols(); ++x) p(y, x) = static_cast<float>(dir.values(y / scale, x / scale));
  return p;
}

void save_heatmap_png(const MismatchDirection& dir, const std::filesystem::path& path, int scale) {
  save_gray_png(heatmap_plane(dir, scale), path);
}

void save_heatmap_csv(const MismatchHeatmap& map, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorKind::Io, "cannot write " + path.string());
  f << "direction,row,col,best_similarity,match,reciprocal,value\n";
  char buf[160];
  auto emit = [&](const char* name, const MismatchDirection& d) {
    for (int y = 0; y < d.grid_h; ++y)
      for (int x = 0; x < d.grid_w; ++x) {
        const int k = y * d.grid_w + x;
        std::snprintf(buf, sizeof buf, "%s,%d,%d,%.9g,%d,%d,%.9g\n", name, y, x, d.best_similarity(k), d.match(k),
                      d.reciprocal[static_cast<std::size_t>(k)] ? 1 : 0, d.values(y, x));
        f << buf;
      }
  };
  emit("reference", map.reference);
  emit("processed", map.processed);
  if (!f) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

}  // namespace naref
