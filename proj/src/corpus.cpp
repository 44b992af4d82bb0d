#include "naref/corpus.hpp"

#include "naref/error.hpp"
#include "naref/parallel.hpp"
#include "naref/rng.hpp"
#include "naref/synthetic.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace naref {

using nlohmann::json;

namespace {

std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void check_same_size(const Image& a, const Image& b, const char* what) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw Error(ErrorKind::ShapeMismatch, std::string(what) + ": image dimensions differ");
  }
}

struct GuardTable {
  std::vector<double> diffs;  // diffs[t] = frames t -> t+1
  double threshold;

  bool blocked(int i, int j) const {
    for (int t = std::min(i, j); t < std::max(i, j); ++t)
      if (diffs[static_cast<std::size_t>(t)] > threshold) return true;
    return false;
  }
};

// Valid-region correlation with a separable kernel.
Eigen::ArrayXXd filter_valid(const Eigen::ArrayXXd& p, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int w = static_cast<int>(p.cols());
  const int h = static_cast<int>(p.rows());
  Eigen::ArrayXXd tmp(h, w - n + 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x + n <= w; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[i] * p(y, x + i);
      tmp(y, x) = acc;
    }
  Eigen::ArrayXXd out(h - n + 1, w - n + 1);
  for (int y = 0; y + n <= h; ++y)
    for (int x = 0; x < w - n + 1; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[i] * tmp(y + i, x);
      out(y, x) = acc;
    }
  return out;
}

const std::vector<double>& ssim_window() {
  static const std::vector<double> k = [] {
    std::vector<double> v(11);
    double total = 0.0;
    for (int i = 0; i < 11; ++i) total += v[i] = std::exp(-((i - 5) * (i - 5)) / (2.0 * 1.5 * 1.5));
    for (double& x : v) x /= total;
    return v;
  }();
  return k;
}

Plane prewitt_magnitude(const Plane& p) {
  const int w = static_cast<int>(p.cols());
  const int h = static_cast<int>(p.rows());
  auto at = [&](int y, int x) { return static_cast<double>(p(std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1))); };
  Plane g(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double gx = 0.0;
      double gy = 0.0;
      for (int d = -1; d <= 1; ++d) {
        gx += at(y + d, x - 1) - at(y + d, x + 1);
        gy += at(y - 1, x + d) - at(y + 1, x + d);
      }
      g(y, x) = static_cast<float>(std::sqrt(gx * gx + gy * gy) / 3.0);
    }
  return g;
}

json spec_to_json(const DistortionSpec& s) {
  return {{"type_id", s.type_id}, {"level", s.level}, {"seed", s.seed}, {"params", s.params}};
}

DistortionSpec spec_from_json(const json& j) {
  DistortionSpec s;
  s.type_id = j.at("type_id").get<std::string>();
  s.level = j.at("level").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.params = j.value("params", std::vector<double>{});
  return s;
}

json record_to_json(const TripletRecord& r) {
  json j = {{"id", r.id},
            {"scene_id", r.scene_id},
            {"target_index", r.target_index},
            {"reference_index", r.reference_index},
            {"k", r.k},
            {"pos", spec_to_json(r.pos)},
            {"neg", spec_to_json(r.neg)},
            {"troi_coverage", r.troi_coverage},
            {"mask_seed", r.mask_seed},
            {"order_source", to_string(r.order_source)}};
  j["label"] = r.label ? json(*r.label) : json(nullptr);
  return j;
}

TripletRecord record_from_json(const json& j) {
  TripletRecord r;
  r.id = j.at("id").get<std::string>();
  r.scene_id = j.at("scene_id").get<std::string>();
  r.target_index = j.at("target_index").get<int>();
  r.reference_index = j.at("reference_index").get<int>();
  r.k = j.at("k").get<int>();
  r.pos = spec_from_json(j.at("pos"));
  r.neg = spec_from_json(j.at("neg"));
  r.troi_coverage = j.at("troi_coverage").get<double>();
  r.mask_seed = j.at("mask_seed").get<std::uint64_t>();
  const auto src = j.at("order_source").get<std::string>();
  if (src == "construction") r.order_source = OrderSource::Construction;
  else if (src == "supervision") r.order_source = OrderSource::Supervision;
  else throw Error(ErrorKind::Parse, "unknown order_source '" + src + "'");
  if (j.contains("label") && !j.at("label").is_null()) {
    const int label = j.at("label").get<int>();
    if (label != 0 && label != 1) throw Error(ErrorKind::Parse, "label must be 0 or 1");
    r.label = label;
  }
  if (r.k < 1 || std::abs(r.reference_index - r.target_index) != r.k) {
    throw Error(ErrorKind::Parse, "record " + r.id + ": reference distance does not match k");
  }
  return r;
}

}  // namespace

std::string to_string(OrderSource s) { return s == OrderSource::Construction ? "construction" : "supervision"; }

std::string to_string(Orientation o) { return o == Orientation::LowerBetter ? "lower_better" : "higher_better"; }

Orientation orientation_from_string(const std::string& s) {
  if (s == "lower_better") return Orientation::LowerBetter;
  if (s == "higher_better") return Orientation::HigherBetter;
  throw Error(ErrorKind::Parse, "unknown orientation '" + s + "'");
}

double mean_abs_luma_diff(const Image& a, const Image& b) {
  check_same_size(a, b, "mean_abs_luma_diff");
  return (luma_plane(a) - luma_plane(b)).abs().cast<double>().mean();
}

bool scene_change_guard(const std::vector<Image>& frames, int i, int j, double threshold) {
  const int n = static_cast<int>(frames.size());
  if (i < 0 || j < 0 || i >= n || j >= n) throw Error(ErrorKind::InvalidArgument, "scene_change_guard: index out of range");
  for (int t = std::min(i, j); t < std::max(i, j); ++t)
    if (mean_abs_luma_diff(frames[t], frames[t + 1]) > threshold) return true;
  return false;
}

Manifest build_triplets(const std::vector<Image>& frames, const std::string& scene_id, const BuildOptions& opts) {
  const int n = static_cast<int>(frames.size());
  if (n < 16) throw Error(ErrorKind::InvalidArgument, "build_triplets: need at least 16 frames, got " + std::to_string(n));
  if (opts.per_target < 1 || opts.target_stride < 1 || opts.max_k < 1) {
    throw Error(ErrorKind::InvalidArgument, "build_triplets: per_target, target_stride and max_k must be positive");
  }
  if (!(opts.coverage_min > 0.0 && opts.coverage_min <= opts.coverage_max && opts.coverage_max < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "build_triplets: coverage range must satisfy 0 < min <= max < 1");
  }
  GuardTable guard{std::vector<double>(static_cast<std::size_t>(n - 1)), opts.scene_threshold};
  parallel_for(guard.diffs.size(), opts.jobs,
               [&](std::size_t t) { guard.diffs[t] = mean_abs_luma_diff(frames[t], frames[t + 1]); });

  std::vector<int> targets;
  for (int t = 1; t < n; t += opts.target_stride) targets.push_back(t);
  const auto& catalog = catalog_list();

  struct Slot {
    std::vector<TripletRecord> records;
    std::size_t skipped = 0;
  };
  std::vector<Slot> slots(targets.size());
  parallel_for(targets.size(), opts.jobs, [&](std::size_t s) {
    const int i = targets[s];
    Rng rng(derive_seed(opts.seed, {fnv1a64(scene_id), static_cast<std::uint64_t>(i)}));
    for (int j = 0; j < opts.per_target; ++j) {
      std::optional<int> ref;
      int k = 0;
      for (int attempt = 0; attempt < opts.max_attempts && !ref; ++attempt) {
        k = rng.uniform_int(1, opts.max_k);
        int r = rng.coin() ? i + k : i - k;
        if (r < 0) r = i + k;
        if (r >= n) r = i - k;
        if (r < 0 || r >= n || guard.blocked(i, r)) continue;
        ref = r;
      }
      // Distortion draws happen even for skipped records so later records of
      // the same target do not depend on which attempts succeeded.
      const CatalogEntry& type = catalog[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(catalog.size()) - 1))];
      const double coverage = rng.uniform(opts.coverage_min, opts.coverage_max);
      const int a = rng.uniform_int(1, kDistortionLevels);
      int b = rng.uniform_int(1, kDistortionLevels - 1);
      if (b >= a) ++b;
      const std::uint64_t mask_seed = rng.next();
      if (!ref) {
        ++slots[s].skipped;
        continue;
      }
      TripletRecord rec;
      char id[32];
      std::snprintf(id, sizeof id, "-%04d-%d", i, j);
      rec.id = scene_id + id;
      rec.scene_id = scene_id;
      rec.target_index = i;
      rec.reference_index = *ref;
      rec.k = k;
      const std::uint64_t noise_seed = derive_seed(mask_seed, {1});
      rec.pos = {type.type_id, std::min(a, b), noise_seed, {}};
      rec.neg = {type.type_id, std::max(a, b), noise_seed, {}};
      rec.troi_coverage = coverage;
      rec.mask_seed = mask_seed;
      slots[s].records.push_back(std::move(rec));
    }
  });

  Manifest man;
  man.header.seed = opts.seed;
  man.header.per_target = opts.per_target;
  man.header.scene_threshold = opts.scene_threshold;
  man.header.target_stride = opts.target_stride;
  man.header.scenes[scene_id] = "";
  for (auto& slot : slots) {
    man.skipped += slot.skipped;
    for (auto& r : slot.records) man.records.push_back(std::move(r));
  }
  return man;
}

Manifest merge_manifests(const std::vector<Manifest>& parts) {
  Manifest out;
  if (parts.empty()) return out;
  out.header = parts.front().header;
  out.header.scenes.clear();
  std::set<std::string> ids;
  for (const auto& p : parts) {
    ManifestHeader h = p.header;
    h.scenes = out.header.scenes;
    if (!(h == out.header)) throw Error(ErrorKind::InvalidArgument, "merge_manifests: headers disagree");
    for (const auto& [id, dir] : p.header.scenes) {
      if (!out.header.scenes.emplace(id, dir).second) {
        throw Error(ErrorKind::InvalidArgument, "merge_manifests: scene '" + id + "' appears twice");
      }
    }
    for (const auto& r : p.records) {
      if (!ids.insert(r.id).second) throw Error(ErrorKind::InvalidArgument, "duplicate triplet id " + r.id);
      out.records.push_back(r);
    }
    out.skipped += p.skipped;
  }
  return out;
}

TroiMask target_mask(const std::vector<Image>& frames, int target, double coverage, const MaterializeOptions& opts) {
  const int n = static_cast<int>(frames.size());
  if (target < 0 || target >= n || n < 2) throw Error(ErrorKind::InvalidArgument, "target_mask: target out of range");
  const Image& curr = frames[target];
  if (!opts.use_troi) return feather_mask(uniform_mask(curr.width(), curr.height(), true), opts.feather_sigma);
  const Image& prev = frames[target > 0 ? target - 1 : 1];
  const FlowField flow = estimate_flow(prev, curr, opts.flow);
  return feather_mask(troi_from_flow(flow_magnitude(flow), coverage), opts.feather_sigma);
}

TripletImages materialize(const std::vector<Image>& frames, const TripletRecord& rec, const MaterializeOptions& opts) {
  const int n = static_cast<int>(frames.size());
  if (rec.target_index < 0 || rec.target_index >= n || rec.reference_index < 0 || rec.reference_index >= n) {
    throw Error(ErrorKind::InvalidArgument, "materialize: record " + rec.id + " indexes outside the scene");
  }
  const TroiMask mask = target_mask(frames, rec.target_index, rec.troi_coverage, opts);
  const Image& target = frames[rec.target_index];
  return {frames[rec.reference_index], target, apply_masked(target, rec.pos, mask),
          apply_masked(target, rec.neg, mask)};
}

std::vector<TripletImages> materialize_scene(const std::vector<Image>& frames,
                                             const std::vector<TripletRecord>& records,
                                             const MaterializeOptions& opts) {
  // Flow is the expensive part; compute it once per target.
  std::map<int, Plane> magnitudes;
  std::vector<TripletImages> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    if (rec.target_index < 1 || rec.target_index >= static_cast<int>(frames.size()) || rec.reference_index < 0 ||
        rec.reference_index >= static_cast<int>(frames.size())) {
      out.push_back(materialize(frames, rec, opts));
      continue;
    }
    const Image& target = frames[rec.target_index];
    TroiMask mask;
    if (opts.use_troi) {
      auto it = magnitudes.find(rec.target_index);
      if (it == magnitudes.end()) {
        const FlowField flow = estimate_flow(frames[rec.target_index - 1], target, opts.flow);
        it = magnitudes.emplace(rec.target_index, flow_magnitude(flow)).first;
      }
      mask = feather_mask(troi_from_flow(it->second, rec.troi_coverage), opts.feather_sigma);
    } else {
      mask = feather_mask(uniform_mask(target.width(), target.height(), true), opts.feather_sigma);
    }
    out.push_back({frames[rec.reference_index], target, apply_masked(target, rec.pos, mask),
                   apply_masked(target, rec.neg, mask)});
  }
  return out;
}

double ssim(const Image& ref, const Image& test) {
  check_same_size(ref, test, "ssim");
  if (ref.width() < 11 || ref.height() < 11) throw Error(ErrorKind::InvalidArgument, "ssim: image smaller than 11x11 window");
  const Eigen::ArrayXXd x = luma_plane(ref).cast<double>();
  const Eigen::ArrayXXd y = luma_plane(test).cast<double>();
  const auto& k = ssim_window();
  const Eigen::ArrayXXd mx = filter_valid(x, k);
  const Eigen::ArrayXXd my = filter_valid(y, k);
  const Eigen::ArrayXXd sxx = filter_valid(x * x, k) - mx * mx;
  const Eigen::ArrayXXd syy = filter_valid(y * y, k) - my * my;
  const Eigen::ArrayXXd sxy = filter_valid(x * y, k) - mx * my;
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const Eigen::ArrayXXd map =
      ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
  return map.mean();
}

double gmsd(const Image& ref, const Image& test) {
  check_same_size(ref, test, "gmsd");
  const Eigen::ArrayXXd g1 = prewitt_magnitude(luma_plane(ref)).cast<double>();
  const Eigen::ArrayXXd g2 = prewitt_magnitude(luma_plane(test)).cast<double>();
  constexpr double c = 0.0026;
  const Eigen::ArrayXXd gms = (2.0 * g1 * g2 + c) / (g1 * g1 + g2 * g2 + c);
  const double mean = gms.mean();
  return std::sqrt((gms - mean).square().mean());
}

ScoreTable score_triplets(const std::vector<TripletRecord>& records, const std::vector<TripletImages>& images) {
  if (records.size() != images.size()) throw Error(ErrorKind::InvalidArgument, "score_triplets: size mismatch");
  ScoreTable t;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& im = images[i];
    t.push_back({records[i].id, "pos", "ssim", ssim(im.target, im.pos), Orientation::HigherBetter});
    t.push_back({records[i].id, "neg", "ssim", ssim(im.target, im.neg), Orientation::HigherBetter});
    t.push_back({records[i].id, "pos", "gmsd", gmsd(im.target, im.pos), Orientation::LowerBetter});
    t.push_back({records[i].id, "neg", "gmsd", gmsd(im.target, im.neg), Orientation::LowerBetter});
  }
  return t;
}

void write_score_table(const ScoreTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << "triplet_id,role,scorer,score,orientation\n";
  for (const auto& r : table)
    out << r.triplet_id << ',' << r.role << ',' << r.scorer << ',' << shortest(r.score) << ','
        << to_string(r.orientation) << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

ScoreTable read_score_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "triplet_id,role,scorer,score,orientation") {
    throw Error(ErrorKind::Parse, path.string() + ": missing score table header");
  }
  ScoreTable t;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    const std::string where = path.string() + " line " + std::to_string(line_no);
    if (cells.size() != 5) throw Error(ErrorKind::Parse, where + ": expected 5 fields");
    if (cells[1] != "pos" && cells[1] != "neg") throw Error(ErrorKind::Parse, where + ": role must be pos or neg");
    ScoreRow r{cells[0], cells[1], cells[2], 0.0, orientation_from_string(cells[4])};
    const auto res = std::from_chars(cells[3].data(), cells[3].data() + cells[3].size(), r.score);
    if (res.ec != std::errc() || res.ptr != cells[3].data() + cells[3].size()) {
      throw Error(ErrorKind::Parse, where + ": bad score '" + cells[3] + "'");
    }
    t.push_back(std::move(r));
  }
  return t;
}

Manifest supervision_filter(const Manifest& man, const ScoreTable& scores, const FilterOptions& opts,
                            FilterReport* report) {
  // (triplet, scorer) -> {pos, neg} in lower-is-better units.
  struct Pair {
    std::optional<double> pos, neg;
  };
  std::unordered_map<std::string, std::unordered_map<std::string, Pair>> table;
  std::set<std::string> scorers;
  for (const auto& r : scores) {
    scorers.insert(r.scorer);
    const double v = r.orientation == Orientation::HigherBetter ? -r.score : r.score;
    Pair& p = table[r.triplet_id][r.scorer];
    (r.role == "pos" ? p.pos : p.neg) = v;
  }
  for (const auto& s : {opts.scorer_a, opts.scorer_b}) {
    if (!scorers.count(s)) throw Error(ErrorKind::InvalidArgument, "unknown scorer '" + s + "'");
  }
  auto gap = [&](const std::string& id, const std::string& scorer) {
    const auto t = table.find(id);
    if (t == table.end()) throw Error(ErrorKind::NotFound, "no scores for triplet " + id);
    const auto s = t->second.find(scorer);
    if (s == t->second.end() || !s->second.pos || !s->second.neg) {
      throw Error(ErrorKind::NotFound, "missing " + scorer + " score for triplet " + id);
    }
    return *s->second.pos - *s->second.neg;  // > 0: neg is better
  };

  FilterReport rep;
  Manifest out;
  out.header = man.header;
  for (const auto& rec : man.records) {
    ++rep.input;
    const double ga = gap(rec.id, opts.scorer_a);
    const double gb = gap(rec.id, opts.scorer_b);
    if (std::abs(ga) < opts.tau_a || std::abs(gb) < opts.tau_b) {
      ++rep.dropped_ambiguous;
      continue;
    }
    if ((ga > 0) != (gb > 0) || ga == 0 || gb == 0) {
      ++rep.dropped_disagreement;
      continue;
    }
    TripletRecord kept = rec;
    if (ga > 0) {
      std::swap(kept.pos, kept.neg);
      ++rep.relabeled;
    }
    kept.order_source = OrderSource::Supervision;
    out.records.push_back(std::move(kept));
    ++rep.kept;
  }
  if (report) *report = rep;
  return out;
}

std::string manifest_to_jsonl(const Manifest& man) {
  json header = {{"format", "naref-manifest"},
                 {"version", man.header.version},
                 {"seed", man.header.seed},
                 {"per_target", man.header.per_target},
                 {"scene_threshold", man.header.scene_threshold},
                 {"target_stride", man.header.target_stride},
                 {"scenes", man.header.scenes}};
  std::string out = header.dump() + '\n';
  for (const auto& r : man.records) out += record_to_json(r).dump() + '\n';
  return out;
}

void write_manifest(const Manifest& man, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << manifest_to_jsonl(man);
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path, bool resolve_files) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  Manifest man;
  std::set<std::string> ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = path.string() + " line " + std::to_string(line_no);
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (line_no == 1) {
        if (j.value("format", "") != "naref-manifest") throw Error(ErrorKind::Format, "not a manifest header");
        man.header.version = j.at("version").get<int>();
        if (man.header.version != kManifestVersion) throw Error(ErrorKind::Format, "unsupported manifest version");
        man.header.seed = j.at("seed").get<std::uint64_t>();
        man.header.per_target = j.at("per_target").get<int>();
        man.header.scene_threshold = j.at("scene_threshold").get<double>();
        man.header.target_stride = j.at("target_stride").get<int>();
        man.header.scenes = j.at("scenes").get<std::map<std::string, std::string>>();
        continue;
      }
      TripletRecord r = record_from_json(j);
      if (!ids.insert(r.id).second) throw Error(ErrorKind::Parse, "duplicate triplet id " + r.id);
      man.records.push_back(std::move(r));
    } catch (const Error& e) {
      throw Error(e.kind(), where + ": " + e.what());
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Parse, where + ": " + e.what());
    }
  }
  if (line_no == 0) throw Error(ErrorKind::Parse, path.string() + ": empty manifest file");
  for (auto& [id, dir] : man.header.scenes) {
    if (!dir.empty() && std::filesystem::path(dir).is_relative()) {
      dir = (path.parent_path() / dir).lexically_normal().string();
    }
  }
  if (resolve_files) {
    for (const auto& [id, dir] : man.header.scenes)
      if (dir.empty() || !std::filesystem::is_directory(dir)) {
        throw Error(ErrorKind::NotFound, "scene '" + id + "' frame directory not found: " + dir);
      }
  }
  return man;
}

std::map<std::string, std::vector<Image>> load_scenes(const Manifest& man) {
  std::map<std::string, std::vector<Image>> scenes;
  for (const auto& [id, dir] : man.header.scenes) {
    if (dir.empty()) throw Error(ErrorKind::NotFound, "scene '" + id + "' has no frame directory");
    scenes.emplace(id, read_frames(dir));
  }
  return scenes;
}

}  // namespace naref
