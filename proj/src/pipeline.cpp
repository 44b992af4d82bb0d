#include "naref/pipeline.hpp"

#include "naref/error.hpp"
#include "naref/rng.hpp"
#include "naref/synthetic.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

namespace naref {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
}

std::vector<int> labels_of(const std::vector<TripletRecord>& records) {
  std::vector<int> labels;
  labels.reserve(records.size());
  for (const auto& r : records) labels.push_back(effective_label(r));
  return labels;
}

}  // namespace

std::vector<SceneSpec> scene_specs(const RunConfig& cfg) {
  std::vector<SceneSpec> specs;
  for (int s = 0; s < cfg.scenes.count; ++s) {
    SceneSpec sp;
    char id[32];
    std::snprintf(id, sizeof id, "scene%02d", s);
    sp.id = id;
    sp.width = cfg.scenes.width;
    sp.height = cfg.scenes.height;
    sp.frames = cfg.scenes.frames;
    sp.seed = derive_seed(cfg.seed, {fnv1a64("scene"), static_cast<std::uint64_t>(s)});
    // a mix of horizontal and diagonal pans
    sp.pan_x = 1 + s % 2;
    sp.pan_y = s % 3 == 0 ? 1 : 0;
    specs.push_back(sp);
  }
  return specs;
}

std::set<std::string> heldout_scene_ids(const RunConfig& cfg) {
  const auto specs = scene_specs(cfg);
  std::set<std::string> ids;
  for (std::size_t i = specs.size() - static_cast<std::size_t>(cfg.scenes.heldout); i < specs.size(); ++i)
    ids.insert(specs[i].id);
  return ids;
}

SceneFrames synthesize_scenes(const RunConfig& cfg) {
  SceneFrames scenes;
  for (const auto& sp : scene_specs(cfg)) scenes.emplace(sp.id, synthesize_scene(sp));
  return scenes;
}

Manifest build_corpus(const SceneFrames& scenes, const BuildOptions& opts) {
  std::vector<Manifest> parts;
  for (const auto& [id, frames] : scenes) parts.push_back(build_triplets(frames, id, opts));
  return merge_manifests(parts);
}

ScoreTable score_corpus(const Manifest& man, const SceneFrames& scenes, const MaterializeOptions& opts) {
  std::map<std::string, std::vector<TripletRecord>> by_scene;
  for (const auto& r : man.records) by_scene[r.scene_id].push_back(r);
  std::map<std::string, ScoreTable> tables;
  for (const auto& [id, records] : by_scene) {
    const auto it = scenes.find(id);
    if (it == scenes.end()) throw Error(ErrorKind::NotFound, "no frames for scene '" + id + "'");
    tables[id] = score_triplets(records, materialize_scene(it->second, records, opts));
  }
  // back in manifest order
  std::map<std::string, std::size_t> cursor;
  ScoreTable out;
  for (const auto& r : man.records) {
    const ScoreTable& t = tables[r.scene_id];
    std::size_t& c = cursor[r.scene_id];
    while (c < t.size() && t[c].triplet_id == r.id) out.push_back(t[c++]);
  }
  return out;
}

DataSplit split_heldout(const Manifest& man, const std::set<std::string>& heldout, int min_level_gap) {
  DataSplit split;
  for (const auto& r : man.records) {
    if (!heldout.count(r.scene_id)) {
      split.train.push_back(r);
    } else if (std::abs(r.pos.level - r.neg.level) >= min_level_gap) {
      split.test.push_back(r);
    }
  }
  return split;
}

PipelineResult run_pipeline(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  const bool write = !out_dir.empty();
  if (write) {
    std::filesystem::create_directories(out_dir);
    write_text(out_dir / "config.toml", cfg.snapshot());
  }

  PipelineResult res;
  const SceneFrames scenes = synthesize_scenes(cfg);
  res.built = build_corpus(scenes, cfg.triplets);
  if (write) {
    for (const auto& [id, frames] : scenes) {
      write_frames(frames, out_dir / "scenes" / id);
      res.built.header.scenes[id] = "scenes/" + id;
    }
  }

  res.scores = score_corpus(res.built, scenes, cfg.materialize);
  res.filtered = supervision_filter(res.built, res.scores, cfg.filter, &res.filter);
  res.split = split_heldout(res.filtered, heldout_scene_ids(cfg), cfg.eval.min_level_gap);
  if (res.split.train.empty()) throw Error(ErrorKind::InvalidArgument, "no training triplets survived filtering");
  if (res.split.test.empty()) throw Error(ErrorKind::InvalidArgument, "held-out split is empty");

  if (write) {
    write_manifest(res.built, out_dir / "triplets.jsonl");
    write_score_table(res.scores, out_dir / "scores.csv");
    write_manifest(res.filtered, out_dir / "filtered.jsonl");
    Manifest test = res.filtered;
    test.records = res.split.test;
    write_manifest(test, out_dir / "heldout.jsonl");
  }

  const auto train_data = prepare_triplets(res.split.train, scenes, cfg.materialize, cfg.train.patch_size, cfg.jobs);
  const auto test_data = prepare_triplets(res.split.test, scenes, cfg.materialize, cfg.train.patch_size, cfg.jobs);
  const std::vector<int> labels = labels_of(res.split.test);

  std::vector<double> aligned_curve;
  TrainOutput out;
  if (write) out.dir = out_dir / "train";
  out.on_epoch = [&](const Checkpoint& ck) {
    const EvalReport r = evaluate_head(test_data, labels, ck.head.cast<float>(), cfg.jobs);
    aligned_curve.push_back(r.accuracy.accuracy);
    res.per_epoch_non_aligned.push_back(r.non_aligned->accuracy);
  };
  res.training = train_loop(train_data, cfg.train, out);

  res.report = evaluate_head(test_data, labels, res.training.final_state.head.cast<float>(), cfg.jobs);
  res.report.model_id = "toy-head/epoch_" + std::to_string(res.training.epochs_run - 1);
  res.report.manifest_id = "heldout.jsonl";
  res.report.per_epoch_accuracy = aligned_curve;
  res.report.epoch_window = epoch_window_summary(aligned_curve, std::min<int>(cfg.eval.window, aligned_curve.size()));

  if (write) {
    write_text(out_dir / "report.json", report_json(res.report));
    write_text(out_dir / "report.txt", report_table(res.report));
  }
  return res;
}

}  // namespace naref
