// naref: command-line front end for the pipeline stages.
#include "naref/config.hpp"
#include "naref/corpus.hpp"
#include "naref/distort.hpp"
#include "naref/embed.hpp"
#include "naref/error.hpp"
#include "naref/evalkit.hpp"
#include "naref/flow.hpp"
#include "naref/pipeline.hpp"
#include "naref/score.hpp"
#include "naref/studysrv.hpp"
#include "naref/synthetic.hpp"
#include "naref/train.hpp"
#include "selftest.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace naref;

namespace {

struct Globals {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> jobs;
};

RunConfig resolve(const Globals& g) {
  std::vector<std::string> overrides = g.sets;
  if (g.seed) overrides.push_back("run.seed=" + std::to_string(*g.seed));
  if (g.jobs) overrides.push_back("run.jobs=" + std::to_string(*g.jobs));
  return load_run_config(g.config, overrides);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
}

// Directory outputs get dir/config.toml, file outputs get <file>.config.toml.
void snapshot_next_to(const RunConfig& cfg, const fs::path& out, bool is_dir) {
  write_text(is_dir ? out / "config.toml" : fs::path(out.string() + ".config.toml"), cfg.snapshot());
}

EmbeddingHead<float> load_head(const std::string& path, const RunConfig& cfg) {
  if (path.empty()) return TrainerState::initial(cfg.train).head.cast<float>();
  return read_checkpoint(path).head.cast<float>();
}

std::vector<Image> frames_for(const std::string& prev, const std::string& curr) {
  return {load_image(prev), load_image(curr)};
}

std::vector<TripletRecord> with_level_gap(const std::vector<TripletRecord>& records, int gap) {
  std::vector<TripletRecord> out;
  for (const auto& r : records)
    if (std::abs(r.pos.level - r.neg.level) >= gap) out.push_back(r);
  return out;
}

StudyServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"naref: non-aligned reference image quality toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "TOML run configuration")->check(CLI::ExistingFile);
  app.add_option("--set", g.sets, "Override a config key, section.key=value (repeatable)");
  app.add_option("--seed", g.seed, "Global seed (overrides run.seed)");
  app.add_option("--jobs", g.jobs, "Parallel width for the pure stages")->check(CLI::PositiveNumber);

  std::function<int()> action;

  // scenes synth
  auto* scenes = app.add_subcommand("scenes", "Synthetic scene frames")->require_subcommand(1);
  std::string scenes_out;
  auto* synth = scenes->add_subcommand("synth", "Write the configured synthetic scenes as PNG frames");
  synth->add_option("--out", scenes_out, "Output directory")->required();
  synth->callback([&] {
    action = [&] {
      const RunConfig cfg = resolve(g);
      for (const auto& [id, frames] : synthesize_scenes(cfg)) write_frames(frames, fs::path(scenes_out) / id);
      snapshot_next_to(cfg, scenes_out, true);
      return 0;
    };
  });

  // flow
  std::string prev, curr, out, magnitude_png;
  auto* flow = app.add_subcommand("flow", "Dense block-matching flow between two frames");
  flow->add_option("--prev", prev)->required()->check(CLI::ExistingFile);
  flow->add_option("--curr", curr)->required()->check(CLI::ExistingFile);
  flow->add_option("--out", out, "Flow field (binary)")->required();
  flow->add_option("--magnitude", magnitude_png, "Also write the magnitude as a PNG");
  flow->callback([&] {
    action = [&] {
      const RunConfig cfg = resolve(g);
      const auto f = frames_for(prev, curr);
      const FlowField field = estimate_flow(f[0], f[1], cfg.materialize.flow);
      write_flow(field, out);
      if (!magnitude_png.empty()) {
        Plane m = flow_magnitude(field);
        const float hi = m.maxCoeff();
        if (hi > 0) m /= hi;
        save_gray_png(m, magnitude_png);
      }
      snapshot_next_to(cfg, out, false);
      return 0;
    };
  });

  // troi
  double coverage = 0.5;
  bool no_cleanup = false;
  auto* troi = app.add_subcommand("troi", "Temporal region of interest mask from flow");
  troi->add_option("--prev", prev)->required()->check(CLI::ExistingFile);
  troi->add_option("--curr", curr)->required()->check(CLI::ExistingFile);
  troi->add_option("--coverage", coverage, "Fraction of pixels, 0.30 to 0.85")->capture_default_str();
  troi->add_flag("--no-cleanup", no_cleanup, "Skip the closing and small-component removal");
  troi->add_option("--out", out, "Mask PNG")->required();
  troi->callback([&] {
    action = [&] {
      const RunConfig cfg = resolve(g);
      const auto f = frames_for(prev, curr);
      TroiOptions opts;
      opts.cleanup = !no_cleanup;
      const TroiMask mask = troi_from_flow(flow_magnitude(estimate_flow(f[0], f[1], cfg.materialize.flow)),
                                           coverage, opts);
      save_mask_png(mask, out);
      std::printf("coverage %.4f (requested %.4f, %zu pixels before cleanup)\n", mask.coverage, coverage,
                  mask.pre_cleanup_count);
      snapshot_next_to(cfg, out, false);
      return 0;
    };
  });

  // distort
  std::string input, type_id;
  int level = 1;
  std::uint64_t distort_seed = 0;
  double distort_coverage = 1.0;
  bool list_types = false;
  auto* distort = app.add_subcommand("distort", "Apply a catalog distortion inside a mask");
  distort->add_flag("--list", list_types, "Print the catalog and exit");
  distort->add_option("--input", input)->check(CLI::ExistingFile);
  distort->add_option("--type", type_id);
  distort->add_option("--level", level)->check(CLI::Range(1, kDistortionLevels))->capture_default_str();
  distort->add_option("--coverage", distort_coverage, "1.0 distorts the whole frame")->capture_default_str();
  distort->add_option("--seed", distort_seed)->capture_default_str();
  distort->add_option("--prev", prev, "Previous frame; the mask then comes from flow")->check(CLI::ExistingFile);
  distort->add_option("--out", out);
  distort->callback([&] {
    action = [&] {
      if (list_types) {
        std::cout << catalog_to_csv(catalog_list());
        return 0;
      }
      if (input.empty() || type_id.empty() || out.empty()) {
        throw CLI::RequiredError("--input, --type and --out");
      }
      const RunConfig cfg = resolve(g);
      const Image img = load_image(input);
      TroiMask mask;
      TroiOptions any;
      any.allow_any_coverage = true;
      if (distort_coverage >= 1.0) {
        mask = uniform_mask(img.width(), img.height(), true);
      } else if (!prev.empty()) {
        mask = troi_from_flow(flow_magnitude(estimate_flow(load_image(prev), img, cfg.materialize.flow)),
                              distort_coverage, any);
      } else {
        // Without a previous frame, blobs from seeded smooth noise stand in for motion.
        mask = troi_from_flow(luma_plane(random_texture(img.width(), img.height(), distort_seed)),
                              distort_coverage, any);
      }
      mask = feather_mask(mask, cfg.materialize.feather_sigma);
      save_image(apply_masked(img, {type_id, level, distort_seed, {}}, mask), out);
      snapshot_next_to(cfg, out, false);
      return 0;
    };
  });

  // triplets build | score | filter
  auto* triplets = app.add_subcommand("triplets", "Triplet manifests")->require_subcommand(1);
  std::vector<std::string> frame_dirs;
  std::string manifest, scores_path;
  auto* build = triplets->add_subcommand("build", "Build triplets from frame directories (one per scene)");
  build->add_option("--frames", frame_dirs, "Frame directory; the scene id is its name")
      ->required()
      ->check(CLI::ExistingDirectory);
  build->add_option("--out", out, "Manifest (JSON Lines)")->required();
  build->callback([&] {
    action = [&] {
      const RunConfig cfg = resolve(g);
      std::vector<Manifest> parts;
      const fs::path base = fs::absolute(fs::path(out)).parent_path();
      for (const auto& dir : frame_dirs) {
        const std::string id = fs::path(dir).lexically_normal().filename().string();
        Manifest m = build_triplets(read_frames(dir), id.empty() ? fs::path(dir).parent_path().filename().string() : id,
                                    cfg.triplets);
        for (auto& [sid, path] : m.header.scenes) path = fs::relative(fs::absolute(dir), base).string();
        parts.push_back(std::move(m));
      }
      const Manifest man = merge_manifests(parts);
      write_manifest(man, out);
      std::printf("%zu triplets, %zu targets skipped\n", man.records.size(), man.skipped);
      snapshot_next_to(cfg, out, false);
      return 0;
    };
  });
  auto* score_cmd = triplets->add_subcommand("score", "Score pos and neg with the in-repo scorers");
  score_cmd->add_option("--manifest", manifest)->required();
  score_cmd->add_option("--out", out, "ScoreTable CSV")->required();
  score_cmd->callback([&] {
    action = [&] {
      const RunConfig cfg = resolve(g);
      const Manifest man = read_manifest(manifest, true);
      write_score_table(score_corpus(man, load_scenes(man), cfg.materialize), out);
      snapshot_next_to(cfg, out, false);
      return 0;
    };
  });
  auto* filter = triplets->add_subcommand("filter", "Keep triplets both scorers order confidently and alike");
  filter->add_option("--manifest", manifest)->required();
  filter->add_option("--scores", scores_path, "ScoreTable CSV")->required();
  filter->add_option("--out", out)->required();
  filter->callback([&] {
    action = [&] {
      const RunConfig cfg = resolve(g);
      const Manifest man = read_manifest(manifest);
      FilterReport rep;
      Manifest kept = supervision_filter(man, read_score_table(scores_path), cfg.filter, &rep);
      // keep scene directories valid relative to the new manifest
      const fs::path base = fs::absolute(fs::path(out)).parent_path();
      for (auto& [id, dir] : kept.header.scenes)
        if (!dir.empty()) dir = fs::relative(fs::absolute(dir), base).string();
      write_manifest(kept, out);
      std::printf("input %zu, kept %zu, ambiguous %zu, disagreement %zu, relabeled %zu\n", rep.input, rep.kept,
                  rep.dropped_ambiguous, rep.dropped_disagreement, rep.relabeled);
      snapshot_next_to(cfg, out, false);
      return 0;
    };
  });

  // embed
  std::string head_path;
  bool patches = false;
  auto* embed = app.add_subcommand("embed", "Embed an image with a head (NVEB output)");
  embed->add_option("--input", input)->required()->check(CLI::ExistingFile);
  embed->add_option("--head", head_path, "Checkpoint; the seeded initial head when omitted");
  embed->add_option("--out", out)->required();
  embed->add_flag("--patches", patches, "Write the patch grid instead of the pooled embedding");
  embed->callback([&] {
    action = [&] {
      const RunConfig cfg = resolve(g);
      const EmbeddingHead<float> head = load_head(head_path, cfg);
      const Image img = load_image(input);
      if (patches) {
        write_embeddings(embed_patches(img, head, cfg.train.patch_size), out);
      } else {
        write_embeddings(embed_image(img, head, cfg.train.patch_size), out);
      }
      snapshot_next_to(cfg, out, false);
      return 0;
    };
  });

  // train
  auto* train = app.add_subcommand("train", "Train the embedding head on a manifest");
  train->add_option("--manifest", manifest)->required();
  train->add_option("--out", out, "Checkpoint directory")->required();
  train->callback([&] {
    action = [&] {
      const RunConfig cfg = resolve(g);
      const Manifest man = read_manifest(manifest, true);
      const auto data =
          prepare_triplets(man.records, load_scenes(man), cfg.materialize, cfg.train.patch_size, cfg.jobs);
      fs::create_directories(out);
      snapshot_next_to(cfg, out, true);
      TrainOutput to;
      to.dir = out;
      to.on_epoch = [&](const Checkpoint& ck) {
        std::fprintf(stderr, "epoch %d/%d\r", ck.epoch + 1, cfg.train.epochs);
      };
      const TrainResult res = train_loop(data, cfg.train, to);
      const auto& last = res.log.back().loss;
      std::printf("\n%d epochs, final loss %.6f (triplet1 %.6f, triplet2 %.6f, kl %.6f)\n", res.epochs_run,
                  last.total, last.triplet1, last.triplet2, last.kl);
      return 0;
    };
  });

  // score
  std::string ref_path;
  std::vector<std::string> test_paths;
  std::string kind_name = "aligned";
  auto* score = app.add_subcommand("score", "Quality score of one image, or a 2AFC decision between two");
  score->add_option("--ref", ref_path)->required()->check(CLI::ExistingFile);
  score->add_option("--test", test_paths, "One or two distorted images")->required()->expected(1, 2)
      ->check(CLI::ExistingFile);
  score->add_option("--head", head_path);
  score->add_option("--kind", kind_name, "aligned or non-aligned")->capture_default_str();
  score->callback([&] {
    action = [&] {
      const RunConfig cfg = resolve(g);
      const EmbeddingHead<float> head = load_head(head_path, cfg);
      const ReferenceKind kind = parse_reference_kind(kind_name);
      auto emb = [&](const std::string& p) { return embed_image(load_image(p), head, cfg.train.patch_size); };
      const auto ref = emb(ref_path);
      if (test_paths.size() == 1) {
        const QualityScore q = quality_score(ref, emb(test_paths[0]), kind);
        std::printf("%.6f\t%s\n", q.value, to_string(q.reference_kind));
      } else {
        const TwoAfcDecision d = two_afc_decide(ref, emb(test_paths[0]), emb(test_paths[1]));
        std::printf("choice %d%s\tscores %.6f %.6f\n", d.choice, d.tie ? " (tie)" : "", d.score0, d.score1);
      }
      return 0;
    };
  });

  // heatmap
  std::string test_path;
  int scale = 14;
  auto* heatmap = app.add_subcommand("heatmap", "Patch mismatch heatmaps between a reference and a test image");
  heatmap->add_option("--ref", ref_path)->required()->check(CLI::ExistingFile);
  heatmap->add_option("--test", test_path)->required()->check(CLI::ExistingFile);
  heatmap->add_option("--head", head_path);
  heatmap->add_option("--scale", scale, "Pixels per patch cell in the PNGs")->capture_default_str();
  heatmap->add_option("--out", out, "Output prefix: <out>.reference.png, <out>.processed.png, <out>.csv")
      ->required();
  heatmap->callback([&] {
    action = [&] {
      const RunConfig cfg = resolve(g);
      const EmbeddingHead<float> head = load_head(head_path, cfg);
      const auto a = embed_patches(load_image(ref_path), head, cfg.train.patch_size);
      const auto b = embed_patches(load_image(test_path), head, cfg.train.patch_size);
      const MismatchHeatmap map = patch_mismatch_heatmap(a, b, cfg.heatmap);
      save_heatmap_png(map.reference, out + ".reference.png", scale);
      save_heatmap_png(map.processed, out + ".processed.png", scale);
      save_heatmap_csv(map, out + ".csv");
      snapshot_next_to(cfg, out, false);
      return 0;
    };
  });

  // eval
  std::string checkpoints, dmos_path, report_path, column = "score", orientation = "higher_better";
  auto* eval = app.add_subcommand("eval", "2AFC accuracy, flip rate, epoch window and DMOS correlation");
  eval->add_option("--manifest", manifest, "Labeled triplets to evaluate on");
  eval->add_option("--head", head_path, "One checkpoint");
  eval->add_option("--checkpoints", checkpoints, "Directory of epoch_*.nvck; the last is reported")
      ->check(CLI::ExistingDirectory);
  eval->add_option("--scores", scores_path, "Item scores CSV (item_id,<column>)");
  eval->add_option("--column", column)->capture_default_str();
  eval->add_option("--orientation", orientation, "higher_better or lower_better")->capture_default_str();
  eval->add_option("--dmos", dmos_path, "CSV item_id,dmos");
  eval->add_option("--out", report_path, "Report JSON");
  eval->callback([&] {
    action = [&] {
      const RunConfig cfg = resolve(g);
      EvalReport report;
      if (!manifest.empty()) {
        const Manifest man = read_manifest(manifest, true);
        const auto records = with_level_gap(man.records, cfg.eval.min_level_gap);
        if (records.empty()) throw Error(ErrorKind::InvalidArgument, "no triplets with the required level gap");
        const auto data = prepare_triplets(records, load_scenes(man), cfg.materialize, cfg.train.patch_size, cfg.jobs);
        std::vector<int> labels;
        for (const auto& r : records) labels.push_back(effective_label(r));
        std::vector<fs::path> heads;
        if (!checkpoints.empty()) {
          for (const auto& e : fs::directory_iterator(checkpoints))
            if (e.path().extension() == ".nvck") heads.push_back(e.path());
          std::sort(heads.begin(), heads.end());
          if (heads.empty()) throw Error(ErrorKind::NotFound, "no checkpoints in " + checkpoints);
        }
        std::vector<double> curve;
        for (const auto& h : heads)
          curve.push_back(evaluate_head(data, labels, read_checkpoint(h).head.cast<float>(), cfg.jobs).accuracy.accuracy);
        const std::string final_head = heads.empty() ? head_path : heads.back().string();
        report = evaluate_head(data, labels, load_head(final_head, cfg), cfg.jobs);
        report.model_id = final_head.empty() ? "initial-head" : fs::path(final_head).filename().string();
        report.manifest_id = fs::path(manifest).filename().string();
        if (!curve.empty()) {
          report.per_epoch_accuracy = curve;
          report.epoch_window = epoch_window_summary(curve, std::min<int>(cfg.eval.window, curve.size()));
        }
      }
      if (!scores_path.empty() || !dmos_path.empty()) {
        if (scores_path.empty() || dmos_path.empty()) throw CLI::RequiredError("--scores and --dmos together");
        const Orientation o = orientation == "lower_better" ? Orientation::LowerBetter
                              : orientation == "higher_better"
                                  ? Orientation::HigherBetter
                                  : throw Error(ErrorKind::InvalidArgument, "unknown orientation " + orientation);
        const JoinedScores j = join_scores(read_item_csv(scores_path, column), read_dmos(dmos_path));
        const auto s = oriented(j.scores, o);
        report.plcc = plcc(s, j.dmos);
        report.srcc = srcc(s, j.dmos);
        if (report.manifest_id.empty()) report.manifest_id = fs::path(dmos_path).filename().string();
        if (report.model_id.empty()) report.model_id = fs::path(scores_path).filename().string();
      }
      if (manifest.empty() && scores_path.empty()) throw CLI::RequiredError("--manifest or --scores/--dmos");
      std::cout << report_table(report);
      if (!report_path.empty()) {
        write_text(report_path, report_json(report));
        snapshot_next_to(cfg, report_path, false);
      }
      return 0;
    };
  });

  // study serve | export
  auto* study = app.add_subcommand("study", "Pairwise preference study")->require_subcommand(1);
  std::string votes_path, static_dir, host = "127.0.0.1";
  int port = 8080;
  auto* serve = study->add_subcommand("serve", "Serve the study API (and UI bundle, if given)");
  serve->add_option("--manifest", manifest)->required();
  serve->add_option("--votes", votes_path, "Vote log (JSON Lines); default <manifest>.votes.jsonl");
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--static", static_dir, "UI bundle directory mounted at /")->check(CLI::ExistingDirectory);
  serve->callback([&] {
    action = [&] {
      const RunConfig cfg = resolve(g);
      const Manifest man = read_manifest(manifest, true);
      StudyConfig sc = cfg.study;
      sc.materialize = cfg.materialize;
      Study st(man, load_scenes(man), votes_path.empty() ? manifest + ".votes.jsonl" : votes_path, sc);
      StudyServer server(st, static_dir);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::printf("serving %zu triplets on http://%s:%d/\n", st.triplet_ids().size(), host.c_str(), port);
      std::fflush(stdout);
      server.listen(host, port);
      g_server = nullptr;
      return 0;
    };
  });
  auto* exp = study->add_subcommand("export", "Aggregate votes into a labeled manifest");
  exp->add_option("--manifest", manifest)->required();
  exp->add_option("--votes", votes_path, "Vote log; default <manifest>.votes.jsonl");
  exp->add_option("--out", out, "Labeled manifest; tallies go to <out>.tallies.json")->required();
  exp->callback([&] {
    action = [&] {
      const RunConfig cfg = resolve(g);
      const Manifest man = read_manifest(manifest, true);
      StudyConfig sc = cfg.study;
      sc.materialize = cfg.materialize;
      Study st(man, load_scenes(man), votes_path.empty() ? manifest + ".votes.jsonl" : votes_path, sc);
      st.export_labels(out);
      const Aggregation a = st.aggregate();
      std::printf("labeled %zu, excluded %zu, pending %zu\n", a.labeled, a.excluded, a.pending);
      snapshot_next_to(cfg, out, false);
      return 0;
    };
  });

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "Synthesize, build, filter, train and evaluate in one run");
  pipeline->add_option("--out", out, "Output directory")->required();
  pipeline->callback([&] {
    action = [&] {
      const RunConfig cfg = resolve(g);
      const PipelineResult r = run_pipeline(cfg, out);
      std::printf("%zu triplets built, %zu kept, %zu train, %zu held-out\n", r.built.records.size(), r.filter.kept,
                  r.split.train.size(), r.split.test.size());
      std::cout << report_table(r.report);
      return 0;
    };
  });

  // selftest
  bool full = false;
  std::string scratch;
  auto* selftest_cmd = app.add_subcommand("selftest", "Gradient checks and oracle suites");
  selftest_cmd->add_flag("--full", full, "Also run the toy training gate and the replay check");
  selftest_cmd->add_option("--scratch", scratch, "Directory for --full artifacts");
  selftest_cmd->callback([&] {
    action = [&] {
      bool ok = true;
      auto run = [&](const std::vector<selftest::Check>& checks) {
        for (const auto& c : checks) {
          const auto r = selftest::run_check(c);
          std::printf("%s\n", selftest::format_result(r).c_str());
          std::fflush(stdout);
          ok &= r.pass;
        }
      };
      run(selftest::oracle_checks());
      if (full) {
        const fs::path dir = scratch.empty() ? fs::temp_directory_path() / "naref-selftest" : fs::path(scratch);
        run(selftest::pipeline_checks(dir / "pipeline", g.jobs.value_or(3)));
        run(selftest::study_checks(dir / "study"));
        if (scratch.empty()) fs::remove_all(dir);
      }
      return ok ? 0 : 1;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "naref: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    return action ? action() : 2;
  } catch (const CLI::RequiredError& e) {
    std::cerr << "naref: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "naref: error: " << e.what() << "\n";
    return 1;
  }
}
