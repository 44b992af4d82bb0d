#pragma once

#include "naref/corpus.hpp"
#include "naref/score.hpp"
#include "naref/studysrv.hpp"
#include "naref/train.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>

namespace naref {

// --- TOML subset ------------------------------------------------------------------
//
// [section] headers, `key = value` with string, integer, float or boolean
// values, and # comments. Arrays and inline tables are rejected.

using ConfigValue = std::variant<bool, std::int64_t, double, std::string>;
/// Keys are "section.key" (or "key" before the first header).
using ConfigTable = std::map<std::string, ConfigValue>;

ConfigTable parse_config(const std::string& text, const std::string& source = "<config>");
ConfigTable load_config(const std::filesystem::path& path);

// --- run configuration --------------------------------------------------------------

struct SceneConfig {
  int count = 5;
  int width = 128;
  int height = 96;
  int frames = 48;
  /// The last `heldout` scenes are used for evaluation only.
  int heldout = 1;
};

struct EvalConfig {
  int window = 10;
  int min_level_gap = 2;
};

struct RunConfig {
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  SceneConfig scenes;
  BuildOptions triplets;
  MaterializeOptions materialize;
  FilterOptions filter;
  TrainerConfig train;
  EvalConfig eval;
  StudyConfig study;
  HeatmapOptions heatmap;

  /// Defaults with seed 7 and the small-run learning rate (data/toy.toml).
  static RunConfig toy();

  /// Overrides fields from `table`; unknown keys and type mismatches throw
  /// InvalidArgument naming the key.
  void apply(const ConfigTable& table);
  /// Parses "section.key=value" (the value in TOML syntax, bare strings allowed).
  void apply_override(const std::string& assignment);
  /// Propagates seed and jobs into the module option structs.
  void resolve();
  /// Every field, in a form `parse_config` reads back to the same values.
  std::string snapshot() const;
};

/// Defaults, then the file (if any), then overrides; resolved.
RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides = {});

}  // namespace naref
