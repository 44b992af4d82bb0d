#include "naref/evalkit.hpp"

#include "naref/error.hpp"
#include "naref/parallel.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace naref {

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw Error(ErrorKind::ShapeMismatch, std::string(what) + ": length mismatch");
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    out.push_back(cell);
  }
  return out;
}

nlohmann::json accuracy_json(const AccuracyResult& a) {
  nlohmann::json per_scene = nlohmann::json::object();
  for (const auto& [scene, s] : a.per_scene)
    per_scene[scene] = {{"samples", s.samples}, {"correct", s.correct}, {"accuracy", s.accuracy}};
  return {{"accuracy", a.accuracy}, {"samples", a.samples}, {"correct", a.correct}, {"ties", a.ties},
          {"per_scene", per_scene}};
}

}  // namespace

AccuracyResult two_afc_accuracy(const std::vector<TwoAfcDecision>& decisions, const std::vector<int>& labels,
                                const std::vector<std::string>& scenes) {
  require_same_length(decisions.size(), labels.size(), "two_afc_accuracy");
  if (!scenes.empty()) require_same_length(decisions.size(), scenes.size(), "two_afc_accuracy");
  if (decisions.empty()) throw Error(ErrorKind::InvalidArgument, "two_afc_accuracy: no samples");
  AccuracyResult r;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw Error(ErrorKind::InvalidArgument, "two_afc_accuracy: labels must be 0 or 1");
    const bool ok = decisions[i].choice == labels[i];
    auto& s = r.per_scene[scenes.empty() ? std::string() : scenes[i]];
    ++s.samples;
    ++r.samples;
    if (ok) {
      ++s.correct;
      ++r.correct;
    }
    if (decisions[i].tie) ++r.ties;
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.samples);
  for (auto& [_, s] : r.per_scene) s.accuracy = static_cast<double>(s.correct) / static_cast<double>(s.samples);
  return r;
}

double plcc(const std::vector<double>& x, const std::vector<double>& y) {
  require_same_length(x.size(), y.size(), "plcc");
  if (x.size() < 3) throw Error(ErrorKind::InvalidArgument, "plcc: need at least 3 samples");
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0) || !(syy > 0)) throw Error(ErrorKind::InvalidArgument, "plcc: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double srcc(const std::vector<double>& x, const std::vector<double>& y) {
  require_same_length(x.size(), y.size(), "srcc");
  if (x.size() < 3) throw Error(ErrorKind::InvalidArgument, "srcc: need at least 3 samples");
  try {
    return plcc(average_ranks(x), average_ranks(y));
  } catch (const Error&) {
    throw Error(ErrorKind::InvalidArgument, "srcc: all ranks tied");
  }
}

double flip_rate(const std::vector<int>& aligned, const std::vector<int>& non_aligned) {
  require_same_length(aligned.size(), non_aligned.size(), "flip_rate");
  if (aligned.empty()) throw Error(ErrorKind::InvalidArgument, "flip_rate: no samples");
  std::size_t flips = 0;
  for (std::size_t i = 0; i < aligned.size(); ++i) flips += aligned[i] != non_aligned[i];
  return static_cast<double>(flips) / static_cast<double>(aligned.size());
}

double flip_rate(const std::vector<TwoAfcDecision>& aligned, const std::vector<TwoAfcDecision>& non_aligned) {
  auto choices = [](const std::vector<TwoAfcDecision>& d) {
    std::vector<int> c;
    for (const auto& x : d) c.push_back(x.choice);
    return c;
  };
  return flip_rate(choices(aligned), choices(non_aligned));
}

WindowSummary epoch_window_summary(const std::vector<double>& per_epoch, int window) {
  if (window < 1) throw Error(ErrorKind::InvalidArgument, "epoch window must be >= 1");
  if (per_epoch.size() < static_cast<std::size_t>(window)) {
    throw Error(ErrorKind::InvalidArgument, "epoch window of " + std::to_string(window) + " needs at least that many epochs, got " +
                                                std::to_string(per_epoch.size()));
  }
  const auto first = per_epoch.end() - window;
  WindowSummary s;
  s.window = window;
  s.mean = std::accumulate(first, per_epoch.end(), 0.0) / window;
  double ss = 0;
  for (auto it = first; it != per_epoch.end(); ++it) ss += (*it - s.mean) * (*it - s.mean);
  s.std = std::sqrt(ss / window);
  return s;
}

std::vector<double> oriented(const std::vector<double>& scores, Orientation o) {
  std::vector<double> out(scores);
  if (o == Orientation::LowerBetter)
    for (double& v : out) v = -v;
  return out;
}

std::map<std::string, double> read_item_csv(const std::filesystem::path& path, const std::string& value_column) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw Error(ErrorKind::Parse, path.string() + ": empty file");
  const auto header = split_csv(line);
  const auto id_col = std::find(header.begin(), header.end(), "item_id");
  const auto value_col = std::find(header.begin(), header.end(), value_column);
  if (id_col == header.end() || value_col == header.end()) {
    throw Error(ErrorKind::Parse, path.string() + ": header needs item_id and " + value_column);
  }
  const auto ic = static_cast<std::size_t>(id_col - header.begin());
  const auto vc = static_cast<std::size_t>(value_col - header.begin());
  std::map<std::string, double> out;
  for (int lineno = 2; std::getline(f, line); ++lineno) {
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    auto fail = [&](const std::string& msg) {
      throw Error(ErrorKind::Parse, path.string() + " line " + std::to_string(lineno) + ": " + msg);
    };
    if (cells.size() <= std::max(ic, vc)) fail("missing columns");
    double v = 0;
    try {
      std::size_t used = 0;
      v = std::stod(cells[vc], &used);
      if (used != cells[vc].size()) fail("bad number '" + cells[vc] + "'");
    } catch (const std::logic_error&) {
      fail("bad number '" + cells[vc] + "'");
    }
    if (!out.emplace(cells[ic], v).second) fail("duplicate item_id '" + cells[ic] + "'");
  }
  return out;
}

std::map<std::string, double> read_dmos(const std::filesystem::path& path) { return read_item_csv(path, "dmos"); }

JoinedScores join_scores(const std::map<std::string, double>& scores, const std::map<std::string, double>& dmos) {
  JoinedScores j;
  for (const auto& [id, s] : scores) {
    const auto it = dmos.find(id);
    if (it == dmos.end()) continue;
    j.ids.push_back(id);
    j.scores.push_back(s);
    j.dmos.push_back(it->second);
  }
  return j;
}

int effective_label(const TripletRecord& rec) { return rec.label.value_or(0); }

std::vector<TwoAfcDecision> decide_triplets(const std::vector<TrainingTriplet>& data, const EmbeddingHead<float>& head,
                                            ReferenceKind kind, unsigned jobs) {
  std::vector<TwoAfcDecision> out(data.size());
  parallel_for(data.size(), jobs, [&](std::size_t i) {
    const auto& t = data[i];
    auto emb = [&](const PatchFeatures& f) { return image_embedding(head_forward(f, head)); };
    const auto ref = emb(kind == ReferenceKind::Aligned ? t.target : t.reference);
    out[i] = two_afc_decide(ref, emb(t.pos), emb(t.neg));
  });
  return out;
}

EvalReport evaluate_head(const std::vector<TrainingTriplet>& data, const std::vector<int>& labels,
                         const EmbeddingHead<float>& head, unsigned jobs) {
  std::vector<std::string> scenes;
  for (const auto& t : data) scenes.push_back(t.scene_id);
  const auto aligned = decide_triplets(data, head, ReferenceKind::Aligned, jobs);
  const auto non_aligned = decide_triplets(data, head, ReferenceKind::NonAligned, jobs);
  EvalReport r;
  r.reference_kind = ReferenceKind::Aligned;
  r.accuracy = two_afc_accuracy(aligned, labels, scenes);
  r.non_aligned = two_afc_accuracy(non_aligned, labels, scenes);
  r.flip_rate = flip_rate(aligned, non_aligned);
  return r;
}

std::string report_json(const EvalReport& r) {
  nlohmann::json j;
  j["model_id"] = r.model_id;
  j["manifest_id"] = r.manifest_id;
  j["reference_kind"] = to_string(r.reference_kind);
  if (r.accuracy.samples > 0) j["accuracy"] = accuracy_json(r.accuracy);
  if (r.non_aligned) j["non_aligned"] = accuracy_json(*r.non_aligned);
  if (r.flip_rate) j["flip_rate"] = *r.flip_rate;
  if (r.plcc) j["plcc"] = *r.plcc;
  if (r.srcc) j["srcc"] = *r.srcc;
  if (r.epoch_window) j["epoch_window"] = {{"window", r.epoch_window->window}, {"mean", r.epoch_window->mean}, {"std", r.epoch_window->std}};
  if (!r.per_epoch_accuracy.empty()) j["per_epoch_accuracy"] = r.per_epoch_accuracy;
  return j.dump(2) + "\n";
}

std::string report_table(const EvalReport& r) {
  std::ostringstream os;
  char buf[160];
  auto row = [&](const std::string& key, const std::string& value) {
    std::snprintf(buf, sizeof buf, "%-22s %s\n", key.c_str(), value.c_str());
    os << buf;
  };
  auto num = [&](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.4f", v);
    return std::string(b);
  };
  if (!r.model_id.empty()) row("model", r.model_id);
  if (!r.manifest_id.empty()) row("manifest", r.manifest_id);
  auto accuracy_rows = [&](const std::string& label, const AccuracyResult& a) {
    row(label + " accuracy", num(a.accuracy) + "  (" + std::to_string(a.correct) + "/" + std::to_string(a.samples) +
                                 ", ties " + std::to_string(a.ties) + ")");
    for (const auto& [scene, s] : a.per_scene)
      row("  " + (scene.empty() ? std::string("(all)") : scene), num(s.accuracy) + "  (" + std::to_string(s.correct) + "/" +
                                                                        std::to_string(s.samples) + ")");
  };
  if (r.accuracy.samples > 0) accuracy_rows(to_string(r.reference_kind), r.accuracy);
  if (r.non_aligned) accuracy_rows("non_aligned", *r.non_aligned);
  if (r.flip_rate) row("flip rate", num(*r.flip_rate));
  if (r.plcc) row("plcc", num(*r.plcc));
  if (r.srcc) row("srcc", num(*r.srcc));
  if (r.epoch_window)
    row("last " + std::to_string(r.epoch_window->window) + " epochs",
        num(r.epoch_window->mean) + " +/- " + num(r.epoch_window->std));
  return os.str();
}

}  // namespace naref
