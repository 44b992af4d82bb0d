#pragma once

#include "naref/corpus.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace naref {

struct VoteRecord {
  std::string triplet_id;
  std::string rater_id;
  int choice = 0;               // canonical manifest order: 0 = pos preferred
  std::int64_t timestamp = 0;   // UTC milliseconds
  bool swapped = false;         // presentation order shown to the rater
  std::optional<std::int64_t> dwell_ms;
  std::string idempotency_key;
};

struct StudyConfig {
  int min_raters = 5;
  double theta = 0.8;
  /// Also expose the aligned target frame in triplet descriptors.
  bool show_aligned = false;
  MaterializeOptions materialize;
};

enum class TallyStatus { Pending, Labeled, Excluded };

const char* to_string(TallyStatus s) noexcept;

struct TripletTally {
  std::string triplet_id;
  int count0 = 0;
  int count1 = 0;
  TallyStatus status = TallyStatus::Pending;
  std::optional<int> label;
  double agreement = 0.0;  // max(count0, count1) / total, 0 when no votes

  int total() const noexcept { return count0 + count1; }
};

struct Aggregation {
  std::vector<TripletTally> tallies;  // manifest id order
  std::size_t labeled = 0;
  std::size_t excluded = 0;
  std::size_t pending = 0;
};

/// Majority rule over effective votes (one per rater and triplet).
Aggregation aggregate_votes(const std::vector<std::string>& triplet_ids, const std::vector<VoteRecord>& effective,
                            int min_raters, double theta);

/// Latest vote per (rater, triplet): greatest timestamp, ties to the later log entry.
std::vector<VoteRecord> effective_votes(const std::vector<VoteRecord>& log);

/// Deterministic left/right swap for a (rater, triplet) pair.
bool presentation_swapped(const std::string& rater_id, const std::string& triplet_id);

nlohmann::json vote_to_json(const VoteRecord& v);
VoteRecord vote_from_json(const nlohmann::json& j);

/// Replays a JSON Lines vote log. A torn final line (no newline) is ignored;
/// any other malformed line is a Parse error naming the line.
std::vector<VoteRecord> read_vote_log(const std::filesystem::path& path);

/// Study state: manifest, append-only vote log, image cache.
class Study {
 public:
  Study(Manifest manifest, std::map<std::string, std::vector<Image>> scenes, std::filesystem::path vote_log,
        StudyConfig config = {});
  ~Study();
  Study(const Study&) = delete;
  Study& operator=(const Study&) = delete;

  const StudyConfig& config() const noexcept { return config_; }
  const std::vector<std::string>& triplet_ids() const noexcept { return ids_; }
  bool has_triplet(const std::string& id) const;

  /// Descriptor of the lowest-id triplet the rater has not voted on, or
  /// {"done": true}. Never carries distortion metadata.
  nlohmann::json assign_next(const std::string& rater_id);
  /// Descriptor for one triplet as presented to `rater_id`.
  nlohmann::json describe(const std::string& triplet_id, const std::string& rater_id);

  /// Appends and fsyncs before returning. A repeated idempotency key returns
  /// the original record without writing. Throws NotFound / InvalidArgument.
  VoteRecord record_vote(VoteRecord vote);

  std::vector<VoteRecord> votes() const;
  Aggregation aggregate() const;
  nlohmann::json progress(const std::string& rater_id = {}) const;

  /// Labeled manifest (excluded and pending omitted) and the tally sidecar.
  Manifest labeled_manifest() const;
  nlohmann::json tallies_json() const;
  /// Writes `path` and `path` + ".tallies.json".
  void export_labels(const std::filesystem::path& path) const;

  /// PNG bytes by content hash, or nullptr.
  std::shared_ptr<const std::vector<std::uint8_t>> image(const std::string& hash) const;

 private:
  struct TripletImagesRef {
    std::string reference, target, pos, neg;
  };
  const TripletImagesRef& images_for(const std::string& id);
  nlohmann::json descriptor(const std::string& id, const std::string& rater_id);
  std::size_t voted_count(const std::string& rater_id) const;

  Manifest manifest_;
  std::map<std::string, std::vector<Image>> scenes_;
  std::filesystem::path log_path_;
  StudyConfig config_;
  std::vector<std::string> ids_;
  std::map<std::string, std::size_t> index_;

  mutable std::mutex votes_mutex_;
  int log_fd_ = -1;
  std::vector<VoteRecord> log_;
  std::map<std::string, std::set<std::string>> voted_;  // rater -> triplets
  std::map<std::string, std::size_t> idempotency_;      // key -> log index
  std::int64_t last_timestamp_ = 0;

  mutable std::mutex images_mutex_;
  std::map<std::string, TripletImagesRef> triplet_images_;
  std::map<std::string, std::shared_ptr<const std::vector<std::uint8_t>>> png_cache_;
};

/// HTTP front end. Endpoints live under /api/v1 and /img; `static_dir`, when
/// given, is mounted at /.
class StudyServer {
 public:
  StudyServer(Study& study, std::filesystem::path static_dir = {});
  ~StudyServer();
  StudyServer(const StudyServer&) = delete;
  StudyServer& operator=(const StudyServer&) = delete;

  /// Binds and serves on a background thread; port 0 picks a free port.
  /// Returns the bound port.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace naref
