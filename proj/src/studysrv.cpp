#include "naref/studysrv.hpp"

#include "naref/error.hpp"
#include "naref/rng.hpp"

#include <httplib.h>

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <thread>

namespace naref {

using nlohmann::json;

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_all(int fd, const std::string& s, const std::filesystem::path& path) {
  const char* p = s.data();
  std::size_t left = s.size();
  while (left > 0) {
    const ssize_t n = ::write(fd, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorKind::Io, "vote log write failed: " + path.string() + ": " + std::strerror(errno));
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
}

}  // namespace

const char* to_string(TallyStatus s) noexcept {
  switch (s) {
    case TallyStatus::Labeled: return "labeled";
    case TallyStatus::Excluded: return "excluded";
    default: return "pending";
  }
}

std::vector<VoteRecord> effective_votes(const std::vector<VoteRecord>& log) {
  std::map<std::pair<std::string, std::string>, std::size_t> latest;
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto key = std::make_pair(log[i].rater_id, log[i].triplet_id);
    const auto it = latest.find(key);
    if (it == latest.end() || log[i].timestamp >= log[it->second].timestamp) latest[key] = i;
  }
  std::vector<std::size_t> keep;
  for (const auto& [_, i] : latest) keep.push_back(i);
  std::sort(keep.begin(), keep.end());
  std::vector<VoteRecord> out;
  for (std::size_t i : keep) out.push_back(log[i]);
  return out;
}

Aggregation aggregate_votes(const std::vector<std::string>& triplet_ids, const std::vector<VoteRecord>& effective,
                            int min_raters, double theta) {
  std::map<std::string, TripletTally> by_id;
  for (const auto& id : triplet_ids) by_id[id].triplet_id = id;
  for (const auto& v : effective) {
    const auto it = by_id.find(v.triplet_id);
    if (it == by_id.end()) continue;
    (v.choice == 0 ? it->second.count0 : it->second.count1)++;
  }
  Aggregation agg;
  for (const auto& id : triplet_ids) {
    TripletTally t = by_id[id];
    const int total = t.total();
    t.agreement = total > 0 ? static_cast<double>(std::max(t.count0, t.count1)) / total : 0.0;
    if (total < min_raters) {
      t.status = TallyStatus::Pending;
      ++agg.pending;
    } else if (t.agreement >= theta && t.count0 != t.count1) {
      t.status = TallyStatus::Labeled;
      t.label = t.count0 > t.count1 ? 0 : 1;
      ++agg.labeled;
    } else {
      t.status = TallyStatus::Excluded;
      ++agg.excluded;
    }
    agg.tallies.push_back(std::move(t));
  }
  return agg;
}

bool presentation_swapped(const std::string& rater_id, const std::string& triplet_id) {
  return (mix64(fnv1a64(rater_id) ^ mix64(fnv1a64(triplet_id) + 0x9E37)) >> 17) & 1u;
}

json vote_to_json(const VoteRecord& v) {
  json j = {{"triplet_id", v.triplet_id}, {"rater_id", v.rater_id}, {"choice", v.choice},
            {"timestamp", v.timestamp},   {"swapped", v.swapped}};
  if (v.dwell_ms) j["dwell_ms"] = *v.dwell_ms;
  if (!v.idempotency_key.empty()) j["idempotency_key"] = v.idempotency_key;
  return j;
}

VoteRecord vote_from_json(const json& j) {
  VoteRecord v;
  v.triplet_id = j.at("triplet_id").get<std::string>();
  v.rater_id = j.at("rater_id").get<std::string>();
  v.choice = j.at("choice").get<int>();
  v.timestamp = j.value("timestamp", std::int64_t{0});
  v.swapped = j.value("swapped", false);
  if (j.contains("dwell_ms") && !j["dwell_ms"].is_null()) v.dwell_ms = j["dwell_ms"].get<std::int64_t>();
  v.idempotency_key = j.value("idempotency_key", std::string());
  return v;
}

std::vector<VoteRecord> read_vote_log(const std::filesystem::path& path) {
  std::vector<VoteRecord> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t start = 0;
  int line_no = 0;
  while (start < text.size()) {
    const std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) break;  // torn tail from an interrupted append
    ++line_no;
    const std::string line = text.substr(start, nl - start);
    start = nl + 1;
    if (line.empty()) continue;
    try {
      out.push_back(vote_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Parse, path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// --- Study ------------------------------------------------------------------------

Study::Study(Manifest manifest, std::map<std::string, std::vector<Image>> scenes, std::filesystem::path vote_log,
             StudyConfig config)
    : manifest_(std::move(manifest)), scenes_(std::move(scenes)), log_path_(std::move(vote_log)), config_(config) {
  if (config_.min_raters < 1) throw Error(ErrorKind::InvalidArgument, "min_raters must be >= 1");
  if (!(config_.theta > 0.5 && config_.theta <= 1.0)) throw Error(ErrorKind::InvalidArgument, "theta must be in (0.5, 1]");
  for (std::size_t i = 0; i < manifest_.records.size(); ++i) {
    const auto& r = manifest_.records[i];
    if (!scenes_.count(r.scene_id)) throw Error(ErrorKind::NotFound, "no frames for scene '" + r.scene_id + "'");
    index_[r.id] = i;
    ids_.push_back(r.id);
  }
  std::sort(ids_.begin(), ids_.end());

  log_ = read_vote_log(log_path_);
  for (std::size_t i = 0; i < log_.size(); ++i) {
    const auto& v = log_[i];
    voted_[v.rater_id].insert(v.triplet_id);
    if (!v.idempotency_key.empty()) idempotency_.emplace(v.idempotency_key, i);
    last_timestamp_ = std::max(last_timestamp_, v.timestamp);
  }
  // Drop a torn tail so the next append starts on a fresh line.
  if (std::filesystem::exists(log_path_)) {
    std::ifstream in(log_path_, std::ios::binary);
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t keep = text.rfind('\n') == std::string::npos ? 0 : text.rfind('\n') + 1;
    if (keep != text.size()) std::filesystem::resize_file(log_path_, keep);
  } else if (log_path_.has_parent_path()) {
    std::filesystem::create_directories(log_path_.parent_path());
  }
  log_fd_ = ::open(log_path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (log_fd_ < 0) throw Error(ErrorKind::Io, "cannot open vote log " + log_path_.string() + ": " + std::strerror(errno));
}

Study::~Study() {
  if (log_fd_ >= 0) ::close(log_fd_);
}

bool Study::has_triplet(const std::string& id) const { return index_.count(id) > 0; }

const Study::TripletImagesRef& Study::images_for(const std::string& id) {
  std::lock_guard lock(images_mutex_);
  const auto found = triplet_images_.find(id);
  if (found != triplet_images_.end()) return found->second;
  const TripletRecord& rec = manifest_.records[index_.at(id)];
  const TripletImages imgs = materialize(scenes_.at(rec.scene_id), rec, config_.materialize);
  auto put = [&](const Image& img) {
    auto bytes = std::make_shared<const std::vector<std::uint8_t>>(encode_png(img));
    std::string hash = hex64(fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes->data()), bytes->size())));
    png_cache_.emplace(hash, std::move(bytes));
    return hash;
  };
  TripletImagesRef ref{put(imgs.reference), put(imgs.target), put(imgs.pos), put(imgs.neg)};
  return triplet_images_.emplace(id, std::move(ref)).first->second;
}

std::size_t Study::voted_count(const std::string& rater_id) const {
  const auto it = voted_.find(rater_id);
  return it == voted_.end() ? 0 : it->second.size();
}

json Study::descriptor(const std::string& id, const std::string& rater_id) {
  const TripletImagesRef& imgs = images_for(id);
  const bool swapped = presentation_swapped(rater_id, id);
  auto url = [](const std::string& h) { return "/img/" + h + ".png"; };
  json j = {{"done", false},
            {"triplet_id", id},
            {"reference", url(imgs.reference)},
            {"candidates", swapped ? json::array({url(imgs.neg), url(imgs.pos)}) : json::array({url(imgs.pos), url(imgs.neg)})},
            {"permutation", swapped ? "swap" : "identity"}};
  if (config_.show_aligned) j["aligned_reference"] = url(imgs.target);
  std::lock_guard lock(votes_mutex_);
  j["progress"] = {{"done", voted_count(rater_id)}, {"total", ids_.size()}};
  return j;
}

json Study::assign_next(const std::string& rater_id) {
  std::string next;
  std::size_t done = 0;
  {
    std::lock_guard lock(votes_mutex_);
    const auto it = voted_.find(rater_id);
    for (const auto& id : ids_) {
      if (it == voted_.end() || !it->second.count(id)) {
        next = id;
        break;
      }
    }
    done = voted_count(rater_id);
  }
  if (next.empty()) return {{"done", true}, {"progress", {{"done", done}, {"total", ids_.size()}}}};
  return descriptor(next, rater_id);
}

json Study::describe(const std::string& triplet_id, const std::string& rater_id) {
  if (!has_triplet(triplet_id)) throw Error(ErrorKind::NotFound, "unknown triplet '" + triplet_id + "'");
  return descriptor(triplet_id, rater_id);
}

VoteRecord Study::record_vote(VoteRecord vote) {
  if (!has_triplet(vote.triplet_id)) throw Error(ErrorKind::NotFound, "unknown triplet '" + vote.triplet_id + "'");
  if (vote.rater_id.empty()) throw Error(ErrorKind::InvalidArgument, "rater_id must not be empty");
  if (vote.choice != 0 && vote.choice != 1) throw Error(ErrorKind::InvalidArgument, "choice must be 0 or 1");
  std::lock_guard lock(votes_mutex_);
  if (!vote.idempotency_key.empty()) {
    const auto it = idempotency_.find(vote.idempotency_key);
    if (it != idempotency_.end()) return log_[it->second];
  }
  vote.swapped = presentation_swapped(vote.rater_id, vote.triplet_id);
  if (vote.timestamp <= 0) vote.timestamp = std::max(now_ms(), last_timestamp_);
  write_all(log_fd_, vote_to_json(vote).dump() + "\n", log_path_);
  if (::fsync(log_fd_) != 0) throw Error(ErrorKind::Io, "fsync failed on " + log_path_.string());
  last_timestamp_ = std::max(last_timestamp_, vote.timestamp);
  log_.push_back(vote);
  voted_[vote.rater_id].insert(vote.triplet_id);
  if (!vote.idempotency_key.empty()) idempotency_.emplace(vote.idempotency_key, log_.size() - 1);
  return vote;
}

std::vector<VoteRecord> Study::votes() const {
  std::lock_guard lock(votes_mutex_);
  return log_;
}

Aggregation Study::aggregate() const {
  return aggregate_votes(ids_, effective_votes(votes()), config_.min_raters, config_.theta);
}

json Study::progress(const std::string& rater_id) const {
  const Aggregation agg = aggregate();
  std::lock_guard lock(votes_mutex_);
  json raters = json::object();
  for (const auto& [r, set] : voted_) raters[r] = set.size();
  std::size_t effective = 0;
  for (const auto& [_, set] : voted_) effective += set.size();
  json j = {{"triplets", ids_.size()},   {"votes", effective},         {"log_entries", log_.size()},
            {"raters", raters},          {"labeled", agg.labeled},     {"excluded", agg.excluded},
            {"pending", agg.pending},    {"min_raters", config_.min_raters}, {"theta", config_.theta}};
  if (!rater_id.empty()) j["rater"] = {{"id", rater_id}, {"done", voted_count(rater_id)}, {"total", ids_.size()}};
  return j;
}

Manifest Study::labeled_manifest() const {
  const Aggregation agg = aggregate();
  Manifest out;
  out.header = manifest_.header;
  for (const auto& t : agg.tallies) {
    if (t.status != TallyStatus::Labeled) continue;
    TripletRecord rec = manifest_.records[index_.at(t.triplet_id)];
    rec.label = t.label;
    out.records.push_back(std::move(rec));
  }
  return out;
}

json Study::tallies_json() const {
  const Aggregation agg = aggregate();
  json list = json::array();
  for (const auto& t : agg.tallies) {
    list.push_back({{"triplet_id", t.triplet_id},
                    {"votes", {t.count0, t.count1}},
                    {"total", t.total()},
                    {"agreement", t.agreement},
                    {"status", to_string(t.status)},
                    {"label", t.label ? json(*t.label) : json(nullptr)}});
  }
  return {{"min_raters", config_.min_raters}, {"theta", config_.theta}, {"labeled", agg.labeled},
          {"excluded", agg.excluded},         {"pending", agg.pending}, {"triplets", list}};
}

void Study::export_labels(const std::filesystem::path& path) const {
  write_manifest(labeled_manifest(), path);
  std::ofstream side(path.string() + ".tallies.json");
  if (!side) throw Error(ErrorKind::Io, "cannot write " + path.string() + ".tallies.json");
  side << tallies_json().dump(2) << '\n';
  if (!side) throw Error(ErrorKind::Io, "write failed: " + path.string() + ".tallies.json");
}

std::shared_ptr<const std::vector<std::uint8_t>> Study::image(const std::string& hash) const {
  std::lock_guard lock(images_mutex_);
  const auto it = png_cache_.find(hash);
  return it == png_cache_.end() ? nullptr : it->second;
}

// --- HTTP ---------------------------------------------------------------------------

struct StudyServer::Impl {
  Study& study;
  httplib::Server server;
  std::thread thread;

  explicit Impl(Study& s) : study(s) {}
};

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& msg) { reply(res, status, {{"error", msg}}); }

}  // namespace

StudyServer::StudyServer(Study& study, std::filesystem::path static_dir) : impl_(std::make_unique<Impl>(study)) {
  auto& srv = impl_->server;
  Study& st = impl_->study;

  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const Error& e) {
      const int status = e.kind() == ErrorKind::NotFound ? 404 : e.kind() == ErrorKind::InvalidArgument ? 400 : 500;
      reply_error(res, status, e.what());
    } catch (const std::exception& e) {
      reply_error(res, 500, e.what());
    }
  });

  srv.Get("/api/v1/next", [&st](const httplib::Request& req, httplib::Response& res) {
    const std::string rater = req.get_param_value("rater");
    if (rater.empty()) return reply_error(res, 400, "missing rater parameter");
    reply(res, 200, st.assign_next(rater));
  });

  srv.Get(R"(/api/v1/triplet/([^/]+))", [&st](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!st.has_triplet(id)) return reply_error(res, 404, "unknown triplet '" + id + "'");
    reply(res, 200, st.describe(id, req.get_param_value("rater")));
  });

  srv.Get(R"(/img/([0-9a-f]{16})\.png)", [&st](const httplib::Request& req, httplib::Response& res) {
    const auto bytes = st.image(req.matches[1]);
    if (!bytes) return reply_error(res, 404, "unknown image");
    res.set_content(reinterpret_cast<const char*>(bytes->data()), bytes->size(), "image/png");
  });

  srv.Post("/api/v1/vote", [&st](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      return reply_error(res, 400, "body is not valid JSON");
    }
    if (!body.is_object() || !body.contains("triplet_id") || !body.contains("rater_id") || !body.contains("choice") ||
        !body["triplet_id"].is_string() || !body["rater_id"].is_string() || !body["choice"].is_number_integer()) {
      return reply_error(res, 400, "vote needs string triplet_id, string rater_id and integer choice");
    }
    VoteRecord v;
    v.triplet_id = body["triplet_id"];
    v.rater_id = body["rater_id"];
    v.choice = body["choice"];
    if (body.contains("dwell_ms") && body["dwell_ms"].is_number_integer()) v.dwell_ms = body["dwell_ms"].get<std::int64_t>();
    if (body.contains("idempotency_key") && body["idempotency_key"].is_string()) v.idempotency_key = body["idempotency_key"];
    if (!st.has_triplet(v.triplet_id)) return reply_error(res, 404, "unknown triplet '" + v.triplet_id + "'");
    if (body.contains("permutation")) {
      const bool swapped = presentation_swapped(v.rater_id, v.triplet_id);
      if (body["permutation"] != (swapped ? "swap" : "identity")) return reply_error(res, 400, "permutation token mismatch");
    }
    const VoteRecord stored = st.record_vote(std::move(v));
    reply(res, 200, {{"ok", true}, {"vote", vote_to_json(stored)}});
  });

  srv.Get("/api/v1/progress", [&st](const httplib::Request& req, httplib::Response& res) {
    reply(res, 200, st.progress(req.get_param_value("rater")));
  });

  srv.Get("/api/v1/export", [&st](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, {{"tallies", st.tallies_json()}, {"manifest", manifest_to_jsonl(st.labeled_manifest())}});
  });

  if (!static_dir.empty()) {
    if (!srv.set_mount_point("/", static_dir.string())) {
      throw Error(ErrorKind::NotFound, "static directory not found: " + static_dir.string());
    }
  }
}

StudyServer::~StudyServer() { stop(); }

int StudyServer::start(const std::string& host, int port) {
  auto& srv = impl_->server;
  const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(ErrorKind::Io, "cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([&srv] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  return bound;
}

void StudyServer::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw Error(ErrorKind::Io, "cannot listen on " + host + ":" + std::to_string(port));
}

void StudyServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace naref
