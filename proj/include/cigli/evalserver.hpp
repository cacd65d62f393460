#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

// Blind two-stage human evaluation: a gate question on the first image, then
// YES/NO ratings of each generated image when the gate answer is NO.
namespace cigli::evalserver {

// `status` mirrors the HTTP code the API layer answers with.
class EvalError : public std::runtime_error {
 public:
  EvalError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

enum class Stage { gate, rate };
std::string to_string(Stage s);
Stage parse_stage(const std::string& s);

struct SessionItem {
  std::string identifier;
  std::string caption;
  std::filesystem::path first_image;
};

// On-disk session: the datapoints, the images behind every opaque key, and the
// key -> model mapping that never leaves the server.
struct SessionManifest {
  std::uint64_t seed = 0;
  std::vector<SessionItem> items;
  std::vector<std::string> models;
  std::vector<std::string> annotators;
  // opaque key -> image file (absolute, or relative to the manifest directory)
  std::map<std::string, std::filesystem::path> images;
  // (identifier, model) -> blind slot key; first-image keys per identifier
  std::map<std::pair<std::string, std::string>, std::string> slots;
  std::map<std::string, std::string> first_image_keys;
  std::filesystem::path log_file = "ratings.jsonl";

  nlohmann::json to_json() const;
  static SessionManifest from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& file) const;
  static SessionManifest load(const std::filesystem::path& file);

  // Slot key -> (identifier, model).
  std::map<std::string, std::pair<std::string, std::string>> slot_owners() const;
};

inline const std::vector<std::string>& default_annotators() {
  static const std::vector<std::string> a{"annotator-1", "annotator-2", "annotator-3", "annotator-4"};
  return a;
}

// generations[model][identifier] = image path. Every model must cover every
// item. Keys are drawn from `seed`, so the same seed gives the same mapping.
SessionManifest seed_session(const std::vector<SessionItem>& items,
                             const std::map<std::string, std::map<std::string, std::filesystem::path>>& generations,
                             std::vector<std::string> annotators, std::uint64_t seed);

struct Assignment {
  std::string assignment_id;
  std::string identifier;
  std::string caption;
  std::string first_image;  // opaque image key
  Stage stage = Stage::gate;
  std::string blind_slot;   // rate stage only; doubles as the image key
  int position = 0;         // 1-based index of this image within the datapoint (rate stage)
  int of = 0;               // images to rate for the datapoint (rate stage)

  nlohmann::json to_json() const;
};

struct RatingRecord {
  std::string annotator_id;
  std::string identifier;
  Stage stage = Stage::gate;
  std::optional<bool> gate_answer;
  std::string blind_slot;
  std::optional<bool> naturalness, relevance, correctness;
  std::string timestamp;

  nlohmann::json to_json() const;
  // Throws EvalError(400) on a missing field or an answer other than YES/NO.
  static RatingRecord from_json(const nlohmann::json& j);
};

struct MetricCell {
  std::size_t yes = 0;
  std::size_t count = 0;
  double percent = 0.0;
};

struct HumanEvalReport {
  double first_image_satisfied_rate = 0.0;
  std::size_t gate_records = 0;
  std::size_t gate_yes = 0;
  std::size_t rate_records = 0;
  // model -> metric (naturalness, relevance, correctness) -> cell
  std::map<std::string, std::map<std::string, MetricCell>> cells;

  nlohmann::json to_json() const;
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> m{"naturalness", "relevance", "correctness"};
  return m;
}

// Aggregates a rating log. Throws EvalError(409) when there is no gate record.
HumanEvalReport build_report(const SessionManifest& m, const std::vector<RatingRecord>& log);
std::vector<RatingRecord> read_log(const std::filesystem::path& file);

class Session {
 public:
  using Clock = std::function<std::string()>;

  // Replays an existing log file (if any) so a restarted server resumes.
  // An empty log_path keeps ratings in memory only.
  Session(SessionManifest manifest, std::filesystem::path base_dir, std::filesystem::path log_path, Clock clock = {});

  static std::unique_ptr<Session> open(const std::filesystem::path& manifest_file, Clock clock = {});

  // Returns the outstanding assignment again until it is answered.
  std::optional<Assignment> next_assignment(const std::string& annotator);
  void submit_rating(RatingRecord record);
  HumanEvalReport report() const;

  // PNG bytes behind an opaque key; EvalError(404) when unknown.
  std::string image_bytes(const std::string& key) const;

  const SessionManifest& manifest() const { return manifest_; }
  std::vector<RatingRecord> records() const;

 private:
  struct Pending {
    std::string identifier;
    std::vector<std::string> slots;  // remaining, presentation order
    int total = 0;
  };
  struct AnnotatorState {
    std::set<std::string> gated;
    std::optional<Pending> rating;
    std::optional<Assignment> outstanding;
    std::set<std::pair<std::string, std::string>> rated;  // (identifier, slot)
  };

  void apply(const RatingRecord& r);
  std::vector<std::string> presentation_order(const std::string& annotator, const std::string& identifier) const;
  Assignment make_gate(const std::string& annotator, const SessionItem& item);
  Assignment make_rate(const std::string& annotator, const Pending& p);
  AnnotatorState& state_of(const std::string& annotator);
  const SessionItem& item(const std::string& identifier) const;

  mutable std::mutex mu_;
  SessionManifest manifest_;
  std::filesystem::path base_dir_;
  std::filesystem::path log_path_;
  Clock clock_;
  std::map<std::string, std::pair<std::string, std::string>> owners_;
  std::map<std::string, std::size_t> item_index_;
  std::map<std::string, AnnotatorState> annotators_;
  std::map<std::string, int> gate_counts_;
  std::vector<RatingRecord> log_;
  std::uint64_t issued_ = 0;
};

struct ServeOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path static_dir;  // UI bundle; empty disables static serving
};

// HTTP JSON API over a Session:
//   GET /api/assignment?annotator=ID, POST /api/rating, GET /api/report,
//   GET /api/image/{key}
class HttpServer {
 public:
  HttpServer(Session& session, ServeOptions opts);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds (port 0 picks a free port) and serves on a background thread.
  int start();
  // Serves on the calling thread until stop().
  void run();
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace cigli::evalserver
