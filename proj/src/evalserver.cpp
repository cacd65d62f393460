#include "cigli/evalserver.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace cigli::evalserver {

using json = nlohmann::json;

namespace {

std::uint64_t fnv1a(std::uint64_t h, const std::string& s) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex_key(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string yes_no(bool v) { return v ? "YES" : "NO"; }

bool parse_yes_no(const json& j, const std::string& key) {
  if (!j.contains(key)) throw EvalError(400, "missing field '" + key + "'");
  const json& v = j.at(key);
  if (!v.is_string() || (v != "YES" && v != "NO"))
    throw EvalError(400, "field '" + key + "' must be \"YES\" or \"NO\", got " + v.dump());
  return v == "YES";
}

std::string required_string(const json& j, const std::string& key) {
  if (!j.contains(key) || !j.at(key).is_string() || j.at(key).get<std::string>().empty())
    throw EvalError(400, "missing or empty string field '" + key + "'");
  return j.at(key).get<std::string>();
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

}  // namespace

std::string to_string(Stage s) { return s == Stage::gate ? "gate" : "rate"; }

Stage parse_stage(const std::string& s) {
  if (s == "gate") return Stage::gate;
  if (s == "rate") return Stage::rate;
  throw EvalError(400, "stage must be \"gate\" or \"rate\", got '" + s + "'");
}

// ---------------------------------------------------------------- manifest

json SessionManifest::to_json() const {
  json items_j = json::array();
  for (const auto& it : items)
    items_j.push_back({{"identifier", it.identifier},
                       {"caption", it.caption},
                       {"first_image", it.first_image.string()},
                       {"first_image_key", first_image_keys.at(it.identifier)}});
  json images_j = json::object();
  for (const auto& [k, p] : images) images_j[k] = p.string();
  json slots_j = json::array();
  for (const auto& [owner, key] : slots) slots_j.push_back({{"identifier", owner.first}, {"model", owner.second}, {"key", key}});
  return json{{"seed", seed},           {"models", models}, {"annotators", annotators}, {"log_file", log_file.string()},
              {"items", items_j},       {"images", images_j}, {"slots", slots_j}};
}

SessionManifest SessionManifest::from_json(const json& j) {
  SessionManifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.models = j.at("models").get<std::vector<std::string>>();
    m.annotators = j.at("annotators").get<std::vector<std::string>>();
    m.log_file = j.value("log_file", std::string("ratings.jsonl"));
    for (const auto& it : j.at("items")) {
      const std::string id = it.at("identifier").get<std::string>();
      m.items.push_back({id, it.at("caption").get<std::string>(), it.at("first_image").get<std::string>()});
      m.first_image_keys[id] = it.at("first_image_key").get<std::string>();
    }
    for (auto it = j.at("images").begin(); it != j.at("images").end(); ++it) m.images[it.key()] = it.value().get<std::string>();
    for (const auto& s : j.at("slots"))
      m.slots[{s.at("identifier").get<std::string>(), s.at("model").get<std::string>()}] = s.at("key").get<std::string>();
  } catch (const json::exception& e) {
    throw EvalError(400, std::string("malformed session manifest: ") + e.what());
  }
  return m;
}

void SessionManifest::save(const std::filesystem::path& file) const {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw EvalError(500, "cannot write " + file.string());
  out << to_json().dump(2) << "\n";
}

SessionManifest SessionManifest::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw EvalError(404, "cannot read session manifest " + file.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw EvalError(400, file.string() + ": " + e.what());
  }
}

std::map<std::string, std::pair<std::string, std::string>> SessionManifest::slot_owners() const {
  std::map<std::string, std::pair<std::string, std::string>> out;
  for (const auto& [owner, key] : slots) out[key] = owner;
  return out;
}

SessionManifest seed_session(const std::vector<SessionItem>& items,
                             const std::map<std::string, std::map<std::string, std::filesystem::path>>& generations,
                             std::vector<std::string> annotators, std::uint64_t seed) {
  if (items.empty()) throw EvalError(400, "session needs at least one datapoint");
  if (generations.empty()) throw EvalError(400, "session needs at least one model");
  if (annotators.empty()) annotators = default_annotators();
  std::set<std::string> seen;
  for (const auto& it : items)
    if (!seen.insert(it.identifier).second) throw EvalError(400, "duplicate datapoint '" + it.identifier + "'");
  std::set<std::string> ann(annotators.begin(), annotators.end());
  if (ann.size() != annotators.size()) throw EvalError(400, "duplicate annotator id");
  for (const auto& [model, gens] : generations)
    for (const auto& it : items)
      if (!gens.contains(it.identifier))
        throw EvalError(400, "missing generation for model '" + model + "' datapoint '" + it.identifier + "'");

  SessionManifest m;
  m.seed = seed;
  m.items = items;
  m.annotators = std::move(annotators);
  std::mt19937_64 rng(seed);
  std::set<std::string> used;
  auto fresh = [&] {
    std::string k;
    do {
      k = hex_key(rng());
    } while (!used.insert(k).second);
    return k;
  };
  for (const auto& [model, gens] : generations) m.models.push_back(model);
  for (const auto& it : items) {
    const std::string k = fresh();
    m.first_image_keys[it.identifier] = k;
    m.images[k] = it.first_image;
  }
  for (const auto& it : items)
    for (const auto& [model, gens] : generations) {
      const std::string k = fresh();
      m.slots[{it.identifier, model}] = k;
      m.images[k] = gens.at(it.identifier);
    }
  return m;
}

// ------------------------------------------------------------ records/report

json Assignment::to_json() const {
  json j{{"assignment_id", assignment_id},
         {"identifier", identifier},
         {"caption", caption},
         {"stage", to_string(stage)},
         {"first_image", "/api/image/" + first_image}};
  if (stage == Stage::rate) {
    j["blind_slot"] = blind_slot;
    j["image"] = "/api/image/" + blind_slot;
    j["position"] = position;
    j["of"] = of;
  }
  return j;
}

json RatingRecord::to_json() const {
  json j{{"annotator_id", annotator_id}, {"identifier", identifier}, {"stage", to_string(stage)}};
  if (stage == Stage::gate) {
    j["gate_answer"] = yes_no(gate_answer.value_or(false));
  } else {
    j["blind_slot"] = blind_slot;
    j["naturalness"] = yes_no(naturalness.value_or(false));
    j["relevance"] = yes_no(relevance.value_or(false));
    j["correctness"] = yes_no(correctness.value_or(false));
  }
  if (!timestamp.empty()) j["timestamp"] = timestamp;
  return j;
}

RatingRecord RatingRecord::from_json(const json& j) {
  if (!j.is_object()) throw EvalError(400, "rating must be a JSON object");
  RatingRecord r;
  r.annotator_id = required_string(j, "annotator_id");
  r.identifier = required_string(j, "identifier");
  r.stage = parse_stage(required_string(j, "stage"));
  if (r.stage == Stage::gate) {
    r.gate_answer = parse_yes_no(j, "gate_answer");
  } else {
    r.blind_slot = required_string(j, "blind_slot");
    r.naturalness = parse_yes_no(j, "naturalness");
    r.relevance = parse_yes_no(j, "relevance");
    r.correctness = parse_yes_no(j, "correctness");
  }
  if (j.contains("timestamp") && j.at("timestamp").is_string()) r.timestamp = j.at("timestamp").get<std::string>();
  return r;
}

json HumanEvalReport::to_json() const {
  json models = json::object();
  for (const auto& [model, metrics] : cells) {
    json mj = json::object();
    for (const auto& [metric, c] : metrics) mj[metric] = {{"yes", c.yes}, {"count", c.count}, {"percent", c.percent}};
    models[model] = mj;
  }
  return json{{"first_image_satisfied_rate", first_image_satisfied_rate},
              {"gate_records", gate_records},
              {"gate_yes", gate_yes},
              {"rate_records", rate_records},
              {"models", models}};
}

HumanEvalReport build_report(const SessionManifest& m, const std::vector<RatingRecord>& log) {
  HumanEvalReport r;
  const auto owners = m.slot_owners();
  for (const auto& model : m.models)
    for (const auto& metric : metric_names()) r.cells[model][metric];
  for (const auto& rec : log) {
    if (rec.stage == Stage::gate) {
      ++r.gate_records;
      r.gate_yes += rec.gate_answer.value_or(false);
      continue;
    }
    const auto it = owners.find(rec.blind_slot);
    if (it == owners.end()) throw EvalError(400, "log names unknown blind slot '" + rec.blind_slot + "'");
    ++r.rate_records;
    auto& cells = r.cells[it->second.second];
    const std::optional<bool>* answers[] = {&rec.naturalness, &rec.relevance, &rec.correctness};
    for (std::size_t k = 0; k < metric_names().size(); ++k) {
      auto& c = cells[metric_names()[k]];
      ++c.count;
      c.yes += answers[k]->value_or(false);
    }
  }
  if (r.gate_records == 0) throw EvalError(409, "no gate-stage ratings recorded yet");
  r.first_image_satisfied_rate = 100.0 * static_cast<double>(r.gate_yes) / static_cast<double>(r.gate_records);
  for (auto& [model, metrics] : r.cells)
    for (auto& [metric, c] : metrics)
      c.percent = c.count == 0 ? 0.0 : 100.0 * static_cast<double>(c.yes) / static_cast<double>(c.count);
  return r;
}

std::vector<RatingRecord> read_log(const std::filesystem::path& file) {
  std::vector<RatingRecord> out;
  std::ifstream in(file);
  if (!in) return out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(RatingRecord::from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw EvalError(400, file.string() + ": line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

// ------------------------------------------------------------------ session

Session::Session(SessionManifest manifest, std::filesystem::path base_dir, std::filesystem::path log_path, Clock clock)
    : manifest_(std::move(manifest)), base_dir_(std::move(base_dir)), log_path_(std::move(log_path)), clock_(std::move(clock)) {
  if (!clock_) clock_ = utc_now;
  owners_ = manifest_.slot_owners();
  for (std::size_t i = 0; i < manifest_.items.size(); ++i) item_index_[manifest_.items[i].identifier] = i;
  for (const auto& a : manifest_.annotators) annotators_[a];
  if (!log_path_.empty())
    for (const auto& r : read_log(log_path_)) {
      if (!annotators_.contains(r.annotator_id)) throw EvalError(400, "log names unknown annotator '" + r.annotator_id + "'");
      apply(r);
    }
}

std::unique_ptr<Session> Session::open(const std::filesystem::path& manifest_file, Clock clock) {
  SessionManifest m = SessionManifest::load(manifest_file);
  const auto base = manifest_file.parent_path();
  const auto log = m.log_file.is_absolute() ? m.log_file : base / m.log_file;
  return std::make_unique<Session>(std::move(m), base, log, std::move(clock));
}

Session::AnnotatorState& Session::state_of(const std::string& annotator) {
  const auto it = annotators_.find(annotator);
  if (it == annotators_.end()) throw EvalError(404, "unknown annotator '" + annotator + "'");
  return it->second;
}

const SessionItem& Session::item(const std::string& identifier) const {
  const auto it = item_index_.find(identifier);
  if (it == item_index_.end()) throw EvalError(400, "unknown datapoint '" + identifier + "'");
  return manifest_.items[it->second];
}

std::vector<std::string> Session::presentation_order(const std::string& annotator, const std::string& identifier) const {
  std::uint64_t h = fnv1a(0xcbf29ce484222325ULL ^ manifest_.seed, annotator);
  h = fnv1a(h ^ 0x9e3779b97f4a7c15ULL, identifier);
  std::mt19937_64 rng(h);
  std::vector<std::string> slots;
  for (const auto& model : manifest_.models) slots.push_back(manifest_.slots.at({identifier, model}));
  // Slots are listed by model before shuffling; order them by key first so the
  // permutation input carries no model order either.
  std::sort(slots.begin(), slots.end());
  std::shuffle(slots.begin(), slots.end(), rng);
  return slots;
}

Assignment Session::make_gate(const std::string&, const SessionItem& it) {
  Assignment a;
  a.assignment_id = "asg-" + std::to_string(++issued_);
  a.identifier = it.identifier;
  a.caption = it.caption;
  a.first_image = manifest_.first_image_keys.at(it.identifier);
  a.stage = Stage::gate;
  return a;
}

Assignment Session::make_rate(const std::string& annotator, const Pending& p) {
  Assignment a = make_gate(annotator, item(p.identifier));
  a.stage = Stage::rate;
  a.blind_slot = p.slots.front();
  a.of = p.total;
  a.position = p.total - static_cast<int>(p.slots.size()) + 1;
  return a;
}

std::optional<Assignment> Session::next_assignment(const std::string& annotator) {
  std::lock_guard lock(mu_);
  AnnotatorState& st = state_of(annotator);
  if (st.outstanding) return st.outstanding;
  if (st.rating && !st.rating->slots.empty()) {
    st.outstanding = make_rate(annotator, *st.rating);
    return st.outstanding;
  }
  const SessionItem* best = nullptr;
  int best_count = 0;
  for (const auto& it : manifest_.items) {
    if (st.gated.contains(it.identifier)) continue;
    const int c = gate_counts_[it.identifier];
    if (!best || c < best_count) {
      best = &it;
      best_count = c;
    }
  }
  if (!best) return std::nullopt;
  st.outstanding = make_gate(annotator, *best);
  return st.outstanding;
}

void Session::apply(const RatingRecord& r) {
  AnnotatorState& st = state_of(r.annotator_id);
  if (r.stage == Stage::gate) {
    st.gated.insert(r.identifier);
    ++gate_counts_[r.identifier];
    st.rating.reset();
    if (!r.gate_answer.value_or(false)) {
      Pending p;
      p.identifier = r.identifier;
      p.slots = presentation_order(r.annotator_id, r.identifier);
      p.total = static_cast<int>(p.slots.size());
      st.rating = std::move(p);
    }
  } else {
    st.rated.insert({r.identifier, r.blind_slot});
    if (st.rating && st.rating->identifier == r.identifier) {
      auto& s = st.rating->slots;
      s.erase(std::remove(s.begin(), s.end(), r.blind_slot), s.end());
      if (s.empty()) st.rating.reset();
    }
  }
  st.outstanding.reset();
  log_.push_back(r);
}

void Session::submit_rating(RatingRecord r) {
  std::lock_guard lock(mu_);
  AnnotatorState& st = state_of(r.annotator_id);
  (void)item(r.identifier);
  if (r.stage == Stage::gate) {
    if (!r.gate_answer) throw EvalError(400, "gate rating needs gate_answer");
    if (st.gated.contains(r.identifier)) throw EvalError(409, "duplicate gate rating for '" + r.identifier + "'");
  } else {
    if (!r.naturalness || !r.relevance || !r.correctness) throw EvalError(400, "rate rating needs all three answers");
    if (!owners_.contains(r.blind_slot) || owners_.at(r.blind_slot).first != r.identifier)
      throw EvalError(400, "blind slot does not belong to datapoint '" + r.identifier + "'");
    if (st.rated.contains({r.identifier, r.blind_slot}))
      throw EvalError(409, "duplicate rating for this image of '" + r.identifier + "'");
  }
  const auto& o = st.outstanding;
  if (!o || o->identifier != r.identifier || o->stage != r.stage || (r.stage == Stage::rate && o->blind_slot != r.blind_slot))
    throw EvalError(409, "no outstanding " + to_string(r.stage) + " assignment for '" + r.identifier + "'");
  r.timestamp = clock_();
  if (!log_path_.empty()) {
    if (log_path_.has_parent_path()) std::filesystem::create_directories(log_path_.parent_path());
    std::ofstream out(log_path_, std::ios::app);
    out << r.to_json().dump() << "\n";
    out.flush();
    if (!out) throw EvalError(500, "cannot append to " + log_path_.string());
  }
  apply(r);
}

HumanEvalReport Session::report() const {
  std::lock_guard lock(mu_);
  return build_report(manifest_, log_);
}

std::vector<RatingRecord> Session::records() const {
  std::lock_guard lock(mu_);
  return log_;
}

std::string Session::image_bytes(const std::string& key) const {
  const auto it = manifest_.images.find(key);
  if (it == manifest_.images.end()) throw EvalError(404, "unknown image key");
  const auto path = it->second.is_absolute() ? it->second : base_dir_ / it->second;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EvalError(404, "image file missing");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace cigli::evalserver
