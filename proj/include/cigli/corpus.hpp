#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace cigli::corpus {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One (caption, left image, right image, label) record.
struct DataPoint {
  std::string identifier;
  std::string caption;
  std::string left_image;
  std::string right_image;
  bool label = false;
  // Keys outside the core schema (template_id, target_spec, ...) passed through verbatim.
  nlohmann::json extra = nlohmann::json::object();
};

enum class Split { train, val, eval };
enum class Provenance { nlvr2_raw, nlvr2_filtered, synthetic };

std::string to_string(Split s);
std::string to_string(Provenance p);
Split parse_split(const std::string& s);

struct Dataset {
  std::vector<DataPoint> points;
  Split split_name = Split::train;
  Provenance provenance = Provenance::nlvr2_raw;
};

struct RecordError {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct LoadResult {
  Dataset dataset;
  std::vector<RecordError> errors;
  std::vector<std::string> warnings;
  std::size_t duplicates = 0;
};

// Reads NLVR2-style JSONL. Malformed lines are collected in `errors`; more than
// 10% malformed lines is a whole-file CorpusError. Duplicate identifiers keep the
// first occurrence.
LoadResult load_nlvr2_jsonl(const std::filesystem::path& path);
LoadResult parse_nlvr2_jsonl(const std::string& text);

// Include rules: aggregate_count, disjunctive_placement.
// Exclude rules: both_specified, single_image_scope, trivially_satisfiable.
struct FilterDecision {
  bool qualified = false;
  std::optional<std::string> matched_rule;
  std::string reason;
};

bool is_include_rule(const std::string& rule);

// Case-insensitive, whitespace-normalized heuristic filter. Throws CorpusError on
// an empty caption.
FilterDecision filter_qualified(const DataPoint& dp);
FilterDecision filter_caption(const std::string& caption);

struct FilterStats {
  std::size_t total_in = 0;
  std::size_t kept = 0;
  std::size_t dropped_false = 0;
  std::size_t dropped_unqualified = 0;
  std::size_t dropped_duplicate = 0;
  std::size_t dropped_unusable = 0;
  std::map<std::string, std::size_t> per_rule;  // matched rule (or "none") -> count over TRUE points

  std::size_t dropped() const { return dropped_false + dropped_unqualified + dropped_duplicate + dropped_unusable; }
  nlohmann::json to_json() const;
};

struct FilteredDataset {
  Dataset dataset;
  FilterStats stats;
};

// Keeps points with label TRUE whose caption qualifies, in input order.
FilteredDataset build_cigli_dataset(const Dataset& raw);

// Deterministic train/val split keyed by a seeded hash of the identifier.
std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double val_fraction, std::uint64_t seed);

// JSONL writer for the input schema plus matched_rule when a decision is given.
nlohmann::json to_json(const DataPoint& dp, const FilterDecision* decision = nullptr);
void write_jsonl(const Dataset& ds, const std::filesystem::path& path, bool with_rules = false);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0);

}  // namespace cigli::corpus
