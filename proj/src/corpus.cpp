#include "cigli/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <string_view>
#include <unordered_set>

namespace cigli::corpus {

using nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::eval: return "eval";
  }
  return "train";
}

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::nlvr2_raw: return "nlvr2-raw";
    case Provenance::nlvr2_filtered: return "nlvr2-filtered";
    case Provenance::synthetic: return "synthetic";
  }
  return "nlvr2-raw";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "eval") return Split::eval;
  throw CorpusError("unknown split '" + s + "'");
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ULL;
  for (int i = 0; i < 8; ++i) {
    h ^= (seed >> (8 * i)) & 0xffU;
    h *= 1099511628211ULL;
  }
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::optional<bool> parse_label(const json& v) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "True" || s == "true") return true;
    if (s == "False" || s == "false") return false;
  }
  return std::nullopt;
}

// NLVR2 release convention: "dev-850-0-1" -> "dev-850-0-img0.png" / "...-img1.png".
std::string nlvr2_image_name(const std::string& identifier, int side) {
  const auto pos = identifier.rfind('-');
  const std::string stem = pos == std::string::npos ? identifier : identifier.substr(0, pos);
  return stem + "-img" + std::to_string(side) + ".png";
}

const std::set<std::string>& core_keys() {
  static const std::set<std::string> keys{"identifier", "sentence", "label", "left_image", "right_image",
                                          "left_url", "right_url", "matched_rule"};
  return keys;
}

DataPoint parse_record(const std::string& line) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw CorpusError(std::string("invalid JSON: ") + e.what());
  }
  if (!obj.is_object()) throw CorpusError("line is not a JSON object");
  for (const char* key : {"identifier", "sentence", "label"}) {
    if (!obj.contains(key)) throw CorpusError(std::string("missing key \"") + key + "\"");
  }
  if (!obj["identifier"].is_string() || obj["identifier"].get<std::string>().empty()) {
    throw CorpusError("identifier must be a non-empty string");
  }
  if (!obj["sentence"].is_string()) throw CorpusError("sentence must be a string");
  DataPoint dp;
  dp.identifier = obj["identifier"].get<std::string>();
  dp.caption = obj["sentence"].get<std::string>();
  if (trim(dp.caption).empty()) throw CorpusError("empty sentence");
  const auto label = parse_label(obj["label"]);
  if (!label) throw CorpusError("label must be one of \"True\", \"False\", true, false");
  dp.label = *label;
  auto image_ref = [&](const char* key, const char* alt, int side) -> std::string {
    for (const char* k : {key, alt}) {
      if (obj.contains(k)) {
        if (!obj[k].is_string()) throw CorpusError(std::string(k) + " must be a string");
        return obj[k].get<std::string>();
      }
    }
    return nlvr2_image_name(dp.identifier, side);
  };
  dp.left_image = image_ref("left_image", "left_url", 0);
  dp.right_image = image_ref("right_image", "right_url", 1);
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!core_keys().count(it.key())) dp.extra[it.key()] = it.value();
  }
  return dp;
}

// ---------------------------------------------------------------------------
// Caption rules

std::vector<std::string> normalize_tokens(const std::string& caption) {
  std::string lowered;
  lowered.reserve(caption.size());
  for (unsigned char c : caption) {
    if (std::isalnum(c) || c == '\'') {
      lowered.push_back(static_cast<char>(std::tolower(c)));
    } else {
      lowered.push_back(' ');
    }
  }
  std::vector<std::string> out;
  std::istringstream is(lowered);
  for (std::string tok; is >> tok;) {
    if (tok == "there's") {
      out.emplace_back("there");
      out.emplace_back("is");
      continue;
    }
    tok.erase(std::remove(tok.begin(), tok.end(), '\''), tok.end());
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

bool is_number(const std::string& t) {
  static const std::set<std::string> words{"one", "two", "three", "four", "five",
                                           "six", "seven", "eight", "nine", "ten"};
  if (words.count(t)) return true;
  if (t.empty() || t.size() > 2) return false;
  if (!std::all_of(t.begin(), t.end(), [](unsigned char c) { return std::isdigit(c); })) return false;
  const int v = std::stoi(t);
  return v >= 1 && v <= 10;
}

bool is_image_word(const std::string& t) {
  static const std::set<std::string> words{"image", "images", "picture", "pictures", "photo",
                                           "photos", "photograph", "photographs", "pic", "pics"};
  return words.count(t) > 0;
}

bool is_stopword(const std::string& t) {
  static const std::set<std::string> words{
      "the", "a", "an", "of", "in", "on", "at", "to", "and", "or", "is", "are", "was", "were", "be",
      "there", "with", "it", "its", "this", "that", "these", "those", "by", "for", "from", "as", "than",
      "while", "other", "each", "both", "either", "left", "right", "side", "which", "who", "has", "have",
      "not", "no", "but", "also", "exactly", "only", "just", "total", "altogether", "combined", "his", "her"};
  return words.count(t) > 0;
}

bool looks_plural(const std::string& t) {
  static const std::set<std::string> irregular{"people", "men", "women", "children", "mice", "geese", "sheep",
                                               "deer", "fish", "feet", "teeth", "oxen", "cattle", "puppies"};
  if (irregular.count(t)) return true;
  if (t.size() < 3 || is_stopword(t) || is_image_word(t) || is_number(t)) return false;
  if (t.back() != 's') return false;
  const std::string_view tail(t.data() + t.size() - 2, 2);
  return tail != "ss" && tail != "us" && tail != "is";
}

// A number followed (within three tokens) by a counted noun. "one" takes any
// content word; larger counts need a plural-looking noun.
std::optional<std::string> count_phrase_at(const std::vector<std::string>& tok, std::size_t i) {
  if (i >= tok.size() || !is_number(tok[i])) return std::nullopt;
  const bool singular = tok[i] == "one" || tok[i] == "1";
  for (std::size_t j = i + 1; j < tok.size() && j <= i + 3; ++j) {
    if (is_image_word(tok[j])) return std::nullopt;
    if (j == i + 1 && tok[j] == "of") return std::nullopt;
    if (singular ? (!is_stopword(tok[j]) && !is_number(tok[j])) : looks_plural(tok[j])) {
      return tok[i] + " " + tok[j];
    }
  }
  return std::nullopt;
}

bool has_sequence(const std::vector<std::string>& tok, std::initializer_list<std::string_view> seq,
                  bool last_is_image_word = false) {
  const std::size_t n = seq.size();
  if (tok.size() < n) return false;
  for (std::size_t i = 0; i + n <= tok.size(); ++i) {
    std::size_t k = 0;
    for (auto s : seq) {
      const bool last = k == n - 1;
      const bool ok = (last && last_is_image_word) ? is_image_word(tok[i + k]) : tok[i + k] == s;
      if (!ok) break;
      ++k;
    }
    if (k == n) return true;
  }
  return false;
}

bool has_token(const std::vector<std::string>& tok, std::string_view t) {
  return std::find(tok.begin(), tok.end(), t) != tok.end();
}

std::optional<std::string> aggregate_marker(const std::vector<std::string>& tok) {
  for (const char* m : {"total", "altogether", "combined"})
    if (has_token(tok, m)) return std::string(m);
  return std::nullopt;
}

std::optional<std::string> disjunctive_phrase(const std::vector<std::string>& tok) {
  if (has_sequence(tok, {"one", "<img>"}, true)) return "one image";
  if (has_sequence(tok, {"one", "of", "the", "<img>"}, true)) return "one of the images";
  if (has_sequence(tok, {"one", "of", "the", "two", "<img>"}, true)) return "one of the images";
  if (has_token(tok, "either")) return "either";
  if (has_sequence(tok, {"the", "other"})) return "the other";
  return std::nullopt;
}

bool per_image_quantifier(const std::vector<std::string>& tok) {
  return has_sequence(tok, {"each", "<img>"}, true) || has_sequence(tok, {"in", "each"}) ||
         has_sequence(tok, {"both", "<img>"}, true) || has_sequence(tok, {"each", "of", "the", "<img>"}, true);
}

bool has_content(const std::vector<std::string>& tok, std::size_t begin, std::size_t end) {
  for (std::size_t i = begin; i < end && i < tok.size(); ++i)
    if (!is_stopword(tok[i]) && !is_image_word(tok[i])) return true;
  return false;
}

std::optional<std::string> trivial_bound(const std::vector<std::string>& tok) {
  if (has_sequence(tok, {"at", "least"})) return "at least";
  if (has_sequence(tok, {"at", "most"})) return "at most";
  for (const char* w : {"more", "fewer", "less"}) {
    if (has_sequence(tok, {"no", w, "than"})) return std::string("no ") + w + " than";
  }
  return std::nullopt;
}

}  // namespace

bool is_include_rule(const std::string& rule) {
  return rule == "aggregate_count" || rule == "disjunctive_placement";
}

FilterDecision filter_caption(const std::string& caption) {
  if (trim(caption).empty()) throw CorpusError("empty caption: record is unusable");
  const auto tok = normalize_tokens(caption);
  if (tok.empty()) throw CorpusError("caption has no words: record is unusable");

  std::vector<std::size_t> left, right;
  for (std::size_t i = 0; i < tok.size(); ++i) {
    if (tok[i] == "left") left.push_back(i);
    if (tok[i] == "right") right.push_back(i);
  }
  const auto marker = aggregate_marker(tok);
  const auto disj = disjunctive_phrase(tok);
  const bool cross_refs = has_token(tok, "other") || has_token(tok, "both") || has_token(tok, "each") ||
                          has_token(tok, "either");

  // Exclude rules, in priority order.
  if (per_image_quantifier(tok)) {
    return {false, "both_specified", "each image is specified on its own"};
  }
  if (!left.empty() && !right.empty()) {
    const std::size_t first = std::min(left.front(), right.front());
    const std::size_t second = std::max(left.front(), right.front());
    if (has_content(tok, first + 1, second) && has_content(tok, second + 1, tok.size())) {
      return {false, "both_specified", "left and right images are described independently"};
    }
  }
  if ((left.empty() != right.empty()) && !cross_refs && !marker && !disj) {
    return {false, "single_image_scope",
            std::string("caption only constrains the ") + (left.empty() ? "right" : "left") + " image"};
  }
  if (const auto bound = trivial_bound(tok)) {
    return {false, "trivially_satisfiable", "'" + *bound + "' is satisfied without reading the first image"};
  }

  // Include rules.
  std::optional<std::string> counted;
  for (std::size_t i = 0; i < tok.size() && !counted; ++i) counted = count_phrase_at(tok, i);
  if (counted && marker) {
    return {true, "aggregate_count", "count '" + *counted + "' aggregated by '" + *marker + "'"};
  }
  const bool scoped = !left.empty() || !right.empty() || cross_refs || disj.has_value();
  if (!scoped) {
    for (std::size_t i = 0; i + 1 < tok.size(); ++i) {
      if (tok[i] != "there" || (tok[i + 1] != "are" && tok[i + 1] != "is")) continue;
      std::size_t j = i + 2;
      while (j < tok.size() && (tok[j] == "exactly" || tok[j] == "only" || tok[j] == "just")) ++j;
      if (const auto c = count_phrase_at(tok, j)) {
        return {true, "aggregate_count", "existential count '" + *c + "' over both images"};
      }
    }
  }
  if (disj) {
    return {true, "disjunctive_placement", "'" + *disj + "' leaves open which image satisfies the clause"};
  }
  return {false, std::nullopt, "no cross-image pattern"};
}

FilterDecision filter_qualified(const DataPoint& dp) { return filter_caption(dp.caption); }

LoadResult parse_nlvr2_jsonl(const std::string& text) {
  LoadResult result;
  result.dataset.provenance = Provenance::nlvr2_raw;
  std::unordered_set<std::string> seen;
  std::istringstream in(text);
  std::size_t line_no = 0, nonblank = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++nonblank;
    try {
      DataPoint dp = parse_record(line);
      if (!seen.insert(dp.identifier).second) {
        ++result.duplicates;
        result.warnings.push_back("line " + std::to_string(line_no) + ": duplicate identifier '" + dp.identifier +
                                  "' ignored");
        continue;
      }
      result.dataset.points.push_back(std::move(dp));
    } catch (const CorpusError& e) {
      result.errors.push_back({line_no, e.what()});
    }
  }
  if (nonblank == 0) result.warnings.emplace_back("input contains no records");
  if (nonblank > 0 && result.errors.size() * 10 > nonblank) {
    std::ostringstream msg;
    msg << result.errors.size() << " of " << nonblank << " lines malformed (first at line "
        << result.errors.front().line << ": " << result.errors.front().message << ")";
    throw CorpusError(msg.str());
  }
  return result;
}

LoadResult load_nlvr2_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_nlvr2_jsonl(buf.str());
  } catch (const CorpusError& e) {
    throw CorpusError(path.string() + ": " + e.what());
  }
}

json FilterStats::to_json() const {
  return json{{"total_in", total_in},
              {"kept", kept},
              {"dropped", dropped()},
              {"dropped_false", dropped_false},
              {"dropped_unqualified", dropped_unqualified},
              {"dropped_duplicate", dropped_duplicate},
              {"dropped_unusable", dropped_unusable},
              {"per_rule", per_rule}};
}

FilteredDataset build_cigli_dataset(const Dataset& raw) {
  FilteredDataset out;
  out.dataset.split_name = raw.split_name;
  out.dataset.provenance = raw.provenance == Provenance::synthetic ? Provenance::synthetic : Provenance::nlvr2_filtered;
  auto& st = out.stats;
  std::unordered_set<std::string> seen;
  for (const auto& dp : raw.points) {
    ++st.total_in;
    if (!seen.insert(dp.identifier).second) {
      ++st.dropped_duplicate;
      continue;
    }
    if (!dp.label) {
      ++st.dropped_false;
      continue;
    }
    FilterDecision d;
    try {
      d = filter_qualified(dp);
    } catch (const CorpusError&) {
      ++st.dropped_unusable;
      continue;
    }
    ++st.per_rule[d.matched_rule.value_or("none")];
    if (!d.qualified) {
      ++st.dropped_unqualified;
      continue;
    }
    DataPoint kept = dp;
    kept.extra["matched_rule"] = *d.matched_rule;
    out.dataset.points.push_back(std::move(kept));
    ++st.kept;
  }
  return out;
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double val_fraction, std::uint64_t seed) {
  if (val_fraction < 0.0 || val_fraction > 1.0) throw CorpusError("val_fraction must lie in [0, 1]");
  Dataset train{{}, Split::train, ds.provenance};
  Dataset val{{}, Split::val, ds.provenance};
  for (const auto& dp : ds.points) {
    std::uint64_t h = fnv1a64(dp.identifier, seed);
    // splitmix64 finalizer: FNV's high bits are poorly mixed for short keys
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
    h ^= h >> 31;
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    (u < val_fraction ? val : train).points.push_back(dp);
  }
  return {std::move(train), std::move(val)};
}

json to_json(const DataPoint& dp, const FilterDecision* decision) {
  json j = dp.extra;
  j["identifier"] = dp.identifier;
  j["sentence"] = dp.caption;
  j["label"] = dp.label ? "True" : "False";
  j["left_image"] = dp.left_image;
  j["right_image"] = dp.right_image;
  if (decision) j["matched_rule"] = decision->matched_rule ? json(*decision->matched_rule) : json(nullptr);
  return j;
}

void write_jsonl(const Dataset& ds, const std::filesystem::path& path, bool with_rules) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot open " + path.string() + " for writing");
  for (const auto& dp : ds.points) {
    if (with_rules) {
      const FilterDecision d = filter_qualified(dp);
      out << to_json(dp, &d).dump() << '\n';
    } else {
      out << to_json(dp).dump() << '\n';
    }
  }
  if (!out) throw CorpusError("failed writing " + path.string());
}

}  // namespace cigli::corpus
