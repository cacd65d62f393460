#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace cigli::text {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kSep = 4;
inline constexpr const char* kSepSurface = "<sep>";

class VocabError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Lowercases, splits on anything that is not a letter or digit, keeps "<sep>".
std::vector<std::string> tokenize(const std::string& text);

class Vocabulary {
 public:
  // Specials only.
  Vocabulary();

  // Specials first, then every token seen at least min_count times in sorted order.
  static Vocabulary build(std::span<const std::string> texts, int min_count = 1);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;  // kUnk when absent
  const std::string& token(int id) const;
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }

  std::vector<int> encode(const std::string& text) const;
  // Skips PAD/BOS/EOS; stops at the first EOS.
  std::string decode(std::span<const int> ids) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  void add(const std::string& token);
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
};

// Token-id batch, time-major friendly: ids[b] padded with kPad to the longest row.
struct TokenBatch {
  std::vector<std::vector<int>> ids;
  std::vector<int> lengths;
  int max_len = 0;
  // Column t across the batch.
  std::vector<int> column(int t) const;
};

TokenBatch make_batch(const std::vector<std::vector<int>>& seqs);

}  // namespace cigli::text
