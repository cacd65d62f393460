#include "cigli/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

namespace cigli::text {

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  const std::string sep = kSepSurface;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text.compare(i, sep.size(), sep) == 0) {
      flush();
      out.push_back(sep);
      i += sep.size() - 1;
      continue;
    }
    const auto ch = static_cast<unsigned char>(text[i]);
    if (std::isalnum(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* s : {"<pad>", "<bos>", "<eos>", "<unk>", kSepSurface}) add(s);
}

void Vocabulary::add(const std::string& token) {
  if (ids_.count(token)) return;
  ids_[token] = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(std::span<const std::string> texts, int min_count) {
  std::map<std::string, int> counts;
  for (const auto& t : texts)
    for (const auto& tok : tokenize(t)) ++counts[tok];
  Vocabulary v;
  for (const auto& [tok, n] : counts)
    if (n >= min_count) v.add(tok);
  return v;
}

int Vocabulary::id(const std::string& token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw VocabError("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
  std::vector<int> out;
  for (const auto& tok : tokenize(text)) out.push_back(id(tok));
  return out;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int i : ids) {
    if (i == kEos) break;
    if (i == kPad || i == kBos) continue;
    if (!out.empty()) out += ' ';
    out += token(i);
  }
  return out;
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
  return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw VocabError("vocabulary json must be an object");
  std::vector<std::string> tokens(j.size());
  std::vector<char> seen(j.size(), 0);
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto id = it.value().get<long long>();
    if (id < 0 || id >= static_cast<long long>(tokens.size()) || seen[static_cast<std::size_t>(id)]) {
      throw VocabError("vocabulary ids must be dense from 0 and distinct");
    }
    seen[static_cast<std::size_t>(id)] = 1;
    tokens[static_cast<std::size_t>(id)] = it.key();
  }
  const std::vector<std::string> specials{"<pad>", "<bos>", "<eos>", "<unk>", kSepSurface};
  for (std::size_t i = 0; i < specials.size(); ++i) {
    if (tokens.size() <= i || tokens[i] != specials[i]) throw VocabError("special token '" + specials[i] + "' missing or misplaced");
  }
  Vocabulary v;
  for (const auto& t : tokens) v.add(t);
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw VocabError("cannot write " + path.string());
  out << to_json().dump(1) << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw VocabError("cannot read " + path.string());
  return from_json(nlohmann::json::parse(in));
}

std::vector<int> TokenBatch::column(int t) const {
  std::vector<int> col(ids.size());
  for (std::size_t b = 0; b < ids.size(); ++b) col[b] = ids[b][static_cast<std::size_t>(t)];
  return col;
}

TokenBatch make_batch(const std::vector<std::vector<int>>& seqs) {
  TokenBatch tb;
  for (const auto& s : seqs) tb.max_len = std::max(tb.max_len, static_cast<int>(s.size()));
  for (const auto& s : seqs) {
    auto row = s;
    row.resize(static_cast<std::size_t>(tb.max_len), kPad);
    tb.ids.push_back(std::move(row));
    tb.lengths.push_back(static_cast<int>(s.size()));
  }
  return tb;
}

}  // namespace cigli::text
