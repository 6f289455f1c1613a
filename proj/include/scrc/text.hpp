#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "scrc/error.hpp"

namespace scrc {

using TokenId = std::uint32_t;
using TokenSequence = std::vector<TokenId>;

inline constexpr TokenId kUnk = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr std::size_t kNumReserved = 3;

/// Lowercases ASCII, turns ASCII punctuation into separators and splits on
/// whitespace. Non-ASCII bytes pass through untouched.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (const char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    const bool sep = u < 0x80 && (std::isspace(u) || std::ispunct(u));
    if (sep) {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : ch);
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

class Vocabulary {
 public:
  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

  /// Builds from the content tokens; reserved markers are prepended.
  explicit Vocabulary(const std::vector<std::string>& content) {
    for (const char* r : {"<unk>", "<bos>", "<eos>"}) add(r);
    for (const auto& t : content) {
      if (index_.contains(t))
        throw InputError("duplicate vocabulary token '" + t + "'");
      add(t);
    }
  }

  /// Restores a vocabulary from its full token list (reserved ones included).
  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    if (tokens.size() < kNumReserved || tokens[kUnk] != "<unk>" ||
        tokens[kBos] != "<bos>" || tokens[kEos] != "<eos>")
      throw InputError("vocabulary must start with <unk>, <bos>, <eos>");
    return Vocabulary(
        std::vector<std::string>(tokens.begin() + kNumReserved, tokens.end()));
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  TokenId lookup(const std::string& token) const {
    const auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& token) const {
    return index_.contains(token);
  }

  const std::string& decode(TokenId id) const {
    if (id >= tokens_.size())
      throw InputError("token id " + std::to_string(id) + " out of range");
    return tokens_[id];
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  void add(const std::string& t) {
    index_.emplace(t, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(t);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Tokens with frequency >= min_count, ordered by (frequency desc, token asc).
inline Vocabulary build_vocab(const std::vector<std::string>& corpus,
                              std::size_t min_count = 1) {
  if (min_count < 1) throw InputError("min_count must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& text : corpus)
    for (auto& tok : tokenize(text)) ++counts[tok];
  for (const char* r : {"<unk>", "<bos>", "<eos>"}) counts.erase(r);

  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts)
    if (n >= min_count) kept.emplace_back(tok, n);
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> content;
  content.reserve(kept.size());
  for (auto& [tok, n] : kept) content.push_back(tok);
  return Vocabulary(content);
}

inline TokenSequence encode(const Vocabulary& vocab, std::string_view text) {
  TokenSequence ids;
  for (const auto& tok : tokenize(text)) ids.push_back(vocab.lookup(tok));
  return ids;
}

inline std::vector<std::string> decode(const Vocabulary& vocab,
                                       const TokenSequence& ids) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (const auto id : ids) out.push_back(vocab.decode(id));
  return out;
}

inline std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

}  // namespace scrc
