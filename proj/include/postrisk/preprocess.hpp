#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace postrisk {

inline constexpr std::size_t kMaxPostTokens = 512;

/// Lowercase contraction -> expansion lookup. Immutable once built.
class ContractionTable {
 public:
  ContractionTable() = default;

  /// Parses `contraction<TAB>expansion` lines. Blank lines and lines starting
  /// with '#' are ignored; keys must be lowercase ASCII.
  static ContractionTable parse(std::string_view text, std::string_view source = "<memory>");
  static ContractionTable load(const std::string& path);
  /// The table shipped in data/contractions.tsv, compiled in.
  static const ContractionTable& builtin();

  const std::string* find(std::string_view word) const;
  std::size_t size() const noexcept { return entries_.size(); }
  const std::unordered_map<std::string, std::string>& entries() const noexcept { return entries_; }

 private:
  std::unordered_map<std::string, std::string> entries_;
};

struct CleanPost {
  std::vector<std::string> tokens;
  bool truncated = false;
};

/// Strips non-ASCII bytes and URLs, lowercases, and collapses whitespace.
std::string clean_text(std::string_view raw);

/// Replaces whole words found in the table. Input is expected to be lowercase.
std::string expand_contractions(std::string_view text,
                                const ContractionTable& table = ContractionTable::builtin());

/// Whitespace split, then leading/trailing punctuation runs become their own tokens.
std::vector<std::string> tokenize(std::string_view text);

/// clean_text -> expand_contractions -> tokenize -> keep the first 512 tokens.
CleanPost preprocess_post(std::string_view raw, const ContractionTable& table = ContractionTable::builtin());

std::string join_tokens(const std::vector<std::string>& tokens);

}  // namespace postrisk
