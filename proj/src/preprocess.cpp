#include "postrisk/preprocess.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "contractions_data.hpp"

namespace postrisk {
namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

bool is_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return (u >= 0x21 && u <= 0x2f) || (u >= 0x3a && u <= 0x40) || (u >= 0x5b && u <= 0x60) ||
         (u >= 0x7b && u <= 0x7e);
}

bool is_word_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '\'';
}

char to_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

bool starts_with_at(std::string_view s, std::size_t pos, std::string_view prefix) {
  return s.substr(pos, prefix.size()) == prefix;
}

std::size_t url_prefix_length(std::string_view s, std::size_t pos) {
  for (std::string_view prefix : {"http://", "https://", "www."}) {
    if (starts_with_at(s, pos, prefix)) return prefix.size();
  }
  return 0;
}

}  // namespace

ContractionTable ContractionTable::parse(std::string_view text, std::string_view source) {
  ContractionTable table;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;

    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos || tab == 0 || tab + 1 == line.size()) {
      throw std::runtime_error(std::string(source) + ":" + std::to_string(line_no) +
                               ": expected 'contraction<TAB>expansion'");
    }
    std::string key(line.substr(0, tab));
    for (char c : key) {
      if (c >= 'A' && c <= 'Z') {
        throw std::runtime_error(std::string(source) + ":" + std::to_string(line_no) +
                                 ": contraction keys must be lowercase");
      }
    }
    table.entries_[std::move(key)] = std::string(line.substr(tab + 1));
  }
  return table;
}

ContractionTable ContractionTable::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open contraction table");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path);
}

const ContractionTable& ContractionTable::builtin() {
  static const ContractionTable table = parse(detail::kBuiltinContractions, "builtin contractions");
  return table;
}

const std::string* ContractionTable::find(std::string_view word) const {
  auto it = entries_.find(std::string(word));
  return it == entries_.end() ? nullptr : &it->second;
}

std::string clean_text(std::string_view raw) {
  // Non-ASCII bytes go first so that removing an emoji can never splice a URL
  // together; URL matching then runs on lowercase text.
  std::string ascii;
  ascii.reserve(raw.size());
  for (char c : raw) {
    if (static_cast<unsigned char>(c) <= 0x7f) ascii.push_back(to_lower(c));
  }

  std::string no_urls;
  no_urls.reserve(ascii.size());
  for (std::size_t i = 0; i < ascii.size();) {
    if (url_prefix_length(ascii, i) > 0) {
      while (i < ascii.size() && !is_space(ascii[i])) ++i;
      continue;
    }
    no_urls.push_back(ascii[i++]);
  }

  std::string out;
  out.reserve(no_urls.size());
  bool pending_space = false;
  for (char c : no_urls) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::string expand_contractions(std::string_view text, const ContractionTable& table) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_word_char(text[i])) {
      out.push_back(text[i++]);
      continue;
    }
    const std::size_t begin = i;
    while (i < text.size() && is_word_char(text[i])) ++i;
    std::string_view word = text.substr(begin, i - begin);

    // Edge apostrophes are quote marks unless the table says otherwise: try the
    // candidates that strip the fewest of them, trailing ones first.
    std::size_t lead = 0;
    while (lead < word.size() && word[lead] == '\'') ++lead;
    std::size_t trail = 0;
    while (trail < word.size() - lead && word[word.size() - 1 - trail] == '\'') ++trail;
    bool replaced = false;
    for (std::size_t cut = 0; cut <= lead + trail && !replaced; ++cut) {
      for (std::size_t t = std::min(cut, trail) + 1; t-- > 0 && cut - t <= lead;) {
        const std::size_t l = cut - t;
        if (l + t >= word.size()) continue;
        if (const std::string* expansion = table.find(word.substr(l, word.size() - l - t))) {
          out.append(word.substr(0, l));
          out += *expansion;
          out.append(word.substr(word.size() - t));
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out.append(word);
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t begin = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    std::string_view word = text.substr(begin, i - begin);
    if (word.empty()) continue;

    std::size_t lead = 0;
    while (lead < word.size() && is_punct(word[lead])) ++lead;
    if (lead == word.size()) {
      tokens.emplace_back(word);
      continue;
    }
    std::size_t trail = word.size();
    while (trail > lead && is_punct(word[trail - 1])) --trail;

    if (lead > 0) tokens.emplace_back(word.substr(0, lead));
    tokens.emplace_back(word.substr(lead, trail - lead));
    if (trail < word.size()) tokens.emplace_back(word.substr(trail));
  }
  return tokens;
}

CleanPost preprocess_post(std::string_view raw, const ContractionTable& table) {
  CleanPost post;
  post.tokens = tokenize(expand_contractions(clean_text(raw), table));
  if (post.tokens.size() > kMaxPostTokens) {
    post.tokens.resize(kMaxPostTokens);
    post.truncated = true;
  }
  return post;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

}  // namespace postrisk
