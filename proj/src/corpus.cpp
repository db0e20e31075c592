#include "postrisk/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "postrisk/percentile.hpp"
#include "postrisk/preprocess.hpp"
#include "postrisk/rng.hpp"

namespace postrisk {

using nlohmann::json;

const char* to_string(Label label) {
  return label == Label::Depression ? "depression" : "control";
}

Label parse_label(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "depression") return Label::Depression;
  if (lower == "control") return Label::Control;
  throw std::invalid_argument("unknown label \"" + std::string(text) + "\"");
}

const char* to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "valid") return Split::Valid;
  if (text == "test") return Split::Test;
  throw std::invalid_argument("unknown split \"" + std::string(text) + "\"");
}

CorpusError::CorpusError(const std::string& path, std::size_t line, const std::string& detail)
    : std::runtime_error(path + ":" + std::to_string(line) + ": " + detail), line_(line) {}

namespace {

UserRecord record_from_json(const json& obj, const std::string& source, std::size_t line_no) {
  auto fail = [&](const std::string& what) -> CorpusError { return CorpusError(source, line_no, what); };
  if (!obj.is_object()) throw fail("expected a JSON object");

  UserRecord record;
  auto id = obj.find("id");
  if (id == obj.end() || !id->is_string()) throw fail("missing string field \"id\"");
  record.user_id = id->get<std::string>();
  if (record.user_id.empty()) throw fail("empty user id");

  auto label = obj.find("label");
  if (label == obj.end() || !label->is_string()) throw fail("missing string field \"label\"");
  try {
    record.label = parse_label(label->get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw fail(e.what());
  }

  auto posts = obj.find("posts");
  if (posts == obj.end() || !posts->is_array()) throw fail("missing array field \"posts\"");
  if (posts->empty()) throw fail("user \"" + record.user_id + "\" has no posts");
  record.posts.reserve(posts->size());
  for (const auto& p : *posts) {
    auto text = p.is_object() ? p.find("text") : p.end();
    if (!p.is_object() || text == p.end() || !text->is_string()) {
      throw fail("post without a string field \"text\"");
    }
    record.posts.push_back({text->get<std::string>(), record.posts.size()});
  }
  return record;
}

}  // namespace

std::vector<UserRecord> parse_jsonl(std::string_view content, const std::string& source) {
  std::vector<UserRecord> records;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < content.size()) {
    std::size_t end = content.find('\n', start);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw CorpusError(source, line_no, std::string("malformed JSON: ") + e.what());
    }
    UserRecord record = record_from_json(obj, source, line_no);
    if (!seen.insert(record.user_id).second) {
      throw CorpusError(source, line_no, "duplicate user id \"" + record.user_id + "\"");
    }
    records.push_back(std::move(record));
  }
  return records;
}

std::vector<UserRecord> load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError(path, 0, "cannot open corpus file");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_jsonl(buffer.str(), path);
}

std::string to_jsonl(const std::vector<UserRecord>& records) {
  std::string out;
  for (const auto& record : records) {
    json posts = json::array();
    for (const auto& post : record.posts) posts.push_back({{"text", post.text}});
    json obj = {{"id", record.user_id}, {"label", to_string(record.label)}, {"posts", std::move(posts)}};
    out += obj.dump();
    out.push_back('\n');
  }
  return out;
}

void save_jsonl(const std::vector<UserRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorpusError(path, 0, "cannot open corpus file for writing");
  const std::string text = to_jsonl(records);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw CorpusError(path, 0, "write failed");
}

std::size_t preprocessed_token_count(std::string_view raw) { return preprocess_post(raw).tokens.size(); }

SplitStats split_stats(const std::vector<UserRecord>& records, Split split, const TokenCounter& count_tokens) {
  if (records.empty()) throw std::invalid_argument("split_stats requires at least one record");
  SplitStats stats;
  stats.split = split;
  std::array<std::vector<std::size_t>, 2> token_counts;
  for (const auto& record : records) {
    auto& s = stats.per_label[class_index(record.label)];
    ++s.users;
    s.posts += record.posts.size();
    for (const auto& post : record.posts) {
      token_counts[class_index(record.label)].push_back(count_tokens(post.text));
    }
  }
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& counts = token_counts[k];
    if (counts.empty()) continue;
    double sum = 0.0;
    for (std::size_t c : counts) sum += static_cast<double>(c);
    stats.per_label[k].mean_tokens = sum / static_cast<double>(counts.size());
    stats.per_label[k].p95_tokens = nearest_rank(counts, 95.0);
  }
  return stats;
}

std::string format_split_stats(const std::vector<SplitStats>& stats) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-9s%-12s%12s%14s%16s%12s\n", "Datasets", "Labels", "Total Users",
                "Total Posts", "Average Tokens", "95% tokens");
  out += line;
  for (const auto& s : stats) {
    bool first = true;
    for (Label label : kLabels) {
      const auto& ls = s[label];
      std::snprintf(line, sizeof line, "%-9s%-12s%12zu%14zu%16.0f%12zu\n", first ? to_string(s.split) : "",
                    label == Label::Depression ? "Depression" : "Control", ls.users, ls.posts,
                    std::round(ls.mean_tokens), ls.p95_tokens);
      out += line;
      first = false;
    }
  }
  return out;
}

namespace {

constexpr std::array<std::string_view, 16> kSyllables{"ka", "mo", "ti", "re", "su", "na", "lo", "pi",
                                                      "de", "vu", "ga", "be", "fo", "ri", "ze", "hu"};

// Three syllables in base 16: distinct ids give distinct words, up to 4096.
std::string synthetic_word(std::size_t id) {
  std::string word;
  for (int i = 0; i < 3; ++i) {
    word += kSyllables[id % 16];
    id /= 16;
  }
  return word;
}

struct Vocabulary {
  std::vector<std::string> shared;
  std::array<std::vector<std::string>, 2> signal;  // indexed by class_index
};

Vocabulary build_vocabulary(const SyntheticConfig& config) {
  const std::size_t total = config.shared_vocab + 2 * config.signal_vocab;
  if (total > 4096) throw std::invalid_argument("synthetic vocabulary larger than 4096 words");
  Vocabulary vocab;
  std::size_t id = 0;
  for (std::size_t i = 0; i < config.shared_vocab; ++i) vocab.shared.push_back(synthetic_word(id++));
  for (Label label : kLabels) {
    for (std::size_t i = 0; i < config.signal_vocab; ++i) {
      vocab.signal[class_index(label)].push_back(synthetic_word(id++));
    }
  }
  return vocab;
}

constexpr std::array<std::string_view, 6> kContractions{"i'm", "don't", "can't", "it's", "we're", "didn't"};

std::string synthetic_post(Rng& rng, const Vocabulary& vocab, Label label, const SyntheticConfig& config) {
  const double mean = label == Label::Depression ? config.depression_mean_words : config.control_mean_words;
  // Exponential length, at least one word; the long tail occasionally crosses 512.
  const auto words = static_cast<std::size_t>(std::min(700.0, 1.0 + std::floor(-mean * std::log1p(-rng.uniform()))));
  const auto& signal = vocab.signal[class_index(label)];

  std::string text;
  for (std::size_t w = 0; w < words; ++w) {
    if (w) text.push_back(' ');
    std::string word;
    if (!signal.empty() && rng.bernoulli(config.signal_prob)) {
      word = signal[rng.below(signal.size())];
    } else if (!vocab.shared.empty()) {
      word = vocab.shared[rng.below(vocab.shared.size())];
    }
    const double decoration = rng.uniform();
    if (decoration < 0.01) {
      word = "https://example.com/" + word;
    } else if (decoration < 0.02) {
      word += " \xF0\x9F\x98\x80";  // U+1F600
    } else if (decoration < 0.04) {
      word = std::string(kContractions[rng.below(kContractions.size())]) + " " + word;
    } else if (decoration < 0.06 && !word.empty()) {
      word[0] = static_cast<char>(word[0] - 'a' + 'A');
    }
    text += word;
  }
  if (rng.bernoulli(0.5)) text.push_back('.');
  return text;
}

}  // namespace

std::vector<UserRecord> generate_synthetic(const SyntheticConfig& config) {
  if (config.users_per_label < 1) throw std::invalid_argument("users_per_label must be at least 1");
  if (config.min_posts < 1 || config.max_posts > 10000 || config.min_posts > config.max_posts) {
    throw std::invalid_argument("posts range must satisfy 1 <= min <= max <= 10000");
  }
  if (!(config.signal_prob >= 0.0 && config.signal_prob <= 1.0)) {
    throw std::invalid_argument("signal_prob must lie in [0, 1]");
  }
  const Vocabulary vocab = build_vocabulary(config);

  std::vector<UserRecord> records;
  records.reserve(2 * config.users_per_label);
  for (std::size_t i = 0; i < config.users_per_label; ++i) {
    for (Label label : kLabels) {
      const std::size_t index = records.size();
      Rng rng(derive_seed(config.seed, index, hash64(config.id_prefix)));
      char id[32];
      std::snprintf(id, sizeof id, "%06zu", index);

      UserRecord record;
      record.user_id = config.id_prefix + id;
      record.label = label;
      const auto n_posts = static_cast<std::size_t>(
          rng.between(static_cast<std::int64_t>(config.min_posts), static_cast<std::int64_t>(config.max_posts)));
      record.posts.reserve(n_posts);
      for (std::size_t p = 0; p < n_posts; ++p) {
        record.posts.push_back({synthetic_post(rng, vocab, label, config), p});
      }
      records.push_back(std::move(record));
    }
  }
  return records;
}

std::vector<UserRecord> generate_synthetic(std::size_t users_per_label, std::size_t min_posts,
                                           std::size_t max_posts, std::uint64_t seed) {
  SyntheticConfig config;
  config.users_per_label = users_per_label;
  config.min_posts = min_posts;
  config.max_posts = max_posts;
  config.seed = seed;
  return generate_synthetic(config);
}

}  // namespace postrisk
