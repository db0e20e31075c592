#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace postrisk {

/// Depression is the positive class everywhere; class index 1.
enum class Label : std::uint8_t { Control = 0, Depression = 1 };

inline constexpr std::array<Label, 2> kLabels{Label::Depression, Label::Control};

const char* to_string(Label label);
/// Case-insensitive; throws std::invalid_argument("unknown label ...") otherwise.
Label parse_label(std::string_view text);
inline constexpr std::size_t class_index(Label label) { return static_cast<std::size_t>(label); }

enum class Split : std::uint8_t { Train, Valid, Test };
const char* to_string(Split split);
Split parse_split(std::string_view text);

struct Post {
  std::string text;
  std::uint64_t created_order = 0;

  bool operator==(const Post&) const = default;
};

struct UserRecord {
  std::string user_id;
  Label label = Label::Control;
  std::vector<Post> posts;

  bool operator==(const UserRecord&) const = default;
};

/// Parse and validation failures; the message carries "<path>:<line>: ...".
class CorpusError : public std::runtime_error {
 public:
  CorpusError(const std::string& path, std::size_t line, const std::string& detail);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

std::vector<UserRecord> parse_jsonl(std::string_view content, const std::string& source = "<memory>");
std::vector<UserRecord> load_jsonl(const std::string& path);
std::string to_jsonl(const std::vector<UserRecord>& records);
void save_jsonl(const std::vector<UserRecord>& records, const std::string& path);

struct LabelStats {
  std::size_t users = 0;
  std::size_t posts = 0;
  double mean_tokens = 0.0;
  std::size_t p95_tokens = 0;
};

struct SplitStats {
  Split split = Split::Train;
  std::array<LabelStats, 2> per_label{};  // indexed by class_index

  const LabelStats& operator[](Label label) const { return per_label[class_index(label)]; }
};

using TokenCounter = std::function<std::size_t(std::string_view)>;

/// Token count of a post after the full preprocessing chain.
std::size_t preprocessed_token_count(std::string_view raw);

SplitStats split_stats(const std::vector<UserRecord>& records, Split split,
                       const TokenCounter& count_tokens = preprocessed_token_count);

/// Table I style rendering: Labels, Total Users, Total Posts, Average Tokens, 95% tokens.
std::string format_split_stats(const std::vector<SplitStats>& stats);

struct SyntheticConfig {
  std::size_t users_per_label = 100;
  std::size_t min_posts = 40;
  std::size_t max_posts = 200;
  std::uint64_t seed = 0;
  std::size_t shared_vocab = 2000;
  std::size_t signal_vocab = 200;
  /// Probability that a token slot draws from the owning label's signal pool.
  double signal_prob = 0.3;
  /// Per-label mean post length in words (depression posts run longer).
  double depression_mean_words = 45.0;
  double control_mean_words = 26.0;
  std::string id_prefix = "u";
};

std::vector<UserRecord> generate_synthetic(const SyntheticConfig& config);

/// Convenience overload with the default vocabulary settings.
std::vector<UserRecord> generate_synthetic(std::size_t users_per_label, std::size_t min_posts,
                                           std::size_t max_posts, std::uint64_t seed);

}  // namespace postrisk
