#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "postrisk/corpus.hpp"
#include "postrisk/preprocess.hpp"

namespace postrisk {

inline constexpr std::size_t kEmbeddingDim = 384;

using EmbeddingVector = std::vector<float>;

/// One user's post vectors, row-major (posts x dim).
class PostEmbeddings {
 public:
  PostEmbeddings() = default;
  explicit PostEmbeddings(std::size_t dim) : dim_(dim) {}
  PostEmbeddings(std::size_t dim, std::vector<float> values);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return dim_ == 0 ? 0 : values_.size() / dim_; }
  std::span<const float> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  std::span<const float> values() const noexcept { return values_; }

  void push_back(std::span<const float> vector);

  bool operator==(const PostEmbeddings&) const = default;

 private:
  std::size_t dim_ = 0;
  std::vector<float> values_;
};

/// user_id -> ordered post vectors. Users keep insertion order.
class EmbeddingStore {
 public:
  struct Entry {
    std::string user_id;
    PostEmbeddings posts;
    bool operator==(const Entry&) const = default;
  };

  EmbeddingStore() = default;
  explicit EmbeddingStore(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  /// Throws on a duplicate id or a dimension mismatch.
  void add(std::string user_id, PostEmbeddings posts);
  const PostEmbeddings* find(const std::string& user_id) const;

  bool operator==(const EmbeddingStore& other) const {
    return dim_ == other.dim_ && entries_ == other.entries_;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual EmbeddingVector embed(const CleanPost& post) const = 0;
};

/// Signed hashed bag-of-words, L2-normalised; the empty post maps to zeros.
EmbeddingVector stub_embed(const CleanPost& post, std::size_t dim = kEmbeddingDim, std::uint64_t seed = 0);

class StubProvider final : public EmbeddingProvider {
 public:
  explicit StubProvider(std::size_t dim = kEmbeddingDim, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {}
  std::size_t dim() const override { return dim_; }
  EmbeddingVector embed(const CleanPost& post) const override { return stub_embed(post, dim_, seed_); }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

/// Preprocesses and embeds every post of every user, in order.
EmbeddingStore embed_corpus(const std::vector<UserRecord>& records, const EmbeddingProvider& provider,
                            const ContractionTable& table = ContractionTable::builtin());

// SBEM v1, little-endian: "SBEM", u16 version, u16 dim, u64 users, then per
// user u32 id_len, id bytes, u32 post_count, post_count*dim float32.
inline constexpr std::uint16_t kStoreVersion = 1;

std::string serialize_store(const EmbeddingStore& store);
EmbeddingStore deserialize_store(std::string bytes, const std::string& source = "<memory>",
                                 std::optional<std::size_t> expected_dim = std::nullopt);
void write_store(const EmbeddingStore& store, const std::string& path);
EmbeddingStore read_store(const std::string& path, std::optional<std::size_t> expected_dim = std::nullopt);

}  // namespace postrisk
