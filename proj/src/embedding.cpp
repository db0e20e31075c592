#include "postrisk/embedding.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "binary_io.hpp"
#include "postrisk/parallel.hpp"
#include "postrisk/rng.hpp"

namespace postrisk {

PostEmbeddings::PostEmbeddings(std::size_t dim, std::vector<float> values) : dim_(dim), values_(std::move(values)) {
  if (dim_ == 0 || values_.size() % dim_ != 0) {
    throw std::invalid_argument("post embedding buffer is not a whole number of rows");
  }
}

void PostEmbeddings::push_back(std::span<const float> vector) {
  if (vector.size() != dim_) {
    throw std::invalid_argument("embedding length " + std::to_string(vector.size()) + " does not match dim " +
                                std::to_string(dim_));
  }
  values_.insert(values_.end(), vector.begin(), vector.end());
}

void EmbeddingStore::add(std::string user_id, PostEmbeddings posts) {
  if (posts.dim() != dim_) {
    throw std::invalid_argument("user \"" + user_id + "\" has dim " + std::to_string(posts.dim()) +
                                ", store dim is " + std::to_string(dim_));
  }
  if (index_.contains(user_id)) throw std::invalid_argument("duplicate user \"" + user_id + "\" in store");
  index_.emplace(user_id, entries_.size());
  entries_.push_back({std::move(user_id), std::move(posts)});
}

const PostEmbeddings* EmbeddingStore::find(const std::string& user_id) const {
  auto it = index_.find(user_id);
  return it == index_.end() ? nullptr : &entries_[it->second].posts;
}

EmbeddingVector stub_embed(const CleanPost& post, std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw std::invalid_argument("stub_embed: dim must be positive");
  std::vector<double> counts(dim, 0.0);
  for (const auto& token : post.tokens) {
    const std::uint64_t h = hash64(token, seed);
    const std::size_t index = static_cast<std::size_t>((h >> 32) % dim);
    counts[index] += (h & 1u) ? 1.0 : -1.0;
  }
  double norm_sq = 0.0;
  for (double c : counts) norm_sq += c * c;

  EmbeddingVector out(dim, 0.0f);
  // Colliding tokens with opposite signs can cancel to an all-zero count vector.
  if (norm_sq == 0.0) return out;
  const double inv = 1.0 / std::sqrt(norm_sq);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(counts[i] * inv);
  return out;
}

EmbeddingStore embed_corpus(const std::vector<UserRecord>& records, const EmbeddingProvider& provider,
                            const ContractionTable& table) {
  const std::size_t dim = provider.dim();
  std::vector<PostEmbeddings> embedded(records.size(), PostEmbeddings(dim));
  parallel_for(records.size(), [&](std::size_t u) {
    for (const auto& post : records[u].posts) {
      EmbeddingVector v = provider.embed(preprocess_post(post.text, table));
      if (v.size() != dim) {
        throw std::runtime_error("provider returned a vector of length " + std::to_string(v.size()) +
                                 ", expected " + std::to_string(dim));
      }
      embedded[u].push_back(v);
    }
  });

  EmbeddingStore store(dim);
  for (std::size_t u = 0; u < records.size(); ++u) store.add(records[u].user_id, std::move(embedded[u]));
  return store;
}

std::string serialize_store(const EmbeddingStore& store) {
  if (store.dim() > std::numeric_limits<std::uint16_t>::max()) {
    throw std::invalid_argument("store dim does not fit the u16 header field");
  }
  detail::ByteWriter w;
  w.put_raw("SBEM");
  w.put(kStoreVersion);
  w.put(static_cast<std::uint16_t>(store.dim()));
  w.put(static_cast<std::uint64_t>(store.size()));
  for (const auto& entry : store.entries()) {
    w.put(static_cast<std::uint32_t>(entry.user_id.size()));
    w.put_raw(entry.user_id);
    w.put(static_cast<std::uint32_t>(entry.posts.size()));
    w.put_reals(entry.posts.values());
  }
  return w.bytes();
}

EmbeddingStore deserialize_store(std::string bytes, const std::string& source, std::optional<std::size_t> expected_dim) {
  detail::ByteReader r(std::move(bytes), source);
  if (r.remaining() < 4 || r.get_raw(4, "magic") != "SBEM") {
    throw FormatError(FormatErrorKind::BadMagic, source, 0, "bad magic, expected \"SBEM\"");
  }
  const auto version = r.get<std::uint16_t>("version");
  if (version != kStoreVersion) {
    r.fail(FormatErrorKind::UnsupportedVersion, "unsupported store version " + std::to_string(version));
  }
  const auto dim = r.get<std::uint16_t>("dim");
  if (dim == 0) r.fail(FormatErrorKind::Corrupt, "store dim is zero");
  if (expected_dim && *expected_dim != dim) {
    r.fail(FormatErrorKind::DimensionMismatch,
           "store dim " + std::to_string(dim) + " does not match expected " + std::to_string(*expected_dim));
  }
  const auto users = r.get<std::uint64_t>("user count");

  EmbeddingStore store(dim);
  for (std::uint64_t u = 0; u < users; ++u) {
    const auto id_len = r.get<std::uint32_t>("user id length");
    std::string id = r.get_raw(id_len, "user id");
    const auto posts = r.get<std::uint32_t>("post count");
    r.require(static_cast<std::uint64_t>(posts) * dim * 4, "post vectors");
    std::vector<float> values(static_cast<std::size_t>(posts) * dim);
    r.get_reals(std::span<float>(values), "post vectors");
    if (store.find(id)) r.fail(FormatErrorKind::Corrupt, "duplicate user \"" + id + "\"");
    store.add(std::move(id), PostEmbeddings(dim, std::move(values)));
  }
  if (r.remaining() != 0) r.fail(FormatErrorKind::Corrupt, "trailing bytes after the last user");
  return store;
}

void write_store(const EmbeddingStore& store, const std::string& path) {
  detail::write_file_bytes(path, serialize_store(store));
}

EmbeddingStore read_store(const std::string& path, std::optional<std::size_t> expected_dim) {
  return deserialize_store(detail::read_file_bytes(path), path, expected_dim);
}

}  // namespace postrisk
