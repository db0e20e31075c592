#include "postrisk/usermatrix.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "binary_io.hpp"
#include "postrisk/parallel.hpp"
#include "postrisk/percentile.hpp"
#include "postrisk/rng.hpp"

namespace postrisk {

std::size_t derive_threshold(std::span<const std::size_t> post_counts, double percentile) {
  if (post_counts.empty()) throw std::invalid_argument("derive_threshold: no post counts");
  return nearest_rank(post_counts, percentile);
}

std::vector<std::size_t> select_posts(std::size_t count, std::size_t n_max_posts, std::uint64_t seed) {
  std::vector<std::size_t> indices(count);
  std::iota(indices.begin(), indices.end(), std::size_t{0});
  if (count <= n_max_posts) return indices;

  // Partial Fisher-Yates: the first n_max_posts slots become a uniform sample.
  Rng rng(seed);
  for (std::size_t i = 0; i < n_max_posts; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(count - i));
    std::swap(indices[i], indices[j]);
  }
  indices.resize(n_max_posts);
  std::sort(indices.begin(), indices.end());
  return indices;
}

std::uint64_t user_seed(std::uint64_t global_seed, const std::string& user_id) {
  return global_seed ^ hash64(user_id);
}

UserMatrix build_user_matrix(const std::string& user_id, Label label, const PostEmbeddings& vectors,
                             const MatrixConfig& config) {
  if (config.n_max_posts < 1) throw std::invalid_argument("n_max_posts must be at least 1");
  if (vectors.dim() != config.dim) {
    throw std::invalid_argument("user \"" + user_id + "\": embedding dim " + std::to_string(vectors.dim()) +
                                " does not match matrix dim " + std::to_string(config.dim));
  }
  UserMatrix m;
  m.user_id = user_id;
  m.label = label;
  m.n_rows = config.n_max_posts;
  m.dim = config.dim;
  m.rows.assign(m.n_rows * m.dim, 0.0f);

  const auto kept = select_posts(vectors.size(), config.n_max_posts, user_seed(config.seed, user_id));
  m.real_rows = kept.size();
  for (std::size_t r = 0; r < kept.size(); ++r) {
    auto src = vectors.row(kept[r]);
    std::copy(src.begin(), src.end(), m.rows.begin() + static_cast<std::ptrdiff_t>(r * m.dim));
  }
  return m;
}

std::vector<UserMatrix> build_dataset(const EmbeddingStore& store, const std::vector<UserRecord>& records,
                                      const MatrixConfig& config) {
  for (const auto& record : records) {
    if (!store.find(record.user_id)) {
      throw std::invalid_argument("user \"" + record.user_id + "\" is missing from the embedding store");
    }
  }
  if (store.dim() != config.dim) {
    throw std::invalid_argument("embedding store dim " + std::to_string(store.dim()) +
                                " does not match matrix dim " + std::to_string(config.dim));
  }
  std::vector<UserMatrix> out(records.size());
  parallel_for(records.size(), [&](std::size_t i) {
    const auto& record = records[i];
    out[i] = build_user_matrix(record.user_id, record.label, *store.find(record.user_id), config);
  });
  return out;
}

namespace {
constexpr std::uint16_t kMatrixVersion = 1;
}

void write_matrices(const std::vector<UserMatrix>& matrices, const std::string& path) {
  const std::size_t dim = matrices.empty() ? 0 : matrices.front().dim;
  detail::ByteWriter w;
  w.put_raw("SBMX");
  w.put(kMatrixVersion);
  w.put(static_cast<std::uint16_t>(dim));
  w.put(static_cast<std::uint64_t>(matrices.size()));
  for (const auto& m : matrices) {
    if (m.dim != dim) throw std::invalid_argument("matrices in one dump must share dim");
    w.put(static_cast<std::uint32_t>(m.user_id.size()));
    w.put_raw(m.user_id);
    w.put(static_cast<std::uint8_t>(m.label));
    w.put(static_cast<std::uint32_t>(m.n_rows));
    w.put(static_cast<std::uint32_t>(m.real_rows));
    w.put_reals(std::span<const float>(m.rows));
  }
  detail::write_file_bytes(path, w.bytes());
}

std::vector<UserMatrix> read_matrices(const std::string& path) {
  detail::ByteReader r(detail::read_file_bytes(path), path);
  if (r.remaining() < 4 || r.get_raw(4, "magic") != "SBMX") {
    throw FormatError(FormatErrorKind::BadMagic, path, 0, "bad magic, expected \"SBMX\"");
  }
  const auto version = r.get<std::uint16_t>("version");
  if (version != kMatrixVersion) {
    r.fail(FormatErrorKind::UnsupportedVersion, "unsupported matrix dump version " + std::to_string(version));
  }
  const auto dim = r.get<std::uint16_t>("dim");
  const auto count = r.get<std::uint64_t>("matrix count");
  std::vector<UserMatrix> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    UserMatrix m;
    m.user_id = r.get_raw(r.get<std::uint32_t>("user id length"), "user id");
    const auto label = r.get<std::uint8_t>("label");
    if (label > 1) r.fail(FormatErrorKind::Corrupt, "label byte out of range");
    m.label = static_cast<Label>(label);
    m.dim = dim;
    m.n_rows = r.get<std::uint32_t>("row count");
    m.real_rows = r.get<std::uint32_t>("real row count");
    if (m.real_rows > m.n_rows) r.fail(FormatErrorKind::Corrupt, "real_rows exceeds n_rows");
    r.require(static_cast<std::uint64_t>(m.n_rows) * dim * 4, "matrix rows");
    m.rows.resize(m.n_rows * m.dim);
    r.get_reals(std::span<float>(m.rows), "matrix rows");
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace postrisk
