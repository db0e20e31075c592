#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "postrisk/corpus.hpp"
#include "postrisk/embedding.hpp"

namespace postrisk {

struct MatrixConfig {
  std::size_t n_max_posts = 0;  // N
  std::size_t dim = kEmbeddingDim;
  std::optional<double> percentile_source;
  std::uint64_t seed = 0;
};

/// Fixed (N, dim) CNN input: real post rows first, zero rows after.
struct UserMatrix {
  std::string user_id;
  Label label = Label::Control;
  std::size_t n_rows = 0;
  std::size_t dim = 0;
  std::size_t real_rows = 0;
  std::vector<float> rows;  // n_rows * dim, row-major

  std::span<const float> row(std::size_t i) const { return {rows.data() + i * dim, dim}; }
  bool operator==(const UserMatrix&) const = default;
};

/// Nearest-rank percentile of the pooled per-user post counts.
std::size_t derive_threshold(std::span<const std::size_t> post_counts, double percentile);

/// Indices of the posts kept for a user with `count` posts, ascending. At most
/// n_max_posts of them, drawn without replacement from the seeded stream.
std::vector<std::size_t> select_posts(std::size_t count, std::size_t n_max_posts, std::uint64_t seed);

/// Per-user subsample seed: global seed XOR hash(user_id).
std::uint64_t user_seed(std::uint64_t global_seed, const std::string& user_id);

UserMatrix build_user_matrix(const std::string& user_id, Label label, const PostEmbeddings& vectors,
                             const MatrixConfig& config);

std::vector<UserMatrix> build_dataset(const EmbeddingStore& store, const std::vector<UserRecord>& records,
                                      const MatrixConfig& config);

// SBMX debug dump: "SBMX", u16 version, u16 dim, u64 count, then per matrix
// u32 id_len, id, u8 label, u32 n_rows, u32 real_rows, n_rows*dim float32.
void write_matrices(const std::vector<UserMatrix>& matrices, const std::string& path);
std::vector<UserMatrix> read_matrices(const std::string& path);

}  // namespace postrisk
