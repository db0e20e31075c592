#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "postrisk/corpus.hpp"
#include "postrisk/embedding.hpp"
#include "postrisk/nn.hpp"
#include "postrisk/usermatrix.hpp"

namespace postrisk {

// ---------------------------------------------------------------- metrics

/// Counts against the positive class (Depression).
struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const noexcept { return tp + fp + fn + tn; }
  void add(Label predicted, Label truth);
  bool operator==(const ConfusionMatrix&) const = default;
};

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Harmonic mean; 0 when precision + recall == 0.
double f1_score(double precision, double recall);

/// Accuracy, precision, recall, F1. A ratio with a zero denominator is 0.
Metrics compute_metrics(const ConfusionMatrix& cm);

ConfusionMatrix tally(std::span<const Label> predicted, std::span<const Label> truth);

/// Argmax over the two class logits; an exact tie goes to Control.
Label predict_label(std::span<const float> logits);

// ---------------------------------------------------------------- training

struct TrainConfig {
  std::size_t max_epochs = 50;
  std::size_t patience = 3;
  std::optional<std::size_t> fixed_epochs;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double lr = 1e-4;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double seconds = 0.0;
};

enum class StopReason { PatienceExhausted, MaxEpochs, FixedEpochs };
const char* to_string(StopReason reason);

/// Tracks the best validation loss; strict improvement resets the counter.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience);

  /// Returns true when `loss` is a new best.
  bool observe(double loss);
  bool exhausted() const noexcept { return since_best_ >= patience_; }
  double best_loss() const noexcept { return best_loss_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }
  std::size_t epochs_seen() const noexcept { return epochs_; }

 private:
  std::size_t patience_;
  double best_loss_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  std::size_t epochs_ = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, const std::string& what);
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

struct TrainResult {
  nn::Model<float> model;  // parameters from the best validation epoch
  nn::AdamState<float> adam;
  std::vector<EpochLog> logs;
  StopReason stop = StopReason::MaxEpochs;
  std::size_t best_epoch = 0;
  double best_valid_loss = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

nn::MatrixView<float> as_view(const UserMatrix& m);

/// Mean inference-mode cross-entropy over a set of users.
double mean_loss(const nn::Model<float>& model, const std::vector<UserMatrix>& set);

TrainResult train(const std::vector<UserMatrix>& train_set, const std::vector<UserMatrix>& valid_set,
                  nn::Model<float> model, const TrainConfig& config, const EpochCallback& on_epoch = {});

struct Evaluation {
  ConfusionMatrix confusion;
  Metrics metrics;
};

Evaluation evaluate(const nn::Model<float>& model, const std::vector<UserMatrix>& test_set);

std::string epoch_csv(const std::vector<EpochLog>& logs);
std::string epoch_timing_csv(const std::vector<EpochLog>& logs);
std::string metrics_text(const Evaluation& eval);
std::string metrics_csv(const Evaluation& eval);

// ---------------------------------------------------------------- percentile sweep

struct SweepConfig {
  nn::Architecture arch_template = nn::Architecture::standard(0);  // n_posts is filled per row
  nn::Hyperparams hp;
  TrainConfig train;
  std::uint64_t matrix_seed = 0;
  std::uint64_t model_seed = 0;
};

struct SweepRow {
  double percentile = 0.0;
  std::size_t n_posts = 0;
  Evaluation eval;
  std::size_t epochs = 0;
  StopReason stop = StopReason::MaxEpochs;
};

struct SweepData {
  const std::vector<UserRecord>& train;
  const std::vector<UserRecord>& valid;
  const std::vector<UserRecord>& test;
  const EmbeddingStore& store;
};

/// Per percentile: derive N from the training split's pooled post counts,
/// rebuild matrices and a fresh model, train, and evaluate on the test split.
std::vector<SweepRow> sweep_percentiles(const SweepData& data, std::span<const double> percentiles,
                                        const SweepConfig& config, const EpochCallback& on_epoch = {});

/// "Percentile Posts/user Accuracy F1 score Precision Recall" table.
std::string sweep_table(const std::vector<SweepRow>& rows);
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace postrisk
