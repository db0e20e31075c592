#include "postrisk/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "postrisk/parallel.hpp"
#include "postrisk/rng.hpp"

namespace postrisk {

void ConfusionMatrix::add(Label predicted, Label truth) {
  const bool pos_pred = predicted == Label::Depression;
  const bool pos_true = truth == Label::Depression;
  if (pos_pred && pos_true) ++tp;
  else if (pos_pred) ++fp;
  else if (pos_true) ++fn;
  else ++tn;
}

double f1_score(double precision, double recall) {
  const double denom = precision + recall;
  return denom > 0.0 ? 2.0 * (precision * recall) / denom : 0.0;
}

Metrics compute_metrics(const ConfusionMatrix& cm) {
  auto ratio = [](std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  Metrics m;
  m.accuracy = ratio(cm.tp + cm.tn, cm.total());
  m.precision = ratio(cm.tp, cm.tp + cm.fp);
  m.recall = ratio(cm.tp, cm.tp + cm.fn);
  m.f1 = f1_score(m.precision, m.recall);
  return m;
}

ConfusionMatrix tally(std::span<const Label> predicted, std::span<const Label> truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("tally: prediction/label count mismatch");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < predicted.size(); ++i) cm.add(predicted[i], truth[i]);
  return cm;
}

Label predict_label(std::span<const float> logits) {
  if (logits.size() != 2) throw std::invalid_argument("predict_label: expected two logits");
  return logits[class_index(Label::Depression)] > logits[class_index(Label::Control)] ? Label::Depression
                                                                                     : Label::Control;
}

const char* to_string(StopReason reason) {
  switch (reason) {
    case StopReason::PatienceExhausted: return "patience exhausted";
    case StopReason::MaxEpochs: return "max epochs reached";
    case StopReason::FixedEpochs: return "fixed epochs completed";
  }
  return "?";
}

EarlyStopping::EarlyStopping(std::size_t patience) : patience_(patience) {
  if (patience_ < 1) throw std::invalid_argument("patience must be at least 1");
}

bool EarlyStopping::observe(double loss) {
  ++epochs_;
  if (loss < best_loss_) {
    best_loss_ = loss;
    best_epoch_ = epochs_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

TrainingDiverged::TrainingDiverged(std::size_t epoch, const std::string& what)
    : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

nn::MatrixView<float> as_view(const UserMatrix& m) { return {m.n_rows, m.dim, m.rows}; }

double mean_loss(const nn::Model<float>& model, const std::vector<UserMatrix>& set) {
  if (set.empty()) throw std::invalid_argument("mean_loss: empty set");
  std::vector<double> losses(set.size());
  parallel_for(set.size(), [&](std::size_t i) {
    auto pass = nn::forward(model, as_view(set[i]), nn::Mode::Infer);
    losses[i] = nn::softmax_xent<float>(pass.logits, class_index(set[i].label)).loss;
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(set.size());
}

TrainResult train(const std::vector<UserMatrix>& train_set, const std::vector<UserMatrix>& valid_set,
                  nn::Model<float> model, const TrainConfig& config, const EpochCallback& on_epoch) {
  if (train_set.empty() || valid_set.empty()) throw std::invalid_argument("train: train and valid sets must be non-empty");
  if (config.batch_size < 1) throw std::invalid_argument("train: batch_size must be at least 1");
  for (const auto* set : {&train_set, &valid_set}) {
    for (const auto& m : *set) {
      if (m.n_rows != model.arch.n_posts || m.dim != model.arch.dim) {
        throw nn::ShapeError("train: user \"" + m.user_id + "\" matrix does not match the model input shape");
      }
    }
  }
  const std::size_t epochs = config.fixed_epochs.value_or(config.max_epochs);
  if (epochs < 1) throw std::invalid_argument("train: at least one epoch is required");

  nn::AdamConfig adam_config;
  adam_config.lr = config.lr;
  nn::AdamState<float> adam = nn::make_adam_state<float>(model.arch, adam_config);
  EarlyStopping stopper(config.patience);

  TrainResult result{model, adam, {}, config.fixed_epochs ? StopReason::FixedEpochs : StopReason::MaxEpochs, 0, 0.0};

  const std::size_t n = train_set.size();
  const std::size_t slots = std::min(config.batch_size, n);
  std::vector<nn::ModelParams<float>> sample_grads(slots, nn::ModelParams<float>::zeros(model.arch));
  nn::ModelParams<float> batch_grad = nn::ModelParams<float>::zeros(model.arch);
  std::vector<double> sample_loss(slots);
  std::vector<std::size_t> order(n);

  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(config.seed, epoch, 0x5348u));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t batch = std::min(config.batch_size, n - start);
      parallel_for(batch, [&](std::size_t i) {
        const UserMatrix& sample = train_set[order[start + i]];
        const std::uint64_t dropout_seed = derive_seed(config.seed, epoch, start + i);
        auto pass = nn::forward(model, as_view(sample), nn::Mode::Train, dropout_seed);
        auto xent = nn::softmax_xent<float>(pass.logits, class_index(sample.label));
        sample_grads[i].fill(0.0f);
        nn::backward_into<float>(model, pass.cache, xent.grad_logits, sample_grads[i]);
        sample_loss[i] = xent.loss;
      });
      // Fixed-order reduction keeps the update independent of the thread count.
      batch_grad = sample_grads[0];
      for (std::size_t i = 1; i < batch; ++i) batch_grad.add(sample_grads[i]);
      batch_grad.scale(1.0f / static_cast<float>(batch));
      for (std::size_t i = 0; i < batch; ++i) loss_sum += sample_loss[i];
      if (!std::isfinite(loss_sum)) throw TrainingDiverged(epoch, "non-finite training loss");
      try {
        nn::adam_step(model.params, batch_grad, adam);
      } catch (const std::domain_error& e) {
        throw TrainingDiverged(epoch, e.what());
      }
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(n);
    log.valid_loss = mean_loss(model, valid_set);
    if (!std::isfinite(log.valid_loss)) throw TrainingDiverged(epoch, "non-finite validation loss");
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.logs.push_back(log);
    if (on_epoch) on_epoch(log);

    if (stopper.observe(log.valid_loss)) {
      result.model = model;
      result.adam = adam;
    }
    if (!config.fixed_epochs && stopper.exhausted()) {
      result.stop = StopReason::PatienceExhausted;
      break;
    }
  }
  result.best_epoch = stopper.best_epoch();
  result.best_valid_loss = stopper.best_loss();
  return result;
}

Evaluation evaluate(const nn::Model<float>& model, const std::vector<UserMatrix>& test_set) {
  if (test_set.empty()) throw std::invalid_argument("evaluate: empty test set");
  std::vector<Label> predicted(test_set.size());
  std::vector<Label> truth(test_set.size());
  parallel_for(test_set.size(), [&](std::size_t i) {
    auto pass = nn::forward(model, as_view(test_set[i]), nn::Mode::Infer);
    predicted[i] = predict_label(pass.logits);
    truth[i] = test_set[i].label;
  });
  Evaluation eval;
  eval.confusion = tally(predicted, truth);
  eval.metrics = compute_metrics(eval.confusion);
  return eval;
}

namespace {

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string ordinal(double p) {
  char buf[32];
  if (p == std::floor(p)) {
    const long v = static_cast<long>(p);
    const char* suffix = "th";
    if (v % 100 < 11 || v % 100 > 13) {
      if (v % 10 == 1) suffix = "st";
      else if (v % 10 == 2) suffix = "nd";
      else if (v % 10 == 3) suffix = "rd";
    }
    std::snprintf(buf, sizeof buf, "%ld%s", v, suffix);
  } else {
    std::snprintf(buf, sizeof buf, "%g", p);
  }
  return buf;
}

}  // namespace

std::string epoch_csv(const std::vector<EpochLog>& logs) {
  std::string out = "epoch,train_loss,valid_loss\n";
  for (const auto& l : logs) {
    out += std::to_string(l.epoch) + "," + format_real(l.train_loss) + "," + format_real(l.valid_loss) + "\n";
  }
  return out;
}

std::string epoch_timing_csv(const std::vector<EpochLog>& logs) {
  std::string out = "epoch,seconds\n";
  for (const auto& l : logs) out += std::to_string(l.epoch) + "," + format_real(l.seconds) + "\n";
  return out;
}

std::string metrics_text(const Evaluation& eval) {
  const auto& m = eval.metrics;
  const auto& c = eval.confusion;
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "Accuracy   %.4f\nPrecision  %.4f\nRecall     %.4f\nF1 score   %.4f\n\n"
                "                  pred Depression  pred Control\n"
                "true Depression   %15zu  %12zu\ntrue Control      %15zu  %12zu\n",
                m.accuracy, m.precision, m.recall, m.f1, c.tp, c.fn, c.fp, c.tn);
  return buf;
}

std::string metrics_csv(const Evaluation& eval) {
  const auto& m = eval.metrics;
  const auto& c = eval.confusion;
  return "accuracy,precision,recall,f1,tp,fp,fn,tn\n" + format_real(m.accuracy) + "," + format_real(m.precision) +
         "," + format_real(m.recall) + "," + format_real(m.f1) + "," + std::to_string(c.tp) + "," +
         std::to_string(c.fp) + "," + std::to_string(c.fn) + "," + std::to_string(c.tn) + "\n";
}

std::vector<SweepRow> sweep_percentiles(const SweepData& data, std::span<const double> percentiles,
                                        const SweepConfig& config, const EpochCallback& on_epoch) {
  if (percentiles.empty()) throw std::invalid_argument("sweep_percentiles: no percentiles given");
  std::vector<std::size_t> post_counts;
  for (const auto& record : data.train) post_counts.push_back(record.posts.size());

  std::vector<SweepRow> rows;
  for (double p : percentiles) {
    MatrixConfig mc;
    mc.n_max_posts = derive_threshold(post_counts, p);
    mc.dim = data.store.dim();
    mc.percentile_source = p;
    mc.seed = config.matrix_seed;

    nn::Architecture arch = config.arch_template;
    arch.n_posts = mc.n_max_posts;
    arch.dim = mc.dim;
    auto model = nn::build_model<float>(arch, config.hp, config.model_seed);
    auto result = train(build_dataset(data.store, data.train, mc), build_dataset(data.store, data.valid, mc),
                        std::move(model), config.train, on_epoch);

    SweepRow row;
    row.percentile = p;
    row.n_posts = mc.n_max_posts;
    row.eval = evaluate(result.model, build_dataset(data.store, data.test, mc));
    row.epochs = result.logs.size();
    row.stop = result.stop;
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_table(const std::vector<SweepRow>& rows) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s%12s%10s%10s%11s%8s\n", "Percentile", "Posts/user", "Accuracy", "F1 score",
                "Precision", "Recall");
  out += line;
  for (const auto& r : rows) {
    const auto& m = r.eval.metrics;
    std::snprintf(line, sizeof line, "%-12s%12zu%10.2f%10.2f%11.2f%8.2f\n", ordinal(r.percentile).c_str(), r.n_posts,
                  m.accuracy, m.f1, m.precision, m.recall);
    out += line;
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "percentile,posts_per_user,accuracy,f1,precision,recall,epochs\n";
  for (const auto& r : rows) {
    const auto& m = r.eval.metrics;
    out += format_real(r.percentile) + "," + std::to_string(r.n_posts) + "," + format_real(m.accuracy) + "," +
           format_real(m.f1) + "," + format_real(m.precision) + "," + format_real(m.recall) + "," +
           std::to_string(r.epochs) + "\n";
  }
  return out;
}

}  // namespace postrisk
