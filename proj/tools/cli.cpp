#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "postrisk/corpus.hpp"
#include "postrisk/embedding.hpp"
#include "postrisk/format_error.hpp"
#include "postrisk/nn.hpp"
#include "postrisk/preprocess.hpp"
#include "postrisk/rng.hpp"
#include "postrisk/trainer.hpp"
#include "postrisk/usermatrix.hpp"

namespace postrisk::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::uint64_t kModelStream = 0x6d6f64656cULL;

struct CommonOptions {
  std::uint64_t seed = 0;
  std::string out = ".";
  std::string corpus_dir;
  std::string provider = "stub";
  std::size_t dim = kEmbeddingDim;
  std::string contractions;
};

struct TrainOptions {
  double percentile = 95.0;
  std::optional<std::size_t> n_posts;
  std::optional<std::size_t> fixed_epochs;
  std::size_t max_epochs = 50;
  std::size_t patience = 3;
  std::size_t batch_size = 32;
  double lr = 1e-4;
  double dropout = 0.2;
  bool dump_matrices = false;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

fs::path prepare_out(const std::string& dir) {
  fs::path out(dir);
  fs::create_directories(out);
  return out;
}

void log_line(const std::string& msg) { std::cerr << "[postrisk] " << msg << '\n'; }

ContractionTable contraction_table(const CommonOptions& o) {
  return o.contractions.empty() ? ContractionTable::builtin() : ContractionTable::load(o.contractions);
}

std::vector<UserRecord> load_split(const CommonOptions& o, Split split) {
  if (o.corpus_dir.empty()) throw std::invalid_argument("--corpus is required");
  return load_jsonl((fs::path(o.corpus_dir) / (std::string(to_string(split)) + ".jsonl")).string());
}

/// Stub-embeds the given records, or loads store:<path> and checks it covers them.
EmbeddingStore resolve_store(const CommonOptions& o, const std::vector<const std::vector<UserRecord>*>& sets,
                             std::optional<std::size_t> expected_dim, const ContractionTable& table) {
  constexpr std::string_view kStorePrefix = "store:";
  if (o.provider == "stub") {
    std::vector<UserRecord> all;
    for (const auto* set : sets) all.insert(all.end(), set->begin(), set->end());
    return embed_corpus(all, StubProvider(expected_dim.value_or(o.dim)), table);
  }
  if (o.provider.rfind(kStorePrefix, 0) != 0) {
    throw std::invalid_argument("--provider must be 'stub' or 'store:<path>', got '" + o.provider + "'");
  }
  const std::string path = o.provider.substr(kStorePrefix.size());
  EmbeddingStore store = read_store(path, expected_dim);
  for (const auto* set : sets) {
    for (const auto& record : *set) {
      const PostEmbeddings* posts = store.find(record.user_id);
      if (!posts) throw std::runtime_error(path + ": user \"" + record.user_id + "\" missing from store");
      if (posts->size() != record.posts.size()) {
        throw std::runtime_error(path + ": user \"" + record.user_id + "\" has " + std::to_string(posts->size()) +
                                 " vectors for " + std::to_string(record.posts.size()) + " posts");
      }
    }
  }
  return store;
}

json common_json(const std::string& command, const CommonOptions& o) {
  return {{"command", command}, {"seed", o.seed},       {"corpus", o.corpus_dir},
          {"provider", o.provider}, {"dim", o.dim}, {"contractions", o.contractions.empty() ? "builtin" : o.contractions}};
}

void add_train_json(json& j, const TrainOptions& t) {
  j["percentile"] = t.percentile;
  j["n_posts"] = t.n_posts ? json(*t.n_posts) : json(nullptr);
  j["fixed_epochs"] = t.fixed_epochs ? json(*t.fixed_epochs) : json(nullptr);
  j["max_epochs"] = t.max_epochs;
  j["patience"] = t.patience;
  j["batch_size"] = t.batch_size;
  j["lr"] = t.lr;
  j["dropout"] = t.dropout;
}

TrainConfig train_config(const CommonOptions& o, const TrainOptions& t) {
  TrainConfig c;
  c.max_epochs = t.max_epochs;
  c.patience = t.patience;
  c.fixed_epochs = t.fixed_epochs;
  c.batch_size = t.batch_size;
  c.seed = o.seed;
  c.lr = t.lr;
  return c;
}

EpochCallback epoch_logger() {
  return [](const EpochLog& l) {
    std::ostringstream s;
    s << "epoch " << l.epoch << " train_loss=" << l.train_loss << " valid_loss=" << l.valid_loss << " ("
      << l.seconds << " s)";
    log_line(s.str());
  };
}

// ---------------------------------------------------------------- commands

void cmd_gen(const CommonOptions& o, std::size_t users, std::optional<std::size_t> valid_users,
             std::optional<std::size_t> test_users, std::size_t posts_min, std::size_t posts_max, double signal_prob) {
  const fs::path out = prepare_out(o.out);
  const std::size_t held_out = std::max<std::size_t>(1, users * 3 / 10);
  const std::array<std::pair<Split, std::size_t>, 3> splits{
      {{Split::Train, users}, {Split::Valid, valid_users.value_or(held_out)}, {Split::Test, test_users.value_or(held_out)}}};

  std::vector<SplitStats> stats;
  for (const auto& [split, n] : splits) {
    SyntheticConfig sc;
    sc.users_per_label = n;
    sc.min_posts = posts_min;
    sc.max_posts = posts_max;
    sc.seed = derive_seed(o.seed, static_cast<std::uint64_t>(split));
    sc.signal_prob = signal_prob;
    sc.id_prefix = std::string(to_string(split)) + "-";
    auto records = generate_synthetic(sc);
    save_jsonl(records, (out / (std::string(to_string(split)) + ".jsonl")).string());
    stats.push_back(split_stats(records, split));
  }
  write_text(out / "stats.txt", format_split_stats(stats));

  json j = common_json("gen", o);
  j["users"] = users;
  j["valid_users"] = splits[1].second;
  j["test_users"] = splits[2].second;
  j["posts_min"] = posts_min;
  j["posts_max"] = posts_max;
  j["signal_prob"] = signal_prob;
  write_text(out / "config.json", j.dump(2) + "\n");
  std::cout << format_split_stats(stats);
}

void cmd_embed(const CommonOptions& o) {
  const auto table = contraction_table(o);
  const auto train = load_split(o, Split::Train);
  const auto valid = load_split(o, Split::Valid);
  const auto test = load_split(o, Split::Test);
  const EmbeddingStore store = resolve_store(o, {&train, &valid, &test}, std::nullopt, table);
  if (o.provider == "stub") {
    const fs::path out = prepare_out(o.out);
    write_store(store, (out / "embeddings.sbem").string());
    write_text(out / "config.json", common_json("embed", o).dump(2) + "\n");
  }
  std::cout << "store: " << store.size() << " users, dim " << store.dim() << "\n";
}

void cmd_train(const CommonOptions& o, const TrainOptions& t) {
  const fs::path out = prepare_out(o.out);
  const auto table = contraction_table(o);
  const auto train = load_split(o, Split::Train);
  const auto valid = load_split(o, Split::Valid);
  const auto test = load_split(o, Split::Test);
  const EmbeddingStore store = resolve_store(o, {&train, &valid, &test}, o.dim, table);

  std::vector<std::size_t> counts;
  for (const auto& r : train) counts.push_back(r.posts.size());
  MatrixConfig mc;
  mc.n_max_posts = t.n_posts.value_or(derive_threshold(counts, t.percentile));
  mc.dim = store.dim();
  if (!t.n_posts) mc.percentile_source = t.percentile;
  mc.seed = o.seed;
  log_line("posts per user N = " + std::to_string(mc.n_max_posts));

  const auto arch = nn::Architecture::standard(mc.n_max_posts, mc.dim);
  log_line("shape ladder " + nn::shape_ladder(arch).describe() + ", " +
           std::to_string(nn::parameter_count(arch)) + " parameters");
  auto model = nn::build_model<float>(arch, nn::Hyperparams{t.dropout}, derive_seed(o.seed, kModelStream));

  const auto train_set = build_dataset(store, train, mc);
  const auto valid_set = build_dataset(store, valid, mc);
  const auto test_set = build_dataset(store, test, mc);
  if (t.dump_matrices) write_matrices(train_set, (out / "train_matrices.sbmx").string());

  auto result = postrisk::train(train_set, valid_set, std::move(model), train_config(o, t), epoch_logger());
  log_line(std::string("stopped: ") + to_string(result.stop) + ", best epoch " + std::to_string(result.best_epoch));

  nn::write_checkpoint((out / "model.sbnn").string(), result.model, result.adam);
  write_text(out / "epochs.csv", epoch_csv(result.logs));
  write_text(out / "epoch_times.csv", epoch_timing_csv(result.logs));
  const Evaluation eval = evaluate(result.model, test_set);
  write_text(out / "metrics.txt", metrics_text(eval));
  write_text(out / "metrics.csv", metrics_csv(eval));

  json j = common_json("train", o);
  add_train_json(j, t);
  j["derived_n_posts"] = mc.n_max_posts;
  j["stop_reason"] = to_string(result.stop);
  j["best_epoch"] = result.best_epoch;
  write_text(out / "config.json", j.dump(2) + "\n");
  std::cout << metrics_text(eval);
}

void cmd_eval(const CommonOptions& o, const std::string& model_path, const std::string& split_name) {
  const fs::path out = prepare_out(o.out);
  const auto checkpoint = nn::read_checkpoint<float>(model_path);
  const auto& arch = checkpoint.model.arch;
  const Split split = parse_split(split_name);
  const auto records = load_split(o, split);
  const EmbeddingStore store = resolve_store(o, {&records}, arch.dim, contraction_table(o));

  MatrixConfig mc;
  mc.n_max_posts = arch.n_posts;
  mc.dim = arch.dim;
  mc.seed = o.seed;
  const Evaluation eval = evaluate(checkpoint.model, build_dataset(store, records, mc));
  write_text(out / "metrics.txt", metrics_text(eval));
  write_text(out / "metrics.csv", metrics_csv(eval));
  json j = common_json("eval", o);
  j["model"] = model_path;
  j["split"] = split_name;
  write_text(out / "eval_config.json", j.dump(2) + "\n");
  std::cout << metrics_text(eval);
}

void cmd_sweep(const CommonOptions& o, const TrainOptions& t, const std::vector<double>& percentiles) {
  const fs::path out = prepare_out(o.out);
  const auto table = contraction_table(o);
  const auto train = load_split(o, Split::Train);
  const auto valid = load_split(o, Split::Valid);
  const auto test = load_split(o, Split::Test);
  const EmbeddingStore store = resolve_store(o, {&train, &valid, &test}, o.dim, table);

  SweepConfig sc;
  sc.arch_template = nn::Architecture::standard(0, store.dim());
  sc.hp.dropout_rate = t.dropout;
  sc.train = train_config(o, t);
  sc.matrix_seed = o.seed;
  sc.model_seed = derive_seed(o.seed, kModelStream);
  const auto rows = sweep_percentiles({train, valid, test, store}, percentiles, sc, epoch_logger());

  write_text(out / "sweep.txt", sweep_table(rows));
  write_text(out / "sweep.csv", sweep_csv(rows));
  json j = common_json("sweep", o);
  add_train_json(j, t);
  j["percentiles"] = percentiles;
  write_text(out / "config.json", j.dump(2) + "\n");
  std::cout << sweep_table(rows);
}

void add_common(CLI::App* cmd, CommonOptions& o, bool corpus, bool provider) {
  cmd->add_option("--seed", o.seed, "Seed for every random stream")->capture_default_str();
  cmd->add_option("--out", o.out, "Output directory")->capture_default_str();
  if (corpus) cmd->add_option("--corpus", o.corpus_dir, "Directory holding train/valid/test.jsonl")->required();
  if (provider) {
    cmd->add_option("--provider", o.provider, "Embedding provider: stub | store:<path>")->capture_default_str();
    cmd->add_option("--dim", o.dim, "Stub embedding dimension")->capture_default_str();
    cmd->add_option("--contractions", o.contractions, "Contraction table (contraction<TAB>expansion)");
  }
}

void add_train_options(CLI::App* cmd, TrainOptions& t) {
  cmd->add_option("--percentile", t.percentile, "Percentile of posts/user that sets N")->capture_default_str();
  cmd->add_option("--n-posts", t.n_posts, "Use this N instead of the percentile");
  cmd->add_option("--fixed-epochs", t.fixed_epochs, "Train exactly this many epochs");
  cmd->add_option("--max-epochs", t.max_epochs)->capture_default_str();
  cmd->add_option("--patience", t.patience)->capture_default_str();
  cmd->add_option("--batch-size", t.batch_size)->capture_default_str();
  cmd->add_option("--lr", t.lr)->capture_default_str();
  cmd->add_option("--dropout", t.dropout)->capture_default_str();
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"postrisk: user-level depression classifier over post embeddings"};
  app.require_subcommand(1);

  CommonOptions common;
  TrainOptions train_opts;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic train/valid/test corpus");
  std::size_t users = 1000, posts_min = 40, posts_max = 200;
  std::optional<std::size_t> valid_users, test_users;
  double signal_prob = 0.3;
  add_common(gen, common, false, false);
  gen->add_option("--users", users, "Training users per label")->capture_default_str();
  gen->add_option("--valid-users", valid_users, "Validation users per label (default 30% of --users)");
  gen->add_option("--test-users", test_users, "Test users per label (default 30% of --users)");
  gen->add_option("--posts-min", posts_min)->capture_default_str();
  gen->add_option("--posts-max", posts_max)->capture_default_str();
  gen->add_option("--signal-prob", signal_prob)->capture_default_str();

  auto* embed = app.add_subcommand("embed", "Embed a corpus with the stub provider, or validate a store");
  add_common(embed, common, true, true);

  auto* train = app.add_subcommand("train", "Train the CNN and write a checkpoint and logs");
  add_common(train, common, true, true);
  add_train_options(train, train_opts);
  train->add_flag("--dump-matrices", train_opts.dump_matrices, "Also write the training matrices (SBMX)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  std::string model_path, split = "test";
  add_common(eval, common, true, true);
  eval->add_option("--model", model_path, "Checkpoint (SBNN)")->required();
  eval->add_option("--split", split, "train | valid | test")->capture_default_str();

  auto* sweep = app.add_subcommand("sweep", "Retrain and evaluate at several post-count percentiles");
  std::vector<double> percentiles{50, 75, 80, 90, 95};
  add_common(sweep, common, true, true);
  add_train_options(sweep, train_opts);
  sweep->add_option("--percentiles", percentiles)->delimiter(',')->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) cmd_gen(common, users, valid_users, test_users, posts_min, posts_max, signal_prob);
    else if (*embed) cmd_embed(common);
    else if (*train) cmd_train(common, train_opts);
    else if (*eval) cmd_eval(common, model_path, split);
    else if (*sweep) cmd_sweep(common, train_opts, percentiles);
  } catch (const std::exception& e) {
    std::cerr << "postrisk: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace postrisk::cli
