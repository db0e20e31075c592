// Acceptance run: one PASS/FAIL line per criterion, then a summary.
// Exit status is nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cli.hpp"
#include "gradient_suite.hpp"
#include "oracles.hpp"
#include "postrisk/corpus.hpp"
#include "postrisk/embedding.hpp"
#include "postrisk/format_error.hpp"
#include "postrisk/nn.hpp"
#include "postrisk/parallel.hpp"
#include "postrisk/percentile.hpp"
#include "postrisk/preprocess.hpp"
#include "postrisk/rng.hpp"
#include "postrisk/trainer.hpp"
#include "postrisk/usermatrix.hpp"

namespace fs = std::filesystem;
using namespace postrisk;

namespace {

// Tolerances and budgets.
constexpr double kMinF1 = 0.90;
constexpr double kMinAccuracy = 0.90;
constexpr double kEndToEndBudgetSeconds = 600.0;
constexpr double kGradTolerance = 1e-4;
constexpr std::size_t kGradSeeds = 20;
constexpr double kGradBudgetSeconds = 60.0;
constexpr double kMaxKinkFraction = 0.01;
constexpr double kMetricTolerance = 1e-4;
constexpr double kF1FromPrTolerance = 5e-4;
constexpr double kSweepF1Slack = 0.05;
constexpr std::size_t kIdempotenceSamples = 10000;

struct Outcome {
  std::string id;
  std::string title;
  bool pass = false;
  std::string detail;
};

std::vector<Outcome> g_outcomes;

void report(const std::string& id, const std::string& title, bool pass, const std::string& detail) {
  g_outcomes.push_back({id, title, pass, detail});
  std::cout << (pass ? "[PASS] " : "[FAIL] ") << id << " " << title << " | " << detail << std::endl;
}

void guarded(const std::string& id, const std::string& title, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, title, false, std::string("exception: ") + e.what());
  }
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int cli(const std::vector<std::string>& args) {
  const int rc = cli::run(args);
  if (rc != 0) throw std::runtime_error("postrisk command failed with status " + std::to_string(rc));
  return rc;
}

/// Reads the first data row of metrics.csv into (accuracy, precision, recall, f1).
Metrics read_metrics_csv(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  Metrics m;
  std::sscanf(row.c_str(), "%lf,%lf,%lf,%lf", &m.accuracy, &m.precision, &m.recall, &m.f1);
  return m;
}

// ---------------------------------------------------------------- criteria

void end_to_end_and_determinism(const fs::path& root) {
  const fs::path corpus = root / "e2e" / "corpus";
  const std::vector<std::string> train_args{"train", "--corpus", corpus.string(), "--percentile", "95", "--seed", "7"};
  auto with_out = [](std::vector<std::string> args, const fs::path& out) {
    args.push_back("--out");
    args.push_back(out.string());
    return args;
  };

  const auto started = std::chrono::steady_clock::now();
  cli({"gen", "--users", "1000", "--valid-users", "300", "--test-users", "300", "--seed", "7", "--out",
       corpus.string()});
  cli(with_out(train_args, root / "e2e" / "run1"));
  const double elapsed = seconds_since(started);

  const Metrics m = read_metrics_csv(root / "e2e" / "run1" / "metrics.csv");
  const auto config = nlohmann::json::parse(slurp(root / "e2e" / "run1" / "config.json"));
  const bool quality = m.f1 >= kMinF1 && m.accuracy >= kMinAccuracy;
  const bool fast = elapsed < kEndToEndBudgetSeconds;
  const std::string epochs = slurp(root / "e2e" / "run1" / "epochs.csv");

  cli(with_out(train_args, root / "e2e" / "run2"));
  bool identical = true;
  for (const char* f : {"epochs.csv", "metrics.csv", "metrics.txt", "model.sbnn"}) {
    identical = identical && slurp(root / "e2e" / "run1" / f) == slurp(root / "e2e" / "run2" / f);
  }

  report("AC1", "end-to-end synthetic run (1000/300/300 per label, stub, p95)", quality && fast && identical,
         "F1 " + fmt("%.4f", m.f1) + " accuracy " + fmt("%.4f", m.accuracy) + " (need >= 0.90), N=" +
             std::to_string(config.at("derived_n_posts").get<std::size_t>()) + ", epochs " +
             std::to_string(std::count(epochs.begin(), epochs.end(), '\n') - 1) +
             ", gen+train " + fmt("%.1f", elapsed) + " s (budget 600 s on " +
             std::to_string(worker_count()) + " worker(s)), rerun identical: " + (identical ? "yes" : "no"));
  report("AC7", "determinism of identical train invocations", identical,
         std::string("epochs.csv, metrics.csv, metrics.txt, model.sbnn byte-identical across two runs: ") +
             (identical ? "yes" : "no"));
}

void gradient_suite() {
  const auto started = std::chrono::steady_clock::now();
  const auto results = gradcheck::run_suite(kGradSeeds);
  const double elapsed = seconds_since(started);
  bool ok = elapsed < kGradBudgetSeconds;
  std::string detail;
  for (const auto& r : results) {
    const double kink_fraction = static_cast<double>(r.skipped_at_kinks) / static_cast<double>(r.coordinates);
    ok = ok && r.max_rel_error < kGradTolerance && kink_fraction <= kMaxKinkFraction;
    detail += r.name + " " + fmt("%.1e", r.max_rel_error) + "; ";
  }
  std::size_t kinks = 0, coords = 0;
  for (const auto& r : results) {
    kinks += r.skipped_at_kinks;
    coords += r.coordinates;
  }
  report("AC2", "gradient suite (" + std::to_string(kGradSeeds) + " seeds, double, h=1e-5)", ok,
         detail + std::to_string(coords) + " coordinates, " + std::to_string(kinks) + " at kinks, " +
             fmt("%.1f", elapsed) + " s");
}

void shape_oracle() {
  const auto ladder = nn::shape_ladder(nn::Architecture::standard(525));
  const std::string expected = "(525,384)->conv(506,16)->pool(253,16)->conv(234,8)->pool(117,8)->flatten 936->32->2";
  const std::size_t params = nn::parameter_count(nn::Architecture::standard(525));
  const std::size_t built = nn::build_model<float>(nn::Architecture::standard(525), {}, 0).params.count();
  const std::size_t flat196 = nn::shape_ladder(nn::Architecture::standard(196)).flatten;
  bool rejects58 = false;
  std::string why58;
  try {
    nn::build_model<float>(nn::Architecture::standard(58), {}, 0);
  } catch (const nn::ShapeError& e) {
    rejects58 = true;
    why58 = e.what();
  }
  const bool ok = ladder.describe() == expected && params == 155514 && built == 155514 && flat196 == 272 && rejects58;
  report("AC3", "shape oracle", ok,
         ladder.describe() + ", " + std::to_string(built) + " params, n=196 flatten " + std::to_string(flat196) +
             ", n=58: " + (rejects58 ? why58 : "accepted"));
}

void metric_arithmetic() {
  std::vector<Label> pred, truth;
  auto add = [&](Label p, Label t, int k) {
    pred.insert(pred.end(), k, p);
    truth.insert(truth.end(), k, t);
  };
  add(Label::Depression, Label::Depression, 8);
  add(Label::Depression, Label::Control, 2);
  add(Label::Control, Label::Depression, 1);
  add(Label::Control, Label::Control, 9);
  const auto m = compute_metrics(tally(pred, truth));
  const double f1_table = f1_score(0.85, 0.87);
  const bool ok = std::abs(m.accuracy - 0.85) <= kMetricTolerance && std::abs(m.precision - 0.80) <= kMetricTolerance &&
                  std::abs(m.recall - 0.8889) <= kMetricTolerance && std::abs(m.f1 - 0.8421) <= kMetricTolerance &&
                  std::abs(f1_table - 0.8599) <= kF1FromPrTolerance;
  report("AC4", "metric arithmetic", ok,
         "acc " + fmt("%.4f", m.accuracy) + " P " + fmt("%.4f", m.precision) + " R " + fmt("%.4f", m.recall) +
             " F1 " + fmt("%.4f", m.f1) + "; F1(0.85, 0.87) = " + fmt("%.4f", f1_table));
}

void early_stopping() {
  // Few training users and a weak label signal: the model memorises the
  // training set within a few epochs and validation loss turns upward.
  SyntheticConfig sc;
  sc.min_posts = 40;
  sc.max_posts = 80;
  sc.signal_prob = 0.1;
  sc.users_per_label = 8;
  sc.seed = 31;
  sc.id_prefix = "train-";
  const auto train_records = generate_synthetic(sc);
  sc.users_per_label = 40;
  sc.seed = 32;
  sc.id_prefix = "valid-";
  const auto valid_records = generate_synthetic(sc);

  std::vector<UserRecord> all = train_records;
  all.insert(all.end(), valid_records.begin(), valid_records.end());
  const auto store = embed_corpus(all, StubProvider());
  std::vector<std::size_t> counts;
  for (const auto& r : train_records) counts.push_back(r.posts.size());
  const MatrixConfig mc{derive_threshold(counts, 95.0), kEmbeddingDim, 95.0, 3};
  const auto train_set = build_dataset(store, train_records, mc);
  const auto valid_set = build_dataset(store, valid_records, mc);

  TrainConfig cfg;
  cfg.max_epochs = 60;
  cfg.patience = 3;
  cfg.lr = 1e-3;
  cfg.seed = 3;
  const auto model = nn::build_model<float>(nn::Architecture::standard(mc.n_max_posts), {}, 3);
  const auto r = train(train_set, valid_set, model, cfg);

  std::vector<double> valid;
  for (const auto& l : r.logs) valid.push_back(l.valid_loss);
  const auto best = std::min_element(valid.begin(), valid.end());
  const std::size_t best_epoch = static_cast<std::size_t>(best - valid.begin()) + 1;
  const bool descends = best_epoch >= 2 && valid.front() > *best;
  const bool rises = std::all_of(best + 1, valid.end(), [&](double v) { return v > *best; }) && best + 1 != valid.end();
  const bool halted = r.stop == StopReason::PatienceExhausted && r.logs.size() < cfg.max_epochs &&
                      r.logs.size() == best_epoch + cfg.patience;
  const double restored = mean_loss(r.model, valid_set);
  const bool restored_ok = restored == *best && r.best_epoch == best_epoch;

  std::string curve;
  for (double v : valid) curve += fmt("%.5f ", v);
  report("AC5", "early stopping on an overfit scenario", descends && rises && halted && restored_ok,
         "valid loss " + curve + "| min at epoch " + std::to_string(best_epoch) + ", stopped after " +
             std::to_string(r.logs.size()) + " of " + std::to_string(cfg.max_epochs) + " (" + to_string(r.stop) +
             "), restored model valid loss " + fmt("%.9g", restored));
}

void percentile_sweep(const fs::path& root) {
  std::vector<std::size_t> ranks(100);
  std::iota(ranks.begin(), ranks.end(), 1);
  const bool nearest_ok = nearest_rank(ranks, 95.0) == 95 && nearest_rank(ranks, 50.0) == 50 &&
                          nearest_rank(ranks, 80.0) == 80;

  const fs::path corpus = root / "sweep" / "corpus";
  cli({"gen", "--users", "300", "--valid-users", "100", "--test-users", "100", "--signal-prob", "0.03", "--seed",
       "11", "--out", corpus.string()});
  cli({"sweep", "--corpus", corpus.string(), "--percentiles", "50,75,80,90,95", "--seed", "11", "--out",
       (root / "sweep" / "out").string()});

  const std::string table = slurp(root / "sweep" / "out" / "sweep.txt");
  std::istringstream csv(slurp(root / "sweep" / "out" / "sweep.csv"));
  std::string line;
  std::getline(csv, line);
  std::vector<std::pair<double, double>> p_f1;
  std::vector<std::size_t> ns;
  while (std::getline(csv, line)) {
    double p, acc, f1;
    std::size_t n;
    std::sscanf(line.c_str(), "%lf,%zu,%lf,%lf", &p, &n, &acc, &f1);
    p_f1.emplace_back(p, f1);
    ns.push_back(n);
  }
  std::istringstream header(table.substr(0, table.find('\n')));
  const std::vector<std::string> columns{std::istream_iterator<std::string>(header), {}};
  const std::vector<std::string> expected{"Percentile", "Posts/user", "Accuracy", "F1", "score", "Precision", "Recall"};
  const bool shaped = columns == expected &&
                      p_f1.size() == 5 && table.find("50th") != std::string::npos &&
                      table.find("95th") != std::string::npos && std::is_sorted(ns.begin(), ns.end());
  const bool no_collapse = p_f1.size() == 5 && p_f1.back().second >= p_f1.front().second - kSweepF1Slack;

  std::string rows;
  for (std::size_t i = 0; i < p_f1.size(); ++i) {
    rows += fmt("p%g", p_f1[i].first) + " N=" + std::to_string(ns[i]) + " F1=" + fmt("%.4f", p_f1[i].second) + "; ";
  }
  report("AC6", "percentile sweep {50,75,80,90,95}", nearest_ok && shaped && no_collapse,
         rows + "nearest rank 1..100 @ p95 = " + std::to_string(nearest_rank(ranks, 95.0)) +
             ", F1(p95) >= F1(p50) - 0.05: " + (no_collapse ? "yes" : "no"));
  std::cout << table;
}

void preprocessing_golden() {
  std::ifstream in(std::string(POSTRISK_GOLDEN_DIR) + "/preprocess_golden.jsonl");
  std::size_t cases = 0, matched = 0, boundary = 0;
  std::string line, mismatches;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const auto post = preprocess_post(j.at("input").get<std::string>());
    const bool ok = post.tokens == j.at("tokens").get<std::vector<std::string>>() &&
                    post.truncated == j.value("truncated", false);
    ++cases;
    matched += ok;
    boundary += j.contains("truncated");
    if (!ok) mismatches += j.at("id").get<std::string>() + " ";
  }

  Rng rng(99);
  const std::string alphabet = "aZ9 '\t\n.!?,:-()\"#@/hwtps";
  std::size_t stable = 0;
  for (std::size_t i = 0; i < kIdempotenceSamples; ++i) {
    std::string s;
    const auto len = rng.below(60);
    for (std::uint64_t k = 0; k < len; ++k) {
      const auto pick = rng.below(10);
      if (pick == 0) s.push_back(static_cast<char>(0x80 + rng.below(0x80)));
      else if (pick == 1) s += std::vector<std::string>{"http://", "www.", "i'm", "can't", "'cause", "gonna"}[rng.below(6)];
      else s.push_back(alphabet[rng.below(alphabet.size())]);
    }
    const auto once = preprocess_post(s);
    stable += preprocess_post(join_tokens(once.tokens)).tokens == once.tokens;
  }
  const bool ok = cases >= 30 && matched == cases && boundary >= 3 && stable == kIdempotenceSamples;
  report("AC8", "preprocessing golden suite and idempotence", ok,
         std::to_string(matched) + "/" + std::to_string(cases) + " golden vectors (" + std::to_string(boundary) +
             " at the 512 boundary)" + (mismatches.empty() ? "" : ", mismatched: " + mismatches) + "; idempotent on " +
             std::to_string(stable) + "/" + std::to_string(kIdempotenceSamples) + " random strings");
}

void store_format(const fs::path& root) {
  Rng rng(5);
  std::size_t round_trips = 0;
  const std::size_t trials = 100;
  const fs::path dir = root / "store";
  fs::create_directories(dir);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t dim = 1 + rng.below(400);
    EmbeddingStore store(dim);
    const auto users = rng.below(8);
    for (std::uint64_t u = 0; u < users; ++u) {
      PostEmbeddings posts(dim);
      const auto n = rng.below(6);
      for (std::uint64_t p = 0; p < n; ++p) {
        std::vector<float> v(dim);
        for (float& x : v) x = static_cast<float>(rng.uniform(-10, 10));
        posts.push_back(v);
      }
      store.add("user/" + std::to_string(rng.next()), std::move(posts));
    }
    write_store(store, (dir / "r.sbem").string());
    const auto back = read_store((dir / "r.sbem").string());
    round_trips += back == store && serialize_store(back) == serialize_store(store);
  }

  EmbeddingStore one(kEmbeddingDim);
  PostEmbeddings posts(kEmbeddingDim);
  posts.push_back(std::vector<float>(kEmbeddingDim, 0.5f));
  posts.push_back(std::vector<float>(kEmbeddingDim, -0.5f));
  one.add("user-1", std::move(posts));
  const std::string good = serialize_store(one);
  const bool size_ok = good.size() == 16 + (4 + 6) + 4 + 2 * kEmbeddingDim * 4;

  auto kind_of = [&](const std::string& bytes, const std::string& name) {
    const auto path = (dir / name).string();
    std::ofstream(path, std::ios::binary) << bytes;
    try {
      read_store(path);
    } catch (const FormatError& e) {
      return std::string(to_string(e.kind()));
    }
    return std::string("no error");
  };
  std::string bad_magic = good;
  bad_magic.replace(0, 4, "SBEX");
  const auto magic_kind = kind_of(bad_magic, "bad_magic.sbem");
  const auto cut_kind = kind_of(good.substr(0, good.size() - 100), "truncated.sbem");
  const auto header_cut_kind = kind_of(good.substr(0, 10), "truncated_header.sbem");
  const bool ok = round_trips == trials && size_ok && magic_kind == "bad magic" && cut_kind == "truncated file" &&
                  header_cut_kind == "truncated file";
  report("AC9", "embedding store format", ok,
         std::to_string(round_trips) + "/" + std::to_string(trials) + " randomized round trips exact; size oracle " +
             (size_ok ? "ok" : "wrong") + "; bad magic -> " + magic_kind + "; truncated -> " + cut_kind +
             "; truncated header -> " + header_cut_kind);
}

}  // namespace

int main() {
  const fs::path root = fs::temp_directory_path() / "postrisk-acceptance";
  fs::remove_all(root);
  fs::create_directories(root);

  guarded("AC3", "shape oracle", shape_oracle);
  guarded("AC4", "metric arithmetic", metric_arithmetic);
  guarded("AC8", "preprocessing golden suite and idempotence", preprocessing_golden);
  guarded("AC9", "embedding store format", [&] { store_format(root); });
  guarded("AC2", "gradient suite", gradient_suite);
  guarded("AC5", "early stopping on an overfit scenario", early_stopping);
  guarded("AC1", "end-to-end synthetic run", [&] { end_to_end_and_determinism(root); });
  guarded("AC6", "percentile sweep", [&] { percentile_sweep(root); });

  std::sort(g_outcomes.begin(), g_outcomes.end(), [](const Outcome& a, const Outcome& b) { return a.id < b.id; });
  std::size_t passed = 0;
  std::cout << "\n==== acceptance summary ====\n";
  for (const auto& o : g_outcomes) {
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << o.id << " " << o.title << "\n";
    passed += o.pass;
  }
  std::cout << passed << "/" << g_outcomes.size() << " criteria passed\n";
  return passed == g_outcomes.size() ? 0 : 1;
}
