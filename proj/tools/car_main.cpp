// Command-line driver: prep | stats | embed | consistency | train | eval |
// ablate | analyze | synth. Artifacts are plain files so stages can be rerun
// independently.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "car/config.hpp"
#include "car/cooc.hpp"
#include "car/corpus.hpp"
#include "car/evaluation.hpp"
#include "car/model.hpp"
#include "car/synthetic.hpp"
#include "car/training.hpp"

namespace fs = std::filesystem;
using namespace car;

namespace {

struct Shared {
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::string config_path;
  KeyValueConfig config;
};

std::string corpus_file(const std::string& path) {
  return fs::is_directory(path) ? (fs::path(path) / "interactions.tsv").string() : path;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
  return in;
}

std::vector<std::size_t> parse_cutoffs(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto k = std::stoul(part);
    if (k < 1) throw std::invalid_argument("cutoffs must be >= 1");
    out.push_back(k);
  }
  if (out.empty()) throw std::invalid_argument("no cutoffs given");
  return out;
}

// Config-file value for `key` unless the flag was given on the command line.
template <class T>
void overlay(const Shared& shared, const CLI::Option* flag, const std::string& key, T& target) {
  if (flag->count() > 0) return;
  if (auto v = shared.config.get(key)) {
    std::istringstream in(*v);
    T parsed{};
    if (!(in >> parsed)) throw std::invalid_argument(fmt::format("config key '{}': bad value", key));
    target = parsed;
  }
}

void write_eval_outputs(const EvalReport& report, const fs::path& dir) {
  fs::create_directories(dir);
  auto csv = open_out(dir / "report.csv");
  write_report_csv(report, csv);
  auto jsonl = open_out(dir / "lists.jsonl");
  write_list_records(report, jsonl);
}

std::vector<ListOutcome> load_outcomes(const fs::path& path) {
  auto in = open_in(fs::is_directory(path) ? path / "lists.jsonl" : path);
  return read_list_records(in);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Consistency-aware attention recommender for item-list continuation"};
  app.require_subcommand(1);
  Shared shared;
  std::function<void()> action;

  auto add_shared = [&](CLI::App* sub) {
    sub->add_option("--seed", shared.seed, "random seed");
    sub->add_option("--threads", shared.threads, "worker threads (1 keeps runs bit-reproducible)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--config", shared.config_path, "key=value file; flags win over it");
  };

  // prep ---------------------------------------------------------------------
  std::string prep_input, prep_out;
  std::size_t min_item_count = 5, min_list_len = 5, max_len = 1000;
  auto* prep = app.add_subcommand("prep", "filter, truncate and write a corpus directory");
  prep->add_option("--input", prep_input)->required();
  auto* f_min_item = prep->add_option("--min-item-count", min_item_count);
  auto* f_min_list = prep->add_option("--min-list-len", min_list_len);
  auto* f_max_len = prep->add_option("--max-len", max_len);
  prep->add_option("--out", prep_out)->required();
  add_shared(prep);
  prep->callback([&] {
    action = [&] {
      overlay(shared, f_min_item, "min-item-count", min_item_count);
      overlay(shared, f_min_list, "min-list-len", min_list_len);
      overlay(shared, f_max_len, "max-len", max_len);
      const Corpus raw = parse_interactions_file(prep_input);
      const Corpus c = truncate_lists(filter_corpus(raw, min_item_count, min_list_len), max_len);
      const fs::path out(prep_out);
      fs::create_directories(out);
      write_interactions_file(c, (out / "interactions.tsv").string());
      const auto stats = corpus_stats(c);
      open_out(out / "stats.txt") << stats_report(stats);
      open_out(out / "stats.csv") << stats_csv_header() << stats_csv_row(stats);
      std::cout << stats_report(stats);
    };
  });

  // stats --------------------------------------------------------------------
  std::string stats_corpus, stats_csv_path;
  auto* stats = app.add_subcommand("stats", "print corpus statistics");
  stats->add_option("--corpus", stats_corpus)->required();
  stats->add_option("--csv", stats_csv_path, "also write a CSV row here");
  add_shared(stats);
  stats->callback([&] {
    action = [&] {
      const auto s = corpus_stats(parse_interactions_file(corpus_file(stats_corpus)));
      std::cout << stats_report(s);
      if (!stats_csv_path.empty()) open_out(stats_csv_path) << stats_csv_header() << stats_csv_row(s);
    };
  });

  // embed --------------------------------------------------------------------
  std::string embed_corpus, embed_out;
  SkipGramConfig sg;
  auto* embed = app.add_subcommand("embed", "train skip-gram co-occurrence item vectors");
  embed->add_option("--corpus", embed_corpus)->required();
  auto* f_dim = embed->add_option("--dim", sg.dim);
  auto* f_window = embed->add_option("--window", sg.window);
  auto* f_neg = embed->add_option("--negatives", sg.negatives);
  auto* f_epochs = embed->add_option("--epochs", sg.epochs);
  embed->add_option("--out", embed_out)->required();
  add_shared(embed);
  embed->callback([&] {
    action = [&] {
      overlay(shared, f_dim, "dim", sg.dim);
      overlay(shared, f_window, "window", sg.window);
      overlay(shared, f_neg, "negatives", sg.negatives);
      overlay(shared, f_epochs, "epochs", sg.epochs);
      sg.seed = shared.seed;
      const Corpus c = parse_interactions_file(corpus_file(embed_corpus));
      std::vector<std::vector<ItemIndex>> lists;
      for (const auto& l : c.lists) lists.push_back(l.items);
      const auto emb = train_cooc_embeddings(lists, c.num_items(), sg);
      auto out = open_out(embed_out);
      write_embeddings(emb, c, out);
    };
  });

  // consistency --------------------------------------------------------------
  std::string cons_corpus, cons_emb, cons_out, cons_hist;
  std::size_t bins = 20;
  auto* cons = app.add_subcommand("consistency", "per-list consistency scores and histogram");
  cons->add_option("--corpus", cons_corpus)->required();
  cons->add_option("--embeddings", cons_emb)->required();
  auto* f_bins = cons->add_option("--bins", bins);
  cons->add_option("--out", cons_out, "per-list scores CSV")->required();
  cons->add_option("--histogram", cons_hist, "histogram CSV (default: <out stem>.hist.csv)");
  add_shared(cons);
  cons->callback([&] {
    action = [&] {
      overlay(shared, f_bins, "bins", bins);
      const Corpus c = parse_interactions_file(corpus_file(cons_corpus));
      auto in = open_in(cons_emb);
      const auto emb = read_embeddings(in, c);
      std::vector<ConsistencyRecord> records;
      for (const auto& l : c.lists) {
        if (l.items.size() < 2) continue;
        records.push_back({l.id, consistency_score(l.items, emb)});
      }
      auto out = open_out(cons_out);
      write_consistency_csv(records, out);
      fs::path hist = cons_hist;
      if (hist.empty()) {
        hist = fs::path(cons_out).replace_extension("");
        hist += ".hist.csv";
      }
      auto hout = open_out(hist);
      write_histogram_csv(consistency_histogram(records, bins), hout);
    };
  });

  // train --------------------------------------------------------------------
  std::string train_corpus, train_out, train_log, variant = "car";
  TrainConfig tc;
  std::size_t val_negatives = 100;
  auto* train = app.add_subcommand("train", "fit a model with early stopping");
  train->add_option("--corpus", train_corpus)->required();
  auto* f_d = train->add_option("--d", tc.dim);
  auto* f_n = train->add_option("--n", tc.max_len);
  auto* f_batch = train->add_option("--batch", tc.batch_size);
  auto* f_lr = train->add_option("--lr", tc.learning_rate);
  auto* f_patience = train->add_option("--patience", tc.patience);
  auto* f_max_epochs = train->add_option("--max-epochs", tc.max_epochs);
  auto* f_user = train->add_flag("--user-embedding", tc.use_user_embedding);
  auto* f_variant = train->add_option("--variant", variant, "car | no-gating | cppm | gupm");
  auto* f_val_neg = train->add_option("--negatives", val_negatives, "validation negatives");
  auto* f_timing = train->add_flag("--log-timing", tc.log_timing, "wall-clock seconds in the log");
  train->add_option("--log", train_log, "training log CSV (default: <out>.log.csv)");
  train->add_option("--out", train_out)->required();
  add_shared(train);

  // eval ---------------------------------------------------------------------
  std::string eval_corpus, eval_ckpt, eval_out, eval_k = "5,10";
  std::size_t eval_negatives = 100;
  auto* ev = app.add_subcommand("eval", "rank held-out test items against sampled negatives");
  ev->add_option("--corpus", eval_corpus)->required();
  ev->add_option("--ckpt", eval_ckpt)->required();
  auto* f_eval_neg = ev->add_option("--negatives", eval_negatives);
  auto* f_k = ev->add_option("--k", eval_k, "comma-separated cutoffs");
  ev->add_option("--out", eval_out)->required();
  add_shared(ev);

  // ablate -------------------------------------------------------------------
  std::string ablate_corpus, ablate_out;
  auto* ablate = app.add_subcommand("ablate", "train and test all four model variants");
  ablate->add_option("--corpus", ablate_corpus)->required();
  ablate->add_option("--out", ablate_out)->required();
  add_shared(ablate);

  // analyze ------------------------------------------------------------------
  std::string an_gupm, an_cppm, an_cons, an_out;
  auto* analyze = app.add_subcommand("analyze", "GUPM vs CPPM per-list winners against consistency");
  analyze->add_option("--gupm", an_gupm, "eval output dir or lists.jsonl")->required();
  analyze->add_option("--cppm", an_cppm, "eval output dir or lists.jsonl")->required();
  analyze->add_option("--consistency", an_cons, "per-list consistency CSV")->required();
  analyze->add_option("--out", an_out)->required();
  add_shared(analyze);

  // synth --------------------------------------------------------------------
  SyntheticSpec spec;
  std::string synth_len = "20..40", synth_out;
  auto* synth = app.add_subcommand("synth", "generate a clustered corpus with drifting lists");
  synth->add_option("--clusters", spec.clusters);
  synth->add_option("--items-per-cluster", spec.items_per_cluster);
  synth->add_option("--lists", spec.lists);
  synth->add_option("--len", synth_len, "length range lo..hi");
  synth->add_option("--drift", spec.drift);
  synth->add_option("--segment", spec.segment);
  synth->add_option("--lists-per-user", spec.lists_per_user);
  synth->add_option("--out", synth_out)->required();
  add_shared(synth);

  // Training settings shared by train and ablate: defaults, then the config
  // file, then explicit flags.
  auto resolve_train = [&]() {
    TrainConfig c = apply_train_config(shared.config, TrainConfig{});
    if (f_d->count()) c.dim = tc.dim;
    if (f_n->count()) c.max_len = tc.max_len;
    if (f_batch->count()) c.batch_size = tc.batch_size;
    if (f_lr->count()) c.learning_rate = tc.learning_rate;
    if (f_patience->count()) c.patience = tc.patience;
    if (f_max_epochs->count()) c.max_epochs = tc.max_epochs;
    if (f_user->count()) c.use_user_embedding = tc.use_user_embedding;
    if (f_variant->count()) c.variant = parse_variant(variant);
    if (f_timing->count()) c.log_timing = tc.log_timing;
    if (!shared.config.has("seed") || app.get_subcommands().front()->get_option("--seed")->count()) {
      c.seed = shared.seed;
    }
    if (!shared.config.has("threads") ||
        app.get_subcommands().front()->get_option("--threads")->count()) {
      c.threads = shared.threads;
    }
    c.validate();
    return c;
  };

  train->callback([&] {
    action = [&] {
      const TrainConfig c = resolve_train();
      overlay(shared, f_val_neg, "negatives", val_negatives);
      const Corpus corpus = parse_interactions_file(corpus_file(train_corpus));
      const SplitCorpus split = split_corpus(corpus);
      const auto hook = validation_hook(split, val_negatives, c.seed, c.threads);
      const FitResult result = fit(split, c, hook);
      save_checkpoint_file(result.params, train_out);
      auto log = open_out(train_log.empty() ? train_out + ".log.csv" : train_log);
      write_training_log(result.log, log);
      std::cout << fmt::format("best epoch {} of {}, val ndcg@5 {:.6f}\n", result.best_epoch,
                               result.log.size(), result.log[result.best_epoch - 1].val_ndcg5);
    };
  });

  ev->callback([&] {
    action = [&] {
      overlay(shared, f_eval_neg, "negatives", eval_negatives);
      overlay(shared, f_k, "k", eval_k);
      const Corpus corpus = parse_interactions_file(corpus_file(eval_corpus));
      const SplitCorpus split = split_corpus(corpus);
      const ModelParams params = load_checkpoint_file(eval_ckpt);
      if (params.num_items != split.num_items || params.num_users != split.num_users) {
        throw std::runtime_error("checkpoint was trained on a different corpus");
      }
      EvalOptions options;
      options.negatives = eval_negatives;
      options.cutoffs = parse_cutoffs(eval_k);
      options.seed = shared.seed;
      options.threads = shared.threads;
      const auto report = evaluate(params, split, options);
      write_eval_outputs(report, eval_out);
      write_report_csv(report, std::cout);
    };
  });

  ablate->callback([&] {
    action = [&] {
      const TrainConfig c = resolve_train();
      const Corpus corpus = parse_interactions_file(corpus_file(ablate_corpus));
      const SplitCorpus split = split_corpus(corpus);
      EvalOptions options;
      if (auto v = shared.config.get("negatives")) options.negatives = std::stoul(*v);
      if (auto v = shared.config.get("k")) options.cutoffs = parse_cutoffs(*v);
      options.seed = c.seed;
      options.threads = c.threads;
      const auto runs = run_ablation(split, c, options);
      const fs::path out(ablate_out);
      fs::create_directories(out);
      for (const auto& r : runs) {
        const fs::path dir = out / std::string(variant_name(r.variant));
        write_eval_outputs(r.report, dir);
        save_checkpoint_file(r.fit.params, (dir / "model.ckpt").string());
        auto log = open_out(dir / "train_log.csv");
        write_training_log(r.fit.log, log);
      }
      auto csv = open_out(out / "ablation.csv");
      write_ablation_csv(runs, csv);
      write_ablation_csv(runs, std::cout);
    };
  });

  analyze->callback([&] {
    action = [&] {
      const auto gupm = load_outcomes(an_gupm);
      const auto cppm = load_outcomes(an_cppm);
      auto cin = open_in(an_cons);
      const auto consistency = read_consistency_csv(cin);
      const auto analysis = winner_consistency_analysis(gupm, cppm, consistency);
      auto out = open_out(an_out);
      write_analysis_csv(analysis, out);
      write_analysis_csv(analysis, std::cout);
    };
  });

  synth->callback([&] {
    action = [&] {
      const auto dots = synth_len.find("..");
      if (dots == std::string::npos) throw std::invalid_argument("--len expects lo..hi");
      spec.min_len = std::stoul(synth_len.substr(0, dots));
      spec.max_len = std::stoul(synth_len.substr(dots + 2));
      spec.seed = shared.seed;
      const auto s = generate_synthetic(spec);
      write_interactions_file(s.corpus, synth_out);
      auto regimes = open_out(synth_out + ".regimes.csv");
      write_regimes_csv(s, regimes);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (!shared.config_path.empty()) shared.config = KeyValueConfig::load(shared.config_path);
    action();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
