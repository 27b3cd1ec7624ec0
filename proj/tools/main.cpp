#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "baitnet/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace baitnet;

namespace {

struct CommonArgs {
  std::string config_file;
  std::string from_manifest;
  std::vector<std::string> overrides;  // key=value
  pipeline::DatasetSpec dataset;
  double labeled_fraction = 1.0;
  // 5-fold cross validation is the published protocol; --folds 1 gives a
  // single holdout run.
  int folds = 5;
  std::string run_dir;
};

void add_dataset_flags(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--dataset", args.dataset.kind,
                  "Dataset kind: headlines|challenge|cache");
  cmd->add_option("--clickbait-file", args.dataset.clickbait_file,
                  "Headlines dataset: clickbait file (one headline per line)");
  cmd->add_option("--non-clickbait-file", args.dataset.non_clickbait_file,
                  "Headlines dataset: non-clickbait file");
  cmd->add_option("--challenge-dir", args.dataset.challenge_dir,
                  "Challenge dataset root with a/, b/, c/ subdirectories");
  cmd->add_option("--cache", args.dataset.cache_file,
                  "Normalized corpus cache (jsonl)");
  cmd->add_option("--embeddings", args.dataset.embeddings_file,
                  "Pretrained embedding file (token + reals per line)");
}

void add_common_flags(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_file, "key=value config file");
  cmd->add_option("--from-manifest", args.from_manifest,
                  "Reproduce dataset/config/seed from a previous run manifest");
  cmd->add_option("--set", args.overrides,
                  "Config override key=value (repeatable; wins over --config)");
  cmd->add_option("--run-dir", args.run_dir, "Output directory (default: auto)");
}

pipeline::Settings build_settings(CommonArgs& args) {
  pipeline::Settings settings;
  if (!args.from_manifest.empty()) {
    pipeline::Manifest m = pipeline::Manifest::load(args.from_manifest);
    pipeline::apply_config(settings, m.config, args.from_manifest);
    if (args.dataset.kind.empty()) args.dataset = m.dataset;
    args.labeled_fraction = m.labeled_fraction;
    args.folds = m.folds;
  }
  if (!args.config_file.empty()) {
    pipeline::apply_config(settings, pipeline::parse_config_file(args.config_file),
                           args.config_file);
  }
  std::map<std::string, std::string> flag_values;
  for (const auto& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw UsageError("--set expects key=value, got: " + kv);
    }
    flag_values[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  pipeline::apply_config(settings, flag_values, "--set");
  return settings;
}

std::vector<std::vector<double>> load_embedding_rows(
    const pipeline::DatasetSpec& spec, const corpus::Vocabulary& vocab, int dim) {
  std::vector<std::vector<double>> rows(vocab.size());
  if (spec.embeddings_file.empty()) return rows;
  for (auto& r : rows) r.assign(static_cast<std::size_t>(dim), 0.0);
  auto stats = corpus::load_embeddings_into(spec.embeddings_file, vocab, rows);
  if (stats.dim != 0 && static_cast<int>(stats.dim) != dim) {
    throw DataError("embedding width " + std::to_string(stats.dim) +
                    " does not match emb_dim " + std::to_string(dim));
  }
  std::cerr << "embeddings: covered " << stats.covered << "/" << vocab.size()
            << " tokens\n";
  // Rows that stayed all-zero are dropped so random init survives for them.
  for (auto& r : rows) {
    bool all_zero = !r.empty();
    for (double x : r) {
      if (x != 0.0) {
        all_zero = false;
        break;
      }
    }
    if (all_zero) r.clear();
  }
  return rows;
}

pipeline::Manifest make_manifest(const std::string& command, CommonArgs& args,
                                 const pipeline::Settings& settings) {
  pipeline::Manifest m;
  m.command = command;
  m.dataset = args.dataset;
  m.config = pipeline::config_to_map(settings);
  m.labeled_fraction = args.labeled_fraction;
  m.folds = args.folds;
  m.seed = settings.train.seed;
  m.split_recipe =
      "folds partition the full corpus; strong/pool drawn corpus-wide; "
      "per-fold training sets intersect the fold complement";
  return m;
}

corpus::SplitResult derive_split(const corpus::Corpus& corpus, CommonArgs& args,
                                 const pipeline::Settings& settings) {
  const int folds = std::max(args.folds, 1);
  return corpus::make_splits(corpus, args.labeled_fraction,
                             folds >= 2 ? folds : 1, settings.train.seed);
}

// ---------------------------------------------------------------------------

int cmd_ingest(CommonArgs& args, const std::string& out_file) {
  pipeline::Settings settings = build_settings(args);
  const auto started = std::chrono::steady_clock::now();
  std::string run_dir = args.run_dir.empty()
                            ? pipeline::make_run_dir("ingest", settings.train.seed)
                            : args.run_dir;
  fs::create_directories(run_dir);

  std::size_t skipped = 0, count = 0;
  std::string out = out_file.empty() ? run_dir + "/corpus.jsonl" : out_file;
  if (args.dataset.kind == "challenge") {
    corpus::ChallengeData data =
        corpus::load_challenge_dataset(args.dataset.challenge_dir, settings.ingest);
    for (const auto& w : data.warnings) std::cerr << "warning: " << w << '\n';
    corpus::save_corpus_cache(data.a, run_dir + "/corpus_a.jsonl");
    corpus::save_corpus_cache(data.b, run_dir + "/corpus_b.jsonl");
    corpus::save_corpus_cache(data.c, run_dir + "/corpus_c.jsonl");
    skipped = data.a.skipped + data.b.skipped + data.c.skipped + data.malformed;
    count = data.a.records.size() + data.b.records.size() + data.c.records.size();
  } else {
    corpus::Corpus corpus = pipeline::load_dataset(args.dataset, settings.ingest);
    corpus::save_corpus_cache(corpus, out);
    skipped = corpus.skipped;
    count = corpus.records.size();
  }
  std::cout << "ingested " << count << " records (" << skipped
            << " skipped) -> " << run_dir << '\n';

  pipeline::Manifest m = make_manifest("ingest", args, settings);
  m.elapsed_seconds = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - started)
                          .count();
  m.save(run_dir + "/manifest.json");
  return 0;
}

int cmd_weaklabel(const std::string& action, CommonArgs& args,
                  const std::string& model_path, const std::string& input_path,
                  const std::string& out_path) {
  pipeline::Settings settings = build_settings(args);
  const auto started = std::chrono::steady_clock::now();

  if (action == "fit") {
    corpus::Corpus corpus = pipeline::load_dataset(args.dataset, settings.ingest);
    corpus::SplitResult split = derive_split(corpus, args, settings);
    std::string run_dir = args.run_dir.empty()
                              ? pipeline::make_run_dir("weaklabel", settings.train.seed)
                              : args.run_dir;
    fs::create_directories(run_dir);

    const int folds = args.folds >= 2 ? args.folds : 1;
    for (int fold = folds >= 2 ? 0 : -1; fold < folds; ++fold) {
      std::vector<std::size_t> strong_train;
      for (std::size_t idx : split.strong) {
        if (fold < 0 || split.fold_of[idx] != fold) strong_train.push_back(idx);
      }
      forest::ForestConfig fc = settings.forest;
      fc.seed = fold < 0 ? settings.forest.seed
                         : derive_seed(settings.forest.seed,
                                       7000 + static_cast<std::uint64_t>(fold));
      forest::ForestModel model = forest::fit_forest(corpus, strong_train, fc);
      model.split_meta = {args.labeled_fraction, settings.train.seed, fold};
      const std::string path = fold < 0 ? run_dir + "/forest.json"
                                        : run_dir + "/forest_fold" +
                                              std::to_string(fold) + ".json";
      model.save(path);
      std::cout << "forest" << (fold < 0 ? "" : " fold " + std::to_string(fold))
                << ": " << model.rules.size() << " rules -> " << path << '\n';
      if (fold < 0) break;
    }
    pipeline::Manifest m = make_manifest("weaklabel-fit", args, settings);
    m.elapsed_seconds = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - started)
                            .count();
    m.save(run_dir + "/manifest.json");
    return 0;
  }

  if (model_path.empty()) {
    throw UsageError("weaklabel " + action + " requires --model <forest.json>");
  }
  forest::ForestModel model = forest::ForestModel::load(model_path);

  if (action == "rules") {
    const std::string table = forest::format_rules(model.rules);
    if (out_path.empty()) {
      std::cout << table;
    } else {
      std::ofstream os(out_path);
      if (!os) throw DataError("cannot write " + out_path);
      os << table;
      std::cout << "wrote " << model.rules.size() << " rules -> " << out_path << '\n';
    }
    return 0;
  }

  if (action == "predict") {
    if (input_path.empty()) {
      throw UsageError("weaklabel predict requires --input <corpus.jsonl>");
    }
    corpus::Corpus corpus = corpus::load_corpus_cache(input_path);
    std::ostream* os = &std::cout;
    std::ofstream file;
    if (!out_path.empty()) {
      file.open(out_path);
      if (!file) throw DataError("cannot write " + out_path);
      os = &file;
    }
    for (const auto& rec : corpus.records) {
      json j;
      j["id"] = rec.headline.id;
      j["weak_label"] = model.predict_tokens(rec.headline.tokens);
      *os << j.dump() << '\n';
    }
    return 0;
  }
  throw UsageError("unknown weaklabel action: " + action);
}

int cmd_train(CommonArgs& args, const std::string& forest_path,
              bool supervised_only) {
  pipeline::Settings settings = build_settings(args);
  const auto started = std::chrono::steady_clock::now();
  if (supervised_only) {
    settings.train.variant.weak = false;
    settings.train.variant.confidence = false;
  }
  if (settings.train.variant.weak && forest_path.empty()) {
    throw UsageError(
        "train needs --forest <forest.json or directory from `weaklabel fit`> "
        "unless --supervised-only is given");
  }

  std::string run_dir = args.run_dir.empty()
                            ? pipeline::make_run_dir("train", settings.train.seed)
                            : args.run_dir;
  fs::create_directories(run_dir);
  pipeline::Manifest m = make_manifest("train", args, settings);
  m.forest_path = forest_path;

  if (args.dataset.kind == "challenge") {
    corpus::ChallengeData data =
        corpus::load_challenge_dataset(args.dataset.challenge_dir, settings.ingest);
    for (const auto& w : data.warnings) std::cerr << "warning: " << w << '\n';
    auto embeddings =
        load_embedding_rows(args.dataset, data.a.vocab, settings.train.emb_dim);
    pipeline::FoldArtifacts art = pipeline::run_training_challenge(
        data, args.labeled_fraction, settings,
        args.dataset.embeddings_file.empty() ? nullptr : &embeddings, run_dir);
    std::cout << "test accuracy " << art.metrics.accuracy << " f1 "
              << art.metrics.f1 << " mse " << art.metrics.mse << '\n';
  } else {
    corpus::Corpus corpus = pipeline::load_dataset(args.dataset, settings.ingest);
    corpus::SplitResult split = derive_split(corpus, args, settings);
    auto embeddings =
        load_embedding_rows(args.dataset, corpus.vocab, settings.train.emb_dim);
    const auto* emb_ptr =
        args.dataset.embeddings_file.empty() ? nullptr : &embeddings;

    auto load_fold_forest = [&](int fold) -> std::optional<forest::ForestModel> {
      if (!settings.train.variant.weak) return std::nullopt;
      std::string path = forest_path;
      if (fs::is_directory(path)) {
        path += fold < 0 ? "/forest.json"
                         : "/forest_fold" + std::to_string(fold) + ".json";
      }
      if (!fs::exists(path)) {
        throw UsageError("missing forest file: " + path);
      }
      forest::ForestModel f = forest::ForestModel::load(path);
      if (f.split_meta.seed != settings.train.seed ||
          f.split_meta.labeled_fraction != args.labeled_fraction ||
          f.split_meta.fold != fold) {
        std::cerr << "warning: forest split metadata (fraction "
                  << f.split_meta.labeled_fraction << ", seed "
                  << f.split_meta.seed << ", fold " << f.split_meta.fold
                  << ") does not match this run\n";
      }
      return f;
    };

    if (args.folds >= 2) {
      double acc = 0.0;
      json folds_json = json::array();
      for (int fold = 0; fold < args.folds; ++fold) {
        auto prefit = load_fold_forest(fold);
        pipeline::FoldArtifacts art = pipeline::run_training_fold(
            corpus, split, fold, settings, prefit ? &*prefit : nullptr, emb_ptr,
            run_dir + "/fold" + std::to_string(fold));
        std::cout << "fold " << fold << ": accuracy " << art.metrics.accuracy
                  << " f1 " << art.metrics.f1 << '\n';
        acc += art.metrics.accuracy;
        folds_json.push_back({{"fold", fold},
                              {"accuracy", art.metrics.accuracy},
                              {"f1", art.metrics.f1},
                              {"best_epoch", art.result.best_epoch}});
      }
      acc /= args.folds;
      std::cout << "mean accuracy over " << args.folds << " folds: " << acc << '\n';
      std::ofstream os(run_dir + "/cv_summary.json");
      os << json{{"mean_accuracy", acc}, {"folds", folds_json}}.dump(1) << '\n';
    } else {
      auto prefit = load_fold_forest(-1);
      pipeline::FoldArtifacts art = pipeline::run_training_fold(
          corpus, split, -1, settings, prefit ? &*prefit : nullptr, emb_ptr,
          run_dir);
      std::cout << "holdout accuracy " << art.metrics.accuracy << " f1 "
                << art.metrics.f1 << '\n';
    }
  }

  m.elapsed_seconds = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - started)
                          .count();
  m.save(run_dir + "/manifest.json");
  std::cout << "run dir: " << run_dir << '\n';
  return 0;
}

int cmd_evaluate(CommonArgs& args, const std::string& checkpoint_dir,
                 const std::string& attention_dump,
                 const std::string& confidence_dump) {
  if (checkpoint_dir.empty()) throw UsageError("evaluate requires --checkpoint");
  pipeline::LoadedModel loaded = pipeline::load_checkpoint(checkpoint_dir);

  // Dataset and split come from the run manifest next to the checkpoint
  // unless flags override them.
  std::string manifest_path = checkpoint_dir + "/manifest.json";
  if (!fs::exists(manifest_path)) {
    manifest_path = fs::path(checkpoint_dir).parent_path().string() + "/manifest.json";
  }
  int fold = -1;
  {
    const std::string name = fs::path(checkpoint_dir).filename().string();
    if (name.rfind("fold", 0) == 0) fold = std::stoi(name.substr(4));
  }
  if (args.dataset.kind.empty()) {
    if (!fs::exists(manifest_path)) {
      throw UsageError("no manifest near checkpoint; pass dataset flags: " +
                       manifest_path);
    }
    pipeline::Manifest m = pipeline::Manifest::load(manifest_path);
    args.dataset = m.dataset;
    args.labeled_fraction = m.labeled_fraction;
    args.folds = m.folds;
  }

  corpus::Corpus corpus;
  std::vector<std::size_t> indices;
  if (args.dataset.kind == "challenge") {
    corpus::ChallengeData data = corpus::load_challenge_dataset(
        args.dataset.challenge_dir, loaded.settings.ingest);
    corpus = std::move(data.b);  // challenge checkpoints evaluate on B
    for (std::size_t i = 0; i < corpus.records.size(); ++i) {
      if (corpus.records[i].label) indices.push_back(i);
    }
  } else {
    corpus = pipeline::load_dataset(args.dataset, loaded.settings.ingest);
    corpus::SplitResult split =
        corpus::make_splits(corpus, args.labeled_fraction,
                            args.folds >= 2 ? args.folds : 1,
                            loaded.settings.train.seed);
    // The checkpoint's own evaluation slice: its test fold, or the holdout.
    if (fold >= 0) {
      for (std::size_t i = 0; i < corpus.records.size(); ++i) {
        if (split.fold_of[i] == fold && corpus.records[i].label) {
          indices.push_back(i);
        }
      }
    } else {
      eval::FoldData data =
          eval::prepare_fold(corpus, split, -1, loaded.settings.train, nullptr);
      indices = data.validation_indices;
    }
  }

  eval::MetricsReport metrics = pipeline::evaluate_loaded(loaded, corpus, indices);
  std::cout << "n=" << metrics.n << " accuracy=" << metrics.accuracy
            << " precision=" << metrics.precision << " recall=" << metrics.recall
            << " f1=" << metrics.f1 << " roc_auc=" << metrics.roc_auc
            << " mse=" << metrics.mse << '\n';

  std::string run_dir = args.run_dir.empty()
                            ? pipeline::make_run_dir("evaluate",
                                                     loaded.settings.train.seed)
                            : args.run_dir;
  fs::create_directories(run_dir);
  pipeline::write_metrics_json(metrics, run_dir + "/metrics.json");

  if (!attention_dump.empty()) {
    pipeline::dump_attention(loaded, corpus, indices,
                             run_dir + "/" + attention_dump);
  }
  if (!confidence_dump.empty()) {
    std::string forest_file = checkpoint_dir + "/forest.json";
    if (!fs::exists(forest_file)) {
      throw UsageError("confidence dump needs " + forest_file);
    }
    forest::ForestModel f = forest::ForestModel::load(forest_file);
    pipeline::dump_confidence_scores(loaded, f, corpus, indices,
                                     run_dir + "/" + confidence_dump);
  }
  std::cout << "run dir: " << run_dir << '\n';
  return 0;
}

int cmd_ablate(CommonArgs& args, std::vector<std::string> variants,
               std::vector<double> fractions, int jobs) {
  pipeline::Settings settings = build_settings(args);
  const auto started = std::chrono::steady_clock::now();
  if (variants.empty()) {
    variants = {"baseline", "san", "san+rf", "san+rf+gs", "san+rf+gs+gf",
                "san+rf+gs+gf+conf"};
  }
  if (fractions.empty()) fractions = {0.8, 0.5, 0.3};

  corpus::Corpus corpus = pipeline::load_dataset(args.dataset, settings.ingest);
  auto embeddings =
      load_embedding_rows(args.dataset, corpus.vocab, settings.train.emb_dim);

  eval::CvOptions options;
  options.folds = args.folds >= 2 ? args.folds : 5;
  options.seed = settings.train.seed;
  options.jobs = jobs;
  options.forest = settings.forest;
  if (!args.dataset.embeddings_file.empty()) options.embeddings = &embeddings;

  eval::AblationReport report =
      eval::run_ablation(corpus, settings.train, variants, fractions, options);

  std::string run_dir = args.run_dir.empty()
                            ? pipeline::make_run_dir("ablate", settings.train.seed)
                            : args.run_dir;
  fs::create_directories(run_dir);
  std::cout << report.table();
  {
    std::ofstream os(run_dir + "/ablation.txt");
    os << report.table();
  }
  {
    std::ofstream os(run_dir + "/ablation.jsonl");
    for (const auto& cell : report.cells) {
      json j;
      j["variant"] = cell.variant;
      j["labeled_fraction"] = cell.labeled_fraction;
      j["accuracy_mean"] = cell.summary.mean.accuracy;
      j["accuracy_std"] = cell.summary.stddev.accuracy;
      j["precision_mean"] = cell.summary.mean.precision;
      j["recall_mean"] = cell.summary.mean.recall;
      j["f1_mean"] = cell.summary.mean.f1;
      j["roc_auc_mean"] = cell.summary.mean.roc_auc;
      j["mse_mean"] = cell.summary.mean.mse;
      os << j.dump() << '\n';
    }
  }
  pipeline::Manifest m = make_manifest("ablate", args, settings);
  m.elapsed_seconds = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - started)
                          .count();
  m.save(run_dir + "/manifest.json");
  std::cout << "run dir: " << run_dir << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised clickbait detection pipeline"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string out_file, forest_model, input_file, out_path;
  std::string checkpoint_dir, attention_dump, confidence_dump;
  std::string weaklabel_action;
  bool supervised_only = false;
  std::vector<std::string> variants;
  std::vector<double> fractions;
  int jobs = 1;

  auto* ingest = app.add_subcommand("ingest", "Normalize a dataset into a cache");
  add_dataset_flags(ingest, args);
  add_common_flags(ingest, args);
  ingest->add_option("--out", out_file, "Cache output path");

  auto* weaklabel =
      app.add_subcommand("weaklabel", "Random-forest weak labeler: fit|predict|rules");
  weaklabel->add_option("action", weaklabel_action, "fit|predict|rules")->required();
  add_dataset_flags(weaklabel, args);
  add_common_flags(weaklabel, args);
  weaklabel->add_option("--model", forest_model, "Fitted forest file");
  weaklabel->add_option("--input", input_file, "Corpus cache to predict on");
  weaklabel->add_option("--out", out_path, "Output path");
  weaklabel->add_option("--labeled-fraction", args.labeled_fraction,
                        "Fraction of labels kept as strong supervision");
  weaklabel->add_option("--folds", args.folds, "Fit one forest per training fold");

  auto* train_cmd = app.add_subcommand("train", "Train the classifier");
  add_dataset_flags(train_cmd, args);
  add_common_flags(train_cmd, args);
  train_cmd->add_option("--labeled-fraction", args.labeled_fraction,
                        "Fraction of labels kept as strong supervision");
  train_cmd->add_option("--folds", args.folds,
                        "k-fold cross validation (1 = single holdout run)");
  train_cmd->add_option("--forest", forest_model,
                        "Forest file or `weaklabel fit` run directory");
  train_cmd->add_flag("--supervised-only", supervised_only,
                      "Drop weak supervision (no forest needed)");

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint");
  add_dataset_flags(evaluate, args);
  add_common_flags(evaluate, args);
  evaluate->add_option("--checkpoint", checkpoint_dir, "Checkpoint directory")
      ->required();
  evaluate->add_option("--dump-attention", attention_dump,
                       "Write per-headline (token, b, d, a) records");
  evaluate->add_option("--dump-confidence", confidence_dump,
                       "Write (id, weak label, score) records");

  auto* ablate = app.add_subcommand("ablate", "Variant x labeled-fraction grid");
  add_dataset_flags(ablate, args);
  add_common_flags(ablate, args);
  ablate->add_option("--variants", variants, "Variant specs (e.g. san+rf+gs)");
  ablate->add_option("--fractions", fractions, "Labeled fractions");
  ablate->add_option("--folds", args.folds, "Folds per cell (default 5)");
  ablate->add_option("--jobs", jobs, "Folds trained in parallel (default 1)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (ingest->parsed()) return cmd_ingest(args, out_file);
    if (weaklabel->parsed()) {
      return cmd_weaklabel(weaklabel_action, args, forest_model, input_file,
                           out_path);
    }
    if (train_cmd->parsed()) return cmd_train(args, forest_model, supervised_only);
    if (evaluate->parsed()) {
      return cmd_evaluate(args, checkpoint_dir, attention_dump, confidence_dump);
    }
    if (ablate->parsed()) return cmd_ablate(args, variants, fractions, jobs);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
