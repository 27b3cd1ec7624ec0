#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "baitnet/eval.hpp"

namespace baitnet::pipeline {

// ---------------------------------------------------------------------------
// Config files: flat key=value lines mirroring TrainConfig field names.
// Duplicate keys are an error; unknown keys are an error. Precedence is
// defaults < file < flags (flags applied by the CLI after the file).

struct Settings {
  train::TrainConfig train;
  corpus::IngestOptions ingest;
  forest::ForestConfig forest;
};

std::map<std::string, std::string> parse_config_file(const std::string& path);
void apply_config(Settings& settings,
                  const std::map<std::string, std::string>& values,
                  const std::string& source);
std::map<std::string, std::string> config_to_map(const Settings& settings);

// ---------------------------------------------------------------------------
// Datasets

struct DatasetSpec {
  std::string kind;  // headlines | challenge | cache
  std::string clickbait_file;
  std::string non_clickbait_file;
  std::string challenge_dir;
  std::string cache_file;
  std::string embeddings_file;
};

corpus::Corpus load_dataset(const DatasetSpec& spec,
                            const corpus::IngestOptions& ingest);

std::uint64_t file_checksum(const std::string& path);

// ---------------------------------------------------------------------------
// Run directories and manifests

// Root from $BAITNET_RUN_ROOT, falling back to ./runs.
std::string run_root();
std::string make_run_dir(const std::string& command, std::uint64_t seed);

struct Manifest {
  std::string command;
  DatasetSpec dataset;
  std::map<std::string, std::string> config;
  double labeled_fraction = 1.0;
  int folds = 1;
  std::uint64_t seed = 0;
  std::string split_recipe;
  std::string forest_path;
  double elapsed_seconds = 0.0;

  void save(const std::string& path) const;
  static Manifest load(const std::string& path);
};

// ---------------------------------------------------------------------------
// Training and evaluation entry points shared by the CLI

struct FoldArtifacts {
  int fold = -1;
  eval::MetricsReport metrics;
  train::TrainResult result;
  std::string checkpoint_dir;
};

// fold == -1 selects holdout mode: train on the full strong/pool partition
// and evaluate on the early-stopping holdout.
FoldArtifacts run_training_fold(const corpus::Corpus& corpus,
                                const corpus::SplitResult& split, int fold,
                                const Settings& settings,
                                const forest::ForestModel* prefit_forest,
                                const std::vector<std::vector<double>>* embeddings,
                                const std::string& out_dir);

// Challenge protocol: strong/pool drawn from A (pool bootstrapped with C),
// evaluation on B.
FoldArtifacts run_training_challenge(const corpus::ChallengeData& data,
                                     double labeled_fraction,
                                     const Settings& settings,
                                     const std::vector<std::vector<double>>* embeddings,
                                     const std::string& out_dir);

struct LoadedModel {
  Settings settings;
  std::vector<std::string> vocab_tokens;
  std::unique_ptr<net::AttentionNet> model;
  std::unique_ptr<conf::ConfidenceNet> confidence;

  // Maps through the training vocabulary; unseen tokens become <unk>.
  std::vector<int> token_ids(const std::vector<std::string>& tokens) const;

 private:
  mutable std::unordered_map<std::string, int> index_cache_;
};

void save_checkpoint(const std::string& dir, const Settings& settings,
                     const corpus::Vocabulary& vocab, net::AttentionNet& model,
                     conf::ConfidenceNet* confidence);
LoadedModel load_checkpoint(const std::string& dir);

eval::MetricsReport evaluate_loaded(LoadedModel& loaded,
                                    const corpus::Corpus& corpus,
                                    const std::vector<std::size_t>& indices);

void write_metrics_json(const eval::MetricsReport& m, const std::string& path);

void dump_attention(LoadedModel& loaded, const corpus::Corpus& corpus,
                    const std::vector<std::size_t>& indices,
                    const std::string& path);
void dump_confidence_scores(LoadedModel& loaded, const forest::ForestModel& forest,
                            const corpus::Corpus& corpus,
                            const std::vector<std::size_t>& indices,
                            const std::string& path);

}  // namespace baitnet::pipeline
