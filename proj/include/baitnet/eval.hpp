#pragma once

#include <optional>
#include <string>
#include <vector>

#include "baitnet/corpus.hpp"
#include "baitnet/forest.hpp"
#include "baitnet/trainer.hpp"

namespace baitnet::eval {

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double roc_auc = 0.0;
  double mse = 0.0;
  long tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t n = 0;
};

struct Prediction {
  double p = 0.0;           // clickbait probability
  int label = 0;            // reference class
  std::optional<double> truth_mean;  // challenge data; MSE target when set
};

// Clickbait (1) is the positive class. ROC-AUC is the rank statistic over
// probabilities with tie credit 1/2; degenerate single-class sets get 0.5.
MetricsReport compute_metrics(const std::vector<Prediction>& preds);

MetricsReport evaluate_model(net::AttentionNet& model,
                             const train::TrainConfig& config,
                             const corpus::Corpus& corpus,
                             const std::vector<std::size_t>& indices);

// ---------------------------------------------------------------------------
// Cross-validation and ablations

struct FoldRun {
  int fold = 0;
  MetricsReport metrics;
  train::TrainResult train_result;
};

struct CvSummary {
  std::vector<FoldRun> folds;
  MetricsReport mean;
  MetricsReport stddev;
};

struct CvOptions {
  double labeled_fraction = 1.0;
  int folds = 5;
  std::uint64_t seed = 0;
  // Folds are independent; >1 runs them on a thread pool. Results are
  // bit-identical either way (per-fold seeds are derived, never shared).
  int jobs = 1;
  forest::ForestConfig forest;  // used when fitting per-fold forests
  // Pre-fitted per-fold forests (index = fold). When absent and the variant
  // needs weak supervision, forests are fitted per fold from its strong set.
  const std::vector<forest::ForestModel>* forests = nullptr;
  const std::vector<std::vector<double>>* embeddings = nullptr;
  std::function<void(int fold, const train::StepLog&)> log_sink;
};

CvSummary run_cv(const corpus::Corpus& corpus, const train::TrainConfig& config,
                 const CvOptions& options);

// Builds the per-fold training material (used by run_cv and the CLI).
struct FoldData {
  std::vector<train::TrainSample> strong;      // D-hat_s view
  std::vector<train::TrainSample> weak;        // D_w view
  std::vector<train::TrainSample> validation;  // strong holdout
  std::vector<std::size_t> test_indices;       // corpus records in the fold
  std::vector<std::size_t> validation_indices; // corpus records of the holdout
  std::optional<forest::ForestModel> forest;
  train::AttentionClassWeights weights;
};

FoldData prepare_fold(const corpus::Corpus& corpus, const corpus::SplitResult& split,
                      int fold, const train::TrainConfig& config,
                      const forest::ForestModel* prefit,
                      const forest::ForestConfig* fit_config = nullptr);

struct AblationCell {
  std::string variant;
  double labeled_fraction = 0.0;
  CvSummary summary;
};

struct AblationReport {
  std::vector<AblationCell> cells;
  std::string table() const;  // aligned human-readable table
};

AblationReport run_ablation(const corpus::Corpus& corpus,
                            const train::TrainConfig& base_config,
                            const std::vector<std::string>& variants,
                            const std::vector<double>& fractions,
                            const CvOptions& options);

}  // namespace baitnet::eval
