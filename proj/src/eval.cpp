#include "baitnet/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <future>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>

namespace baitnet::eval {

MetricsReport compute_metrics(const std::vector<Prediction>& preds) {
  if (preds.empty()) throw DataError("compute_metrics: empty prediction set");
  MetricsReport r;
  r.n = preds.size();
  double se = 0.0;
  for (const auto& p : preds) {
    const int pred = p.p >= 0.5 ? 1 : 0;
    if (pred == 1 && p.label == 1) ++r.tp;
    if (pred == 1 && p.label == 0) ++r.fp;
    if (pred == 0 && p.label == 0) ++r.tn;
    if (pred == 0 && p.label == 1) ++r.fn;
    const double target = p.truth_mean ? *p.truth_mean : static_cast<double>(p.label);
    se += (p.p - target) * (p.p - target);
  }
  const double n = static_cast<double>(preds.size());
  r.accuracy = static_cast<double>(r.tp + r.tn) / n;
  r.precision = (r.tp + r.fp) > 0
                    ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp)
                    : 0.0;
  r.recall = (r.tp + r.fn) > 0
                 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn)
                 : 0.0;
  r.f1 = (r.precision > 0.0 && r.recall > 0.0)
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  r.mse = se / n;

  // Rank statistic: average rank of positives, ties share credit.
  const long n_pos = r.tp + r.fn;
  const long n_neg = r.fp + r.tn;
  if (n_pos == 0 || n_neg == 0) {
    r.roc_auc = 0.5;
    return r;
  }
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return preds[a].p < preds[b].p;
  });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && preds[order[j + 1]].p == preds[order[i]].p) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (preds[order[k]].label == 1) rank_sum_pos += avg_rank;
    }
    i = j + 1;
  }
  r.roc_auc = (rank_sum_pos - 0.5 * static_cast<double>(n_pos) *
                                  static_cast<double>(n_pos + 1)) /
              (static_cast<double>(n_pos) * static_cast<double>(n_neg));
  return r;
}

MetricsReport evaluate_model(net::AttentionNet& model,
                             const train::TrainConfig& config,
                             const corpus::Corpus& corpus,
                             const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw DataError("evaluate_model: empty dataset");
  std::vector<Prediction> preds;
  preds.reserve(indices.size());
  const net::ForwardOptions opts = config.forward_options(false);
  for (std::size_t idx : indices) {
    const auto& rec = corpus.records[idx];
    if (!rec.label) continue;
    Prediction p;
    p.p = model.predict_proba(rec.headline.token_ids, opts);
    p.label = *rec.label;
    p.truth_mean = rec.truth_mean;
    preds.push_back(p);
  }
  if (preds.empty()) throw DataError("evaluate_model: no labeled samples");
  return compute_metrics(preds);
}

// ---------------------------------------------------------------------------

FoldData prepare_fold(const corpus::Corpus& corpus, const corpus::SplitResult& split,
                      int fold, const train::TrainConfig& config,
                      const forest::ForestModel* prefit,
                      const forest::ForestConfig* fit_config) {
  FoldData data;
  std::vector<std::size_t> strong_train, pool_train;
  for (std::size_t idx : split.strong) {
    if (split.fold_of[idx] != fold) strong_train.push_back(idx);
  }
  for (std::size_t idx : split.pool) {
    if (split.fold_of[idx] != fold) pool_train.push_back(idx);
  }
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    if (split.fold_of[i] == fold && corpus.records[i].label) {
      data.test_indices.push_back(i);
    }
  }
  if (strong_train.empty()) throw DataError("fold has no strong training samples");

  const forest::ForestModel* model = prefit;
  if (config.variant.weak && model == nullptr) {
    forest::ForestConfig fc = fit_config ? *fit_config : forest::ForestConfig{};
    fc.importance_threshold = config.importance_threshold;
    fc.seed = derive_seed(config.seed, 7000 + static_cast<std::uint64_t>(
                                           fold < 0 ? 0 : fold));
    data.forest = forest::fit_forest(corpus, strong_train, fc);
    data.forest->split_meta = {split.labeled_fraction, split.seed, fold};
    model = &*data.forest;
  }

  // Strong holdout for early stopping.
  std::vector<std::size_t> holdout, kept;
  {
    std::vector<std::size_t> shuffled = strong_train;
    Rng rng(derive_seed(config.seed, 9000 + static_cast<std::uint64_t>(fold)));
    fisher_yates(shuffled, rng);
    std::size_t n_val = static_cast<std::size_t>(
        std::llround(config.validation_fraction * static_cast<double>(shuffled.size())));
    if (shuffled.size() > 1 && n_val == 0) n_val = 1;
    holdout.assign(shuffled.begin(), shuffled.begin() + static_cast<long>(n_val));
    kept.assign(shuffled.begin() + static_cast<long>(n_val), shuffled.end());
    std::sort(holdout.begin(), holdout.end());
    std::sort(kept.begin(), kept.end());
  }

  auto to_sample = [&](std::size_t idx, int label, int rf_pred) {
    train::TrainSample s;
    s.token_ids = corpus.records[idx].headline.token_ids;
    s.label = label;
    s.rf_prediction = rf_pred;
    if (model != nullptr) {
      s.q = model->attention_targets(corpus.records[idx].headline.tokens,
                                     config.importance_threshold);
    }
    return s;
  };

  for (std::size_t idx : kept) {
    const auto& rec = corpus.records[idx];
    const int rf = model ? model->predict_tokens(rec.headline.tokens) : -1;
    data.strong.push_back(to_sample(idx, *rec.label, rf));
  }
  for (std::size_t idx : holdout) {
    const auto& rec = corpus.records[idx];
    data.validation.push_back(to_sample(idx, *rec.label, -1));
    data.validation_indices.push_back(idx);
  }
  if (config.variant.weak && model != nullptr) {
    for (std::size_t idx : pool_train) {
      const auto& rec = corpus.records[idx];
      data.weak.push_back(to_sample(idx, model->predict_tokens(rec.headline.tokens), -1));
    }
  }

  long c0 = 0, c1 = 0;
  for (const auto* set : {&data.strong, &data.weak}) {
    for (const auto& s : *set) {
      for (std::uint8_t qi : s.q) (qi ? c1 : c0) += 1;
    }
  }
  data.weights = train::AttentionClassWeights::from_counts(c0, c1);
  return data;
}

namespace {

MetricsReport summarize(const std::vector<FoldRun>& folds, bool stddev) {
  MetricsReport out;
  const double n = static_cast<double>(folds.size());
  auto collect = [&](auto getter) {
    double mean = 0.0;
    for (const auto& f : folds) mean += getter(f.metrics);
    mean /= n;
    if (!stddev) return mean;
    double var = 0.0;
    for (const auto& f : folds) {
      const double d = getter(f.metrics) - mean;
      var += d * d;
    }
    return std::sqrt(var / n);
  };
  out.accuracy = collect([](const MetricsReport& m) { return m.accuracy; });
  out.precision = collect([](const MetricsReport& m) { return m.precision; });
  out.recall = collect([](const MetricsReport& m) { return m.recall; });
  out.f1 = collect([](const MetricsReport& m) { return m.f1; });
  out.roc_auc = collect([](const MetricsReport& m) { return m.roc_auc; });
  out.mse = collect([](const MetricsReport& m) { return m.mse; });
  return out;
}

}  // namespace

CvSummary run_cv(const corpus::Corpus& corpus, const train::TrainConfig& config,
                 const CvOptions& options) {
  if (options.folds < 2) {
    throw UsageError("run_cv needs at least 2 folds, got " +
                     std::to_string(options.folds));
  }
  corpus::SplitResult split = corpus::make_splits(corpus, options.labeled_fraction,
                                                  options.folds, options.seed);

  auto run_fold = [&](int fold) {
    const forest::ForestModel* prefit = nullptr;
    if (options.forests && static_cast<std::size_t>(fold) < options.forests->size()) {
      prefit = &(*options.forests)[static_cast<std::size_t>(fold)];
    }
    FoldData data = prepare_fold(corpus, split, fold, config, prefit,
                                 &options.forest);

    train::TrainConfig fold_cfg = config;
    fold_cfg.seed = derive_seed(config.seed, 5000 + static_cast<std::uint64_t>(fold));

    Rng init_rng(derive_seed(fold_cfg.seed, 1));
    net::NetDims dims{static_cast<int>(corpus.vocab.size()), config.emb_dim,
                      config.hidden_dim, config.attn_dim};
    net::AttentionNet model(dims, init_rng);
    if (options.embeddings) model.set_embedding_rows(*options.embeddings);

    std::optional<conf::ConfidenceNet> confidence;
    if (config.variant.confidence) {
      Rng conf_rng(derive_seed(fold_cfg.seed, 2));
      confidence.emplace(2 * config.hidden_dim, conf_rng, config.conf_hidden,
                         config.bn_momentum, config.bn_before_concat);
    }
    train::Trainer trainer(model, confidence ? &*confidence : nullptr, fold_cfg);
    trainer.set_attention_weights(data.weights);

    FoldRun run;
    run.fold = fold;
    auto sink = options.log_sink
                    ? std::function<void(const train::StepLog&)>(
                          [&options, fold](const train::StepLog& l) {
                            options.log_sink(fold, l);
                          })
                    : std::function<void(const train::StepLog&)>();
    run.train_result = trainer.train(data.strong, data.weak, data.validation, sink);
    run.metrics = evaluate_model(model, config, corpus, data.test_indices);
    return run;
  };

  CvSummary summary;
  summary.folds.resize(static_cast<std::size_t>(options.folds));
  const int jobs = std::clamp(options.jobs, 1, options.folds);
  if (jobs <= 1) {
    for (int fold = 0; fold < options.folds; ++fold) {
      summary.folds[static_cast<std::size_t>(fold)] = run_fold(fold);
    }
  } else {
    std::atomic<int> next{0};
    std::vector<std::future<void>> workers;
    std::mutex error_mutex;
    std::exception_ptr first_error;
    for (int w = 0; w < jobs; ++w) {
      workers.push_back(std::async(std::launch::async, [&] {
        for (int fold = next.fetch_add(1); fold < options.folds;
             fold = next.fetch_add(1)) {
          try {
            summary.folds[static_cast<std::size_t>(fold)] = run_fold(fold);
          } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
          }
        }
      }));
    }
    for (auto& worker : workers) worker.get();
    if (first_error) std::rethrow_exception(first_error);
  }
  summary.mean = summarize(summary.folds, false);
  summary.stddev = summarize(summary.folds, true);
  return summary;
}

AblationReport run_ablation(const corpus::Corpus& corpus,
                            const train::TrainConfig& base_config,
                            const std::vector<std::string>& variants,
                            const std::vector<double>& fractions,
                            const CvOptions& options) {
  AblationReport report;
  for (const auto& variant : variants) {
    for (double fraction : fractions) {
      train::TrainConfig cfg = base_config;
      cfg.variant = net::VariantFlags::parse(variant);
      CvOptions opts = options;
      opts.labeled_fraction = fraction;
      AblationCell cell;
      cell.variant = variant;
      cell.labeled_fraction = fraction;
      cell.summary = run_cv(corpus, cfg, opts);
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

std::string AblationReport::table() const {
  std::ostringstream os;
  os << std::left << std::setw(28) << "Model" << std::setw(10) << "Labeled"
     << std::setw(10) << "Acc" << std::setw(10) << "Prec" << std::setw(10)
     << "Recall" << std::setw(10) << "F1" << std::setw(10) << "AUC"
     << "MSE\n";
  os << std::string(94, '-') << '\n';
  os << std::fixed << std::setprecision(3);
  for (const auto& cell : cells) {
    os << std::left << std::setw(28) << cell.variant << std::setw(10)
       << cell.labeled_fraction << std::setw(10) << cell.summary.mean.accuracy
       << std::setw(10) << cell.summary.mean.precision << std::setw(10)
       << cell.summary.mean.recall << std::setw(10) << cell.summary.mean.f1
       << std::setw(10) << cell.summary.mean.roc_auc << cell.summary.mean.mse
       << '\n';
  }
  return os.str();
}

}  // namespace baitnet::eval
