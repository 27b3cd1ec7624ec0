#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "baitnet/eval.hpp"

using namespace baitnet;
using eval::MetricsReport;
using eval::Prediction;

namespace {

// Brute-force confusion-matrix oracle.
struct Oracle {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  static Oracle of(const std::vector<Prediction>& preds) {
    Oracle o;
    for (const auto& p : preds) {
      const int hat = p.p >= 0.5 ? 1 : 0;
      if (hat == 1 && p.label == 1) ++o.tp;
      else if (hat == 1 && p.label == 0) ++o.fp;
      else if (hat == 0 && p.label == 0) ++o.tn;
      else ++o.fn;
    }
    return o;
  }
  double accuracy(std::size_t n) const { return double(tp + tn) / double(n); }
  double precision() const { return tp + fp ? double(tp) / double(tp + fp) : 0.0; }
  double recall() const { return tp + fn ? double(tp) / double(tp + fn) : 0.0; }
  double f1() const {
    const double p = precision(), r = recall();
    return p > 0 && r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
};

corpus::Corpus tiny_corpus(int per_class) {
  std::vector<std::string> texts;
  std::vector<int> labels;
  for (int i = 0; i < per_class; ++i) {
    texts.push_back("you wont believe trick " + std::to_string(i));
    labels.push_back(1);
    texts.push_back("council approves measure " + std::to_string(i));
    labels.push_back(0);
  }
  return corpus::corpus_from_texts(texts, labels, {});
}

train::TrainConfig tiny_train_config() {
  train::TrainConfig cfg;
  cfg.emb_dim = 6;
  cfg.hidden_dim = 4;
  cfg.attn_dim = 3;
  cfg.conf_hidden = 4;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.1;
  cfg.max_epochs = 2;
  cfg.patience = 2;
  cfg.seed = 99;
  // keep the forest small for toy vocabularies
  return cfg;
}

}  // namespace

TEST_CASE("metrics match the confusion oracle on every 4-sample composition") {
  // all 2^4 prediction patterns over a fixed label vector, and both
  // label patterns over a fixed prediction vector
  const std::vector<int> labels{1, 1, 0, 0};
  for (int mask = 0; mask < 16; ++mask) {
    std::vector<Prediction> preds;
    for (int i = 0; i < 4; ++i) {
      Prediction p;
      p.p = (mask >> i) & 1 ? 0.8 : 0.2;
      p.label = labels[static_cast<std::size_t>(i)];
      preds.push_back(p);
    }
    MetricsReport m = eval::compute_metrics(preds);
    Oracle o = Oracle::of(preds);
    CAPTURE(mask);
    CHECK(m.tp == o.tp);
    CHECK(m.fp == o.fp);
    CHECK(m.tn == o.tn);
    CHECK(m.fn == o.fn);
    CHECK(m.accuracy == doctest::Approx(o.accuracy(4)).epsilon(1e-12));
    CHECK(m.precision == doctest::Approx(o.precision()).epsilon(1e-12));
    CHECK(m.recall == doctest::Approx(o.recall()).epsilon(1e-12));
    CHECK(m.f1 == doctest::Approx(o.f1()).epsilon(1e-12));
    if (m.precision > 0 && m.recall > 0) {
      CHECK(m.f1 == doctest::Approx(2 * m.precision * m.recall /
                                    (m.precision + m.recall)));
    }
  }
}

TEST_CASE("metric edge cases") {
  SUBCASE("perfect predictions") {
    std::vector<Prediction> preds{{0.9, 1, {}}, {0.8, 1, {}}, {0.1, 0, {}},
                                  {0.2, 0, {}}};
    MetricsReport m = eval::compute_metrics(preds);
    CHECK(m.accuracy == 1.0);
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 1.0);
    CHECK(m.f1 == 1.0);
    CHECK(m.roc_auc == 1.0);
    CHECK(m.mse < 0.05);
  }

  SUBCASE("constant 0.5 on a balanced set") {
    std::vector<Prediction> preds{{0.5, 1, {}}, {0.5, 0, {}}, {0.5, 1, {}},
                                  {0.5, 0, {}}};
    MetricsReport m = eval::compute_metrics(preds);
    CHECK(m.accuracy == 0.5);
    CHECK(m.roc_auc == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(m.mse == doctest::Approx(0.25).epsilon(1e-12));
  }

  SUBCASE("hand-built TP=FP=FN=TN=1") {
    std::vector<Prediction> preds{{0.9, 1, {}}, {0.9, 0, {}}, {0.1, 1, {}},
                                  {0.1, 0, {}}};
    MetricsReport m = eval::compute_metrics(preds);
    CHECK(m.precision == doctest::Approx(0.5));
    CHECK(m.recall == doctest::Approx(0.5));
    CHECK(m.f1 == doctest::Approx(0.5));
  }

  SUBCASE("mse uses truthMean when present, the label otherwise") {
    std::vector<Prediction> preds{{0.5, 1, 0.75}, {0.5, 0, {}}};
    MetricsReport m = eval::compute_metrics(preds);
    // (0.5-0.75)^2 and (0.5-0)^2
    CHECK(m.mse == doctest::Approx((0.0625 + 0.25) / 2.0).epsilon(1e-12));
  }

  SUBCASE("ranking AUC with ties") {
    std::vector<Prediction> preds{{0.9, 1, {}}, {0.7, 1, {}}, {0.7, 0, {}},
                                  {0.2, 0, {}}};
    // pairs: (0.9 vs 0.7-neg): win, (0.9 vs 0.2): win,
    //        (0.7-pos vs 0.7-neg): tie (0.5), (0.7-pos vs 0.2): win
    MetricsReport m = eval::compute_metrics(preds);
    CHECK(m.roc_auc == doctest::Approx(3.5 / 4.0).epsilon(1e-12));
  }

  SUBCASE("empty input errors") {
    CHECK_THROWS_AS(eval::compute_metrics({}), DataError);
  }
}

TEST_CASE("variant toggle parsing stays consistent with baseline mode") {
  auto base = net::VariantFlags::parse("baseline");
  CHECK_FALSE(base.attention);
  CHECK_FALSE(base.gate);
  CHECK_FALSE(base.smooth);
  CHECK_FALSE(base.weak);
  CHECK_FALSE(base.confidence);

  auto full = net::VariantFlags::parse("san+rf+gs+gf+conf");
  CHECK(full.attention);
  CHECK(full.gate);
  CHECK(full.smooth);
  CHECK(full.weak);
  CHECK(full.confidence);
  CHECK(net::VariantFlags::parse("full").to_string() == full.to_string());

  auto san = net::VariantFlags::parse("san");
  CHECK(san.attention);
  CHECK_FALSE(san.weak);

  CHECK_THROWS_AS(net::VariantFlags::parse("gs"), UsageError);
  CHECK_THROWS_AS(net::VariantFlags::parse("san+conf"), UsageError);
  CHECK_THROWS_AS(net::VariantFlags::parse("warp"), UsageError);
}

TEST_CASE("cross validation is reproducible bit-exactly under a fixed seed") {
  corpus::Corpus c = tiny_corpus(12);  // 24 records
  train::TrainConfig cfg = tiny_train_config();
  cfg.variant = net::VariantFlags::parse("san+rf");
  cfg.max_epochs = 1;

  eval::CvOptions options;
  options.folds = 2;
  options.seed = 7;
  options.labeled_fraction = 0.8;

  eval::CvSummary s1 = eval::run_cv(c, cfg, options);
  eval::CvSummary s2 = eval::run_cv(c, cfg, options);
  REQUIRE(s1.folds.size() == 2);
  for (std::size_t f = 0; f < s1.folds.size(); ++f) {
    CHECK(s1.folds[f].metrics.accuracy == s2.folds[f].metrics.accuracy);
    CHECK(s1.folds[f].metrics.f1 == s2.folds[f].metrics.f1);
    CHECK(s1.folds[f].metrics.mse == s2.folds[f].metrics.mse);
  }
  CHECK(s1.mean.accuracy == s2.mean.accuracy);
  CHECK(s1.stddev.accuracy == s2.stddev.accuracy);
}

TEST_CASE("parallel fold execution is bit-identical to sequential") {
  corpus::Corpus c = tiny_corpus(12);
  train::TrainConfig cfg = tiny_train_config();
  cfg.variant = net::VariantFlags::parse("san+rf");
  cfg.max_epochs = 1;

  eval::CvOptions sequential;
  sequential.folds = 3;
  sequential.seed = 17;
  sequential.labeled_fraction = 0.8;
  eval::CvOptions parallel = sequential;
  parallel.jobs = 3;

  eval::CvSummary s1 = eval::run_cv(c, cfg, sequential);
  eval::CvSummary s2 = eval::run_cv(c, cfg, parallel);
  REQUIRE(s1.folds.size() == s2.folds.size());
  for (std::size_t f = 0; f < s1.folds.size(); ++f) {
    CHECK(s1.folds[f].fold == s2.folds[f].fold);
    CHECK(s1.folds[f].metrics.accuracy == s2.folds[f].metrics.accuracy);
    CHECK(s1.folds[f].metrics.mse == s2.folds[f].metrics.mse);
  }
  CHECK(s1.mean.accuracy == s2.mean.accuracy);
}

TEST_CASE("fold preparation partitions data and attaches weak material") {
  corpus::Corpus c = tiny_corpus(20);  // 40 records
  train::TrainConfig cfg = tiny_train_config();
  cfg.variant = net::VariantFlags::parse("san+rf+gs+gf+conf");
  corpus::SplitResult split = corpus::make_splits(c, 0.5, 2, 13);

  eval::FoldData data = eval::prepare_fold(c, split, 0, cfg, nullptr);
  CHECK(!data.strong.empty());
  CHECK(!data.weak.empty());
  CHECK(!data.validation.empty());
  CHECK(!data.test_indices.empty());
  REQUIRE(data.forest.has_value());

  // no test index appears in training material
  for (std::size_t idx : data.test_indices) {
    CHECK(split.fold_of[idx] == 0);
  }
  // strong samples carry forest predictions; weak carry targets
  for (const auto& s : data.strong) {
    CHECK((s.rf_prediction == 0 || s.rf_prediction == 1));
    CHECK(s.q.size() == s.token_ids.size());
  }
  for (const auto& s : data.weak) {
    CHECK((s.label == 0 || s.label == 1));
  }
  CHECK(data.weights.w0 > 0.0);
  CHECK(data.weights.w1 > 0.0);
}

TEST_CASE("ablation report covers the variant-by-fraction grid") {
  corpus::Corpus c = tiny_corpus(12);
  train::TrainConfig cfg = tiny_train_config();
  cfg.max_epochs = 1;
  eval::CvOptions options;
  options.folds = 2;
  options.seed = 3;

  eval::AblationReport report = eval::run_ablation(
      c, cfg, {"baseline", "san"}, {1.0, 0.8}, options);
  REQUIRE(report.cells.size() == 4);
  CHECK(report.cells[0].variant == "baseline");
  CHECK(report.cells[0].labeled_fraction == 1.0);
  CHECK(report.cells[3].variant == "san");
  CHECK(report.cells[3].labeled_fraction == 0.8);
  for (const auto& cell : report.cells) {
    CHECK(cell.summary.mean.accuracy >= 0.0);
    CHECK(cell.summary.mean.accuracy <= 1.0);
  }
  const std::string table = report.table();
  CHECK(table.find("baseline") != std::string::npos);
  CHECK(table.find("san") != std::string::npos);
  CHECK(table.find("Acc") != std::string::npos);
}
