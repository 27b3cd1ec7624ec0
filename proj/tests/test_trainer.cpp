#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "baitnet/forest.hpp"
#include "baitnet/trainer.hpp"

using namespace baitnet;
using diff::Matrix;
using diff::Tape;
using diff::Var;
using train::AttentionClassWeights;
using train::TrainConfig;
using train::Trainer;
using train::TrainSample;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.emb_dim = 6;
  cfg.hidden_dim = 4;
  cfg.attn_dim = 3;
  cfg.conf_hidden = 5;
  cfg.batch_size = 4;
  cfg.learning_rate = 0.05;
  cfg.max_epochs = 2;
  cfg.seed = 11;
  return cfg;
}

// Synthetic separable samples: label 1 sequences contain token 2.
std::vector<TrainSample> make_samples(int n, int vocab, Rng& rng,
                                      bool with_rf = false) {
  std::vector<TrainSample> out;
  for (int i = 0; i < n; ++i) {
    TrainSample s;
    const int label = i % 2;
    const int len = 3 + static_cast<int>(bounded(rng, 3));
    for (int t = 0; t < len; ++t) {
      int tok = 3 + static_cast<int>(bounded(rng, static_cast<std::uint64_t>(vocab - 3)));
      s.token_ids.push_back(tok);
    }
    if (label == 1) s.token_ids[0] = 2;
    s.label = label;
    s.q.assign(s.token_ids.size(), 0);
    for (std::size_t t = 0; t < s.token_ids.size(); ++t) {
      if (s.token_ids[t] == 2) s.q[t] = 1;
    }
    if (with_rf) s.rf_prediction = label;  // a mostly-agreeing weak labeler
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<const TrainSample*> as_batch(const std::vector<TrainSample>& v) {
  std::vector<const TrainSample*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

}  // namespace

TEST_CASE("configuration defaults match the published settings") {
  TrainConfig cfg;
  CHECK(cfg.learning_rate == 0.0001);
  CHECK(cfg.batch_size == 64);
  CHECK(cfg.lambda == 0.3);
  CHECK(cfg.tau == 0.7);
  CHECK(cfg.dropout_lstm == 0.5);
  CHECK(cfg.dropout_attn == 0.4);
  CHECK(cfg.bn_momentum == 0.05);
  CHECK(cfg.importance_threshold == 0.42);
  CHECK(cfg.emb_dim == 300);
  CHECK(cfg.hidden_dim == 200);
  CHECK(cfg.attn_dim == 32);
  CHECK(cfg.conf_hidden == 64);
  CHECK(cfg.patience >= 1);
  CHECK(cfg.attention_loss_on == "gate");

  forest::ForestConfig fc;
  CHECK(fc.n_estimators == 50);
  CHECK(fc.max_depth == 3);
  CHECK(fc.min_split == 5);
  CHECK(fc.importance_threshold == 0.42);
}

TEST_CASE("attention loss values") {
  AttentionClassWeights unit{1.0, 1.0};

  SUBCASE("exact targets cost (almost) nothing") {
    const std::vector<double> a{1.0, 0.0, 1.0};
    const std::vector<std::uint8_t> q{1, 0, 1};
    CHECK(train::attention_loss_value(a, q, unit) < 1e-5);
  }

  SUBCASE("uniform 0.5 activations with unit weights cost log 2") {
    const std::vector<double> a{0.5, 0.5, 0.5, 0.5};
    for (auto q : {std::vector<std::uint8_t>{1, 0, 1, 0},
                   std::vector<std::uint8_t>{0, 0, 0, 0}}) {
      CHECK(train::attention_loss_value(a, q, unit) ==
            doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
  }

  SUBCASE("flipping a target against a confident activation raises the loss") {
    const std::vector<double> a{0.99, 0.01, 0.5};
    std::vector<std::uint8_t> q{1, 0, 1};
    const double base = train::attention_loss_value(a, q, unit);
    q[0] = 0;  // a_0 sits near the wrong pole now
    CHECK(train::attention_loss_value(a, q, unit) > base + 1.0);
  }

  SUBCASE("tape op agrees with the plain-value twin and class weights") {
    AttentionClassWeights w = AttentionClassWeights::from_counts(30, 10);
    CHECK(w.w0 == doctest::Approx(40.0 / 60.0));
    CHECK(w.w1 == doctest::Approx(40.0 / 20.0));
    const std::vector<double> a{0.8, 0.3, 0.6};
    const std::vector<std::uint8_t> q{1, 0, 0};
    Tape tape;
    Matrix am(3, 1);
    am << 0.8, 0.3, 0.6;
    Var loss = train::attention_loss(tape, tape.constant(am), q, w);
    CHECK(tape.value(loss)(0, 0) ==
          doctest::Approx(train::attention_loss_value(a, q, w)).epsilon(1e-12));
  }

  SUBCASE("length mismatch raises") {
    Tape tape;
    Matrix am = Matrix::Constant(3, 1, 0.5);
    CHECK_THROWS(train::attention_loss(tape, tape.constant(am), {1, 0}, unit));
  }
}

TEST_CASE("combined loss composition") {
  SUBCASE("unit component losses combine to 1.3 at lambda 0.3") {
    // bce = 1 at p = e^-1 with y = 1; attention loss = 1 when a = e^-1, q = 1
    const double p = std::exp(-1.0);
    CHECK(train::bce_value(p, 1) == doctest::Approx(1.0).epsilon(1e-12));
    const double la = train::attention_loss_value({p}, {1}, {1.0, 1.0});
    CHECK(la == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(train::bce_value(p, 1) + 0.3 * la == doctest::Approx(1.3).epsilon(1e-9));
  }

  SUBCASE("lambda 0 degenerates to the classification loss") {
    TrainConfig cfg = tiny_config();
    cfg.lambda = 0.0;
    cfg.variant.weak = false;
    cfg.variant.confidence = false;
    Rng rng(1);
    net::NetDims dims{10, cfg.emb_dim, cfg.hidden_dim, cfg.attn_dim};
    net::AttentionNet model(dims, rng);
    Trainer trainer(model, nullptr, cfg);
    Rng data_rng(2);
    auto samples = make_samples(4, 10, data_rng);
    const double val = trainer.validation_loss(samples);
    double manual = 0.0;
    for (const auto& s : samples) {
      const double p = model.predict_proba(s.token_ids, cfg.forward_options(false));
      manual += train::bce_value(p, s.label);
    }
    manual /= 4.0;
    CHECK(val == doctest::Approx(manual).epsilon(1e-9));
  }

  SUBCASE("combined gradient is the linear combination of part gradients") {
    Rng rng(3);
    net::NetDims dims{10, 5, 3, 2};
    net::AttentionNet model(dims, rng);
    const std::vector<int> ids{2, 4, 7};
    const std::vector<std::uint8_t> q{1, 0, 0};
    AttentionClassWeights w{1.0, 1.0};
    net::ForwardOptions opts;  // deterministic forward

    auto grads_for = [&](int which) {  // 0: lc, 1: la, 2: combined
      model.store().zero_grads();
      Tape tape;
      Rng fwd(0);
      auto f = model.forward(tape, ids, opts, fwd);
      Var lc = train::bce_with_logit(tape, f.logit, 1.0);
      Var la = train::attention_loss(tape, f.gate, q, w);
      Var target = which == 0 ? lc
                   : which == 1 ? la
                                : tape.add(lc, tape.scale(la, 0.3));
      tape.backward(target);
      std::vector<Matrix> out;
      for (auto* p : model.store().all()) out.push_back(p->grad);
      return out;
    };
    auto g_lc = grads_for(0);
    auto g_la = grads_for(1);
    auto g_both = grads_for(2);
    for (std::size_t i = 0; i < g_lc.size(); ++i) {
      const Matrix expect = g_lc[i] + 0.3 * g_la[i];
      CHECK((g_both[i] - expect).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("Eq. 11 confidence-weighted updates") {
  TrainConfig cfg = tiny_config();
  cfg.variant = net::VariantFlags{};  // full model
  cfg.lambda = 0.3;
  Rng rng(5);
  net::NetDims dims{12, cfg.emb_dim, cfg.hidden_dim, cfg.attn_dim};
  Rng data_rng(6);
  auto weak = make_samples(4, 12, data_rng);
  // weak samples carry the forest label in `label`
  Rng conf_rng(7);

  auto fresh = [&](net::AttentionNet& model, conf::ConfidenceNet& cn) {
    Trainer t(model, &cn, cfg);
    t.reseed(909);
    return t;
  };

  SUBCASE("zero scores leave parameters untouched") {
    Rng init(8);
    net::AttentionNet model(dims, init);
    conf::ConfidenceNet cn(2 * cfg.hidden_dim, conf_rng, cfg.conf_hidden);
    auto before = model.store().snapshot_values();
    Trainer t = fresh(model, cn);
    t.apply_weak_batch(as_batch(weak), {0.0, 0.0, 0.0, 0.0});
    auto after = model.store().snapshot_values();
    for (std::size_t i = 0; i < before.size(); ++i) {
      CHECK((after[i] - before[i]).cwiseAbs().maxCoeff() == 0.0);
    }
  }

  SUBCASE("unit scores equal an independently computed plain SGD step") {
    Rng init(8);
    net::AttentionNet model(dims, init);
    conf::ConfidenceNet cn(2 * cfg.hidden_dim, conf_rng, cfg.conf_hidden);
    auto start = model.store().snapshot_values();

    // oracle: replicate the update by hand with the same RNG stream
    AttentionClassWeights w{1.0, 1.0};
    {
      Rng oracle_rng(909);
      model.store().zero_grads();
      for (const auto& s : weak) {
        Tape tape;
        auto f = model.forward(tape, s.token_ids, cfg.forward_options(true),
                               oracle_rng);
        Var lc = train::bce_with_logit(tape, f.logit, s.label);
        Var la = train::attention_loss(tape, f.gate, s.q, w);
        Var loss = tape.add(lc, tape.scale(la, cfg.lambda));
        tape.backward(loss, 1.0 / 4.0);
      }
    }
    std::vector<Matrix> expected;
    for (auto* p : model.store().all()) {
      expected.push_back(p->value - cfg.learning_rate * p->grad);
    }
    model.store().zero_grads();
    model.store().restore_values(start);

    Trainer t = fresh(model, cn);
    t.set_attention_weights(w);
    t.apply_weak_batch(as_batch(weak), {1.0, 1.0, 1.0, 1.0});
    auto all = model.store().all();
    for (std::size_t i = 0; i < all.size(); ++i) {
      CHECK((all[i]->value - expected[i]).cwiseAbs().maxCoeff() < 1e-15);
    }
  }

  SUBCASE("uniform 0.5 scores halve the parameter delta") {
    Rng init(8);
    net::AttentionNet model(dims, init);
    conf::ConfidenceNet cn(2 * cfg.hidden_dim, conf_rng, cfg.conf_hidden);
    auto start = model.store().snapshot_values();

    Trainer t = fresh(model, cn);
    t.apply_weak_batch(as_batch(weak), {1.0, 1.0, 1.0, 1.0});
    auto full = model.store().snapshot_values();

    model.store().restore_values(start);
    Trainer t2 = fresh(model, cn);
    t2.apply_weak_batch(as_batch(weak), {0.5, 0.5, 0.5, 0.5});
    auto half = model.store().snapshot_values();

    for (std::size_t i = 0; i < start.size(); ++i) {
      const Matrix d_full = full[i] - start[i];
      const Matrix d_half = half[i] - start[i];
      CHECK((d_half - 0.5 * d_full).cwiseAbs().maxCoeff() < 1e-9);
    }
  }

  SUBCASE("doubling every score doubles the gradient exactly") {
    Rng init(8);
    net::AttentionNet model(dims, init);
    conf::ConfidenceNet cn(2 * cfg.hidden_dim, conf_rng, cfg.conf_hidden);
    Trainer t = fresh(model, cn);
    t.reseed(909);
    auto g1 = t.weak_gradient(as_batch(weak), {0.25, 0.25, 0.25, 0.25});
    t.reseed(909);
    auto g2 = t.weak_gradient(as_batch(weak), {0.5, 0.5, 0.5, 0.5});
    for (std::size_t i = 0; i < g1.size(); ++i) {
      CHECK((g2[i] - 2.0 * g1[i]).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("strong batches ignore the confidence network's parameters") {
  TrainConfig cfg = tiny_config();
  cfg.variant = net::VariantFlags{};
  Rng data_rng(16);
  auto strong = make_samples(4, 12, data_rng, /*with_rf=*/true);
  net::NetDims dims{12, cfg.emb_dim, cfg.hidden_dim, cfg.attn_dim};

  auto run_with_conf_seed = [&](std::uint64_t conf_seed) {
    Rng init(8);
    net::AttentionNet model(dims, init);
    Rng conf_rng(conf_seed);
    conf::ConfidenceNet cn(2 * cfg.hidden_dim, conf_rng, cfg.conf_hidden);
    Trainer t(model, &cn, cfg);
    t.reseed(77);
    t.apply_strong_batch(as_batch(strong));
    return model.store().snapshot_values();
  };
  auto v1 = run_with_conf_seed(100);
  auto v2 = run_with_conf_seed(200);
  for (std::size_t i = 0; i < v1.size(); ++i) {
    CHECK((v1[i] - v2[i]).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("early stopping rule") {
  CHECK_FALSE(train::early_stop({1.0, 0.9, 0.8, 0.7}, 2));
  CHECK(train::early_stop({1.0, 0.9, 0.95, 0.96}, 2));
  CHECK_FALSE(train::early_stop({1.0, 0.9, 0.95}, 2));
  CHECK_FALSE(train::early_stop({1.0}, 2));
  // patience >= max epochs behaves like fixed-epoch training
  CHECK_FALSE(train::early_stop({1.0, 1.1, 1.2, 1.3}, 10));
  CHECK_THROWS(train::early_stop({1.0}, 0));
}

TEST_CASE("alternating schedule logs strong and weak batches") {
  TrainConfig cfg = tiny_config();
  cfg.variant = net::VariantFlags{};
  cfg.max_epochs = 1;
  Rng data_rng(21);
  auto strong = make_samples(8, 12, data_rng, true);
  auto weak = make_samples(12, 12, data_rng);
  auto val = make_samples(4, 12, data_rng);

  Rng init(22);
  net::NetDims dims{12, cfg.emb_dim, cfg.hidden_dim, cfg.attn_dim};
  net::AttentionNet model(dims, init);
  Rng conf_rng(23);
  conf::ConfidenceNet cn(2 * cfg.hidden_dim, conf_rng, cfg.conf_hidden);
  Trainer t(model, &cn, cfg);

  std::vector<train::StepLog> logs;
  auto result = t.train(strong, weak, val,
                        [&](const train::StepLog& l) { logs.push_back(l); });
  REQUIRE(!logs.empty());
  CHECK(result.epochs_run == 1);
  CHECK(result.val_history.size() == 1);
  for (std::size_t i = 0; i < logs.size(); ++i) {
    CHECK(logs[i].step == static_cast<long>(i + 1));
    CHECK(logs[i].batch_kind == (i % 2 == 0 ? "strong" : "weak"));
    CHECK(logs[i].learning_rate == cfg.learning_rate);
    CHECK(std::isfinite(logs[i].l_c));
    if (logs[i].batch_kind == "strong") {
      CHECK(logs[i].mean_confidence == 1.0);
      CHECK(std::isfinite(logs[i].l_conf));
    } else {
      CHECK(logs[i].mean_confidence > 0.0);
      CHECK(logs[i].mean_confidence <= 1.0);
    }
  }
  // epoch ends once the larger (weak) set is exhausted
  long weak_steps = 0;
  for (const auto& l : logs) weak_steps += l.batch_kind == "weak" ? 1 : 0;
  CHECK(weak_steps == 3);  // ceil(12 / 4)
}

TEST_CASE("supervised degenerate mode trains without weak data") {
  TrainConfig cfg = tiny_config();
  cfg.variant.weak = false;
  cfg.variant.confidence = false;
  cfg.lambda = 0.0;
  cfg.max_epochs = 1;
  Rng data_rng(31);
  auto strong = make_samples(8, 12, data_rng);
  auto val = make_samples(4, 12, data_rng);
  Rng init(32);
  net::NetDims dims{12, cfg.emb_dim, cfg.hidden_dim, cfg.attn_dim};
  net::AttentionNet model(dims, init);
  Trainer t(model, nullptr, cfg);
  std::vector<train::StepLog> logs;
  t.train(strong, {}, val, [&](const train::StepLog& l) { logs.push_back(l); });
  CHECK(!logs.empty());
  for (const auto& l : logs) CHECK(l.batch_kind == "strong");
}

TEST_CASE("64-sample overfit drops the combined loss under 0.05") {
  TrainConfig cfg;
  cfg.emb_dim = 12;
  cfg.hidden_dim = 8;
  cfg.attn_dim = 4;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.5;
  cfg.lambda = 0.0;
  cfg.dropout_lstm = 0.0;
  cfg.dropout_attn = 0.0;
  cfg.variant.attention = true;
  cfg.variant.gate = false;
  cfg.variant.smooth = false;
  cfg.variant.weak = false;
  cfg.variant.confidence = false;
  cfg.seed = 404;

  Rng data_rng(41);
  auto samples = make_samples(64, 20, data_rng);
  Rng init(42);
  net::NetDims dims{20, cfg.emb_dim, cfg.hidden_dim, cfg.attn_dim};
  net::AttentionNet model(dims, init);
  Trainer t(model, nullptr, cfg);

  auto batch_ptrs = as_batch(samples);
  bool reached = false;
  int steps_taken = 0;
  Rng order(43);
  for (int step = 0; step < 200 && !reached; ++step) {
    // minibatch without replacement per step
    std::vector<const TrainSample*> batch;
    for (int i = 0; i < cfg.batch_size; ++i) {
      batch.push_back(batch_ptrs[bounded(order, batch_ptrs.size())]);
    }
    t.apply_strong_batch(batch);
    ++steps_taken;
    if (t.validation_loss(samples) < 0.05) reached = true;
  }
  CAPTURE(steps_taken);
  CHECK(reached);
}
