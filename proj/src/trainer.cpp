#include "baitnet/trainer.hpp"

#include <algorithm>
#include <cmath>

namespace baitnet::train {

net::ForwardOptions TrainConfig::forward_options(bool training) const {
  net::ForwardOptions opts;
  opts.training = training;
  opts.dropout_lstm = dropout_lstm;
  opts.dropout_attn = dropout_attn;
  opts.tau = tau;
  opts.stochastic_gate = training;
  opts.gate_eps = gate_eps;
  opts.smooth_width = smooth_width;
  opts.smooth_sigma = smooth_sigma;
  opts.variant = variant;
  return opts;
}

AttentionClassWeights AttentionClassWeights::from_counts(long count0, long count1) {
  const double total = static_cast<double>(count0 + count1);
  AttentionClassWeights w;
  w.w0 = count0 > 0 ? total / (2.0 * static_cast<double>(count0)) : 1.0;
  w.w1 = count1 > 0 ? total / (2.0 * static_cast<double>(count1)) : 1.0;
  return w;
}

AttentionClassWeights AttentionClassWeights::from_samples(
    const std::vector<TrainSample>& samples) {
  long c0 = 0, c1 = 0;
  for (const auto& s : samples) {
    for (std::uint8_t qi : s.q) (qi ? c1 : c0) += 1;
  }
  return from_counts(c0, c1);
}

Var bce_with_logit(Tape& tape, Var logit, double target) {
  // -log sigma(z) when y=1, -log(1-sigma(z)) when y=0: softplus(z) - y*z.
  return tape.add(tape.softplus(logit), tape.scale(logit, -target));
}

Var attention_loss(Tape& tape, Var activations, const std::vector<std::uint8_t>& q,
                   const AttentionClassWeights& weights, double eps) {
  const Matrix& a = tape.value(activations);
  if (a.cols() != 1 || a.rows() != static_cast<Eigen::Index>(q.size())) {
    throw std::invalid_argument(
        "attention_loss: activations " + std::to_string(a.rows()) + "x" +
        std::to_string(a.cols()) + " vs " + std::to_string(q.size()) + " targets");
  }
  const Eigen::Index n = a.rows();
  Matrix pos(n, 1), neg(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool on = q[static_cast<std::size_t>(i)] != 0;
    pos(i, 0) = on ? weights.w1 : 0.0;
    neg(i, 0) = on ? 0.0 : weights.w0;
  }
  Var ac = tape.clamp(activations, eps, 1.0 - eps);
  Var term = tape.add(tape.mul(tape.constant(std::move(pos)), tape.log(ac)),
                      tape.mul(tape.constant(std::move(neg)),
                               tape.log(tape.affine_const(ac, -1.0, 1.0))));
  return tape.scale(tape.sum(term), -1.0 / static_cast<double>(n));
}

double bce_value(double p, int target) {
  const double eps = 1e-12;
  const double pc = std::clamp(p, eps, 1.0 - eps);
  return target == 1 ? -std::log(pc) : -std::log(1.0 - pc);
}

double attention_loss_value(const std::vector<double>& a,
                            const std::vector<std::uint8_t>& q,
                            const AttentionClassWeights& weights, double eps) {
  if (a.size() != q.size()) {
    throw std::invalid_argument("attention_loss_value: length mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ai = std::clamp(a[i], eps, 1.0 - eps);
    acc += q[i] ? weights.w1 * std::log(ai) : weights.w0 * std::log(1.0 - ai);
  }
  return -acc / static_cast<double>(a.size());
}

double confidence_loss_value(double c0, double c1, int y, int y_hat) {
  return y == y_hat ? -std::log(c1) : -std::log(c0);
}

bool early_stop(const std::vector<double>& history, int patience) {
  if (patience < 1) throw std::invalid_argument("patience must be >= 1");
  if (static_cast<int>(history.size()) <= patience) return false;
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i] < history[best]) best = i;
  }
  return history.size() - 1 - best >= static_cast<std::size_t>(patience);
}

// ---------------------------------------------------------------------------

Trainer::Trainer(net::AttentionNet& net, conf::ConfidenceNet* confidence,
                 const TrainConfig& config)
    : net_(net), conf_(confidence), cfg_(config), rng_(config.seed) {
  if (cfg_.variant.confidence && conf_ == nullptr) {
    throw UsageError("variant uses the confidence network but none was given");
  }
}

Trainer::SampleLoss Trainer::sample_loss(Tape& tape, const TrainSample& s,
                                         bool training) {
  net::Forward f = net_.forward(tape, s.token_ids, cfg_.forward_options(training),
                                rng_);
  SampleLoss out;
  Var lc = bce_with_logit(tape, f.logit, static_cast<double>(s.label));
  out.l_c = tape.value(lc)(0, 0);
  out.combined = lc;
  const bool want_attention_loss =
      cfg_.variant.attention && cfg_.lambda > 0.0 && !s.q.empty();
  if (want_attention_loss) {
    Var signal = cfg_.attention_loss_on == "smoothed" ? f.attn : f.gate;
    Var la = attention_loss(tape, signal, s.q, weights_, cfg_.gate_eps);
    out.l_a = tape.value(la)(0, 0);
    out.combined = tape.add(lc, tape.scale(la, cfg_.lambda));
  }
  out.sent = tape.value(f.sent).transpose();  // 1 x 2u
  return out;
}

void Trainer::sgd_step(diff::ParamStore& store) {
  for (diff::Parameter* p : store.trainable()) {
    p->value -= cfg_.learning_rate * p->grad;
    if (!p->value.allFinite()) {
      throw NumericError("non-finite parameter after update: " + p->name);
    }
    p->zero_grad();
  }
}

Trainer::BatchStats Trainer::apply_strong_batch(
    const std::vector<const TrainSample*>& batch) {
  if (batch.empty()) throw std::invalid_argument("empty strong batch");
  const double inv = 1.0 / static_cast<double>(batch.size());
  net_.store().zero_grads();

  BatchStats stats;
  Matrix sents(static_cast<Eigen::Index>(batch.size()), 2 * cfg_.hidden_dim);
  std::vector<int> rf_preds(batch.size(), 0);
  std::vector<int> agree(batch.size(), 0);
  bool have_rf = true;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Tape tape;
    SampleLoss sl = sample_loss(tape, *batch[i], /*training=*/true);
    require_finite(tape.value(sl.combined)(0, 0), "strong batch loss");
    tape.backward(sl.combined, inv);
    stats.l_c += sl.l_c * inv;
    stats.l_a += sl.l_a * inv;
    sents.row(static_cast<Eigen::Index>(i)) = sl.sent;
    if (batch[i]->rf_prediction < 0) have_rf = false;
    rf_preds[i] = batch[i]->rf_prediction;
    agree[i] = batch[i]->label == batch[i]->rf_prediction ? 1 : 0;
  }
  sgd_step(net_.store());

  if (cfg_.variant.confidence && conf_ && have_rf) {
    Tape tape;
    conf_->store().zero_grads();
    Var logits = conf_->forward(tape, sents, rf_preds, /*training=*/true);
    Var lconf = conf_->loss(tape, logits, agree);
    stats.l_conf = tape.value(lconf)(0, 0);
    require_finite(stats.l_conf, "confidence loss");
    tape.backward(lconf);
    sgd_step(conf_->store());
  }
  stats.mean_confidence = 1.0;
  return stats;
}

std::vector<double> Trainer::score_weak(
    const std::vector<const TrainSample*>& batch) {
  if (!cfg_.variant.confidence || conf_ == nullptr) {
    return std::vector<double>(batch.size(), 1.0);
  }
  Matrix sents(static_cast<Eigen::Index>(batch.size()), 2 * cfg_.hidden_dim);
  std::vector<int> labels(batch.size(), 0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Tape tape;
    net::Forward f = net_.forward(tape, batch[i]->token_ids,
                                  cfg_.forward_options(false), rng_);
    sents.row(static_cast<Eigen::Index>(i)) = tape.value(f.sent).transpose();
    labels[i] = batch[i]->label;
  }
  return conf_->scores(sents, labels);
}

Trainer::BatchStats Trainer::apply_weak_batch(
    const std::vector<const TrainSample*>& batch,
    const std::vector<double>& scores) {
  if (batch.empty()) throw std::invalid_argument("empty weak batch");
  if (scores.size() != batch.size()) {
    throw std::invalid_argument("weak batch: one score per sample required");
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  net_.store().zero_grads();

  BatchStats stats;
  double mean_conf = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Tape tape;
    SampleLoss sl = sample_loss(tape, *batch[i], /*training=*/true);
    require_finite(tape.value(sl.combined)(0, 0), "weak batch loss");
    tape.backward(sl.combined, scores[i] * inv);
    stats.l_c += sl.l_c * inv;
    stats.l_a += sl.l_a * inv;
    mean_conf += scores[i] * inv;
  }
  sgd_step(net_.store());
  stats.mean_confidence = mean_conf;
  return stats;
}

std::vector<Matrix> Trainer::weak_gradient(
    const std::vector<const TrainSample*>& batch,
    const std::vector<double>& scores) {
  if (scores.size() != batch.size()) {
    throw std::invalid_argument("weak_gradient: one score per sample required");
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  net_.store().zero_grads();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Tape tape;
    SampleLoss sl = sample_loss(tape, *batch[i], /*training=*/true);
    tape.backward(sl.combined, scores[i] * inv);
  }
  std::vector<Matrix> grads;
  for (diff::Parameter* p : net_.store().all()) grads.push_back(p->grad);
  net_.store().zero_grads();
  return grads;
}

double Trainer::validation_loss(const std::vector<TrainSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("empty validation set");
  double total = 0.0;
  for (const auto& s : samples) {
    Tape tape;
    SampleLoss sl = sample_loss(tape, s, /*training=*/false);
    total += tape.value(sl.combined)(0, 0);
  }
  return total / static_cast<double>(samples.size());
}

TrainResult Trainer::train(const std::vector<TrainSample>& strong,
                           const std::vector<TrainSample>& weak,
                           const std::vector<TrainSample>& validation,
                           const std::function<void(const StepLog&)>& log_sink) {
  if (strong.empty()) throw DataError("train: strong set is empty");
  const bool use_weak = cfg_.variant.weak && !weak.empty();
  if (cfg_.variant.weak && weak.empty()) {
    throw DataError("train: variant draws weak batches but D_w is empty");
  }

  std::vector<std::size_t> strong_queue(strong.size()), weak_queue(weak.size());
  for (std::size_t i = 0; i < strong.size(); ++i) strong_queue[i] = i;
  for (std::size_t i = 0; i < weak.size(); ++i) weak_queue[i] = i;

  std::size_t strong_pos = strong.size();  // force shuffle on first draw
  std::size_t weak_pos = weak.size();
  const bool weak_is_larger = use_weak && weak.size() > strong.size();

  TrainResult result;
  std::vector<diff::Matrix> best_net, best_conf;
  long step = 0;

  for (int epoch = 0; epoch < cfg_.max_epochs; ++epoch) {
    bool epoch_done = false;
    bool draw_strong = true;
    while (!epoch_done) {
      StepLog log;
      log.learning_rate = cfg_.learning_rate;
      log.step = ++step;
      if (draw_strong || !use_weak) {
        std::vector<const TrainSample*> batch;
        for (int i = 0; i < cfg_.batch_size; ++i) {
          if (strong_pos >= strong.size()) {
            fisher_yates(strong_queue, rng_);
            strong_pos = 0;
          }
          batch.push_back(&strong[strong_queue[strong_pos++]]);
          if (!weak_is_larger && strong_pos == strong.size()) epoch_done = true;
        }
        BatchStats stats = apply_strong_batch(batch);
        log.batch_kind = "strong";
        log.l_c = stats.l_c;
        log.l_a = stats.l_a;
        log.l_conf = stats.l_conf;
        log.mean_confidence = stats.mean_confidence;
      } else {
        std::vector<const TrainSample*> batch;
        for (int i = 0; i < cfg_.batch_size; ++i) {
          if (weak_pos >= weak.size()) {
            fisher_yates(weak_queue, rng_);
            weak_pos = 0;
          }
          batch.push_back(&weak[weak_queue[weak_pos++]]);
          if (weak_is_larger && weak_pos == weak.size()) epoch_done = true;
        }
        std::vector<double> scores = score_weak(batch);
        BatchStats stats = apply_weak_batch(batch, scores);
        log.batch_kind = "weak";
        log.l_c = stats.l_c;
        log.l_a = stats.l_a;
        log.mean_confidence = stats.mean_confidence;
      }
      if (log_sink) log_sink(log);
      if (use_weak) draw_strong = !draw_strong;
    }

    result.epochs_run = epoch + 1;
    if (!validation.empty()) {
      const double val = validation_loss(validation);
      require_finite(val, "validation loss");
      result.val_history.push_back(val);
      if (result.best_epoch < 0 || val < result.best_val_loss) {
        result.best_val_loss = val;
        result.best_epoch = epoch;
        best_net = net_.store().snapshot_values();
        if (conf_) best_conf = conf_->store().snapshot_values();
      }
      if (early_stop(result.val_history, cfg_.patience)) break;
    }
  }

  if (!best_net.empty()) {
    net_.store().restore_values(best_net);
    if (conf_ && !best_conf.empty()) conf_->store().restore_values(best_conf);
  }
  result.steps = step;
  return result;
}

}  // namespace baitnet::train
