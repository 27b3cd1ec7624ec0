#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "baitnet/confidence.hpp"
#include "baitnet/net.hpp"

namespace baitnet::train {

using diff::Matrix;
using diff::Tape;
using diff::Var;

struct TrainConfig {
  double learning_rate = 0.0001;
  int batch_size = 64;
  double lambda = 0.3;  // attention-loss weight
  double tau = 0.7;
  double dropout_lstm = 0.5;
  double dropout_attn = 0.4;
  double bn_momentum = 0.05;
  int max_epochs = 20;
  int patience = 2;
  double importance_threshold = 0.42;
  std::uint64_t seed = 0;
  std::string attention_loss_on = "gate";  // gate|smoothed
  net::VariantFlags variant;

  int emb_dim = 300;
  int hidden_dim = 200;
  int attn_dim = 32;
  int conf_hidden = 64;
  int max_tokens = 30;
  double validation_fraction = 0.1;
  double gate_eps = 1e-6;
  int smooth_width = 5;
  double smooth_sigma = 1.0;
  bool bn_before_concat = false;

  net::ForwardOptions forward_options(bool training) const;
};

// One training view of a sample. `label` carries y on strong samples and
// the weak label on weak ones.
struct TrainSample {
  std::vector<int> token_ids;
  int label = 0;
  int rf_prediction = -1;  // strong samples only
  std::vector<std::uint8_t> q;  // attention targets; empty when unavailable
};

// Per-token weights for the attention loss: w_c = total / (2 * count_c),
// counted over the training corpus. Zero counts fall back to weight 1.
struct AttentionClassWeights {
  double w0 = 1.0;
  double w1 = 1.0;

  static AttentionClassWeights from_counts(long count0, long count1);
  static AttentionClassWeights from_samples(const std::vector<TrainSample>& samples);
};

// -log p(y) with p = sigmoid(logit); evaluated via softplus for stability.
Var bce_with_logit(Tape& tape, Var logit, double target);

// Eq.-8 cross entropy against binary targets, class-weighted, mean over
// tokens. `activations` is an N x 1 column clamped to [eps, 1-eps].
Var attention_loss(Tape& tape, Var activations, const std::vector<std::uint8_t>& q,
                   const AttentionClassWeights& weights, double eps = 1e-6);

// Plain-value twins of the loss builders, for oracle-style checks.
double bce_value(double p, int target);
double attention_loss_value(const std::vector<double>& a,
                            const std::vector<std::uint8_t>& q,
                            const AttentionClassWeights& weights,
                            double eps = 1e-6);
double confidence_loss_value(double c0, double c1, int y, int y_hat);

// True when the last `patience` entries failed to improve on the best
// validation loss seen before them.
bool early_stop(const std::vector<double>& history, int patience);

struct StepLog {
  long step = 0;
  std::string batch_kind;  // strong|weak
  double l_c = 0.0;
  double l_a = 0.0;
  double l_conf = 0.0;
  double mean_confidence = 1.0;
  double learning_rate = 0.0;
};

struct TrainResult {
  double best_val_loss = 0.0;
  int best_epoch = -1;
  int epochs_run = 0;
  long steps = 0;
  std::vector<double> val_history;
};

class Trainer {
 public:
  // `confidence` may be null when the variant does not use it.
  Trainer(net::AttentionNet& net, conf::ConfidenceNet* confidence,
          const TrainConfig& config);

  void set_attention_weights(const AttentionClassWeights& w) { weights_ = w; }
  void reseed(std::uint64_t seed) { rng_.seed(seed); }

  struct BatchStats {
    double l_c = 0.0;
    double l_a = 0.0;
    double l_conf = 0.0;
    double mean_confidence = 1.0;
  };

  // Odd steps: plain SGD on the combined loss plus a confidence-net update
  // from the (y, rf_prediction) agreement targets.
  BatchStats apply_strong_batch(const std::vector<const TrainSample*>& batch);

  // Inference-mode confidence scores for a weak batch.
  std::vector<double> score_weak(const std::vector<const TrainSample*>& batch);

  // Even steps: per-sample gradients of the combined loss scaled by the
  // sample's confidence score, averaged, then one SGD step.
  BatchStats apply_weak_batch(const std::vector<const TrainSample*>& batch,
                              const std::vector<double>& scores);

  // The accumulated reweighted gradient for a batch, without stepping.
  // Returns per-parameter copies in registration order.
  std::vector<Matrix> weak_gradient(const std::vector<const TrainSample*>& batch,
                                    const std::vector<double>& scores);

  double validation_loss(const std::vector<TrainSample>& samples);

  TrainResult train(const std::vector<TrainSample>& strong,
                    const std::vector<TrainSample>& weak,
                    const std::vector<TrainSample>& validation,
                    const std::function<void(const StepLog&)>& log_sink = {});

  const TrainConfig& config() const { return cfg_; }

 private:
  struct SampleLoss {
    Var combined;
    double l_c = 0.0;
    double l_a = 0.0;
    Matrix sent;  // detached sentence embedding (1 x 2u)
  };
  SampleLoss sample_loss(Tape& tape, const TrainSample& s, bool training);
  void sgd_step(diff::ParamStore& store);

  net::AttentionNet& net_;
  conf::ConfidenceNet* conf_;
  TrainConfig cfg_;
  AttentionClassWeights weights_;
  Rng rng_;
};

}  // namespace baitnet::train
