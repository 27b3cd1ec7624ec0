#pragma once

#include <vector>

#include "baitnet/diff.hpp"

namespace baitnet::conf {

using diff::BatchNormState;
using diff::Matrix;
using diff::ParamStore;
using diff::Parameter;
using diff::Tape;
using diff::Var;

// Scores P(weak label correct | sentence embedding, weak label).
// Pathway: S -> affine(2u -> 64) -> concat weak label (65) -> batch norm
// -> affine(65 -> 2) -> softmax. Sentence embeddings enter as constants;
// no gradient reaches the classification network from here.
class ConfidenceNet {
 public:
  ConfidenceNet(int sent_dim, Rng& init_rng, int hidden = 64,
                double bn_momentum = 0.05, bool bn_before_concat = false);

  // logits: batch x 2. Training mode updates batch-norm running statistics.
  Var forward(Tape& tape, const Matrix& sent_batch,
              const std::vector<int>& weak_labels, bool training);

  // c1 per sample, inference mode (frozen batch norm).
  std::vector<double> scores(const Matrix& sent_batch,
                             const std::vector<int>& weak_labels);

  // Mean of Eq.-10 over the batch; targets are the agreement indicators.
  Var loss(Tape& tape, Var logits, const std::vector<int>& agree);

  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  int hidden_dim() const { return hidden_; }

 private:
  int sent_dim_;
  int hidden_;
  bool bn_before_concat_;
  ParamStore store_;
  Parameter* w1_;  // hidden x sent_dim
  Parameter* b1_;  // 1 x hidden
  BatchNormState bn_;
  Parameter* w2_;  // 2 x (hidden + 1)
  Parameter* b2_;  // 1 x 2
};

}  // namespace baitnet::conf
