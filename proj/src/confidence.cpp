#include "baitnet/confidence.hpp"

namespace baitnet::conf {

ConfidenceNet::ConfidenceNet(int sent_dim, Rng& init_rng, int hidden,
                             double bn_momentum, bool bn_before_concat)
    : sent_dim_(sent_dim), hidden_(hidden), bn_before_concat_(bn_before_concat) {
  w1_ = &store_.create("conf/w1", hidden, sent_dim);
  store_.init_uniform(*w1_, sent_dim, init_rng);
  b1_ = &store_.create("conf/b1", 1, hidden);
  const int bn_dim = bn_before_concat ? hidden : hidden + 1;
  bn_ = BatchNormState::make(store_, "conf/bn", bn_dim, bn_momentum);
  w2_ = &store_.create("conf/w2", 2, hidden + 1);
  store_.init_uniform(*w2_, hidden + 1, init_rng);
  b2_ = &store_.create("conf/b2", 1, 2);
}

Var ConfidenceNet::forward(Tape& tape, const Matrix& sent_batch,
                           const std::vector<int>& weak_labels, bool training) {
  if (sent_batch.cols() != sent_dim_) {
    throw std::invalid_argument(
        "ConfidenceNet: sentence dim " + std::to_string(sent_batch.cols()) +
        " vs expected " + std::to_string(sent_dim_));
  }
  if (static_cast<Eigen::Index>(weak_labels.size()) != sent_batch.rows()) {
    throw std::invalid_argument("ConfidenceNet: label count mismatch");
  }
  Var s = tape.constant(sent_batch);
  Var h = tape.add_row_bias(tape.matmul(s, tape.transpose(tape.param(*w1_))),
                            tape.param(*b1_));
  Matrix yhat(sent_batch.rows(), 1);
  for (Eigen::Index i = 0; i < yhat.rows(); ++i) {
    yhat(i, 0) = static_cast<double>(weak_labels[static_cast<std::size_t>(i)]);
  }
  Var cat;
  if (bn_before_concat_) {
    cat = tape.concat_cols(tape.batch_norm(h, bn_, training),
                           tape.constant(std::move(yhat)));
  } else {
    cat = tape.batch_norm(tape.concat_cols(h, tape.constant(std::move(yhat))),
                          bn_, training);
  }
  return tape.add_row_bias(tape.matmul(cat, tape.transpose(tape.param(*w2_))),
                           tape.param(*b2_));
}

std::vector<double> ConfidenceNet::scores(const Matrix& sent_batch,
                                          const std::vector<int>& weak_labels) {
  Tape tape;
  Var logits = forward(tape, sent_batch, weak_labels, /*training=*/false);
  const Matrix& z = tape.value(logits);
  std::vector<double> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = std::max(z(i, 0), z(i, 1));
    const double e0 = std::exp(z(i, 0) - m);
    const double e1 = std::exp(z(i, 1) - m);
    out[static_cast<std::size_t>(i)] = e1 / (e0 + e1);
  }
  return out;
}

Var ConfidenceNet::loss(Tape& tape, Var logits, const std::vector<int>& agree) {
  const Matrix& z = tape.value(logits);
  if (static_cast<Eigen::Index>(agree.size()) != z.rows()) {
    throw std::invalid_argument("confidence loss: target count mismatch");
  }
  Matrix mask = Matrix::Zero(z.rows(), 2);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const int t = agree[static_cast<std::size_t>(i)];
    if (t != 0 && t != 1) {
      throw std::invalid_argument("confidence loss: target outside {0,1}");
    }
    mask(i, t) = 1.0;
  }
  Var lse = tape.logsumexp_rows(logits);  // batch x 1
  Var picked = tape.matmul(tape.mul(logits, tape.constant(std::move(mask))),
                           tape.constant(Matrix::Ones(2, 1)));
  return tape.mean_all(tape.sub(lse, picked));
}

}  // namespace baitnet::conf
