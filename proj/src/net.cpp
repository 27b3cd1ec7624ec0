#include "baitnet/net.hpp"

#include <algorithm>
#include <sstream>

namespace baitnet::net {

VariantFlags VariantFlags::parse(const std::string& spec) {
  VariantFlags f{false, false, false, false, false};
  if (spec == "baseline" || spec == "bilstm") return f;
  if (spec == "full") return VariantFlags{};
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, '+')) {
    std::transform(part.begin(), part.end(), part.begin(), ::tolower);
    if (part == "san") {
      f.attention = true;
    } else if (part == "rf") {
      f.weak = true;
    } else if (part == "gs") {
      f.gate = true;
    } else if (part == "gf") {
      f.smooth = true;
    } else if (part == "conf" || part == "confidence") {
      f.confidence = true;
    } else if (!part.empty()) {
      throw UsageError("unknown variant component: " + part);
    }
  }
  if (!f.attention && (f.gate || f.smooth)) {
    throw UsageError("gs/gf require san in variant spec: " + spec);
  }
  if (f.confidence && !f.weak) {
    throw UsageError("confidence requires rf in variant spec: " + spec);
  }
  return f;
}

std::string VariantFlags::to_string() const {
  if (!attention && !weak) return "baseline";
  std::string s = attention ? "san" : "baseline";
  if (weak) s += "+rf";
  if (gate) s += "+gs";
  if (smooth) s += "+gf";
  if (confidence) s += "+conf";
  return s;
}

Vector gaussian_kernel(int width, double sigma) {
  if (width < 1 || width % 2 == 0) {
    throw std::invalid_argument("gaussian_kernel: width must be odd");
  }
  Vector k(width);
  const int half = width / 2;
  for (int i = -half; i <= half; ++i) {
    k(i + half) = std::exp(-0.5 * (i * i) / (sigma * sigma));
  }
  k /= k.sum();
  return k;
}

double gumbel_gate_value(double b, double tau, double g1, double g0, double eps) {
  if (tau <= 0.0) throw std::invalid_argument("gumbel gate: tau must be > 0");
  const double bc = std::clamp(b, eps, 1.0 - eps);
  const double z = (std::log(bc) - std::log(1.0 - bc) + g1 - g0) / tau;
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

double gate_inference_value(double b, double tau, double eps) {
  return gumbel_gate_value(b, tau, 0.0, 0.0, eps);
}

// ---------------------------------------------------------------------------

AttentionNet::AttentionNet(const NetDims& dims, Rng& init_rng)
    : dims_(dims) {
  if (dims.vocab < 1) throw std::invalid_argument("AttentionNet: empty vocab");
  embedding_ = &store_.create("clf/embedding", dims.vocab, dims.emb);
  store_.init_uniform(*embedding_, dims.emb, init_rng);
  embedding_->value.row(0).setZero();  // <pad>
  embedding_->value.row(1).setZero();  // <unk>
  fw_ = make_cell("clf/lstm_fw", init_rng);
  bw_ = make_cell("clf/lstm_bw", init_rng);
  attn_w1_ = &store_.create("clf/attn_w1", dims.attn, 2 * dims.hidden);
  store_.init_uniform(*attn_w1_, 2.0 * dims.hidden, init_rng);
  attn_w2_ = &store_.create("clf/attn_w2", 1, dims.attn);
  store_.init_uniform(*attn_w2_, dims.attn, init_rng);
  head_w_ = &store_.create("clf/head_w", 1, 2 * dims.hidden);
  store_.init_uniform(*head_w_, 2.0 * dims.hidden, init_rng);
  head_b_ = &store_.create("clf/head_b", 1, 1);
}

AttentionNet::LstmParams AttentionNet::make_cell(const std::string& prefix,
                                                 Rng& rng) {
  LstmParams cell;
  cell.wx = &store_.create(prefix + "/wx", dims_.emb, 4 * dims_.hidden);
  store_.init_uniform(*cell.wx, dims_.emb, rng);
  cell.wh = &store_.create(prefix + "/wh", dims_.hidden, 4 * dims_.hidden);
  store_.init_uniform(*cell.wh, dims_.hidden, rng);
  cell.b = &store_.create(prefix + "/b", 1, 4 * dims_.hidden);
  return cell;
}

std::vector<Var> AttentionNet::run_cell(Tape& tape, const LstmParams& cell,
                                        Var inputs, bool reverse) {
  const int n = static_cast<int>(tape.value(inputs).rows());
  const int u = dims_.hidden;
  Var wx = tape.param(*cell.wx);
  Var wh = tape.param(*cell.wh);
  Var bias = tape.param(*cell.b);

  Var h = tape.constant(Matrix::Zero(1, u));
  Var c = tape.constant(Matrix::Zero(1, u));
  std::vector<Var> states(static_cast<std::size_t>(n));
  for (int step = 0; step < n; ++step) {
    const int t = reverse ? n - 1 - step : step;
    Var x_t = tape.slice_rows(inputs, t, 1);  // 1 x e
    Var z = tape.add_row_bias(
        tape.add(tape.matmul(x_t, wx), tape.matmul(h, wh)), bias);
    Var i_g = tape.sigmoid(tape.slice_cols(z, 0, u));
    Var f_g = tape.sigmoid(tape.slice_cols(z, u, u));
    Var g_g = tape.tanh(tape.slice_cols(z, 2 * u, u));
    Var o_g = tape.sigmoid(tape.slice_cols(z, 3 * u, u));
    c = tape.add(tape.mul(f_g, c), tape.mul(i_g, g_g));
    h = tape.mul(o_g, tape.tanh(c));
    states[static_cast<std::size_t>(t)] = h;
  }
  return states;
}

Forward AttentionNet::forward(Tape& tape, const std::vector<int>& token_ids,
                              const ForwardOptions& opts, Rng& rng) {
  if (token_ids.empty()) {
    throw DataError("forward: empty token sequence");
  }
  const int n = static_cast<int>(token_ids.size());

  Var x = tape.embed(*embedding_, token_ids);  // N x e
  std::vector<Var> h_fw = run_cell(tape, fw_, x, /*reverse=*/false);
  std::vector<Var> h_bw = run_cell(tape, bw_, x, /*reverse=*/true);
  std::vector<Var> rows(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    rows[static_cast<std::size_t>(t)] =
        tape.concat_cols(h_fw[static_cast<std::size_t>(t)],
                         h_bw[static_cast<std::size_t>(t)]);
  }
  Var hidden = tape.concat_rows(rows);  // N x 2u
  hidden = tape.dropout(hidden, opts.dropout_lstm, rng, opts.training);

  Forward out;
  out.n_tokens = n;
  out.hidden = hidden;

  if (opts.variant.attention) {
    Var t1 = tape.tanh(tape.matmul(hidden, tape.transpose(tape.param(*attn_w1_))));
    t1 = tape.dropout(t1, opts.dropout_attn, rng, opts.training);
    Var acts = tape.sigmoid(tape.matmul(t1, tape.transpose(tape.param(*attn_w2_))));
    out.acts = acts;  // N x 1

    Var gate = acts;
    if (opts.variant.gate) {
      Var bc = tape.clamp(acts, opts.gate_eps, 1.0 - opts.gate_eps);
      Var logit_b =
          tape.sub(tape.log(bc), tape.log(tape.affine_const(bc, -1.0, 1.0)));
      if (opts.training && opts.stochastic_gate) {
        Matrix noise(n, 1);
        for (int i = 0; i < n; ++i) {
          const double g1 = gumbel01(rng);
          const double g0 = gumbel01(rng);
          noise(i, 0) = g1 - g0;
        }
        logit_b = tape.add(logit_b, tape.constant(std::move(noise)));
      }
      gate = tape.sigmoid(tape.scale(logit_b, 1.0 / opts.tau));
    }
    out.gate = gate;

    Var attn = gate;
    if (opts.variant.smooth) {
      attn = tape.conv1d(gate, gaussian_kernel(opts.smooth_width, opts.smooth_sigma));
    }
    out.attn = attn;
  } else {
    // Mean pooling: fixed uniform attention.
    out.attn = tape.constant(Matrix::Constant(n, 1, 1.0 / n));
  }

  out.sent = tape.matmul(tape.transpose(hidden), out.attn);  // 2u x 1
  out.logit = tape.add(tape.matmul(tape.param(*head_w_), out.sent),
                       tape.param(*head_b_));
  return out;
}

double AttentionNet::predict_proba(const std::vector<int>& token_ids,
                                   const ForwardOptions& base_opts) {
  ForwardOptions opts = base_opts;
  opts.training = false;
  Tape tape;
  Rng rng(0);  // eval path draws nothing
  Forward f = forward(tape, token_ids, opts, rng);
  const double z = tape.value(f.logit)(0, 0);
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

AttentionTrace AttentionNet::trace(const std::vector<int>& token_ids,
                                   const ForwardOptions& base_opts,
                                   const std::vector<std::string>* tokens) {
  (void)tokens;
  ForwardOptions opts = base_opts;
  opts.training = false;
  Tape tape;
  Rng rng(0);
  Forward f = forward(tape, token_ids, opts, rng);
  AttentionTrace tr;
  auto col = [&](Var v) {
    std::vector<double> out;
    if (!v.valid()) return out;
    const Matrix& m = tape.value(v);
    out.resize(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = m(i, 0);
    return out;
  };
  tr.b = col(f.acts);
  tr.d = col(f.gate);
  tr.a = col(f.attn);
  tr.s = col(f.sent);
  const double z = tape.value(f.logit)(0, 0);
  tr.p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  return tr;
}

void AttentionNet::set_embedding_rows(const std::vector<std::vector<double>>& rows) {
  if (static_cast<Eigen::Index>(rows.size()) != embedding_->value.rows()) {
    throw std::invalid_argument("set_embedding_rows: row count mismatch");
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].empty()) continue;  // keep initialization
    if (static_cast<Eigen::Index>(rows[r].size()) != embedding_->value.cols()) {
      throw std::invalid_argument("set_embedding_rows: width mismatch");
    }
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      embedding_->value(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          rows[r][c];
    }
  }
}

}  // namespace baitnet::net
