#pragma once

#include <optional>
#include <string>
#include <vector>

#include "baitnet/diff.hpp"

namespace baitnet::net {

using diff::Matrix;
using diff::ParamStore;
using diff::Parameter;
using diff::Tape;
using diff::Var;
using diff::Vector;

// Ablation toggles. `attention` off degrades the sentence embedding to mean
// pooling; `gate` adds the Gumbel-Softmax sample on top of the sigmoid
// activations; `smooth` the fixed Gaussian filter; `weak` alternates weak
// batches in; `confidence` reweighs weak gradients.
struct VariantFlags {
  bool attention = true;
  bool gate = true;
  bool smooth = true;
  bool weak = true;
  bool confidence = true;

  static VariantFlags parse(const std::string& spec);  // e.g. "san+rf+gs+gf+conf"
  std::string to_string() const;
};

struct NetDims {
  int vocab = 0;
  int emb = 300;     // e
  int hidden = 200;  // u per direction
  int attn = 32;     // m
};

// Discrete Gaussian, normalized to unit sum.
Vector gaussian_kernel(int width, double sigma);

// Eq.-6 gate evaluated with explicit noise (g1 - g0); set zero for the
// deterministic inference mode.
double gumbel_gate_value(double b, double tau, double g1, double g0,
                         double eps = 1e-6);
double gate_inference_value(double b, double tau, double eps = 1e-6);

struct ForwardOptions {
  bool training = false;
  double dropout_lstm = 0.5;
  double dropout_attn = 0.4;
  double tau = 0.7;
  bool stochastic_gate = true;  // training only; eval always uses zero noise
  double gate_eps = 1e-6;
  int smooth_width = 5;
  double smooth_sigma = 1.0;
  VariantFlags variant;
};

struct Forward {
  Var hidden;  // N x 2u (post-dropout)
  Var acts;    // B, N x 1 (attention variants only)
  Var gate;    // D, N x 1
  Var attn;    // A, N x 1
  Var sent;    // S, 2u x 1
  Var logit;   // 1 x 1
  int n_tokens = 0;
};

// Per-headline diagnostics (attention-dump mode).
struct AttentionTrace {
  std::vector<double> b, d, a;
  std::vector<double> s;
  double p = 0.0;
};

class AttentionNet {
 public:
  AttentionNet(const NetDims& dims, Rng& init_rng);

  Forward forward(Tape& tape, const std::vector<int>& token_ids,
                  const ForwardOptions& opts, Rng& rng);

  // Deterministic inference: no dropout, zero-noise gate.
  double predict_proba(const std::vector<int>& token_ids,
                       const ForwardOptions& base_opts);
  AttentionTrace trace(const std::vector<int>& token_ids,
                       const ForwardOptions& base_opts,
                       const std::vector<std::string>* tokens = nullptr);

  void set_embedding_rows(const std::vector<std::vector<double>>& rows);

  NetDims dims() const { return dims_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

 private:
  struct LstmParams {
    // input-major so the per-step products need no transposed copies
    Parameter* wx;  // e x 4u
    Parameter* wh;  // u x 4u
    Parameter* b;   // 1 x 4u
  };
  LstmParams make_cell(const std::string& prefix, Rng& rng);
  // One direction; returns per-step hidden rows (each 1 x u).
  std::vector<Var> run_cell(Tape& tape, const LstmParams& cell, Var inputs,
                            bool reverse);

  NetDims dims_;
  ParamStore store_;
  Parameter* embedding_;
  LstmParams fw_, bw_;
  Parameter* attn_w1_;  // m x 2u
  Parameter* attn_w2_;  // 1 x m
  Parameter* head_w_;   // 1 x 2u
  Parameter* head_b_;   // 1 x 1
};

}  // namespace baitnet::net
