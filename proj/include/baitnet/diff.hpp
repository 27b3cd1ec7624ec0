#pragma once

// Reverse-mode autodiff over dense double matrices. Ops are recorded on a
// Tape in creation order; backward() replays the closures in reverse.
// Enough surface for the networks here: affine maps, pointwise
// nonlinearities, LSTM composition, dropout, batch norm, and the loss heads.

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "baitnet/common.hpp"

namespace baitnet::diff {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols, bool train = true)
      : name(std::move(n)),
        value(Matrix::Zero(rows, cols)),
        grad(Matrix::Zero(rows, cols)),
        trainable(train) {}

  void zero_grad() { grad.setZero(); }
};

// Owns named parameters; registration order is the checkpoint order.
class ParamStore {
 public:
  Parameter& create(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                    bool trainable = true);
  Parameter& init_uniform(Parameter& p, double fan_in, Rng& rng);

  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<Parameter*> all();
  std::vector<Parameter*> trainable();

  void zero_grads();

  // Deep snapshot of values (for best-epoch checkpoints).
  std::vector<Matrix> snapshot_values() const;
  void restore_values(const std::vector<Matrix>& values);

  void save(const std::string& path) const;
  void load(const std::string& path);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct BatchNormState {
  Parameter* gamma = nullptr;   // 1 x F, trainable
  Parameter* beta = nullptr;    // 1 x F, trainable
  Parameter* run_mean = nullptr;  // 1 x F, running
  Parameter* run_var = nullptr;   // 1 x F, running
  double momentum = 0.05;
  double eps = 1e-5;

  // Registers the four tensors under `prefix` in a store.
  static BatchNormState make(ParamStore& store, const std::string& prefix,
                             Eigen::Index features, double momentum);
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  // ---- leaves ----
  Var constant(Matrix v);
  Var param(Parameter& p);
  // Gathers rows of `table` by index; backward scatters into table.grad.
  Var embed(Parameter& table, const std::vector<int>& row_ids);

  // ---- structural ----
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(Var a, Var b);
  Var slice_cols(Var a, Eigen::Index first, Eigen::Index count);
  Var slice_rows(Var a, Eigen::Index first, Eigen::Index count);

  // ---- arithmetic ----
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double c);
  Var affine_const(Var a, double mul, double add);  // mul*x + add elementwise
  Var add_row_bias(Var a, Var bias);                // bias is 1 x d

  // ---- pointwise ----
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var softplus(Var a);
  Var log(Var a);
  Var clamp(Var a, double lo, double hi);

  // ---- reductions ----
  Var sum(Var a);       // 1x1
  Var mean_all(Var a);  // 1x1
  Var logsumexp_rows(Var a);  // N x d -> N x 1

  // ---- stochastic / stateful ----
  Var dropout(Var a, double rate, Rng& rng, bool training);
  Var batch_norm(Var x, BatchNormState& bn, bool training);
  // 1-D convolution of an N x 1 column with a fixed unit-sum kernel,
  // zero-padded at the borders. The kernel is a constant, never trained.
  Var conv1d(Var a, const Vector& kernel);

  const Matrix& value(Var v) const { return nodes_[v.id].value(); }
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }

  // Reverse sweep from `root` (must be 1x1). `seed` is the upstream
  // gradient; per-sample confidence weighting enters training through it.
  void backward(Var root, double seed = 1.0);

  void check_finite(Var v, const std::string& where) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix owned;
    const Matrix* external = nullptr;  // set for param leaves
    Matrix grad;
    bool needs_grad = false;
    std::function<void(Tape&)> back;  // empty for constants

    const Matrix& value() const { return external ? *external : owned; }
  };

  int push(Matrix value, bool needs_grad);
  int push_external(const Matrix* value, bool needs_grad);
  Node& node(Var v) { return nodes_[v.id]; }
  void ensure_grad(int id);
  void check_shapes_match(Var a, Var b, const char* op) const;

  std::vector<Node> nodes_;
};

// Central finite differences against reverse-mode gradients.
// `eval` must recompute the loss AND refresh every parameter's grad
// (zero_grads + forward + backward) when called; it must be deterministic
// for fixed parameter values (fix RNG draws inside the closure).
// Returns the max relative error over up to `coords_per_param` sampled
// coordinates of each parameter.
double grad_check(const std::function<double()>& eval,
                  const std::vector<Parameter*>& params, Rng& rng,
                  int coords_per_param = 5, double rel_step = 1e-4);

}  // namespace baitnet::diff
