#include "baitnet/diff.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

namespace baitnet::diff {

// ---------------------------------------------------------------------------
// ParamStore

Parameter& ParamStore::create(const std::string& name, Eigen::Index rows,
                              Eigen::Index cols, bool trainable) {
  if (index_.count(name)) {
    throw std::invalid_argument("parameter already registered: " + name);
  }
  params_.push_back(std::make_unique<Parameter>(name, rows, cols, trainable));
  index_[name] = params_.size() - 1;
  return *params_.back();
}

Parameter& ParamStore::init_uniform(Parameter& p, double fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(std::max(fan_in, 1.0));
  for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
      p.value(r, c) = uniform_in(rng, -bound, bound);
    }
  }
  return p;
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
  return *params_[it->second];
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
  return *params_[it->second];
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParamStore::trainable() {
  std::vector<Parameter*> out;
  for (auto& p : params_) {
    if (p->trainable) out.push_back(p.get());
  }
  return out;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) p->zero_grad();
}

std::vector<Matrix> ParamStore::snapshot_values() const {
  std::vector<Matrix> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p->value);
  return out;
}

void ParamStore::restore_values(const std::vector<Matrix>& values) {
  if (values.size() != params_.size()) {
    throw std::invalid_argument("snapshot size mismatch");
  }
  for (std::size_t i = 0; i < values.size(); ++i) params_[i]->value = values[i];
}

namespace {
constexpr char kCheckpointMagic[4] = {'B', 'N', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
}
}  // namespace

void ParamStore::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint: " + path);
  os.write(kCheckpointMagic, 4);
  write_pod(os, kCheckpointVersion);
  write_pod(os, static_cast<std::uint64_t>(params_.size()));
  for (const auto& p : params_) {
    write_pod(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_pod(os, static_cast<std::uint8_t>(p->trainable ? 1 : 0));
    write_pod(os, static_cast<std::uint64_t>(p->value.rows()));
    write_pod(os, static_cast<std::uint64_t>(p->value.cols()));
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(sizeof(double) * p->value.size()));
  }
  if (!os) throw DataError("short write on checkpoint: " + path);
}

void ParamStore::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw DataError("not a checkpoint file: " + path);
  }
  std::uint32_t version = 0;
  read_pod(is, version);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  std::uint64_t count = 0;
  read_pod(is, count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t name_len = 0;
    read_pod(is, name_len);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    std::uint8_t trainable = 0;
    read_pod(is, trainable);
    std::uint64_t rows = 0, cols = 0;
    read_pod(is, rows);
    read_pod(is, cols);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    is.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!is) throw DataError("truncated checkpoint: " + path);
    auto it = index_.find(name);
    if (it == index_.end()) {
      auto& p = create(name, m.rows(), m.cols(), trainable != 0);
      p.value = std::move(m);
    } else {
      Parameter& p = *params_[it->second];
      if (p.value.rows() != m.rows() || p.value.cols() != m.cols()) {
        std::ostringstream msg;
        msg << "checkpoint shape mismatch for " << name << ": stored "
            << m.rows() << "x" << m.cols() << ", expected " << p.value.rows()
            << "x" << p.value.cols();
        throw DataError(msg.str());
      }
      p.value = std::move(m);
    }
  }
}

BatchNormState BatchNormState::make(ParamStore& store, const std::string& prefix,
                                    Eigen::Index features, double momentum) {
  BatchNormState bn;
  bn.gamma = &store.create(prefix + "/gamma", 1, features);
  bn.gamma->value.setOnes();
  bn.beta = &store.create(prefix + "/beta", 1, features);
  bn.run_mean = &store.create(prefix + "/running_mean", 1, features, false);
  bn.run_var = &store.create(prefix + "/running_var", 1, features, false);
  bn.run_var->value.setOnes();
  bn.momentum = momentum;
  return bn;
}

// ---------------------------------------------------------------------------
// Tape

int Tape::push(Matrix value, bool needs_grad) {
  Node n;
  n.owned = std::move(value);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size() - 1);
}

int Tape::push_external(const Matrix* value, bool needs_grad) {
  Node n;
  n.external = value;
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size() - 1);
}

void Tape::ensure_grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) {
    n.grad = Matrix::Zero(n.value().rows(), n.value().cols());
  }
}

void Tape::check_shapes_match(Var a, Var b, const char* op) const {
  const Matrix& ma = nodes_[a.id].value();
  const Matrix& mb = nodes_[b.id].value();
  if (ma.rows() != mb.rows() || ma.cols() != mb.cols()) {
    std::ostringstream msg;
    msg << op << ": shape mismatch " << ma.rows() << "x" << ma.cols() << " vs "
        << mb.rows() << "x" << mb.cols();
    throw std::invalid_argument(msg.str());
  }
}

Var Tape::constant(Matrix v) { return Var{push(std::move(v), false)}; }

Var Tape::param(Parameter& p) {
  int id = push_external(&p.value, true);
  Parameter* sink = &p;
  nodes_[id].back = [id, sink](Tape& t) { sink->grad += t.nodes_[id].grad; };
  return Var{id};
}

Var Tape::embed(Parameter& table, const std::vector<int>& row_ids) {
  Matrix v(static_cast<Eigen::Index>(row_ids.size()), table.value.cols());
  for (std::size_t i = 0; i < row_ids.size(); ++i) {
    int r = row_ids[i];
    if (r < 0 || r >= table.value.rows()) {
      throw std::out_of_range("embed: row id " + std::to_string(r) +
                              " outside table of " +
                              std::to_string(table.value.rows()));
    }
    v.row(static_cast<Eigen::Index>(i)) = table.value.row(r);
  }
  int id = push(std::move(v), true);
  Parameter* sink = &table;
  nodes_[id].back = [id, sink, row_ids](Tape& t) {
    const Matrix& g = t.nodes_[id].grad;
    for (std::size_t i = 0; i < row_ids.size(); ++i) {
      sink->grad.row(row_ids[i]) += g.row(static_cast<Eigen::Index>(i));
    }
  };
  return Var{id};
}

Var Tape::matmul(Var a, Var b) {
  const Matrix& ma = node(a).value();
  const Matrix& mb = node(b).value();
  if (ma.cols() != mb.rows()) {
    std::ostringstream msg;
    msg << "matmul: inner dims differ, " << ma.rows() << "x" << ma.cols()
        << " * " << mb.rows() << "x" << mb.cols();
    throw std::invalid_argument(msg.str());
  }
  bool ng = node(a).needs_grad || node(b).needs_grad;
  int id = push(ma * mb, ng);
  if (ng) {
    nodes_[id].back = [id, a, b](Tape& t) {
      const Matrix& g = t.nodes_[id].grad;
      if (t.node(a).needs_grad) {
        t.ensure_grad(a.id);
        t.node(a).grad.noalias() += g * t.node(b).value().transpose();
      }
      if (t.node(b).needs_grad) {
        t.ensure_grad(b.id);
        t.node(b).grad.noalias() += t.node(a).value().transpose() * g;
      }
    };
  }
  return Var{id};
}

Var Tape::transpose(Var a) {
  bool ng = node(a).needs_grad;
  int id = push(node(a).value().transpose(), ng);
  if (ng) {
    nodes_[id].back = [id, a](Tape& t) {
      t.ensure_grad(a.id);
      t.node(a).grad += t.nodes_[id].grad.transpose();
    };
  }
  return Var{id};
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Eigen::Index rows = 0;
  Eigen::Index cols = node(parts[0]).value().cols();
  bool ng = false;
  for (Var p : parts) {
    if (node(p).value().cols() != cols) {
      throw std::invalid_argument("concat_rows: column mismatch");
    }
    rows += node(p).value().rows();
    ng = ng || node(p).needs_grad;
  }
  Matrix v(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    v.middleRows(r, node(p).value().rows()) = node(p).value();
    r += node(p).value().rows();
  }
  int id = push(std::move(v), ng);
  if (ng) {
    nodes_[id].back = [id, parts](Tape& t) {
      const Matrix& g = t.nodes_[id].grad;
      Eigen::Index r = 0;
      for (Var p : parts) {
        Eigen::Index n = t.node(p).value().rows();
        if (t.node(p).needs_grad) {
          t.ensure_grad(p.id);
          t.node(p).grad += g.middleRows(r, n);
        }
        r += n;
      }
    };
  }
  return Var{id};
}

Var Tape::concat_cols(Var a, Var b) {
  const Matrix& ma = node(a).value();
  const Matrix& mb = node(b).value();
  if (ma.rows() != mb.rows()) {
    throw std::invalid_argument("concat_cols: row mismatch");
  }
  Matrix v(ma.rows(), ma.cols() + mb.cols());
  v.leftCols(ma.cols()) = ma;
  v.rightCols(mb.cols()) = mb;
  bool ng = node(a).needs_grad || node(b).needs_grad;
  int id = push(std::move(v), ng);
  if (ng) {
    Eigen::Index ca = ma.cols(), cb = mb.cols();
    nodes_[id].back = [id, a, b, ca, cb](Tape& t) {
      const Matrix& g = t.nodes_[id].grad;
      if (t.node(a).needs_grad) {
        t.ensure_grad(a.id);
        t.node(a).grad += g.leftCols(ca);
      }
      if (t.node(b).needs_grad) {
        t.ensure_grad(b.id);
        t.node(b).grad += g.rightCols(cb);
      }
    };
  }
  return Var{id};
}

Var Tape::slice_cols(Var a, Eigen::Index first, Eigen::Index count) {
  const Matrix& ma = node(a).value();
  if (first < 0 || first + count > ma.cols()) {
    throw std::invalid_argument("slice_cols: out of range");
  }
  bool ng = node(a).needs_grad;
  int id = push(ma.middleCols(first, count), ng);
  if (ng) {
    nodes_[id].back = [id, a, first, count](Tape& t) {
      t.ensure_grad(a.id);
      t.node(a).grad.middleCols(first, count) += t.nodes_[id].grad;
    };
  }
  return Var{id};
}

Var Tape::slice_rows(Var a, Eigen::Index first, Eigen::Index count) {
  const Matrix& ma = node(a).value();
  if (first < 0 || first + count > ma.rows()) {
    throw std::invalid_argument("slice_rows: out of range");
  }
  bool ng = node(a).needs_grad;
  int id = push(ma.middleRows(first, count), ng);
  if (ng) {
    nodes_[id].back = [id, a, first, count](Tape& t) {
      t.ensure_grad(a.id);
      t.node(a).grad.middleRows(first, count) += t.nodes_[id].grad;
    };
  }
  return Var{id};
}

Var Tape::add(Var a, Var b) {
  check_shapes_match(a, b, "add");
  bool ng = node(a).needs_grad || node(b).needs_grad;
  int id = push(node(a).value() + node(b).value(), ng);
  if (ng) {
    nodes_[id].back = [id, a, b](Tape& t) {
      const Matrix& g = t.nodes_[id].grad;
      if (t.node(a).needs_grad) {
        t.ensure_grad(a.id);
        t.node(a).grad += g;
      }
      if (t.node(b).needs_grad) {
        t.ensure_grad(b.id);
        t.node(b).grad += g;
      }
    };
  }
  return Var{id};
}

Var Tape::sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var Tape::mul(Var a, Var b) {
  check_shapes_match(a, b, "mul");
  bool ng = node(a).needs_grad || node(b).needs_grad;
  int id = push(node(a).value().cwiseProduct(node(b).value()), ng);
  if (ng) {
    nodes_[id].back = [id, a, b](Tape& t) {
      const Matrix& g = t.nodes_[id].grad;
      if (t.node(a).needs_grad) {
        t.ensure_grad(a.id);
        t.node(a).grad += g.cwiseProduct(t.node(b).value());
      }
      if (t.node(b).needs_grad) {
        t.ensure_grad(b.id);
        t.node(b).grad += g.cwiseProduct(t.node(a).value());
      }
    };
  }
  return Var{id};
}

Var Tape::scale(Var a, double c) { return affine_const(a, c, 0.0); }

Var Tape::affine_const(Var a, double mul, double add) {
  bool ng = node(a).needs_grad;
  int id = push((node(a).value().array() * mul + add).matrix(), ng);
  if (ng) {
    nodes_[id].back = [id, a, mul](Tape& t) {
      t.ensure_grad(a.id);
      t.node(a).grad += t.nodes_[id].grad * mul;
    };
  }
  return Var{id};
}

Var Tape::add_row_bias(Var a, Var bias) {
  const Matrix& ma = node(a).value();
  const Matrix& mb = node(bias).value();
  if (mb.rows() != 1 || mb.cols() != ma.cols()) {
    std::ostringstream msg;
    msg << "add_row_bias: bias " << mb.rows() << "x" << mb.cols()
        << " does not broadcast over " << ma.rows() << "x" << ma.cols();
    throw std::invalid_argument(msg.str());
  }
  bool ng = node(a).needs_grad || node(bias).needs_grad;
  Matrix v = ma;
  v.rowwise() += mb.row(0);
  int id = push(std::move(v), ng);
  if (ng) {
    nodes_[id].back = [id, a, bias](Tape& t) {
      const Matrix& g = t.nodes_[id].grad;
      if (t.node(a).needs_grad) {
        t.ensure_grad(a.id);
        t.node(a).grad += g;
      }
      if (t.node(bias).needs_grad) {
        t.ensure_grad(bias.id);
        t.node(bias).grad += g.colwise().sum();
      }
    };
  }
  return Var{id};
}

Var Tape::tanh(Var a) {
  bool ng = node(a).needs_grad;
  int id = push(node(a).value().array().tanh().matrix(), ng);
  if (ng) {
    nodes_[id].back = [id, a](Tape& t) {
      t.ensure_grad(a.id);
      const Matrix& y = t.nodes_[id].value();
      t.node(a).grad.array() +=
          t.nodes_[id].grad.array() * (1.0 - y.array().square());
    };
  }
  return Var{id};
}

Var Tape::sigmoid(Var a) {
  bool ng = node(a).needs_grad;
  Matrix v = node(a).value().unaryExpr([](double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                    : std::exp(x) / (1.0 + std::exp(x));
  });
  int id = push(std::move(v), ng);
  if (ng) {
    nodes_[id].back = [id, a](Tape& t) {
      t.ensure_grad(a.id);
      const Matrix& y = t.nodes_[id].value();
      t.node(a).grad.array() +=
          t.nodes_[id].grad.array() * y.array() * (1.0 - y.array());
    };
  }
  return Var{id};
}

Var Tape::softplus(Var a) {
  bool ng = node(a).needs_grad;
  Matrix v = node(a).value().unaryExpr([](double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  });
  int id = push(std::move(v), ng);
  if (ng) {
    nodes_[id].back = [id, a](Tape& t) {
      t.ensure_grad(a.id);
      const Matrix& x = t.node(a).value();
      t.node(a).grad.array() +=
          t.nodes_[id].grad.array() *
          x.unaryExpr([](double z) {
             return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                             : std::exp(z) / (1.0 + std::exp(z));
           }).array();
    };
  }
  return Var{id};
}

Var Tape::log(Var a) {
  bool ng = node(a).needs_grad;
  int id = push(node(a).value().array().log().matrix(), ng);
  if (ng) {
    nodes_[id].back = [id, a](Tape& t) {
      t.ensure_grad(a.id);
      t.node(a).grad.array() +=
          t.nodes_[id].grad.array() / t.node(a).value().array();
    };
  }
  return Var{id};
}

Var Tape::clamp(Var a, double lo, double hi) {
  bool ng = node(a).needs_grad;
  int id = push(node(a).value().cwiseMax(lo).cwiseMin(hi), ng);
  if (ng) {
    nodes_[id].back = [id, a, lo, hi](Tape& t) {
      t.ensure_grad(a.id);
      const Matrix& x = t.node(a).value();
      t.node(a).grad.array() +=
          t.nodes_[id].grad.array() *
          ((x.array() >= lo) && (x.array() <= hi)).cast<double>();
    };
  }
  return Var{id};
}

Var Tape::sum(Var a) {
  bool ng = node(a).needs_grad;
  Matrix v(1, 1);
  v(0, 0) = node(a).value().sum();
  int id = push(std::move(v), ng);
  if (ng) {
    nodes_[id].back = [id, a](Tape& t) {
      t.ensure_grad(a.id);
      t.node(a).grad.array() += t.nodes_[id].grad(0, 0);
    };
  }
  return Var{id};
}

Var Tape::mean_all(Var a) {
  return scale(sum(a), 1.0 / static_cast<double>(node(a).value().size()));
}

Var Tape::logsumexp_rows(Var a) {
  const Matrix& x = node(a).value();
  Matrix v(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double m = x.row(r).maxCoeff();
    v(r, 0) = m + std::log((x.row(r).array() - m).exp().sum());
  }
  bool ng = node(a).needs_grad;
  int id = push(std::move(v), ng);
  if (ng) {
    nodes_[id].back = [id, a](Tape& t) {
      t.ensure_grad(a.id);
      const Matrix& x = t.node(a).value();
      const Matrix& lse = t.nodes_[id].value();
      const Matrix& g = t.nodes_[id].grad;
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        t.node(a).grad.row(r).array() +=
            g(r, 0) * (x.row(r).array() - lse(r, 0)).exp();
      }
    };
  }
  return Var{id};
}

Var Tape::dropout(Var a, double rate, Rng& rng, bool training) {
  if (!training || rate <= 0.0) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  const double keep = 1.0 - rate;
  const Matrix& x = node(a).value();
  Matrix mask(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      mask(r, c) = uniform01(rng) < keep ? 1.0 / keep : 0.0;
    }
  }
  return mul(a, constant(std::move(mask)));
}

Var Tape::batch_norm(Var x, BatchNormState& bn, bool training) {
  const Matrix& xv = node(x).value();
  const Eigen::Index n = xv.rows(), f = xv.cols();
  if (bn.gamma->value.cols() != f) {
    std::ostringstream msg;
    msg << "batch_norm: feature count " << f << " vs state "
        << bn.gamma->value.cols();
    throw std::invalid_argument(msg.str());
  }

  Eigen::RowVectorXd mean, var;
  if (training) {
    mean = xv.colwise().mean();
    var = (xv.rowwise() - mean).array().square().colwise().mean();
    // Running statistics track the unbiased batch variance.
    double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
    bn.run_mean->value.row(0) =
        (1.0 - bn.momentum) * bn.run_mean->value.row(0) + bn.momentum * mean;
    bn.run_var->value.row(0) = (1.0 - bn.momentum) * bn.run_var->value.row(0) +
                               bn.momentum * (var * unbias);
  } else {
    mean = bn.run_mean->value.row(0);
    var = bn.run_var->value.row(0);
  }
  Eigen::RowVectorXd inv_std = (var.array() + bn.eps).rsqrt();
  Matrix xhat =
      ((xv.rowwise() - mean).array().rowwise() * inv_std.array()).matrix();

  Var gamma = param(*bn.gamma);
  Var beta = param(*bn.beta);

  bool ng = node(x).needs_grad || node(gamma).needs_grad || node(beta).needs_grad;
  Matrix y = (xhat.array().rowwise() * bn.gamma->value.row(0).array()).matrix();
  y.rowwise() += bn.beta->value.row(0);
  int id = push(std::move(y), ng);
  if (ng) {
    Matrix xhat_copy = xhat;
    Eigen::RowVectorXd inv_std_copy = inv_std;
    nodes_[id].back = [id, x, gamma, beta, xhat_copy, inv_std_copy,
                       training](Tape& t) {
      const Matrix& g = t.nodes_[id].grad;
      const Eigen::Index n = g.rows();
      if (t.node(beta).needs_grad) {
        t.ensure_grad(beta.id);
        t.node(beta).grad.row(0) += g.colwise().sum();
      }
      if (t.node(gamma).needs_grad) {
        t.ensure_grad(gamma.id);
        t.node(gamma).grad.row(0) += g.cwiseProduct(xhat_copy).colwise().sum();
      }
      if (t.node(x).needs_grad) {
        t.ensure_grad(x.id);
        Eigen::RowVectorXd gamma_v = t.node(gamma).value().row(0);
        if (training) {
          Eigen::RowVectorXd g_mean = g.colwise().mean();
          Eigen::RowVectorXd gx_mean = g.cwiseProduct(xhat_copy).colwise().mean();
          Matrix dx = g;
          dx.rowwise() -= g_mean;
          dx -= (xhat_copy.array().rowwise() * gx_mean.array()).matrix();
          dx = (dx.array().rowwise() * (gamma_v.array() * inv_std_copy.array()))
                   .matrix();
          t.node(x).grad += dx;
        } else {
          t.node(x).grad +=
              (g.array().rowwise() * (gamma_v.array() * inv_std_copy.array()))
                  .matrix();
        }
        (void)n;
      }
    };
  }
  return Var{id};
}

Var Tape::conv1d(Var a, const Vector& kernel) {
  const Matrix& x = node(a).value();
  if (x.cols() != 1) throw std::invalid_argument("conv1d: expects a column");
  if (kernel.size() % 2 == 0) {
    throw std::invalid_argument("conv1d: kernel width must be odd");
  }
  const Eigen::Index n = x.rows();
  const Eigen::Index half = kernel.size() / 2;
  auto convolve = [n, half, kernel](const Matrix& in) {
    Matrix out = Matrix::Zero(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      double acc = 0.0;
      for (Eigen::Index k = -half; k <= half; ++k) {
        Eigen::Index j = i + k;
        if (j >= 0 && j < n) acc += kernel(k + half) * in(j, 0);
      }
      out(i, 0) = acc;
    }
    return out;
  };
  bool ng = node(a).needs_grad;
  int id = push(convolve(x), ng);
  if (ng) {
    // Symmetric kernel with zero padding: the adjoint is the same stencil.
    nodes_[id].back = [id, a, convolve](Tape& t) {
      t.ensure_grad(a.id);
      t.node(a).grad += convolve(t.nodes_[id].grad);
    };
  }
  return Var{id};
}

void Tape::backward(Var root, double seed) {
  Node& r = nodes_[root.id];
  if (r.value().rows() != 1 || r.value().cols() != 1) {
    throw std::invalid_argument("backward: root must be scalar (1x1)");
  }
  ensure_grad(root.id);
  r.grad(0, 0) += seed;
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.back && n.grad.size() != 0) n.back(*this);
  }
}

void Tape::check_finite(Var v, const std::string& where) const {
  if (!nodes_[v.id].value().allFinite()) {
    throw NumericError("non-finite value in " + where);
  }
}

// ---------------------------------------------------------------------------
// grad_check

double grad_check(const std::function<double()>& eval,
                  const std::vector<Parameter*>& params, Rng& rng,
                  int coords_per_param, double rel_step) {
  eval();
  std::vector<Matrix> grads;
  grads.reserve(params.size());
  for (Parameter* p : params) grads.push_back(p->grad);

  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    const Eigen::Index total = p.value.size();
    const int n_coords =
        static_cast<int>(std::min<Eigen::Index>(total, coords_per_param));
    for (int k = 0; k < n_coords; ++k) {
      Eigen::Index idx =
          total <= coords_per_param
              ? k
              : static_cast<Eigen::Index>(bounded(rng, static_cast<std::uint64_t>(total)));
      double orig = p.value.data()[idx];
      double h = rel_step * std::max(1.0, std::abs(orig));
      p.value.data()[idx] = orig + h;
      double f_plus = eval();
      p.value.data()[idx] = orig - h;
      double f_minus = eval();
      p.value.data()[idx] = orig;
      double fd = (f_plus - f_minus) / (2.0 * h);
      double ad = grads[pi].data()[idx];
      double denom = std::max(1e-8, std::abs(fd) + std::abs(ad));
      max_rel = std::max(max_rel, std::abs(fd - ad) / denom);
    }
  }
  eval();  // leave grads consistent with unperturbed params
  return max_rel;
}

}  // namespace baitnet::diff
