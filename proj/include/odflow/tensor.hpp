#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "odflow/common.hpp"

namespace odflow::nn {

namespace detail {

struct TensorNode {
  Eigen::MatrixXd values;
  Eigen::MatrixXd grad;
  bool requires_grad = false;
  bool grad_ready = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_rule;

  void ensure_grad() {
    if (!grad_ready) {
      grad = Eigen::MatrixXd::Zero(values.rows(), values.cols());
      grad_ready = true;
    }
  }
};

inline void check_finite(const Eigen::MatrixXd& m, const char* op) {
  if (!m.allFinite())
    throw ComputeError(std::string("tensor op '") + op + "' produced a non-finite value");
}

}  // namespace detail

/// Dense 64-bit tensor with a gradient slot; ops record a backward rule on
/// the computation graph. Copies alias the same node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor leaf(Eigen::MatrixXd values, bool requires_grad = false) {
    detail::check_finite(values, "leaf");
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode>();
    t.node_->values = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return leaf(Eigen::MatrixXd::Constant(1, 1, v), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Eigen::MatrixXd& values() const { return node_->values; }
  Eigen::MatrixXd& mutable_values() { return node_->values; }
  Eigen::Index rows() const { return node_->values.rows(); }
  Eigen::Index cols() const { return node_->values.cols(); }
  std::vector<Eigen::Index> shape() const { return {rows(), cols()}; }
  double item() const {
    if (rows() != 1 || cols() != 1) throw DataError("Tensor::item: not a scalar");
    return node_->values(0, 0);
  }

  bool requires_grad() const { return node_->requires_grad; }

  const Eigen::MatrixXd& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    node_->grad_ready = false;
    node_->ensure_grad();
  }

  /// Reverse sweep from a scalar output: seeds d(out)/d(out) = 1 and applies
  /// every recorded backward rule in reverse topological order.
  void backward() const {
    if (rows() != 1 || cols() != 1) throw DataError("Tensor::backward: output must be scalar");
    std::vector<detail::TensorNode*> order;
    std::unordered_set<detail::TensorNode*> seen;
    topo(node_.get(), seen, order);
    node_->ensure_grad();
    node_->grad(0, 0) += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
      if ((*it)->backward_rule && (*it)->requires_grad) (*it)->backward_rule(**it);
  }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

  static Tensor from_node(std::shared_ptr<detail::TensorNode> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  static void topo(detail::TensorNode* n, std::unordered_set<detail::TensorNode*>& seen,
                   std::vector<detail::TensorNode*>& order) {
    if (seen.count(n)) return;
    seen.insert(n);
    for (const auto& p : n->parents) topo(p.get(), seen, order);
    order.push_back(n);
  }

  std::shared_ptr<detail::TensorNode> node_;
};

namespace detail {

inline Tensor make_op(Eigen::MatrixXd values, std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> rule, const char* name) {
  check_finite(values, name);
  auto n = std::make_shared<TensorNode>();
  n->values = std::move(values);
  for (const Tensor& p : parents) {
    n->parents.push_back(p.node());
    n->requires_grad = n->requires_grad || p.requires_grad();
  }
  if (n->requires_grad) n->backward_rule = std::move(rule);
  return Tensor::from_node(std::move(n));
}

inline void accumulate(const std::shared_ptr<TensorNode>& p, const Eigen::MatrixXd& g) {
  if (!p->requires_grad && p->parents.empty() && !p->backward_rule) return;
  p->ensure_grad();
  p->grad += g;
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw DataError("matmul: shape mismatch (" + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + ") * (" + std::to_string(b.rows()) + "x" +
                    std::to_string(b.cols()) + ")");
  auto pa = a.node(), pb = b.node();
  return detail::make_op(
      a.values() * b.values(), {a, b},
      [pa, pb](detail::TensorNode& out) {
        detail::accumulate(pa, out.grad * pb->values.transpose());
        detail::accumulate(pb, pa->values.transpose() * out.grad);
      },
      "matmul");
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DataError("add: shape mismatch (" + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + ") + (" + std::to_string(b.rows()) + "x" +
                    std::to_string(b.cols()) + ")");
  auto pa = a.node(), pb = b.node();
  return detail::make_op(
      a.values() + b.values(), {a, b},
      [pa, pb](detail::TensorNode& out) {
        detail::accumulate(pa, out.grad);
        detail::accumulate(pb, out.grad);
      },
      "add");
}

/// Adds a 1 x D bias row to every row of a B x D matrix.
inline Tensor add_rowvec(const Tensor& a, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols())
    throw DataError("add_rowvec: bias must be 1x" + std::to_string(a.cols()));
  auto pa = a.node(), pb = bias.node();
  Eigen::MatrixXd out = a.values();
  out.rowwise() += bias.values().row(0);
  return detail::make_op(
      std::move(out), {a, bias},
      [pa, pb](detail::TensorNode& out) {
        detail::accumulate(pa, out.grad);
        detail::accumulate(pb, out.grad.colwise().sum());
      },
      "add_rowvec");
}

/// Multiplies a tensor by a learned scalar (1x1 tensor).
inline Tensor scale(const Tensor& x, const Tensor& s) {
  if (s.rows() != 1 || s.cols() != 1) throw DataError("scale: scalar tensor must be 1x1");
  auto px = x.node(), ps = s.node();
  return detail::make_op(
      s.item() * x.values(), {x, s},
      [px, ps](detail::TensorNode& out) {
        detail::accumulate(px, ps->values(0, 0) * out.grad);
        detail::accumulate(ps, Eigen::MatrixXd::Constant(
                                   1, 1, (out.grad.array() * px->values.array()).sum()));
      },
      "scale");
}

/// max(0, x); the subgradient at exactly 0 is taken as 0.
inline Tensor relu(const Tensor& x) {
  auto px = x.node();
  return detail::make_op(
      x.values().cwiseMax(0.0), {x},
      [px](detail::TensorNode& out) {
        Eigen::MatrixXd g = out.grad;
        for (Eigen::Index i = 0; i < g.rows(); ++i)
          for (Eigen::Index j = 0; j < g.cols(); ++j)
            if (px->values(i, j) <= 0.0) g(i, j) = 0.0;
        detail::accumulate(px, g);
      },
      "relu");
}

/// Column-wise concatenation of tensors with equal row counts.
inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DataError("concat: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Tensor& t : parts) {
    if (t.rows() != rows) throw DataError("concat: row count mismatch");
    cols += t.cols();
  }
  Eigen::MatrixXd out(rows, cols);
  Eigen::Index at = 0;
  std::vector<std::shared_ptr<detail::TensorNode>> nodes;
  std::vector<Eigen::Index> offsets;
  for (const Tensor& t : parts) {
    out.middleCols(at, t.cols()) = t.values();
    nodes.push_back(t.node());
    offsets.push_back(at);
    at += t.cols();
  }
  return detail::make_op(
      std::move(out), parts,
      [nodes, offsets](detail::TensorNode& out) {
        for (std::size_t i = 0; i < nodes.size(); ++i)
          detail::accumulate(nodes[i],
                             out.grad.middleCols(offsets[i], nodes[i]->values.cols()));
      },
      "concat");
}

/// Scalar sum of all entries.
inline Tensor sum(const Tensor& x) {
  auto px = x.node();
  return detail::make_op(
      Eigen::MatrixXd::Constant(1, 1, x.values().sum()), {x},
      [px](detail::TensorNode& out) {
        detail::accumulate(
            px, Eigen::MatrixXd::Constant(px->values.rows(), px->values.cols(), out.grad(0, 0)));
      },
      "sum");
}

/// Mean squared error against a constant target.
inline Tensor mse_loss(const Tensor& pred, const Eigen::MatrixXd& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw DataError("mse_loss: prediction/target shape mismatch");
  auto pp = pred.node();
  const double n = static_cast<double>(target.size());
  const Eigen::MatrixXd diff = pred.values() - target;
  return detail::make_op(
      Eigen::MatrixXd::Constant(1, 1, diff.array().square().sum() / n), {pred},
      [pp, diff, n](detail::TensorNode& out) {
        detail::accumulate(pp, out.grad(0, 0) * 2.0 / n * diff);
      },
      "mse_loss");
}

/// Rows of x selected by index (with repetition); backward scatter-adds.
inline Tensor gather_rows(const Tensor& x, std::vector<int> idx) {
  for (int i : idx)
    if (i < 0 || i >= x.rows()) throw DataError("gather_rows: index out of range");
  auto px = x.node();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t r = 0; r < idx.size(); ++r)
    out.row(static_cast<Eigen::Index>(r)) = x.values().row(idx[r]);
  return detail::make_op(
      std::move(out), {x},
      [px, idx = std::move(idx)](detail::TensorNode& out) {
        Eigen::MatrixXd g = Eigen::MatrixXd::Zero(px->values.rows(), px->values.cols());
        for (std::size_t r = 0; r < idx.size(); ++r)
          g.row(idx[r]) += out.grad.row(static_cast<Eigen::Index>(r));
        detail::accumulate(px, g);
      },
      "gather_rows");
}

/// Constant sparse matrix times tensor (the normalized adjacency is not a
/// learned quantity).
inline Tensor spmm(const Eigen::SparseMatrix<double>& a, const Tensor& x) {
  if (a.cols() != x.rows()) throw DataError("spmm: shape mismatch");
  auto px = x.node();
  auto a_copy = std::make_shared<Eigen::SparseMatrix<double>>(a);
  return detail::make_op(
      (*a_copy) * x.values(), {x},
      [px, a_copy](detail::TensorNode& out) {
        detail::accumulate(px, a_copy->transpose() * out.grad);
      },
      "spmm");
}

/// Inverted dropout: zeros entries with probability `rate` in training mode
/// and rescales survivors by 1/(1-rate); identity in eval mode.
inline Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw DataError("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto mask = std::make_shared<Eigen::MatrixXd>(x.rows(), x.cols());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      (*mask)(i, j) = unit(rng) < rate ? 0.0 : keep_scale;
  auto px = x.node();
  return detail::make_op(
      x.values().cwiseProduct(*mask), {x},
      [px, mask](detail::TensorNode& out) {
        detail::accumulate(px, out.grad.cwiseProduct(*mask));
      },
      "dropout");
}

/// Running batch-normalization statistics (plain state, not differentiated).
struct BatchNormStats {
  Eigen::VectorXd running_mean;
  Eigen::VectorXd running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormStats(Eigen::Index d = 0)
      : running_mean(Eigen::VectorXd::Zero(d)), running_var(Eigen::VectorXd::Ones(d)) {}
};

/// Batch normalization over rows. Training mode normalizes by batch moments
/// and updates the running statistics; eval mode uses the running values.
inline Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& shift,
                        BatchNormStats& stats, bool training) {
  const Eigen::Index b = x.rows(), d = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || shift.rows() != 1 || shift.cols() != d)
    throw DataError("batchnorm: gamma/shift must be 1x" + std::to_string(d));
  if (stats.running_mean.size() != d)
    throw DataError("batchnorm: running stats dimension mismatch");

  auto px = x.node(), pg = gamma.node(), ps = shift.node();

  if (!training) {
    Eigen::MatrixXd xhat = x.values();
    for (Eigen::Index j = 0; j < d; ++j) {
      const double denom = std::sqrt(stats.running_var(j) + stats.eps);
      xhat.col(j) = (xhat.col(j).array() - stats.running_mean(j)) / denom;
    }
    Eigen::MatrixXd out = xhat;
    for (Eigen::Index j = 0; j < d; ++j)
      out.col(j) = gamma.values()(0, j) * out.col(j).array() + shift.values()(0, j);
    auto xhat_p = std::make_shared<Eigen::MatrixXd>(std::move(xhat));
    auto denom_p = std::make_shared<Eigen::VectorXd>(
        (stats.running_var.array() + stats.eps).sqrt().matrix());
    return detail::make_op(
        std::move(out), {x, gamma, shift},
        [px, pg, ps, xhat_p, denom_p](detail::TensorNode& out) {
          Eigen::MatrixXd gx = out.grad;
          for (Eigen::Index j = 0; j < gx.cols(); ++j)
            gx.col(j) *= pg->values(0, j) / (*denom_p)(j);
          detail::accumulate(px, gx);
          detail::accumulate(pg, (out.grad.array() * xhat_p->array()).colwise().sum().matrix());
          detail::accumulate(ps, out.grad.colwise().sum());
        },
        "batchnorm");
  }

  if (b < 2) throw DataError("batchnorm: training mode needs a batch of at least 2 rows");

  Eigen::RowVectorXd mean = x.values().colwise().mean();
  Eigen::MatrixXd centered = x.values().rowwise() - mean;
  Eigen::RowVectorXd var = centered.array().square().colwise().mean();

  Eigen::RowVectorXd inv_std = (var.array() + stats.eps).rsqrt();
  Eigen::MatrixXd xhat = centered.array().rowwise() * inv_std.array();
  Eigen::MatrixXd out = xhat;
  for (Eigen::Index j = 0; j < d; ++j)
    out.col(j) = gamma.values()(0, j) * out.col(j).array() + shift.values()(0, j);

  // unbiased variance for the running estimate
  const double unbias = static_cast<double>(b) / static_cast<double>(b - 1);
  stats.running_mean = (1.0 - stats.momentum) * stats.running_mean + stats.momentum * mean.transpose();
  stats.running_var =
      (1.0 - stats.momentum) * stats.running_var + stats.momentum * unbias * var.transpose();

  auto xhat_p = std::make_shared<Eigen::MatrixXd>(std::move(xhat));
  auto inv_std_p = std::make_shared<Eigen::RowVectorXd>(std::move(inv_std));
  return detail::make_op(
      std::move(out), {x, gamma, shift},
      [px, pg, ps, xhat_p, inv_std_p](detail::TensorNode& out) {
        const Eigen::MatrixXd& xhat = *xhat_p;
        Eigen::MatrixXd dxhat = out.grad;
        for (Eigen::Index j = 0; j < dxhat.cols(); ++j) dxhat.col(j) *= pg->values(0, j);
        // dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat . xhat))
        Eigen::RowVectorXd mean_dxhat = dxhat.colwise().mean();
        Eigen::RowVectorXd mean_dxhat_xhat = (dxhat.array() * xhat.array()).colwise().mean();
        Eigen::MatrixXd gx = dxhat;
        gx.rowwise() -= mean_dxhat;
        gx.array() -= xhat.array().rowwise() * mean_dxhat_xhat.array();
        gx.array().rowwise() *= inv_std_p->array();
        detail::accumulate(px, gx);
        detail::accumulate(pg, (out.grad.array() * xhat.array()).colwise().sum().matrix());
        detail::accumulate(ps, out.grad.colwise().sum());
      },
      "batchnorm");
}

}  // namespace odflow::nn
