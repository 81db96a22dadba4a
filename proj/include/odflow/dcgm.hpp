#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "odflow/mass_model.hpp"
#include "odflow/train_view.hpp"

namespace odflow {

struct IpfOptions {
  double tol = 1e-8;      // max relative factor change per sweep
  int max_sweeps = 500;
};

struct IpfResult {
  Eigen::VectorXd A;  // origin balancing factors (0 on zero-margin nodes)
  Eigen::VectorXd B;  // destination balancing factors
  int sweeps = 0;
  double max_rel_change = 0.0;
  double d_rescale = 1.0;  // factor applied to D so totals matched
};

/// Furness balancing: alternately scales A and B until
/// T_ij = A_i O_i B_j D_j K_ij matches the row margins O and column margins D.
inline IpfResult ipf_balance(Eigen::VectorXd O, Eigen::VectorXd D, const Eigen::MatrixXd& K,
                             const IpfOptions& opts = {}) {
  const Eigen::Index n = O.size();
  if (D.size() != n || K.rows() != n || K.cols() != n)
    throw DataError("ipf_balance: dimension mismatch");
  if (K.minCoeff() < 0.0) throw DataError("ipf_balance: kernel must be nonnegative");
  for (Eigen::Index i = 0; i < n; ++i)
    if (O(i) < 0.0 || D(i) < 0.0) throw DataError("ipf_balance: margins must be nonnegative");

  IpfResult res;
  const double sum_o = O.sum(), sum_d = D.sum();
  if (sum_o <= 0.0 || sum_d <= 0.0) {
    res.A = Eigen::VectorXd::Zero(n);
    res.B = Eigen::VectorXd::Zero(n);
    return res;
  }
  if (sum_d != sum_o) {
    res.d_rescale = sum_o / sum_d;
    D *= res.d_rescale;
  }

  // kernel feasibility among nodes with positive margins
  for (Eigen::Index i = 0; i < n; ++i) {
    if (O(i) > 0.0) {
      double row = 0.0;
      for (Eigen::Index j = 0; j < n; ++j)
        if (D(j) > 0.0) row += K(i, j);
      if (row <= 0.0)
        throw DataError("ipf_balance: kernel row " + std::to_string(i) +
                        " is all-zero for a node with positive out-margin");
    }
    if (D(i) > 0.0) {
      double col = 0.0;
      for (Eigen::Index j = 0; j < n; ++j)
        if (O(j) > 0.0) col += K(j, i);
      if (col <= 0.0)
        throw DataError("ipf_balance: kernel column " + std::to_string(i) +
                        " is all-zero for a node with positive in-margin");
    }
  }

  Eigen::VectorXd A = Eigen::VectorXd::Zero(n), B = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (O(i) > 0.0) A(i) = 1.0;
    if (D(i) > 0.0) B(i) = 1.0;
  }

  const Eigen::VectorXd BD0 = B.cwiseProduct(D), AO0 = A.cwiseProduct(O);
  for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (O(i) <= 0.0) continue;
      double denom = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) denom += B(j) * D(j) * K(i, j);
      const double next = 1.0 / denom;
      max_change = std::max(max_change, std::abs(next - A(i)) / std::max(std::abs(next), 1e-300));
      A(i) = next;
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      if (D(j) <= 0.0) continue;
      double denom = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) denom += A(i) * O(i) * K(i, j);
      const double next = 1.0 / denom;
      max_change = std::max(max_change, std::abs(next - B(j)) / std::max(std::abs(next), 1e-300));
      B(j) = next;
    }
    res.sweeps = sweep;
    res.max_rel_change = max_change;
    if (max_change < opts.tol) {
      res.A = std::move(A);
      res.B = std::move(B);
      return res;
    }
  }
  throw ComputeError("ipf_balance: no convergence after " + std::to_string(opts.max_sweeps) +
                     " sweeps (residual " + format_double(res.max_rel_change) + ")");
}

/// Balanced matrix for inspection: T_ij = A_i O_i B_j D_j K_ij.
inline Eigen::MatrixXd ipf_matrix(const Eigen::VectorXd& O, const Eigen::VectorXd& D,
                                  const Eigen::MatrixXd& K, const IpfResult& f) {
  Eigen::MatrixXd T = K;
  const Eigen::VectorXd row = f.A.cwiseProduct(O), col = f.B.cwiseProduct(D) * f.d_rescale;
  for (Eigen::Index i = 0; i < T.rows(); ++i)
    for (Eigen::Index j = 0; j < T.cols(); ++j) T(i, j) *= row(i) * col(j);
  return T;
}

/// Doubly constrained gravity model, adapted to interest nodes: observed
/// margins and converged balancing factors on regular nodes, regression-based
/// margins plus one balancing pass on interest nodes.
struct DCGMParams {
  double beta = 0.0;
  Eigen::VectorXd A, B, O, D;  // full length n
  MassModel mass;
  bool degenerate = false;
  bool fitted = false;
};

struct DcgmOptions {
  double beta_min = 0.1;
  double beta_max = 5.0;
  double beta_tol = 1e-3;
  IpfOptions ipf;
};

namespace detail {

inline Eigen::MatrixXd power_kernel(const FlowNetwork& net, const std::vector<int>& nodes,
                                    double beta) {
  const Eigen::Index m = static_cast<Eigen::Index>(nodes.size());
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index r = 0; r < m; ++r) {
    for (Eigen::Index s = 0; s < m; ++s) {
      if (r == s) continue;
      const double d = net.distance(nodes[static_cast<std::size_t>(r)],
                                    nodes[static_cast<std::size_t>(s)]);
      if (d > 0.0) K(r, s) = std::pow(d, -beta);  // co-located pairs contribute nothing
    }
  }
  return K;
}

inline double poisson_deviance_term(double y, double mu) {
  mu = std::max(mu, 1e-12);
  if (y <= 0.0) return 2.0 * mu;
  return 2.0 * (y * std::log(y / mu) - (y - mu));
}

}  // namespace detail

/// Poisson deviance of the balanced gravity matrix against every visible
/// regular-pair flow (zeros included) at a given decay exponent.
inline double dcgm_deviance(const TrainView& view, double beta, const IpfOptions& ipf = {}) {
  const auto& nodes = view.regular_nodes;
  const Eigen::Index m = static_cast<Eigen::Index>(nodes.size());
  Eigen::VectorXd O(m);
  for (Eigen::Index r = 0; r < m; ++r) O(r) = view.visible_margin(nodes[static_cast<std::size_t>(r)]);
  Eigen::MatrixXd K = detail::power_kernel(view.network(), nodes, beta);
  IpfResult f = ipf_balance(O, O, K, ipf);
  Eigen::MatrixXd T = ipf_matrix(O, O, K, f);
  double dev = 0.0;
  for (Eigen::Index r = 0; r < m; ++r) {
    for (Eigen::Index s = 0; s < m; ++s) {
      if (r == s) continue;
      const double y = view.flows->flow(nodes[static_cast<std::size_t>(r)],
                                        nodes[static_cast<std::size_t>(s)]);
      dev += detail::poisson_deviance_term(y, T(r, s));
    }
  }
  return dev;
}

inline DCGMParams fit_dcgm(const TrainView& view, const DcgmOptions& opts = {}) {
  const FlowNetwork& net = view.network();
  const auto& nodes = view.regular_nodes;
  if (nodes.size() < 2) throw DataError("fit_dcgm: need at least two regular nodes");

  bool any_positive_distance = false;
  for (std::size_t r = 0; r < nodes.size() && !any_positive_distance; ++r)
    for (std::size_t s = r + 1; s < nodes.size(); ++s)
      if (net.distance(nodes[r], nodes[s]) > 0.0) {
        any_positive_distance = true;
        break;
      }
  if (!any_positive_distance) throw DataError("fit_dcgm: all pairwise distances are degenerate");

  DCGMParams params;
  params.mass = MassModel::fit(view);

  std::size_t positive_pairs = 0;
  for (const EdgeKey& e : view.train_edges) positive_pairs += e.a != e.b;
  double beta = opts.beta_min;
  if (positive_pairs <= 1) {
    params.degenerate = true;  // any beta fits exactly; report the lower bound
  } else {
    // golden-section search on the deviance
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = opts.beta_min, hi = opts.beta_max;
    double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
    double f1 = dcgm_deviance(view, x1, opts.ipf), f2 = dcgm_deviance(view, x2, opts.ipf);
    while (hi - lo > opts.beta_tol) {
      if (f1 <= f2) {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - phi * (hi - lo);
        f1 = dcgm_deviance(view, x1, opts.ipf);
      } else {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + phi * (hi - lo);
        f2 = dcgm_deviance(view, x2, opts.ipf);
      }
    }
    beta = (lo + hi) / 2.0;
  }
  params.beta = beta;

  // converged factors on the regular subsystem
  const Eigen::Index m = static_cast<Eigen::Index>(nodes.size());
  Eigen::VectorXd O_reg(m);
  for (Eigen::Index r = 0; r < m; ++r)
    O_reg(r) = view.visible_margin(nodes[static_cast<std::size_t>(r)]);
  Eigen::MatrixXd K_reg = detail::power_kernel(net, nodes, beta);
  IpfResult f = ipf_balance(O_reg, O_reg, K_reg, opts.ipf);

  const int n = net.n();
  params.A = Eigen::VectorXd::Zero(n);
  params.B = Eigen::VectorXd::Zero(n);
  params.O = Eigen::VectorXd::Zero(n);
  params.D = Eigen::VectorXd::Zero(n);
  for (Eigen::Index r = 0; r < m; ++r) {
    const int node = nodes[static_cast<std::size_t>(r)];
    params.A(node) = f.A(r);
    params.B(node) = f.B(r) * f.d_rescale;
    params.O(node) = O_reg(r);
    params.D(node) = O_reg(r);
  }

  // interest nodes: regression margins, then one balancing pass over the
  // affected rows and columns (B initialized to 1 where the margin is positive)
  for (int node : view.interest_nodes) {
    const double margin = params.mass.predict_out(net, view.scaler, node);
    params.O(node) = margin;
    params.D(node) = params.mass.predict_in(net, view.scaler, node);
    params.B(node) = params.D(node) > 0.0 ? 1.0 : 0.0;
  }
  auto kernel_at = [&](int i, int j) {
    if (i == j) return 0.0;
    const double d = net.distance(i, j);
    return d > 0.0 ? std::pow(d, -beta) : 0.0;
  };
  for (int node : view.interest_nodes) {
    if (params.O(node) <= 0.0) {
      params.A(node) = 0.0;
      continue;
    }
    double denom = 0.0;
    for (int j = 0; j < n; ++j) denom += params.B(j) * params.D(j) * kernel_at(node, j);
    params.A(node) = denom > 0.0 ? 1.0 / denom : 0.0;
  }
  for (int node : view.interest_nodes) {
    if (params.D(node) <= 0.0) {
      params.B(node) = 0.0;
      continue;
    }
    double denom = 0.0;
    for (int i = 0; i < n; ++i) denom += params.A(i) * params.O(i) * kernel_at(i, node);
    params.B(node) = denom > 0.0 ? 1.0 / denom : 0.0;
  }

  params.fitted = true;
  return params;
}

/// Directed gravity prediction T_ij = A_i O_i B_j D_j d_ij^(-beta).
inline double predict_dcgm_directed(const DCGMParams& params, const FlowNetwork& net, int i,
                                    int j) {
  if (!params.fitted) throw DataError("predict_dcgm: parameters not fitted");
  if (i == j) return 0.0;
  const double d = net.distance(i, j);
  if (!(d > 0.0)) return 0.0;
  return params.A(i) * params.O(i) * params.B(j) * params.D(j) * std::pow(d, -params.beta);
}

/// Symmetric prediction for an unordered edge.
inline double predict_dcgm(const DCGMParams& params, const FlowNetwork& net, int i, int j) {
  return (predict_dcgm_directed(params, net, i, j) + predict_dcgm_directed(params, net, j, i)) /
         2.0;
}

}  // namespace odflow
