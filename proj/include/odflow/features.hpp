#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "odflow/network.hpp"

namespace odflow {

/// Per-column z-score standardization. Moments are fit on training rows only
/// (regular nodes, training edges) and applied everywhere.
class FeatureScaler {
 public:
  FeatureScaler() = default;

  static FeatureScaler identity(int p, int k) {
    FeatureScaler s;
    s.node_mean_ = Eigen::VectorXd::Zero(p);
    s.node_std_ = Eigen::VectorXd::Ones(p);
    s.edge_mean_ = Eigen::VectorXd::Zero(k);
    s.edge_std_ = Eigen::VectorXd::Ones(k);
    return s;
  }

  static FeatureScaler fit(const FlowNetwork& net, const std::vector<int>& fit_nodes,
                           const std::vector<EdgeKey>& fit_edges) {
    FeatureScaler s;
    if (fit_nodes.empty()) throw DataError("FeatureScaler: no nodes to fit on");
    Eigen::MatrixXd rows(fit_nodes.size(), net.p());
    for (std::size_t r = 0; r < fit_nodes.size(); ++r)
      rows.row(static_cast<Eigen::Index>(r)) = net.node_features().row(fit_nodes[r]);
    s.node_mean_ = rows.colwise().mean();
    Eigen::MatrixXd centered = rows.rowwise() - s.node_mean_.transpose();
    s.node_std_ = (centered.array().square().colwise().mean()).sqrt();

    s.edge_mean_ = Eigen::VectorXd::Zero(net.k());
    s.edge_std_ = Eigen::VectorXd::Ones(net.k());
    if (!fit_edges.empty() && net.k() > 0) {
      Eigen::MatrixXd erows(fit_edges.size(), net.k());
      for (std::size_t r = 0; r < fit_edges.size(); ++r) {
        const auto* f = net.stored_edge_features(fit_edges[r].a, fit_edges[r].b);
        if (f == nullptr)
          throw DataError("FeatureScaler: training edge (" + std::to_string(fit_edges[r].a) +
                          ", " + std::to_string(fit_edges[r].b) + ") has no stored features");
        for (int c = 0; c < net.k(); ++c) erows(static_cast<Eigen::Index>(r), c) = (*f)[static_cast<std::size_t>(c)];
      }
      s.edge_mean_ = erows.colwise().mean();
      Eigen::MatrixXd ecentered = erows.rowwise() - s.edge_mean_.transpose();
      s.edge_std_ = (ecentered.array().square().colwise().mean()).sqrt();
    }
    // constant columns pass through unscaled
    for (Eigen::Index c = 0; c < s.node_std_.size(); ++c)
      if (s.node_std_(c) <= 0.0) s.node_std_(c) = 1.0;
    for (Eigen::Index c = 0; c < s.edge_std_.size(); ++c)
      if (s.edge_std_(c) <= 0.0) s.edge_std_(c) = 1.0;
    return s;
  }

  Eigen::VectorXd scale_node(const Eigen::VectorXd& x) const {
    return (x - node_mean_).cwiseQuotient(node_std_);
  }
  Eigen::VectorXd scale_edge(const Eigen::VectorXd& x) const {
    return (x - edge_mean_).cwiseQuotient(edge_std_);
  }

  /// All node features standardized, n x p (GCN input).
  Eigen::MatrixXd scale_all_nodes(const FlowNetwork& net) const {
    Eigen::MatrixXd out = net.node_features();
    out.rowwise() -= node_mean_.transpose();
    out.array().rowwise() /= node_std_.transpose().array();
    return out;
  }

  const Eigen::VectorXd& node_mean() const { return node_mean_; }
  const Eigen::VectorXd& node_std() const { return node_std_; }
  const Eigen::VectorXd& edge_mean() const { return edge_mean_; }
  const Eigen::VectorXd& edge_std() const { return edge_std_; }

  void set_moments(Eigen::VectorXd nm, Eigen::VectorXd ns, Eigen::VectorXd em,
                   Eigen::VectorXd es) {
    node_mean_ = std::move(nm);
    node_std_ = std::move(ns);
    edge_mean_ = std::move(em);
    edge_std_ = std::move(es);
  }

 private:
  Eigen::VectorXd node_mean_, node_std_, edge_mean_, edge_std_;
};

/// Raw edge-feature vector for a pair lacking a stored one: distance-typed
/// columns come from grid geometry, everything else is 0.
inline Eigen::VectorXd synthesize_edge_features(const FlowNetwork& net, int i, int j) {
  if (net.distance_feature() < 0 && net.log_distance_feature() < 0)
    throw DataError("missing edge-feature vector for pair (" + std::to_string(i) + ", " +
                    std::to_string(j) + ") and no distance feature designated for synthesis");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(net.k());
  const double d = net.grid().centroid_distance(net.cell_of(i), net.cell_of(j));
  if (net.distance_feature() >= 0) out(net.distance_feature()) = d;
  if (net.log_distance_feature() >= 0) {
    if (!(d > 0.0))
      throw DataError("cannot synthesize log-distance for co-located pair (" + std::to_string(i) +
                      ", " + std::to_string(j) + ")");
    out(net.log_distance_feature()) = std::log(d);
  }
  return out;
}

inline Eigen::VectorXd raw_edge_features(const FlowNetwork& net, int i, int j) {
  if (const auto* f = net.stored_edge_features(i, j)) {
    Eigen::VectorXd out(net.k());
    for (int c = 0; c < net.k(); ++c) out(c) = (*f)[static_cast<std::size_t>(c)];
    return out;
  }
  return synthesize_edge_features(net, i, j);
}

/// Standardized concatenation [x_i, x_ij, x_j] of length 2p + k.
inline Eigen::VectorXd concat_edge_input(const FlowNetwork& net, int i, int j,
                                         const FeatureScaler& scaler) {
  if (i == j)
    throw DataError("concat_edge_input: diagonal pair (" + std::to_string(i) + ", " +
                    std::to_string(j) + ") excluded");
  const int p = net.p();
  const int k = net.k();
  Eigen::VectorXd out(2 * p + k);
  out.head(p) = scaler.scale_node(net.node_features().row(i).transpose());
  out.segment(p, k) = scaler.scale_edge(raw_edge_features(net, i, j));
  out.tail(p) = scaler.scale_node(net.node_features().row(j).transpose());
  return out;
}

}  // namespace odflow
