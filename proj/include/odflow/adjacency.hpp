#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <string>
#include <unordered_set>
#include <vector>

#include "odflow/network.hpp"

namespace odflow {

enum class AdjacencyKind { geo, flow };

/// A nonnegative symmetric adjacency over the network's nodes: either the
/// flow matrix restricted to Moore-adjacent cell pairs (geo) or the full flow
/// matrix (flow), in both cases with interest-incident entries replaced by
/// the neighborhood-average approximation.
struct AdjacencyView {
  AdjacencyKind kind = AdjacencyKind::geo;
  Eigen::SparseMatrix<double> matrix;
  bool self_loops_added = false;
  std::vector<std::string> warnings;
};

namespace detail {

/// Readable (non-interest) nodes in the Moore neighborhood of `node`'s cell.
inline std::vector<int> readable_geo_neighborhood(const FlowNetwork& net, int node,
                                                  const GuardedFlows& flows) {
  std::vector<int> out;
  const int cell = net.cell_of(node);
  for (int other = 0; other < net.n(); ++other) {
    if (other == node) continue;
    if (!net.grid().moore_adjacent(cell, net.cell_of(other))) continue;
    if (flows.is_masked_node(other)) continue;
    out.push_back(other);
  }
  return out;
}

/// Average of the readable flows from `i` into the neighborhood of interest
/// node `j`; applied over both neighborhoods when `i` is an interest node too.
inline double approximate_interest_flow(const FlowNetwork& net, const GuardedFlows& flows, int i,
                                        int j, std::vector<std::string>* warnings) {
  const std::vector<int> nj = readable_geo_neighborhood(net, j, flows);
  if (nj.empty()) {
    if (warnings)
      warnings->push_back("interest node " + std::to_string(j) +
                          " has no readable geographic neighborhood; entries set to 0");
    return 0.0;
  }
  if (!flows.is_masked_node(i)) {
    double sum = 0.0;
    for (int k : nj) sum += flows.flow(i, k);
    return sum / static_cast<double>(nj.size());
  }
  const std::vector<int> ni = readable_geo_neighborhood(net, i, flows);
  if (ni.empty()) {
    if (warnings)
      warnings->push_back("interest node " + std::to_string(i) +
                          " has no readable geographic neighborhood; entries set to 0");
    return 0.0;
  }
  double sum = 0.0;
  for (int k : ni)
    for (int l : nj) sum += flows.flow(k, l);
  return sum / static_cast<double>(ni.size() * nj.size());
}

inline AdjacencyView build_adjacency(const GuardedFlows& flows, AdjacencyKind kind) {
  const FlowNetwork& net = flows.net();
  const int n = net.n();
  AdjacencyView view;
  view.kind = kind;

  std::vector<Eigen::Triplet<double>> trips;
  auto put = [&](int i, int j, double v) {
    if (v == 0.0) return;
    trips.emplace_back(i, j, v);
    trips.emplace_back(j, i, v);
  };

  if (kind == AdjacencyKind::flow) {
    for (const EdgeKey& e : net.edges()) {
      if (flows.is_masked(e.a, e.b)) continue;
      put(e.a, e.b, flows.flow(e.a, e.b));
    }
  } else {
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (!net.grid().moore_adjacent(net.cell_of(i), net.cell_of(j))) continue;
        if (flows.is_masked(i, j)) continue;
        put(i, j, flows.flow(i, j));
      }
    }
  }

  // Interest-incident entries via the neighborhood-average approximation.
  for (int j : flows.masked_nodes()) {
    for (int i = 0; i < n; ++i) {
      if (i == j) continue;
      if (flows.is_masked_node(i) && i > j) continue;  // interest pair handled once
      if (kind == AdjacencyKind::geo &&
          !net.grid().moore_adjacent(net.cell_of(i), net.cell_of(j)))
        continue;
      put(std::min(i, j), std::max(i, j),
          approximate_interest_flow(net, flows, i, j, &view.warnings));
    }
  }

  Eigen::SparseMatrix<double> m(n, n);
  m.setFromTriplets(trips.begin(), trips.end());
  view.matrix = std::move(m);
  return view;
}

}  // namespace detail

/// Flow matrix masked to Moore-adjacent cell pairs; interest-incident entries
/// approximated from neighborhood averages.
inline AdjacencyView geo_adjacency(const GuardedFlows& flows) {
  return detail::build_adjacency(flows, AdjacencyKind::geo);
}

inline AdjacencyView geo_adjacency(const FlowNetwork& net,
                                   const std::unordered_set<int>& interest_nodes = {}) {
  return geo_adjacency(GuardedFlows(net, interest_nodes));
}

/// Full flow adjacency with interest-incident entries approximated.
inline AdjacencyView flow_adjacency(const GuardedFlows& flows) {
  return detail::build_adjacency(flows, AdjacencyKind::flow);
}

inline AdjacencyView flow_adjacency(const FlowNetwork& net,
                                    const std::unordered_set<int>& interest_nodes) {
  return flow_adjacency(GuardedFlows(net, interest_nodes));
}

/// Symmetric self-looped normalization: D^{-1/2} (A + I) D^{-1/2} with
/// D the degree matrix of A + I.
inline Eigen::SparseMatrix<double> normalized_adjacency(const AdjacencyView& view) {
  const Eigen::Index n = view.matrix.rows();
  Eigen::SparseMatrix<double> tilde = view.matrix;
  Eigen::SparseMatrix<double> eye(n, n);
  eye.setIdentity();
  tilde = tilde + eye;

  Eigen::VectorXd degree = Eigen::VectorXd::Zero(n);
  for (Eigen::Index c = 0; c < tilde.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator it(tilde, c); it; ++it)
      degree(it.row()) += it.value();

  Eigen::VectorXd inv_sqrt = degree.array().sqrt().inverse();
  Eigen::SparseMatrix<double> out = tilde;
  for (Eigen::Index c = 0; c < out.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator it(out, c); it; ++it)
      it.valueRef() *= inv_sqrt(it.row()) * inv_sqrt(it.col());
  return out;
}

}  // namespace odflow
