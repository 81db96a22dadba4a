#pragma once
#include "odflow/train_view.hpp"

#include <Eigen/Dense>
#include <random>
#include <vector>

#include "odflow/network.hpp"

namespace odtest {

/// Small hand-built network: one node per cell unless a cell map is given.
/// Node features default to [index, index^2 scaled] so scalers have spread.
inline odflow::FlowNetwork make_network(
    int n_rows, int n_cols, const std::vector<std::tuple<int, int, double>>& flow_entries,
    int p = 2, std::vector<int> node_cell = {}) {
  odflow::GridSpec grid{0.0, 0.0, 500.0, n_rows, n_cols};
  const int n = node_cell.empty() ? grid.n_cells() : static_cast<int>(node_cell.size());
  if (node_cell.empty()) {
    node_cell.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) node_cell[static_cast<std::size_t>(i)] = i;
  }
  Eigen::MatrixXd feats(n, p);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < p; ++c) feats(i, c) = (c + 1) * 0.1 * i + 0.01 * c;
  std::vector<std::string> node_names;
  for (int c = 0; c < p; ++c) node_names.push_back("f" + std::to_string(c));

  std::unordered_map<odflow::EdgeKey, double, odflow::EdgeKeyHash> flows;
  std::unordered_map<odflow::EdgeKey, std::vector<double>, odflow::EdgeKeyHash> efeats;
  for (const auto& [i, j, w] : flow_entries) {
    odflow::EdgeKey key(i, j);
    flows[key] = w;
    const double d = grid.centroid_distance(node_cell[static_cast<std::size_t>(key.a)],
                                            node_cell[static_cast<std::size_t>(key.b)]);
    efeats[key] = {d, std::log(d)};
  }
  return odflow::FlowNetwork(grid, std::move(node_cell), std::move(feats), std::move(node_names),
                             {"distance", "log_distance"}, std::move(flows), std::move(efeats), 0,
                             1);
}

/// Dense symmetric random flow matrix over a grid's nodes (zero diagonal).
inline std::vector<std::tuple<int, int, double>> random_flow_entries(int n, double density,
                                                                     std::uint64_t seed,
                                                                     double max_flow = 50.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::tuple<int, int, double>> out;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (unit(rng) < density) out.emplace_back(i, j, 1.0 + std::floor(unit(rng) * max_flow));
  return out;
}

/// Owns the guard alongside a TrainView for fixtures with interest nodes.
/// Train edges = all edges not incident to an interest node.
struct HeldView {
  odflow::GuardedFlows flows;
  odflow::TrainView view;

  HeldView(const odflow::FlowNetwork& net, const std::vector<int>& interest)
      : flows(net, {interest.begin(), interest.end()}) {
    view.net = &net;
    view.flows = &flows;
    view.interest_nodes = interest;
    for (int i = 0; i < net.n(); ++i)
      if (!flows.is_masked_node(i)) view.regular_nodes.push_back(i);
    for (const odflow::EdgeKey& e : net.edges())
      if (!flows.is_masked(e.a, e.b)) view.train_edges.push_back(e);
    view.scaler = odflow::FeatureScaler::fit(net, view.regular_nodes, view.train_edges);
  }
};

/// Largest-magnitude eigenvalue estimate by power iteration.
inline double spectral_radius(const Eigen::MatrixXd& m, int iters = 200) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(m.rows());
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < iters; ++it) {
    Eigen::VectorXd w = m * v;
    lambda = w.norm();
    if (lambda == 0.0) return 0.0;
    v = w / lambda;
  }
  return lambda;
}

}  // namespace odtest
