#pragma once

#include <unordered_set>
#include <vector>

#include "odflow/features.hpp"
#include "odflow/network.hpp"

namespace odflow {

/// Everything a model is allowed to see while fitting: the guarded flow view
/// (interest-incident flows masked), the training edges, node roles, and the
/// feature scaler fit on training rows only.
struct TrainView {
  const FlowNetwork* net = nullptr;
  const GuardedFlows* flows = nullptr;
  std::vector<EdgeKey> train_edges;
  std::vector<int> regular_nodes;
  std::vector<int> interest_nodes;  // validation + test
  FeatureScaler scaler;

  const FlowNetwork& network() const { return *net; }

  /// Margin of a node over its readable incident flows. Interest neighbors
  /// are skipped (not read) so the leakage guard stays quiet.
  double visible_margin(int node) const {
    double sum = 0.0;
    for (int nb : net->neighbors(node)) {
      if (flows->is_masked_node(nb) || flows->is_masked_node(node)) continue;
      sum += flows->flow(node, nb);
    }
    return sum;
  }
};

/// View over a network with no interest nodes (every edge trains); used by
/// tests and by fits on fully observed data.
struct FullTrainView {
  GuardedFlows flows;
  TrainView view;

  explicit FullTrainView(const FlowNetwork& net) : flows(net) {
    view.net = &net;
    view.flows = &flows;
    view.train_edges = net.edges();
    for (int i = 0; i < net.n(); ++i) view.regular_nodes.push_back(i);
    view.scaler = FeatureScaler::fit(net, view.regular_nodes, view.train_edges);
  }
};

}  // namespace odflow
