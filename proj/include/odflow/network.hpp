#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "odflow/common.hpp"
#include "odflow/grid.hpp"

namespace odflow {

/// Unordered node pair, normalized so a < b.
struct EdgeKey {
  int a = 0;
  int b = 0;

  EdgeKey() = default;
  EdgeKey(int i, int j) : a(std::min(i, j)), b(std::max(i, j)) {}

  std::uint64_t packed() const {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
  }
  bool operator==(const EdgeKey& o) const { return a == o.a && b == o.b; }
  bool operator<(const EdgeKey& o) const { return a != o.a ? a < o.a : b < o.b; }
};

struct EdgeKeyHash {
  std::size_t operator()(const EdgeKey& k) const {
    return static_cast<std::size_t>(detail::splitmix64(k.packed()));
  }
};

/// Returns (W + W^T) / 2. Rejects negative entries and a nonzero diagonal.
inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& w_raw) {
  if (w_raw.rows() != w_raw.cols())
    throw DataError("symmetrize: matrix must be square");
  for (Eigen::Index i = 0; i < w_raw.rows(); ++i) {
    for (Eigen::Index j = 0; j < w_raw.cols(); ++j) {
      if (w_raw(i, j) < 0.0)
        throw DataError("symmetrize: negative entry at (" + std::to_string(i) + ", " +
                        std::to_string(j) + ")");
    }
    if (w_raw(i, i) != 0.0)
      throw DataError("symmetrize: nonzero diagonal at (" + std::to_string(i) + ", " +
                      std::to_string(i) + ")");
  }
  return (w_raw + w_raw.transpose()) / 2.0;
}

/// The weighted attributed flow graph: symmetric nonnegative flow matrix
/// (stored sparse as unordered-pair entries), dense node features, sparse
/// edge features, and the grid geometry tying nodes to cells.
///
/// Immutable after construction; safe for shared concurrent reads.
class FlowNetwork {
 public:
  FlowNetwork() = default;

  FlowNetwork(GridSpec grid, std::vector<int> node_cell, Eigen::MatrixXd node_features,
              std::vector<std::string> node_feature_names,
              std::vector<std::string> edge_feature_names,
              std::unordered_map<EdgeKey, double, EdgeKeyHash> flows,
              std::unordered_map<EdgeKey, std::vector<double>, EdgeKeyHash> edge_features,
              int distance_feature = -1, int log_distance_feature = -1)
      : grid_(grid),
        node_cell_(std::move(node_cell)),
        node_features_(std::move(node_features)),
        node_feature_names_(std::move(node_feature_names)),
        edge_feature_names_(std::move(edge_feature_names)),
        flows_(std::move(flows)),
        edge_features_(std::move(edge_features)),
        distance_feature_(distance_feature),
        log_distance_feature_(log_distance_feature) {
    validate();
    index();
  }

  int n() const { return static_cast<int>(node_cell_.size()); }
  int p() const { return static_cast<int>(node_features_.cols()); }
  int k() const { return static_cast<int>(edge_feature_names_.size()); }
  const GridSpec& grid() const { return grid_; }
  int cell_of(int node) const { return node_cell_.at(static_cast<std::size_t>(node)); }
  const std::vector<int>& node_cells() const { return node_cell_; }

  const Eigen::MatrixXd& node_features() const { return node_features_; }
  const std::vector<std::string>& node_feature_names() const { return node_feature_names_; }
  const std::vector<std::string>& edge_feature_names() const { return edge_feature_names_; }
  int distance_feature() const { return distance_feature_; }
  int log_distance_feature() const { return log_distance_feature_; }

  /// Ground-truth flow, 0 for pairs without an edge and for the diagonal.
  double flow(int i, int j) const {
    if (i == j) return 0.0;
    auto it = flows_.find(EdgeKey(i, j));
    return it == flows_.end() ? 0.0 : it->second;
  }

  bool has_edge(int i, int j) const {
    return i != j && flows_.find(EdgeKey(i, j)) != flows_.end();
  }

  /// Edges (positive-flow unordered pairs), sorted by (a, b).
  const std::vector<EdgeKey>& edges() const { return edges_; }

  /// Positive-flow neighbors of a node, ascending.
  const std::vector<int>& neighbors(int node) const {
    return neighbor_lists_.at(static_cast<std::size_t>(node));
  }

  const std::vector<double>* stored_edge_features(int i, int j) const {
    auto it = edge_features_.find(EdgeKey(i, j));
    return it == edge_features_.end() ? nullptr : &it->second;
  }

  /// Pairwise distance: the designated distance feature when stored for the
  /// pair, otherwise the cell-centroid Euclidean distance.
  double distance(int i, int j) const {
    if (const auto* f = stored_edge_features(i, j); f != nullptr && distance_feature_ >= 0)
      return (*f)[static_cast<std::size_t>(distance_feature_)];
    return grid_.centroid_distance(cell_of(i), cell_of(j));
  }

  double total_flow() const { return total_flow_; }

  const std::unordered_map<EdgeKey, double, EdgeKeyHash>& flow_map() const { return flows_; }
  const std::unordered_map<EdgeKey, std::vector<double>, EdgeKeyHash>& edge_feature_map() const {
    return edge_features_;
  }

 private:
  void validate() {
    grid_.validate();
    const int nn = n();
    if (nn < 1) throw DataError("FlowNetwork: at least one node required");
    if (node_features_.rows() != nn)
      throw DataError("FlowNetwork: node feature rows != node count");
    if (static_cast<int>(node_feature_names_.size()) != node_features_.cols())
      throw DataError("FlowNetwork: node feature names != feature columns");
    for (int v : node_cell_) {
      if (v < 0 || v >= grid_.n_cells())
        throw DataError("FlowNetwork: node cell index " + std::to_string(v) + " out of range");
    }
    for (const auto& [key, w] : flows_) {
      if (key.a == key.b) throw DataError("FlowNetwork: self-flow at node " + std::to_string(key.a));
      if (key.a < 0 || key.b >= nn) throw DataError("FlowNetwork: edge endpoint out of range");
      if (!(w > 0.0)) throw DataError("FlowNetwork: non-positive stored flow at (" +
                                      std::to_string(key.a) + ", " + std::to_string(key.b) + ")");
      if (edge_features_.find(key) == edge_features_.end())
        throw DataError("FlowNetwork: edge (" + std::to_string(key.a) + ", " +
                        std::to_string(key.b) + ") has flow but no edge-feature vector");
    }
    for (const auto& [key, vec] : edge_features_) {
      if (vec.size() != edge_feature_names_.size())
        throw DataError("FlowNetwork: edge-feature vector length mismatch at (" +
                        std::to_string(key.a) + ", " + std::to_string(key.b) + ")");
    }
    if (distance_feature_ >= k() || log_distance_feature_ >= k())
      throw DataError("FlowNetwork: designated distance feature out of range");
  }

  void index() {
    edges_.reserve(flows_.size());
    for (const auto& [key, w] : flows_) {
      edges_.push_back(key);
      total_flow_ += 2.0 * w;  // both directions of the symmetric matrix
    }
    std::sort(edges_.begin(), edges_.end());
    neighbor_lists_.assign(static_cast<std::size_t>(n()), {});
    for (const auto& e : edges_) {
      neighbor_lists_[static_cast<std::size_t>(e.a)].push_back(e.b);
      neighbor_lists_[static_cast<std::size_t>(e.b)].push_back(e.a);
    }
    for (auto& lst : neighbor_lists_) std::sort(lst.begin(), lst.end());
  }

  GridSpec grid_;
  std::vector<int> node_cell_;
  Eigen::MatrixXd node_features_;
  std::vector<std::string> node_feature_names_;
  std::vector<std::string> edge_feature_names_;
  std::unordered_map<EdgeKey, double, EdgeKeyHash> flows_;
  std::unordered_map<EdgeKey, std::vector<double>, EdgeKeyHash> edge_features_;
  int distance_feature_ = -1;
  int log_distance_feature_ = -1;
  std::vector<EdgeKey> edges_;
  std::vector<std::vector<int>> neighbor_lists_;
  double total_flow_ = 0.0;
};

/// Leakage-guard view of the flow matrix. Flows incident to a masked
/// (interest) node read as 0 and bump a counter; model-fitting code receives
/// this view instead of the raw network, and the harness asserts the counter
/// stayed at zero.
class GuardedFlows {
 public:
  GuardedFlows(const FlowNetwork& net, std::unordered_set<int> masked_nodes)
      : net_(&net), masked_(std::move(masked_nodes)) {}

  explicit GuardedFlows(const FlowNetwork& net) : net_(&net) {}

  bool is_masked_node(int i) const { return masked_.count(i) > 0; }
  bool is_masked(int i, int j) const { return is_masked_node(i) || is_masked_node(j); }

  /// Guarded read: masked entries return 0 and are counted.
  double flow(int i, int j) const {
    if (is_masked(i, j)) {
      ++masked_reads_;
      return 0.0;
    }
    return net_->flow(i, j);
  }

  std::size_t masked_reads() const { return masked_reads_; }
  void reset_counter() const { masked_reads_ = 0; }

  const FlowNetwork& net() const { return *net_; }
  const std::unordered_set<int>& masked_nodes() const { return masked_; }

 private:
  const FlowNetwork* net_;
  std::unordered_set<int> masked_;
  mutable std::size_t masked_reads_ = 0;
};

}  // namespace odflow
